"""Per-stage operation and byte counters.

Kernels take an optional :class:`OpCounters`.  Passing ``None`` routes every
``count`` call to a shared no-op stage, so timing runs pay one attribute
lookup per kernel line and nothing else.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass
class StageCounts:
    flops_add: int = 0
    flops_mul: int = 0
    transcendental_ops: int = 0
    gather_ops: int = 0
    scatter_ops: int = 0
    bytes_read: int = 0
    bytes_written: int = 0
    # symmetry-function / basis-function term evaluations
    terms: int = 0

    def count(self, add=0, mul=0, trans=0, gather=0, scatter=0, read=0, write=0, terms=0):
        self.flops_add += int(add)
        self.flops_mul += int(mul)
        self.transcendental_ops += int(trans)
        self.gather_ops += int(gather)
        self.scatter_ops += int(scatter)
        self.bytes_read += int(read)
        self.bytes_written += int(write)
        self.terms += int(terms)

    @property
    def flops(self) -> int:
        """Arithmetic operations with each transcendental counted once."""
        return self.flops_add + self.flops_mul + self.transcendental_ops

    @property
    def arithmetic(self) -> int:
        return self.flops_add + self.flops_mul

    @property
    def bytes(self) -> int:
        return self.bytes_read + self.bytes_written

    def __iadd__(self, other: "StageCounts"):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def copy(self) -> "StageCounts":
        return StageCounts(**asdict(self))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["flops"] = self.flops
        return d


class _NullStage:
    def count(self, *args, **kwargs):
        pass


NULL_STAGE = _NullStage()


class OpCounters:
    def __init__(self):
        self.stages: dict[str, StageCounts] = {}

    def stage(self, name: str) -> StageCounts:
        st = self.stages.get(name)
        if st is None:
            st = self.stages[name] = StageCounts()
        return st

    def __getitem__(self, name: str) -> StageCounts:
        return self.stages.get(name, StageCounts())

    def __contains__(self, name: str) -> bool:
        return name in self.stages

    def reset(self, name: str | None = None):
        if name is None:
            self.stages.clear()
        else:
            self.stages.pop(name, None)

    def total(self, names=None) -> StageCounts:
        out = StageCounts()
        for k, st in self.stages.items():
            if names is None or k in names:
                out += st
        return out

    def merge(self, other: "OpCounters", prefix: str = ""):
        for k, st in other.stages.items():
            self.stage(prefix + k).__iadd__(st)
        return self

    def as_dict(self) -> dict:
        return {k: v.as_dict() for k, v in sorted(self.stages.items())}

    def __repr__(self):
        return f"OpCounters({self.as_dict()})"


def stage_of(counters: OpCounters | None, name: str):
    return NULL_STAGE if counters is None else counters.stage(name)


FLOAT_BYTES = 8
INDEX_BYTES = 8
