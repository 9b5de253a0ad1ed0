"""Benchmark configuration and its flat ``key = value`` file format.

One setting per line, ``#`` starts a comment, keys are the field names of
:class:`BenchConfig`.  Lists (``sizes``, ``stages``) are comma separated,
booleans accept true/false/yes/no/1/0::

    # sweep the first three sizes with the staged AEV
    sizes = 10, 20, 30
    model = ani
    strategy = staged
    reps = 3
    deterministic = true
    out = results/

Descriptor settings use the ``aev.`` keys of :meth:`AevParams.to_dict`;
grids are comma separated (``aev.radial_cutoff = 5.2``,
``aev.zeta = 16, 16, 32, 32``).  Unset keys keep their defaults.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .aev import AevParams
from .errors import ConfigurationError
from .md import MODES
from .system import DEFAULT_SWEEP, WorkloadSpec

MODELS = ("ani", "et", "cff")
STRATEGIES = ("staged", "fused")
STAGES = {
    "ani": ("neighbors", "aev_forward", "energy_forward", "force_backward"),
    "et": ("neighbors", "et_forward", "et_backward"),
    "cff": ("neighbors", "cff"),
}
ALL_STAGES = ("neighbors", "aev_forward", "energy_forward", "force_backward", "et_forward", "et_backward", "cff")


@dataclass
class BenchConfig:
    sizes: tuple = DEFAULT_SWEEP  # residues per system
    geometry: str = "compact"
    caps: int = 3
    solvated: bool = False
    padding: float = 10.0
    seed: int = 0
    model: str = "ani"
    strategy: str = "fused"
    ensemble_size: int = 1
    model_path: str = ""
    stages: tuple = ()  # empty: every stage of the model
    reps: int = 5
    deterministic: bool = False
    out: str = "bench_out"
    systems_dir: str = ""  # read systems from here when present
    mode: str = "MLFFsys"
    steps: int = 1000
    warmup_steps: int = 10
    dt: float = 0.5
    temperature: float = 300.0
    minimize: bool = False
    dump_every: int = 0
    aev: dict = field(default_factory=dict)  # "aev.<name>" -> value overrides

    def validate(self) -> "BenchConfig":
        if not self.sizes:
            raise ConfigurationError("sizes must not be empty")
        if any(int(s) < 1 for s in self.sizes):
            raise ConfigurationError("sizes must be positive residue counts")
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {MODELS}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}")
        if self.reps < 1:
            raise ConfigurationError("reps must be >= 1")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.ensemble_size < 1:
            raise ConfigurationError("ensemble_size must be >= 1")
        unknown = [s for s in self.stages if s not in ALL_STAGES]
        if unknown:
            raise ConfigurationError(f"unknown stage(s) {unknown}; known: {ALL_STAGES}")
        try:
            self.aev_params()
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad aev settings: {exc}") from None
        try:
            self.workload(int(self.sizes[0])).validate()
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        return self

    def workload(self, residues: int) -> WorkloadSpec:
        return WorkloadSpec(residues=int(residues), geometry=self.geometry, caps=self.caps,
                            solvated=self.solvated, padding=self.padding, seed=self.seed)

    def aev_params(self) -> AevParams:
        return AevParams.from_dict(self.aev)

    def stage_list(self) -> tuple:
        return tuple(self.stages) if self.stages else STAGES[self.model]

    def with_overrides(self, **kwargs) -> "BenchConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs).validate()


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(name: str, kind, text: str):
    text = text.strip()
    try:
        if kind is bool or kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind is int or kind == "int":
            return int(text)
        if kind is float or kind == "float":
            return float(text)
        if kind is tuple or kind == "tuple":
            items = [x.strip() for x in text.split(",") if x.strip()]
            return tuple(int(x) for x in items) if name == "sizes" else tuple(items)
        return text
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {text!r}") from None


def _convert_aev(key: str, text: str):
    if key not in AevParams().to_dict():
        raise ConfigurationError(f"unknown key {key!r}")
    items = [x.strip() for x in text.split(",") if x.strip()]
    if key == "aev.species":
        return items
    try:
        nums = [float(x) for x in items]
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from None
    if key.endswith("_cutoff"):
        if len(nums) != 1:
            raise ConfigurationError(f"{key} takes one number")
        return nums[0]
    return nums


def parse_sizes(text: str) -> tuple:
    return _convert("sizes", tuple, text)


def parse_config(text: str, base: BenchConfig | None = None) -> BenchConfig:
    kinds = {f.name: f.type for f in fields(BenchConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("aev."):
            values.setdefault("aev", {})[key] = _convert_aev(key, value)
            continue
        if key not in kinds or key == "aev":
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, kinds[key], value)
    return replace(base or BenchConfig(), **values).validate()


def load_config(path) -> BenchConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def format_config(config: BenchConfig) -> str:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if f.name == "aev":
            for key, value in v.items():
                if isinstance(value, (list, tuple)):
                    value = ", ".join(str(x) for x in value)
                lines.append(f"{key} = {value}")
            continue
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
