"""Result container and small helpers shared by every force provider."""
from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .counters import OpCounters
from .system import AtomicSystem


@dataclass
class PotentialResult:
    """Energy (kcal/mol), per-atom energies and forces (kcal/mol/A) plus cost data."""

    energy: float
    per_atom_energy: np.ndarray
    forces: np.ndarray
    counters: OpCounters = field(default_factory=OpCounters)
    timings: dict = field(default_factory=dict)

    @property
    def op_count(self) -> int:
        return self.counters.total().flops

    @property
    def bytes_moved(self) -> int:
        return self.counters.total().bytes

    @classmethod
    def zero(cls, n_atoms: int) -> "PotentialResult":
        return cls(0.0, np.zeros(n_atoms), np.zeros((n_atoms, 3)))

    def __add__(self, other: "PotentialResult") -> "PotentialResult":
        counters = OpCounters().merge(self.counters).merge(other.counters)
        timings = dict(self.timings)
        for k, v in other.timings.items():
            timings[k] = timings.get(k, 0.0) + v
        return PotentialResult(self.energy + other.energy, self.per_atom_energy + other.per_atom_energy,
                               self.forces + other.forces, counters, timings)


def total_energy(per_atom: np.ndarray) -> float:
    """Exactly rounded sum, independent of atom order."""
    return math.fsum(np.asarray(per_atom, dtype=float).tolist())


@contextmanager
def timed(timings: dict, name: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def on_subset(system: AtomicSystem, mask, evaluate) -> PotentialResult:
    """Run ``evaluate`` on the masked subsystem and embed the result in the full system."""
    if mask is None:
        return evaluate(system)
    mask = np.asarray(mask, dtype=bool)
    n = system.n_atoms
    if mask.all():
        return evaluate(system)
    sub = system.subset(mask)
    res = evaluate(sub)
    per_atom = np.zeros(n)
    forces = np.zeros((n, 3))
    per_atom[mask] = res.per_atom_energy
    forces[mask] = res.forces
    return PotentialResult(res.energy, per_atom, forces, res.counters, res.timings)
