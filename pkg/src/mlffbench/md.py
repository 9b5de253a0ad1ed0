"""NVE velocity-Verlet dynamics over pluggable force providers.

Units: A, fs, amu, kcal/mol.  A force F (kcal/mol/A) on mass m (amu) gives
an acceleration ``F / m * ACCEL`` in A/fs^2.

Three system configurations:

``CFFsys``  classical force field on every atom.
``MLFFsys`` the ML potential on the solute alone; solvent atoms, if any,
            feel no force.
``CMLsys``  the ML potential on the solute plus every classical term that
            touches at least one solvent atom (solute-solvent nonbonded
            pairs and all solvent-internal terms).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .cff import CffParams, CffPotential, assign_default_params
from .errors import ConfigurationError, DivergenceError
from .et import EtParams, EtPotential
from .nnp import AniPotential, NnpModel
from .potential import PotentialResult
from .system import AtomicSystem, write_system

ACCEL = 4.184e-4  # (kcal/mol/A) / amu -> A/fs^2
KB = 0.0019872041  # kcal/mol/K
MODES = ("CFFsys", "MLFFsys", "CMLsys")


class ForceProvider(Protocol):
    def evaluate(self, system: AtomicSystem, mask=None) -> PotentialResult: ...


def ns_per_day(steps: int, dt_fs: float, elapsed_s: float) -> float:
    """Simulated nanoseconds per wall-clock day."""
    if elapsed_s <= 0:
        return float("inf")
    return steps * dt_fs * 1e-6 * 86400.0 / elapsed_s


@dataclass
class SimConfig:
    mode: str = "CFFsys"
    dt: float = 0.5  # fs
    steps: int = 1000  # timed production steps
    warmup_steps: int = 10  # run first, excluded from timing
    temperature: float = 300.0
    seed: int = 0
    deterministic: bool = False
    dump_every: int = 0
    dump_path: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if not 0 <= self.warmup_steps < self.steps:
            raise ConfigurationError("need 0 <= warmup_steps < steps")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if self.dump_every and not self.dump_path:
            raise ConfigurationError("dump_every needs dump_path")


@dataclass
class TrajectoryStats:
    steps: int
    warmup_steps: int
    dt: float
    elapsed: float  # timed steps only
    stage_times: dict  # stage -> seconds summed over timed steps
    step_times: np.ndarray  # wall time of each timed step
    potential: np.ndarray  # per step, including warmup, after the step
    kinetic: np.ndarray
    initial_energy: float
    final_positions: np.ndarray
    final_velocities: np.ndarray
    counters: dict = field(default_factory=dict)  # provider counters of the last evaluation

    @property
    def total(self) -> np.ndarray:
        return self.potential + self.kinetic

    @property
    def ns_per_day(self) -> float:
        return ns_per_day(self.steps, self.dt, self.elapsed)

    @property
    def per_step(self) -> dict:
        return {k: v / self.steps for k, v in self.stage_times.items()}

    def _scale(self) -> float:
        return abs(self.initial_energy) if self.initial_energy != 0 else 1.0

    def energy_drift(self, window: float = 0.1) -> float:
        """Systematic change of the total energy relative to |E_0|.

        Mean over the last ``window`` fraction of steps minus the mean over the
        first, so the bounded oscillation of the integrator's shadow energy
        does not count as drift.
        """
        e = self.total
        if len(e) == 0:
            return 0.0
        w = max(1, int(len(e) * window))
        return float(abs(e[-w:].mean() - e[:w].mean()) / self._scale())

    def energy_fluctuation(self) -> float:
        """Largest deviation of the total energy from E_0, relative to |E_0|."""
        e = self.total
        return float(np.max(np.abs(e - self.initial_energy)) / self._scale()) if len(e) else 0.0

    def to_dict(self) -> dict:
        return {
            "steps": self.steps, "warmup_steps": self.warmup_steps, "dt_fs": self.dt,
            "elapsed_s": self.elapsed, "ns_per_day": self.ns_per_day,
            "stage_seconds": dict(sorted(self.stage_times.items())),
            "stage_seconds_per_step": dict(sorted(self.per_step.items())),
            "initial_energy": self.initial_energy,
            "final_energy": float(self.total[-1]) if len(self.total) else self.initial_energy,
            "relative_energy_drift": self.energy_drift(),
            "max_relative_energy_fluctuation": self.energy_fluctuation(),
            "counters": self.counters,
        }


class _Composite:
    """Sum of providers, each on its own atom mask; timings prefixed ``label:``."""

    def __init__(self, parts):
        self.parts = parts  # (label, provider, mask function)

    def evaluate(self, system: AtomicSystem, mask=None) -> PotentialResult:
        n = system.n_atoms
        energy, per_atom, forces = 0.0, np.zeros(n), np.zeros((n, 3))
        timings, counters = {}, {}
        for label, provider, mask_of in self.parts:
            res = provider.evaluate(system, mask_of(system))
            energy += res.energy
            per_atom += res.per_atom_energy
            forces += res.forces
            for k, v in res.timings.items():
                timings[f"{label}:{k}"] = v
            counters[label] = res.counters
        out = PotentialResult(energy, per_atom, forces, timings=timings)
        for label, c in counters.items():
            out.counters.merge(c, prefix=f"{label}:")
        return out


def _mlff_provider(mlff, deterministic):
    if isinstance(mlff, NnpModel):
        return AniPotential(mlff, deterministic=deterministic)
    if isinstance(mlff, EtParams):
        return EtPotential(mlff, deterministic=deterministic)
    if mlff is None:
        return AniPotential(deterministic=deterministic)
    return mlff


def compose_forces(mode: str, system: AtomicSystem, cff_params: CffParams | None = None, mlff_model=None,
                   deterministic: bool = False) -> ForceProvider:
    """Force provider for one of the three system configurations.

    ``mlff_model`` may be an :class:`NnpModel`, :class:`EtParams` or any
    provider; ``None`` means a default-initialized ANI model.
    """
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")

    def solute(s):
        return ~s.solvent_mask

    def solvent(s):
        return s.solvent_mask

    if mode == "CFFsys":
        params = cff_params if cff_params is not None else assign_default_params(system)
        return _Composite([("cff", CffPotential(params, deterministic), lambda s: None)])
    mlff = _mlff_provider(mlff_model, deterministic)
    if mode == "MLFFsys":
        return _Composite([("mlff", mlff, solute)])
    if not system.is_solvated:
        raise ConfigurationError("CMLsys needs a solvated system")
    params = cff_params if cff_params is not None else assign_default_params(system)
    return _Composite([("mlff", mlff, solute), ("cff", CffPotential(params, deterministic), solvent)])


def maxwell_boltzmann(masses, temperature: float, seed: int) -> np.ndarray:
    """Seeded velocities (A/fs) with the center-of-mass motion removed."""
    rng = np.random.default_rng(seed)
    masses = np.asarray(masses, dtype=float)
    sd = np.sqrt(KB * temperature * ACCEL / masses)
    v = rng.standard_normal((len(masses), 3)) * sd[:, None]
    if len(masses):
        v -= (masses[:, None] * v).sum(axis=0) / masses.sum()
    return v


def kinetic_energy(masses, v) -> float:
    return float(0.5 * (masses[:, None] * v * v).sum() / ACCEL)


def _check(step, res: PotentialResult, x):
    if not (np.isfinite(res.energy) and np.all(np.isfinite(res.forces)) and np.all(np.isfinite(x))):
        raise DivergenceError(step)


def integrate(system: AtomicSystem, provider: ForceProvider, config: SimConfig,
              velocities=None) -> TrajectoryStats:
    """Run ``warmup_steps + steps`` velocity-Verlet steps; time the last ``steps``."""
    masses = system.masses
    x = np.array(system.positions, dtype=float)
    v = maxwell_boltzmann(masses, config.temperature, config.seed) if velocities is None \
        else np.array(velocities, dtype=float)
    inv_m = (ACCEL / masses)[:, None]
    res = provider.evaluate(system)
    _check(0, res, x)
    e0 = res.energy + kinetic_energy(masses, v)
    a = res.forces * inv_m
    total_steps = config.warmup_steps + config.steps
    pot, kin = np.empty(total_steps), np.empty(total_steps)
    stage_times = {"update": 0.0, "force": 0.0}
    step_times = np.empty(config.steps)
    elapsed = 0.0
    dt = config.dt
    if config.dump_every:
        write_system(system, config.dump_path, comment="step=0")
    current = system
    for step in range(1, total_steps + 1):
        t0 = time.perf_counter()
        v += 0.5 * dt * a
        x += dt * v
        current = _moved(system, x)
        t1 = time.perf_counter()
        res = provider.evaluate(current)
        t2 = time.perf_counter()
        _check(step, res, x)
        a = res.forces * inv_m
        v += 0.5 * dt * a
        pot[step - 1] = res.energy
        kin[step - 1] = kinetic_energy(masses, v)
        t3 = time.perf_counter()
        if step > config.warmup_steps:
            k = step - config.warmup_steps - 1
            stage_times["update"] += (t1 - t0) + (t3 - t2)
            stage_times["force"] += t2 - t1
            for name, sec in res.timings.items():
                stage_times[f"force/{name}"] = stage_times.get(f"force/{name}", 0.0) + sec
            step_times[k] = t3 - t0
            elapsed += t3 - t0
        if config.dump_every and step % config.dump_every == 0:
            write_system(current, config.dump_path, comment=f"step={step}", append=True)
    return TrajectoryStats(config.steps, config.warmup_steps, dt, elapsed, stage_times, step_times,
                           pot, kin, e0, x, v, res.counters.as_dict())


def _moved(system: AtomicSystem, x) -> AtomicSystem:
    # unlike with_positions this keeps a box, so solvated systems stay solvated;
    # the clusters are not periodic, so the box grows to follow escaping atoms
    box = system.box
    if box is not None and len(x):
        box = np.array([np.minimum(box[0], x.min(axis=0)), np.maximum(box[1], x.max(axis=0))])
    return AtomicSystem(system.species, x.copy(), system.roles, box, system.bonds)


def minimize(system: AtomicSystem, provider: ForceProvider, max_iter: int = 500, gtol: float = 1e-3):
    """Local energy minimization (L-BFGS); returns the relaxed system and the final result."""
    from scipy.optimize import minimize as _lbfgs

    shape = system.positions.shape

    def fun(flat):
        res = provider.evaluate(_moved(system, flat.reshape(shape)))
        return res.energy, -res.forces.ravel()

    out = _lbfgs(fun, system.positions.ravel(), jac=True, method="L-BFGS-B",
                 options={"maxiter": max_iter, "gtol": gtol})
    relaxed = _moved(system, out.x.reshape(shape))
    return relaxed, provider.evaluate(relaxed)
