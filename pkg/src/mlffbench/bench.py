"""Workload generation, stage timing, trajectory runs and cost-ratio reports.

Each ``cmd_*`` takes a :class:`~mlffbench.config.BenchConfig`, writes its
files under ``config.out`` and returns the in-memory report.

Stage timing CSV columns: ``size, atoms, stage, strategy, median_s, flops,
bytes`` (``size`` in residues, times in seconds, ``flops`` and ``bytes``
from the operation counters of one extra instrumented run).
"""
from __future__ import annotations

import csv
import json
import os
import platform
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .aev import AevParams, aev_backward, compute_aev
from .cff import assign_default_params, cff_energy_forces
from .config import BenchConfig, format_config
from .costmodel import mlff_vs_cff_ratio
from .counters import OpCounters
from .errors import ConfigurationError
from .et import EtParams, et_energy, et_forces, init_et
from .md import SimConfig, compose_forces, integrate, minimize
from .modelio import load_model
from .neighbors import build_pairs, build_triplets, neighbor_stats
from .nnp import NnpModel, init_model, nnp_backward, nnp_energy
from .system import AtomicSystem, WorkloadSpec, generate_polyalanine, read_system, write_system

SCHEMA_VERSION = 1
CSV_COLUMNS = ("size", "atoms", "stage", "strategy", "median_s", "flops", "bytes")


def environment() -> dict:
    import numba
    import scipy

    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "float": "float64",
    }


def system_path(directory, residues: int) -> Path:
    return Path(directory) / f"polyala_{int(residues):04d}.xyz"


def _ensure_out(config: BenchConfig) -> Path:
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigurationError(f"output directory {out} is not writable")
    return out


def load_workload(config: BenchConfig, residues: int) -> AtomicSystem:
    """Read ``polyala_XXXX.xyz`` from ``systems_dir`` when present, else generate it."""
    if config.systems_dir:
        path = system_path(config.systems_dir, residues)
        if path.exists():
            return read_system(path)
    return generate_polyalanine(config.workload(residues))


def cmd_gen(config: BenchConfig) -> list:
    out = _ensure_out(config)
    paths = []
    for residues in sorted(int(s) for s in config.sizes):
        system = generate_polyalanine(config.workload(residues))
        path = system_path(out, residues)
        write_system(system, path, comment=f"residues={residues} geometry={config.geometry} seed={config.seed}")
        paths.append(path)
    return paths


# -- models -----------------------------------------------------------------

def resolve_model(config: BenchConfig):
    """The ML model named by the config: loaded from ``model_path`` or freshly initialized."""
    if config.model_path:
        model = load_model(config.model_path)
        want = NnpModel if config.model == "ani" else EtParams
        if not isinstance(model, want):
            raise ConfigurationError(f"{config.model_path} does not hold a {config.model} model")
        return model
    if config.model == "ani":
        return init_model(config.seed, ensemble_size=config.ensemble_size)
    if config.model == "et":
        return init_et(config.seed)
    return None


# -- stage timing -----------------------------------------------------------

@dataclass
class TimingReport:
    rows: list = field(default_factory=list)
    systems: list = field(default_factory=list)  # per size: atoms, neighbor statistics
    environment: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r["atoms"], r["size"], r["stage"]))

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "environment": self.environment, "config": self.config,
                "systems": self.systems, "checks": self.checks, "rows": self.sorted_rows()}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.sorted_rows():
                w.writerow([r[c] for c in CSV_COLUMNS])


def _time(fn, reps: int, setup=None):
    """Median and minimum wall time of ``fn`` after one discarded warmup call."""
    times = []
    for k in range(reps + 1):
        arg = setup() if setup else None
        t0 = time.perf_counter()
        fn(arg) if setup else fn()
        dt = time.perf_counter() - t0
        if k:
            times.append(dt)
    return statistics.median(times), min(times)


def _flops(counters: OpCounters, prefixes) -> tuple:
    total = counters.total([k for k in counters.stages if k.startswith(prefixes)])
    return total.flops, total.bytes


def _ani_stages(system, model, strategy, reps, stages, det, params=None):
    params = params or AevParams()
    out = {}

    def neighbors():
        p = build_pairs(system, params.radial_cutoff)
        t = build_triplets(p, params.angular_cutoff) if strategy == "staged" else None
        return p, t

    pairs, triplets = neighbors()
    counters = OpCounters()
    aev, tape = compute_aev(system, pairs, params, strategy, triplets, counters, det)
    _, _, ntape = nnp_energy(aev, system.species, model, counters, det)
    g = nnp_backward(ntape, model, counters)
    aev_backward(tape, g, counters=counters)
    counted = {
        "neighbors": (0, 0),
        "aev_forward": _flops(counters, ("aev_radial", "aev_angular", "aev_forward")),
        "energy_forward": _flops(counters, ("nnp_forward", "energy_sum")),
        "force_backward": _flops(counters, ("nnp_backward", "aev_backward")),
    }
    for stage in stages:
        if stage == "neighbors":
            timing = _time(neighbors, reps)
        elif stage == "aev_forward":
            timing = _time(lambda: compute_aev(system, pairs, params, strategy, triplets, None, det), reps)
        elif stage == "energy_forward":
            timing = _time(lambda: nnp_energy(aev, system.species, model, None, det), reps)
        elif stage == "force_backward":
            # a fresh forward tape per repetition, built outside the timed region
            def setup():
                a, t = compute_aev(system, pairs, params, strategy, triplets, None, det)
                return t, nnp_energy(a, system.species, model, None, det)[2]

            def run(arg):
                t, nt = arg
                aev_backward(t, nnp_backward(nt, model))

            timing = _time(run, reps, setup)
        else:
            raise ConfigurationError(f"stage {stage!r} does not belong to the ani model")
        out[stage] = timing + counted[stage]
    return out


def _et_stages(system, params: EtParams, reps, stages, det):
    out = {}
    pairs = build_pairs(system, params.cutoff)
    counters = OpCounters()
    _, tape = et_energy(system, pairs, params, counters, det)
    et_forces(tape, params, counters)
    fwd = _flops(counters, ("et_rbf", "et_embed", "et_node", "et_layer", "et_readout"))
    bwd = _flops(counters, ("et_backward",))
    for stage in stages:
        if stage == "neighbors":
            timing, counted = _time(lambda: build_pairs(system, params.cutoff), reps), (0, 0)
        elif stage == "et_forward":
            timing, counted = _time(lambda: et_energy(system, pairs, params, None, det), reps), fwd
        elif stage == "et_backward":
            timing, counted = _time(lambda: et_forces(tape, params), reps), bwd
        else:
            raise ConfigurationError(f"stage {stage!r} does not belong to the et model")
        out[stage] = timing + counted
    return out


def _cff_stages(system, reps, stages, det):
    out = {}
    params = assign_default_params(system)
    pairs = build_pairs(system, params.cutoff)
    counters = OpCounters()
    cff_energy_forces(system, params, pairs, counters=counters, deterministic=det)
    for stage in stages:
        if stage == "neighbors":
            timing, counted = _time(lambda: build_pairs(system, params.cutoff), reps), (0, 0)
        elif stage == "cff":
            timing = _time(lambda: cff_energy_forces(system, params, pairs, deterministic=det), reps)
            counted = _flops(counters, ("cff",))
        else:
            raise ConfigurationError(f"stage {stage!r} does not belong to the cff model")
        out[stage] = timing + counted
    return out


def check_strategies(system: AtomicSystem, params: AevParams | None = None, tolerance: float = 1e-10) -> dict:
    a, _ = compute_aev(system, None, params, "staged")
    b, _ = compute_aev(system, None, params, "fused")
    diff = float(np.max(np.abs(a.values - b.values))) if a.values.size else 0.0
    return {"name": "staged_equals_fused", "atoms": system.n_atoms, "max_abs_diff": diff,
            "tolerance": tolerance, "passed": diff <= tolerance}


def cmd_stage_bench(config: BenchConfig) -> TimingReport:
    out = _ensure_out(config)
    stages = config.stage_list()
    model = resolve_model(config)
    report = TimingReport(environment=environment(), config=asdict(config))
    for residues in sorted(int(s) for s in config.sizes):
        system = load_workload(config, residues)
        if config.model == "ani":
            check = check_strategies(system, config.aev_params())
            report.checks.append(dict(check, size=residues))
            if not check["passed"]:
                raise AssertionError(f"staged and fused AEVs differ by {check['max_abs_diff']:.3g}")
            results = _ani_stages(system, model, config.strategy, config.reps, stages, config.deterministic,
                                  config.aev_params())
        elif config.model == "et":
            results = _et_stages(system, model, config.reps, stages, config.deterministic)
        else:
            results = _cff_stages(system, config.reps, stages, config.deterministic)
        cut = {"ani": config.aev_params().radial_cutoff, "et": 5.0, "cff": 10.0}[config.model]
        stats = neighbor_stats(build_pairs(system, cut))
        report.systems.append({"size": residues, "atoms": system.n_atoms, "cutoff": cut,
                               "mean_neighbors": stats.mean, "max_neighbors": stats.max})
        strategy = config.strategy if config.model == "ani" else "-"
        for stage, (median, best, flops, nbytes) in results.items():
            report.rows.append({"size": residues, "atoms": system.n_atoms, "stage": stage, "strategy": strategy,
                                "median_s": median, "min_s": best, "flops": int(flops), "bytes": int(nbytes)})
    report.to_csv(out / "stage_bench.csv")
    (out / "stage_bench.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return report


# -- trajectories -----------------------------------------------------------

def md_system(config: BenchConfig, residues: int) -> AtomicSystem:
    system = load_workload(config, residues)
    if config.mode == "MLFFsys" and system.is_solvated:
        system = system.subset(~system.solvent_mask)
    if config.mode == "CMLsys" and not system.is_solvated:
        raise ConfigurationError("CMLsys needs a solvated workload (set solvated = true)")
    return system


def cmd_md(config: BenchConfig) -> list:
    out = _ensure_out(config)
    if config.mode != "CFFsys" and config.model == "cff":
        raise ConfigurationError(f"{config.mode} needs an ML model (ani or et)")
    model = resolve_model(config) if config.mode != "CFFsys" else None
    runs = []
    for residues in sorted(int(s) for s in config.sizes):
        system = md_system(config, residues)
        provider = compose_forces(config.mode, system, mlff_model=model, deterministic=config.deterministic)
        if config.minimize:
            system, _ = minimize(system, provider)
        sim = SimConfig(mode=config.mode, dt=config.dt, steps=config.steps,
                        warmup_steps=min(config.warmup_steps, config.steps - 1),
                        temperature=config.temperature, seed=config.seed, deterministic=config.deterministic,
                        dump_every=config.dump_every,
                        dump_path=str(out / f"traj_{residues:04d}.xyz") if config.dump_every else None)
        stats = integrate(system, provider, sim)
        entry = {"size": residues, "atoms": system.n_atoms, "mode": config.mode, "model": config.model}
        entry.update(stats.to_dict())
        entry["mlff_stage_seconds"] = {k: v for k, v in stats.stage_times.items() if k.startswith("force/mlff:")}
        entry["mlff_counted_flops"] = sum(v["flops"] for k, v in stats.counters.items() if k.startswith("mlff:"))
        runs.append(entry)
    doc = {"schema_version": SCHEMA_VERSION, "environment": environment(), "config": asdict(config), "runs": runs}
    (out / "md_report.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return runs


# -- cost ratio -------------------------------------------------------------

DIPEPTIDE = WorkloadSpec(residues=2, caps=2)  # 22 atoms


def cmd_ratio(config: BenchConfig, include_sizes: bool = True) -> dict:
    out = _ensure_out(config)
    model = resolve_model(config) if config.model == "ani" else init_model(config.seed,
                                                                            ensemble_size=config.ensemble_size)
    entries = [dict(mlff_vs_cff_ratio(generate_polyalanine(DIPEPTIDE), model).to_dict(), label="dipeptide")]
    if include_sizes:
        for residues in sorted(int(s) for s in config.sizes):
            system = load_workload(config, residues)
            entries.append(dict(mlff_vs_cff_ratio(system, model).to_dict(), label=f"polyala_{residues:04d}"))
    doc = {"schema_version": SCHEMA_VERSION, "ensemble_size": model.ensemble_size, "entries": entries}
    (out / "ratio.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return doc


def save_config(config: BenchConfig, path) -> None:
    Path(path).write_text(format_config(config))


# -- self-checks ------------------------------------------------------------

def cmd_verify(config: BenchConfig) -> dict:
    """Run the self-check suite and write ``verify.json``."""
    from .verify import run_checks

    out = _ensure_out(config)
    doc = run_checks()
    doc["environment"] = environment()
    (out / "verify.json").write_text(json.dumps(doc, indent=1, sort_keys=True, default=str))
    return doc
