"""Self-check suite: gradients, symmetries, equivalences and counter formulas.

:func:`run_checks` returns ``{"schema_version", "passed", "checks": [...]}``
where every check carries ``name``, ``tolerance``, ``value`` and ``passed``.
"""
from __future__ import annotations

import math
import time

import numpy as np

from .aev import AevParams, compute_aev
from .cff import assign_default_params, cff_energy_forces, nonbonded_flops_per_pair, nonbonded_pairs
from .counters import OpCounters
from .et import EtPotential, init_et
from .md import compose_forces, ns_per_day
from .neighbors import build_pairs
from .nnp import AniPotential, count_nnp_ops, init_model, nnp_backward, nnp_energy
from .oracles import central_difference_forces, moved, random_cluster, random_rotation, relative_error
from .system import WorkloadSpec, generate_polyalanine, make_system, solvate

SCHEMA_VERSION = 1


def _check(name, value, tolerance, passed, **extra):
    return dict({"name": name, "value": value, "tolerance": tolerance, "passed": bool(passed)}, **extra)


def _fd_check(name, provider, system, perturb, tol=1e-6):
    res = provider.evaluate(system)
    forces = perturb(res.forces) if perturb else res.forces
    fd = central_difference_forces(lambda x: provider.evaluate(system.with_positions(x)).energy,
                                   system.positions)
    err = relative_error(fd, forces)
    return _check(name, err, tol, err < tol)


def check_aev_width():
    w = AevParams().width
    return _check("aev_width", w, 1008, w == 1008)


def check_ani_forces(perturb=None, seed=0):
    return _fd_check("ani_forces_fd", AniPotential(init_model(seed)), random_cluster(30, seed), perturb)


def check_et_forces(perturb=None, seed=0):
    return _fd_check("et_forces_fd", EtPotential(init_et(seed)), random_cluster(30, seed + 1), perturb)


def check_cff_forces(perturb=None, seed=0):
    base = generate_polyalanine(WorkloadSpec(residues=3))
    params = assign_default_params(base)
    rng = np.random.default_rng(seed)
    system = base.with_positions(base.positions + rng.normal(0, 0.05, base.positions.shape))

    class _Fixed:
        def evaluate(self, s, mask=None):
            return cff_energy_forces(s, params)

    return _fd_check("cff_forces_fd", _Fixed(), system, perturb)


def check_nnp_gradient(seed=0, samples=40):
    """dE/dAEV against central differences over randomly chosen AEV entries."""
    rng = np.random.default_rng(seed)
    system = random_cluster(20, seed)
    model = init_model(seed)
    aev, _ = compute_aev(system)
    _, _, tape = nnp_energy(aev, system.species, model)
    g = nnp_backward(tape, model)
    x = aev.values.copy()
    rows = rng.integers(0, x.shape[0], samples)
    cols = rng.integers(0, x.shape[1], samples)
    h = 1e-5
    fd = np.empty(samples)
    for s, (r, c) in enumerate(zip(rows, cols)):
        old = x[r, c]
        x[r, c] = old + h
        e1 = nnp_energy(x, system.species, model)[0]
        x[r, c] = old - h
        e2 = nnp_energy(x, system.species, model)[0]
        x[r, c] = old
        fd[s] = (e1 - e2) / (2 * h)
    err = relative_error(fd, g[rows, cols])
    return _check("nnp_aev_gradient_fd", err, 1e-6, err < 1e-6)


def check_invariance(seed=0, motions=5):
    system = random_cluster(30, seed)
    ani = AniPotential(init_model(seed))
    et = EtPotential(init_et(seed))
    worst_e, worst_f = 0.0, 0.0
    for provider in (ani, et):
        ref = provider.evaluate(system)
        for k in range(motions):
            rot = random_rotation(seed * 100 + k)
            shift = np.random.default_rng(k).uniform(-5, 5, 3)
            res = provider.evaluate(moved(system, rot, shift))
            worst_e = max(worst_e, abs(res.energy - ref.energy) / max(abs(ref.energy), 1e-300))
            worst_f = max(worst_f, float(np.max(np.abs(res.forces - ref.forces @ rot.T))))
    return [_check("energy_rotation_invariance", worst_e, 1e-9, worst_e < 1e-9),
            _check("force_rotation_covariance", worst_f, 1e-8, worst_f < 1e-8)]


def check_permutation(seed=0):
    system = random_cluster(30, seed)
    bad = 0
    for provider in (AniPotential(init_model(seed), deterministic=True),
                     EtPotential(init_et(seed), deterministic=True)):
        ref = provider.evaluate(system)
        for k in range(3):
            p = np.random.default_rng(seed + k).permutation(system.n_atoms)
            res = provider.evaluate(moved(system, permutation=p))
            exact = (res.energy == ref.energy and np.array_equal(res.forces, ref.forces[p])
                     and np.array_equal(res.per_atom_energy, ref.per_atom_energy[p]))
            bad += not exact
    return _check("permutation_exact", bad, 0, bad == 0)


def check_neighbors(count=20, seed=0):
    bad = 0
    for k in range(count):
        rng = np.random.default_rng(seed + k)
        n = int(rng.integers(2, 200))
        system = random_cluster(n, seed + k, density=float(rng.uniform(0.01, 0.12)), min_distance=0.5)
        cut = float(rng.uniform(2.0, 8.0))
        a = build_pairs(system, cut, "cell")
        b = build_pairs(system, cut, "brute")
        bad += not a.same_pairs(b)
    return _check("celllist_equals_bruteforce", bad, 0, bad == 0)


def check_strategies(seed=0):
    worst = 0.0
    for k in range(3):
        system = random_cluster(60, seed + k, density=0.12)
        a, _ = compute_aev(system, strategy="staged")
        b, _ = compute_aev(system, strategy="fused")
        worst = max(worst, float(np.max(np.abs(a.values - b.values))))
    return _check("staged_equals_fused", worst, 1e-10, worst <= 1e-10)


def check_counts():
    one_h = make_system(["H"], [[0.0, 0.0, 0.0]])
    model = init_model(0)
    counters = OpCounters()
    aev, _ = compute_aev(one_h)
    nnp_energy(aev, one_h.species, model, counters)
    counted = counters["nnp_forward"].arithmetic
    analytic = count_nnp_ops(model, 1)
    out = [_check("nnp_ops_per_atom", counted, 676160, counted == analytic == 676160),
           _check("nnp_ops_vs_reference_650k", abs(analytic - 650000) / 650000, 0.05,
                  abs(analytic - 650000) / 650000 <= 0.05)]
    system = generate_polyalanine(WorkloadSpec(residues=5))
    params = assign_default_params(system)
    counters = OpCounters()
    pairs = build_pairs(system, params.cutoff)
    cff_energy_forces(system, params, pairs, counters=counters)
    n_pairs = len(nonbonded_pairs(pairs, params))
    per_pair = nonbonded_flops_per_pair(counters, n_pairs)
    out.append(_check("cff_flops_per_pair", per_pair, [25, 30], 25 <= per_pair <= 30))
    return out


def check_cml_zero_solvent():
    solute = generate_polyalanine(WorkloadSpec(residues=2))
    boxed = solvate(solute, density=1e-9)  # box set, no waters fit
    model = init_model(0)
    e_cml = compose_forces("CMLsys", boxed, mlff_model=model).evaluate(boxed).energy
    e_mlff = compose_forces("MLFFsys", solute, mlff_model=model).evaluate(solute).energy
    return _check("cml_zero_solvent_equals_mlff", abs(e_cml - e_mlff), 0.0, e_cml == e_mlff)


def check_ns_per_day():
    v = ns_per_day(1000, 0.5, 43.2)
    return _check("ns_per_day_arithmetic", v, 1.0, v == 1.0)


def run_checks(perturb=None, only=None) -> dict:
    """Run every check (or those named in ``only``).

    ``perturb`` maps analytic forces to altered forces before the
    finite-difference comparisons; it exists to prove the gradient checks
    can fail.
    """
    suite = [
        ("aev_width", check_aev_width),
        ("ani_forces_fd", lambda: check_ani_forces(perturb)),
        ("et_forces_fd", lambda: check_et_forces(perturb)),
        ("cff_forces_fd", lambda: check_cff_forces(perturb)),
        ("nnp_aev_gradient_fd", check_nnp_gradient),
        ("rotation", check_invariance),
        ("permutation_exact", check_permutation),
        ("celllist_equals_bruteforce", check_neighbors),
        ("staged_equals_fused", check_strategies),
        ("counts", check_counts),
        ("cml_zero_solvent_equals_mlff", check_cml_zero_solvent),
        ("ns_per_day_arithmetic", check_ns_per_day),
    ]
    checks = []
    for name, fn in suite:
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            result = _check(name, repr(exc), None, False)
        for r in result if isinstance(result, list) else [result]:
            r["seconds"] = round(time.perf_counter() - t0, 3)
            checks.append(r)
    for c in checks:
        if isinstance(c["value"], float) and not math.isfinite(c["value"]):
            c["passed"] = False
    return {"schema_version": SCHEMA_VERSION, "passed": all(c["passed"] for c in checks), "checks": checks}
