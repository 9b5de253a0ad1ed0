"""Closed-form operation and byte models, and their comparison with counters.

Conventions

* ``N`` atoms, ``M`` mean neighbors per atom inside the radial cutoff,
  ``M_ang`` inside the angular cutoff.
* Classical nonbonded cost: 25 operations per unordered pair, ``25 N M / 2``.
* AEV cost counts symmetry-function evaluations: 16 radial terms per
  neighbor and 32 angular terms per unordered neighbor pair, so
  ``N (16 M + 16 M^2)``.  When ``M_ang`` is given the quadratic term uses it.
* ET layer cost: ``c0 N k H C`` with ``c0`` fitted once from the counter.
* Bytes are algorithmic traffic, float64 elements and int64 indices, with
  no cache model.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .aev import AevParams, compute_aev
from .cff import CffParams, assign_default_params, cff_energy_forces, nonbonded_pairs
from .counters import FLOAT_BYTES, INDEX_BYTES, OpCounters
from .et import EtParams, et_energy
from .neighbors import build_pairs
from .nnp import DEFAULT_WIDTHS, NnpModel, init_model, nnp_energy
from .system import AtomicSystem

CFF_FLOPS_PER_PAIR = 25
RADIAL_TERMS = 16
ANGULAR_TERMS = 32


def predict_cff_flops(n_atoms, m) -> float:
    return CFF_FLOPS_PER_PAIR * n_atoms * m / 2


def predict_aev_flops(n_atoms, m, m_angular=None) -> float:
    """``N (16 M + 32 M^2 / 2)``; the quadratic term uses ``m_angular`` when given."""
    ma = m if m_angular is None else m_angular
    return n_atoms * (RADIAL_TERMS * m + ANGULAR_TERMS * ma * ma / 2)


def predict_aev_terms_exact(neighbor_counts_radial, neighbor_counts_angular) -> int:
    """Term count for a concrete neighbor histogram: 16 per pair, 32 per unordered triplet."""
    mr = np.asarray(neighbor_counts_radial, dtype=np.int64)
    ma = np.asarray(neighbor_counts_angular, dtype=np.int64)
    return int(RADIAL_TERMS * mr.sum() + ANGULAR_TERMS * (ma * (ma - 1) // 2).sum())


def predict_et_layer_flops(n_atoms, k, heads, channels, c0) -> float:
    return c0 * n_atoms * k * heads * channels


def et_layer_edge_counts(params: EtParams, system: AtomicSystem):
    """(edges, counted operations of layer 0) for one forward pass."""
    counters = OpCounters()
    pairs = build_pairs(system, params.cutoff)
    et_energy(system, pairs, params, counters)
    edges = int(np.count_nonzero(pairs.distances <= params.cutoff))
    return edges, counters["et_layer0"].flops


def calibrate_et_c0(params: EtParams, reference: AtomicSystem) -> float:
    """One-point fit of ``c0`` from layer-0 counted operations on ``reference``."""
    edges, flops = et_layer_edge_counts(params, reference)
    if edges == 0:
        raise ValueError("reference system has no ET edges")
    return flops / (edges * params.heads * params.channels)


# -- memory traffic ---------------------------------------------------------

STAGES = ("pairs", "aev_radial", "aev_angular", "aev_forward", "aev_backward", "nnp_forward",
          "nnp_backward", "et_forward", "et_backward", "cff")


def _p(params, key, default):
    if params is None:
        return default
    return params.get(key, default) if isinstance(params, dict) else getattr(params, key, default)


def estimate_memory_traffic(stage: str, n_atoms, m, params=None) -> dict:
    """Bytes read and written by ``stage`` for ``n_atoms`` atoms with ``m`` neighbors.

    ``params`` is an optional dict with keys ``m_angular``, ``radial_grid``
    (16), ``angular_grid`` (32), ``width`` (1008), ``widths`` (MLP widths),
    ``ensemble`` (1), ``channels`` (64), ``heads`` (4), ``layers`` (2),
    ``rbf`` (32).

    Per-stage element counts:

    pairs
        read 3N coordinates; write N M directed pairs of 2 indices,
        1 distance and 3 displacement components.
    aev_radial
        per pair read distance and neighbor species, write 16 terms.
    aev_angular
        per unordered triplet ``T = N Ma (Ma - 1) / 2`` read two distances,
        the angle and two species, write 32 terms.
    aev_forward
        radial + angular + the zeroed N x width output.
    aev_backward
        the forward reads again (tape), one gradient element read per term,
        3 per pair and 6 per triplet gradient writes, N x width gradient read
        and 3N force writes.
    nnp_forward / nnp_backward
        per atom and ensemble member, layer inputs read and outputs written;
        backward also re-reads the stored pre-activations.  Weights are read
        once per element and member.
    et_forward / et_backward
        per layer and edge: K RBF values, 8 gathered C-vectors and 4 scattered
        C-vectors forward; backward re-reads the cached edge tensors
        (14 C-vectors) and writes 6.  Node projections add 16 C per atom.
    cff
        per unordered pair 8 elements read and 8 written plus per-atom
        charges, positions and forces.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    n = float(n_atoms)
    m = float(m)
    ma = float(_p(params, "m_angular", m))
    g = _p(params, "radial_grid", 16)
    az = _p(params, "angular_grid", 32)
    width = _p(params, "width", 1008)
    pairs = n * m
    triplets = n * ma * max(ma - 1.0, 0.0) / 2.0
    fb, ib = FLOAT_BYTES, INDEX_BYTES
    if n == 0:
        return {"read": 0, "write": 0, "total": 0}
    if stage == "pairs":
        read, write = 3 * n * fb, pairs * (2 * ib + 4 * fb)
    elif stage == "aev_radial":
        read, write = pairs * (fb + ib), pairs * g * fb
    elif stage == "aev_angular":
        read, write = triplets * (3 * fb + 2 * ib), triplets * az * fb
    elif stage == "aev_forward":
        r1 = estimate_memory_traffic("aev_radial", n, m, params)
        r2 = estimate_memory_traffic("aev_angular", n, m, params)
        read = r1["read"] + r2["read"]
        write = r1["write"] + r2["write"] + n * width * fb
    elif stage == "aev_backward":
        fwd = estimate_memory_traffic("aev_forward", n, m, params)
        read = fwd["read"] + (pairs * g + triplets * az) * fb + n * width * fb
        write = (3 * pairs + 6 * triplets + 3 * n) * fb
    elif stage in ("nnp_forward", "nnp_backward"):
        widths = tuple(_p(params, "widths", DEFAULT_WIDTHS))
        ens = _p(params, "ensemble", 1)
        n_species = _p(params, "n_species", 1)
        weights = sum(i * o + o for i, o in zip(widths[:-1], widths[1:]))
        ins, outs = sum(widths[:-1]), sum(widths[1:])
        if stage == "nnp_forward":
            read = ens * (n * ins + n_species * weights) * fb
            write = ens * n * outs * fb
        else:
            read = ens * (n * 2 * outs + n_species * weights) * fb
            write = ens * n * ins * fb
    elif stage in ("et_forward", "et_backward"):
        c = _p(params, "channels", 64)
        layers = _p(params, "layers", 2)
        k = _p(params, "rbf", 32)
        node = n * 16 * c * fb
        if stage == "et_forward":
            read = layers * (pairs * (k + 8 * c) * fb + 2 * pairs * ib + node / 2)
            write = layers * (pairs * 4 * c * fb + node / 2)
        else:
            read = layers * (pairs * (k + 14 * c) * fb + 2 * pairs * ib + node)
            write = layers * (pairs * (k + 6 * c) * fb + node / 2) + 3 * n * fb
    else:  # cff
        half = pairs / 2
        read = half * (8 * fb + 2 * ib) + n * 4 * fb
        write = half * 8 * fb + n * 3 * fb
    read, write = int(round(read)), int(round(write))
    return {"read": read, "write": write, "total": read + write}


# -- reports ----------------------------------------------------------------

@dataclass
class CostReport:
    """stage -> analytic vs counted numbers for one configuration."""

    inputs: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)

    def add(self, stage, analytic_flops=None, counted_flops=None, analytic_bytes=None, counted_bytes=None):
        entry = {"analytic_flops": analytic_flops, "counted_flops": counted_flops,
                 "analytic_bytes": analytic_bytes, "counted_bytes": counted_bytes}
        if analytic_flops and counted_flops is not None:
            entry["counted_over_analytic"] = counted_flops / analytic_flops
        self.stages[stage] = {k: v for k, v in entry.items() if v is not None}
        return self

    def to_dict(self) -> dict:
        return {"schema_version": 1, "inputs": dict(self.inputs), "stages": dict(self.stages)}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    CSV_COLUMNS = ("stage", "analytic_flops", "counted_flops", "analytic_bytes", "counted_bytes",
                   "counted_over_analytic")

    def csv_rows(self):
        for stage, entry in sorted(self.stages.items()):
            yield [stage] + [entry.get(k, "") for k in self.CSV_COLUMNS[1:]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        w.writerows(self.csv_rows())
        return buf.getvalue()


def aev_cost_report(system: AtomicSystem, params: AevParams | None = None, strategy: str = "fused") -> CostReport:
    """Counted AEV terms against the closed-form term model."""
    params = params or AevParams()
    counters = OpCounters()
    pairs = build_pairs(system, params.radial_cutoff)
    compute_aev(system, pairs, params, strategy, counters=counters)
    n = system.n_atoms
    m = len(pairs) / n if n else 0.0
    close = pairs.distances <= params.angular_cutoff
    ma = np.bincount(pairs.i[close], minlength=n)
    m_ang = float(ma.mean()) if n else 0.0
    rep = CostReport({"N": n, "M": m, "M_angular": m_ang})
    rep.add("aev_radial", RADIAL_TERMS * n * m, counters["aev_radial"].terms)
    rep.add("aev_angular", ANGULAR_TERMS * n * m_ang ** 2 / 2, counters["aev_angular"].terms)
    rep.add("aev_terms", predict_aev_flops(n, m, m_ang),
            counters["aev_radial"].terms + counters["aev_angular"].terms,
            estimate_memory_traffic("aev_forward", n, m, {"m_angular": m_ang})["total"])
    return rep


@dataclass
class RatioReport:
    n_atoms: int
    cff_pairs: int
    cff_ops: int | None
    ani_ops: int | None
    ratio: float | None
    breakdown: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"n_atoms": self.n_atoms, "cff_pairs": self.cff_pairs, "cff_ops": self.cff_ops,
                "ani_ops": self.ani_ops, "ratio": self.ratio, "breakdown": self.breakdown}


ANI_FORWARD_STAGES = ("aev_radial", "aev_angular", "nnp_forward", "energy_sum")
CFF_NONBONDED_STAGES = ("cff_nonbonded", "cff_switch")


def mlff_vs_cff_ratio(system: AtomicSystem, model: NnpModel | None = None, cff_params: CffParams | None = None,
                      aev_params: AevParams | None = None) -> RatioReport:
    """Counted ANI forward operations (AEV + NNP) over counted CFF nonbonded operations.

    The CFF side is the executed nonbonded pair kernel including its cutoff
    switch; bonded terms are not part of either side.
    """
    n = system.n_atoms
    if n == 0:
        return RatioReport(0, 0, None, None, None)
    model = model if model is not None else init_model()
    aev_params = aev_params or AevParams()
    cff_params = cff_params if cff_params is not None else assign_default_params(system)
    c_cff = OpCounters()
    cff_pairs = build_pairs(system, cff_params.cutoff)
    cff_energy_forces(system, cff_params, cff_pairs, counters=c_cff)
    c_ani = OpCounters()
    aev, _ = compute_aev(system, None, aev_params, "fused", counters=c_ani)
    nnp_energy(aev, system.species, model, c_ani)
    cff_ops = c_cff.total(CFF_NONBONDED_STAGES).flops
    ani_ops = c_ani.total(ANI_FORWARD_STAGES).flops
    pairs = len(nonbonded_pairs(cff_pairs, cff_params))
    breakdown = {k: c_cff[k].flops for k in CFF_NONBONDED_STAGES}
    breakdown.update({k: c_ani[k].flops for k in ANI_FORWARD_STAGES})
    ratio = ani_ops / cff_ops if cff_ops else None
    return RatioReport(n, int(pairs), cff_ops, ani_ops, ratio, breakdown)


def log_log_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
