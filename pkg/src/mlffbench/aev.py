"""ANI-style atomic environment vectors and their exact adjoint.

Descriptor layout for S species, G radial grid points, and an angular grid
of A distance shifts times Z angle shifts::

    [ radial block of species 0 | ... | species S-1 | angular block of pair (0,0) | (0,1) | ... ]
      G columns each                                  A*Z columns each, pairs in triu order

Angular column ``a * Z + z`` pairs distance shift ``a`` with angle shift ``z``.

Two forward strategies produce the same matrix:

``staged``
    materialise every per-pair and per-triplet term array, then scatter-add
    (one pass per intermediate, memory proportional to pairs x grid).
``fused``
    one compiled pass per center atom; radial and angular terms go straight
    into that atom's row, triplets are enumerated on the fly.

The backward pass is shared: it consumes a tape of per-pair and per-triplet
geometry and returns dE/dr for every atom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .counters import FLOAT_BYTES, INDEX_BYTES, OpCounters, stage_of
from .errors import SingularityError, StaleTapeError
from .neighbors import PairList, TripletList, build_pairs, build_triplets, ordered_scatter_add
from .system import SYMBOLS, AtomicSystem

MIN_DISTANCE = 1e-6


def cutoff_fn(r, rc):
    """Cosine cutoff 0.5 * (cos(pi r / rc) + 1) inside ``rc``, zero outside."""
    r = np.asarray(r, dtype=float)
    return np.where(r <= rc, 0.5 * (np.cos(np.pi * r / rc) + 1.0), 0.0)


def cutoff_fn_grad(r, rc):
    r = np.asarray(r, dtype=float)
    return np.where(r <= rc, -0.5 * np.pi / rc * np.sin(np.pi * r / rc), 0.0)


@dataclass(frozen=True, eq=False)
class AevParams:
    radial_cutoff: float = 5.1
    angular_cutoff: float = 3.5
    radial_eta: np.ndarray = field(default_factory=lambda: np.full(16, 16.0))
    radial_shifts: np.ndarray = field(default_factory=lambda: 0.8 + np.arange(16) * (5.1 - 0.8) / 16)
    angular_eta: np.ndarray = field(default_factory=lambda: np.full(4, 8.0))
    angular_shifts: np.ndarray = field(default_factory=lambda: 0.9 + np.arange(4) * (3.5 - 0.9) / 4)
    zeta: np.ndarray = field(default_factory=lambda: np.full(8, 32.0))
    angle_shifts: np.ndarray = field(default_factory=lambda: np.arange(8) * np.pi / 8)
    species: tuple = SYMBOLS

    def __post_init__(self):
        for name in ("radial_eta", "radial_shifts", "angular_eta", "angular_shifts", "zeta", "angle_shifts"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        object.__setattr__(self, "species", tuple(self.species))
        if len(self.radial_eta) != len(self.radial_shifts):
            raise ValueError("radial eta/shift grids differ in length")
        if len(self.angular_eta) != len(self.angular_shifts) or len(self.zeta) != len(self.angle_shifts):
            raise ValueError("angular grids differ in length")
        if np.any(self.radial_eta <= 0) or np.any(self.angular_eta <= 0):
            raise ValueError("eta must be positive")
        if np.any(self.zeta < 1):
            raise ValueError("zeta must be >= 1")
        if not 0 < self.angular_cutoff <= self.radial_cutoff:
            raise ValueError("need 0 < angular cutoff <= radial cutoff")

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def radial_sublength(self) -> int:
        return len(self.radial_shifts)

    @property
    def angular_sublength(self) -> int:
        return len(self.angular_shifts) * len(self.angle_shifts)

    @property
    def radial_length(self) -> int:
        return self.n_species * self.radial_sublength

    @property
    def n_species_pairs(self) -> int:
        return self.n_species * (self.n_species + 1) // 2

    @property
    def width(self) -> int:
        return self.radial_length + self.n_species_pairs * self.angular_sublength

    def pair_index(self) -> np.ndarray:
        s = self.n_species
        a, b = np.triu_indices(s)
        idx = np.zeros((s, s), dtype=np.int64)
        idx[a, b] = np.arange(len(a))
        idx[b, a] = np.arange(len(a))
        return idx

    def to_dict(self) -> dict:
        return {
            "aev.radial_cutoff": self.radial_cutoff,
            "aev.angular_cutoff": self.angular_cutoff,
            "aev.radial_eta": self.radial_eta.tolist(),
            "aev.radial_shifts": self.radial_shifts.tolist(),
            "aev.angular_eta": self.angular_eta.tolist(),
            "aev.angular_shifts": self.angular_shifts.tolist(),
            "aev.zeta": self.zeta.tolist(),
            "aev.angle_shifts": self.angle_shifts.tolist(),
            "aev.species": list(self.species),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AevParams":
        kw = {k.split(".", 1)[1]: v for k, v in d.items() if k.startswith("aev.")}
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class Aev:
    values: np.ndarray
    params: AevParams

    def to_csv(self, path):
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")


@dataclass(eq=False)
class AevTape:
    """Geometry cached by the forward pass for :func:`aev_backward`."""

    params: AevParams
    positions: np.ndarray
    species: np.ndarray
    pairs: PairList
    triplets: TripletList
    deterministic: bool = False
    valid: bool = True
    # filled by the staged forward, or lazily by the backward
    fc: np.ndarray | None = None
    dfc: np.ndarray | None = None

    def invalidate(self):
        self.valid = False

    def check(self, positions=None):
        if not self.valid:
            raise StaleTapeError("AEV tape was invalidated")
        if positions is not None and not (positions is self.positions or np.array_equal(positions, self.positions)):
            raise StaleTapeError("positions changed since the AEV forward pass")


class LazyTriplets:
    """Triplet list built on first use; the fused forward enumerates triplets itself."""

    def __init__(self, pairs: PairList, cutoff: float):
        self._pairs, self._cutoff, self._built = pairs, cutoff, None

    def get(self) -> TripletList:
        if self._built is None:
            self._built = build_triplets(self._pairs, self._cutoff)
        return self._built

    def __len__(self):
        return len(self.get())

    def __getattr__(self, name):
        if name.startswith("_"):
            raise AttributeError(name)
        return getattr(self.get(), name)


def _radial_pairs(pairs: PairList, params: AevParams) -> np.ndarray:
    if pairs.cutoff <= params.radial_cutoff:
        return np.arange(len(pairs))
    return np.flatnonzero(pairs.distances <= params.radial_cutoff)


def radial_terms(pairs: PairList, species, params: AevParams, counters: OpCounters | None = None):
    """Per-(pair, grid point) radial contributions.

    Returns ``(rows, first_column, values)``: pair ``p`` adds
    ``values[p, g]`` to ``aev[rows[p], first_column[p] + g]``.
    """
    st = stage_of(counters, "aev_radial")
    sel = _radial_pairs(pairs, params)
    r = pairs.distances[sel]
    fc = cutoff_fn(r, params.radial_cutoff)
    diff = r[:, None] - params.radial_shifts
    values = np.exp(-params.radial_eta * diff * diff) * fc[:, None]
    n, g = values.shape
    st.count(add=n + n * g, mul=2 * n + 3 * n * g, trans=n + n * g, gather=n, terms=n * g,
             read=n * (FLOAT_BYTES + 2 * INDEX_BYTES), write=0)
    cols = np.asarray(species)[pairs.j[sel]] * params.radial_sublength
    return pairs.i[sel], cols, values


def _check_triplets(pairs: PairList, triplets: TripletList):
    if len(triplets) and (pairs.distances[triplets.pair_ij].min() < MIN_DISTANCE
                          or pairs.distances[triplets.pair_ik].min() < MIN_DISTANCE):
        raise SingularityError("degenerate triplet: coincident atoms, angle undefined")


def angular_terms(triplets: TripletList, pairs: PairList, species, params: AevParams,
                  counters: OpCounters | None = None):
    """Per-(triplet, grid point) angular contributions, same return convention as :func:`radial_terms`."""
    _check_triplets(pairs, triplets)
    st = stage_of(counters, "aev_angular")
    species = np.asarray(species)
    rc = params.angular_cutoff
    rij = pairs.distances[triplets.pair_ij]
    rik = pairs.distances[triplets.pair_ik]
    theta = triplets.theta
    t, a_n, z_n = len(triplets), len(params.angular_shifts), len(params.angle_shifts)
    fcfc = cutoff_fn(rij, rc) * cutoff_fn(rik, rc)
    ang = 2.0 ** (1.0 - params.zeta) * (1.0 + np.cos(theta[:, None] - params.angle_shifts)) ** params.zeta
    ravg = (rij + rik) * 0.5
    d = ravg[:, None] - params.angular_shifts
    rad = np.exp(-params.angular_eta * d * d) * fcfc[:, None]
    values = (rad[:, :, None] * ang[:, None, :]).reshape(t, a_n * z_n)
    st.count(add=t * (1 + 2 * z_n + a_n) + 2 * t,
             mul=t * (2 + z_n + 3 * a_n + a_n * z_n) + 4 * t,
             trans=t * (2 * z_n + a_n) + 2 * t,
             gather=4 * t, terms=t * a_n * z_n,
             read=t * (3 * FLOAT_BYTES + 3 * INDEX_BYTES))
    pidx = params.pair_index()[species[triplets.j], species[triplets.k]]
    cols = params.radial_length + pidx * params.angular_sublength
    return triplets.center, cols, values


def _scatter_block(out, rows, cols, values, deterministic, st):
    n, g = values.shape
    width = out.shape[1]
    if n == 0:
        return
    bins = (rows * width + cols)[:, None] + np.arange(g)
    flat = ordered_scatter_add(bins.ravel(), values.ravel()[:, None], out.size, deterministic)
    out += flat.reshape(out.shape)
    st.count(add=n * g, scatter=n * g, read=n * g * FLOAT_BYTES, write=n * g * FLOAT_BYTES)


def _canonical_order(pairs: PairList) -> np.ndarray:
    """Within each center: neighbors by distance, ties broken by displacement."""
    v = pairs.vectors
    return np.lexsort((v[:, 2], v[:, 1], v[:, 0], pairs.distances, pairs.i)).astype(np.int64)


@numba.njit(cache=True, fastmath=False)
def _fused_kernel(n_atoms, offsets, order, jidx, dist, vec, species, rad_cut, ang_cut,
                  r_eta, r_shift, a_eta, a_shift, zeta, theta_s, pair_index, radial_length, out):
    g_n = r_eta.shape[0]
    a_n = a_eta.shape[0]
    z_n = zeta.shape[0]
    ang_len = a_n * z_n
    max_m = 0
    for i in range(n_atoms):
        max_m = max(max_m, offsets[i + 1] - offsets[i])
    local = np.empty(max_m, dtype=np.int64)
    fz = np.empty(z_n)
    n_pairs = 0
    n_trip = 0
    pref = np.empty(z_n)
    for z in range(z_n):
        pref[z] = 2.0 ** (1.0 - zeta[z])
    for i in range(n_atoms):
        m = 0
        for q in range(offsets[i], offsets[i + 1]):
            p = order[q]
            r = dist[p]
            if r > rad_cut:
                continue
            fc = 0.5 * (math.cos(math.pi * r / rad_cut) + 1.0)
            base = species[jidx[p]] * g_n
            for g in range(g_n):
                d = r - r_shift[g]
                out[i, base + g] += math.exp(-r_eta[g] * d * d) * fc
            n_pairs += 1
            if r <= ang_cut:
                local[m] = p
                m += 1
        for a in range(m):
            pa = local[a]
            rij = dist[pa]
            fij = 0.5 * (math.cos(math.pi * rij / ang_cut) + 1.0)
            ux, uy, uz = vec[pa, 0], vec[pa, 1], vec[pa, 2]
            sj = species[jidx[pa]]
            for b in range(a + 1, m):
                pb = local[b]
                rik = dist[pb]
                fik = 0.5 * (math.cos(math.pi * rik / ang_cut) + 1.0)
                wx, wy, wz = vec[pb, 0], vec[pb, 1], vec[pb, 2]
                cx = uy * wz - uz * wy
                cy = uz * wx - ux * wz
                cz = ux * wy - uy * wx
                theta = math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), ux * wx + uy * wy + uz * wz)
                for z in range(z_n):
                    fz[z] = pref[z] * (1.0 + math.cos(theta - theta_s[z])) ** zeta[z]
                fcfc = fij * fik
                ravg = (rij + rik) * 0.5
                col0 = radial_length + pair_index[sj, species[jidx[pb]]] * ang_len
                for aa in range(a_n):
                    d = ravg - a_shift[aa]
                    ga = math.exp(-a_eta[aa] * d * d) * fcfc
                    for z in range(z_n):
                        out[i, col0 + aa * z_n + z] += ga * fz[z]
                n_trip += 1
    return n_pairs, n_trip


def _fused(system_species, pairs: PairList, params: AevParams, st_r, st_a, n_atoms):
    out = np.zeros((n_atoms, params.width))
    if len(pairs) == 0 or n_atoms == 0:
        return out
    close = pairs.distances <= params.angular_cutoff
    if close.any() and pairs.distances[close].min() < MIN_DISTANCE:
        raise SingularityError("degenerate triplet: coincident atoms, angle undefined")
    order = _canonical_order(pairs)
    n, t = _fused_kernel(n_atoms, pairs.offsets, order, pairs.j, pairs.distances, pairs.vectors,
                         np.asarray(system_species, dtype=np.int64), params.radial_cutoff,
                         params.angular_cutoff, params.radial_eta, params.radial_shifts,
                         params.angular_eta, params.angular_shifts, params.zeta, params.angle_shifts,
                         params.pair_index(), params.radial_length, out)
    g = params.radial_sublength
    a_n, z_n = len(params.angular_shifts), len(params.angle_shifts)
    # same per-element tally as the staged kernels, counted from the loop trip counts
    st_r.count(add=n + n * g + n * g, mul=2 * n + 3 * n * g, trans=n + n * g, gather=n, terms=n * g,
               scatter=0, read=n * (FLOAT_BYTES + 2 * INDEX_BYTES))
    st_a.count(add=t * (1 + 2 * z_n + a_n) + 2 * t + t * a_n * z_n,
               mul=t * (2 + z_n + 3 * a_n + a_n * z_n) + 4 * t,
               trans=t * (2 * z_n + a_n) + 2 * t + t,
               gather=4 * t, terms=t * a_n * z_n,
               read=t * (3 * FLOAT_BYTES + 3 * INDEX_BYTES))
    return out


def compute_aev(system: AtomicSystem, pairs: PairList | None = None, params: AevParams | None = None,
                strategy: str = "staged", triplets: TripletList | None = None,
                counters: OpCounters | None = None, deterministic: bool = False):
    """AEV matrix of ``system`` plus the tape needed for forces.

    ``pairs`` must cover the radial cutoff; they are built with a cell list
    when omitted.  ``deterministic`` makes the staged scatter order-free
    (bit-stable under atom relabelling); the fused path is always so.
    """
    params = params or AevParams()
    if pairs is None:
        pairs = build_pairs(system, params.radial_cutoff)
    if pairs.cutoff < params.radial_cutoff and len(pairs) and pairs.n_atoms > 1:
        raise ValueError("pair list cutoff is smaller than the radial cutoff")
    n = system.n_atoms
    species = system.species
    if triplets is None:
        cut = min(params.angular_cutoff, pairs.cutoff)
        triplets = build_triplets(pairs, cut) if strategy == "staged" else LazyTriplets(pairs, cut)
    tape = AevTape(params, system.positions, species, pairs, triplets, deterministic)
    if strategy == "staged":
        out = np.zeros((n, params.width))
        rows, cols, vals = radial_terms(pairs, species, params, counters)
        _scatter_block(out, rows, cols, vals, deterministic, stage_of(counters, "aev_radial"))
        del vals
        rows, cols, vals = angular_terms(triplets, pairs, species, params, counters)
        _scatter_block(out, rows, cols, vals, deterministic, stage_of(counters, "aev_angular"))
    elif strategy == "fused":
        out = _fused(species, pairs, params, stage_of(counters, "aev_radial"),
                     stage_of(counters, "aev_angular"), n)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    stage_of(counters, "aev_forward").count(write=out.size * FLOAT_BYTES, read=n * 3 * FLOAT_BYTES)
    return Aev(out, params), tape


def aev_backward(tape: AevTape, grad_aev: np.ndarray, positions=None,
                 counters: OpCounters | None = None, chunk: int = 65536) -> np.ndarray:
    """Vector-Jacobian product: ``dE/dr`` (N x 3) given ``dE/dAEV`` (N x width)."""
    tape.check(positions)
    params = tape.params
    pairs, trip = tape.pairs, tape.triplets
    st = stage_of(counters, "aev_backward")
    n = len(tape.species)
    grad_aev = np.asarray(grad_aev, dtype=float)
    if grad_aev.shape != (n, params.width):
        raise ValueError("gradient shape does not match the AEV")
    species = tape.species
    targets, contribs = [], []

    # radial part
    sel = _radial_pairs(pairs, params)
    if len(sel):
        r = pairs.distances[sel]
        rc = params.radial_cutoff
        fc = cutoff_fn(r, rc)
        dfc = cutoff_fn_grad(r, rc)
        diff = r[:, None] - params.radial_shifts
        ex = np.exp(-params.radial_eta * diff * diff)
        dg = ex * (-2.0 * params.radial_eta * diff * fc[:, None] + dfc[:, None])
        cols = (species[pairs.j[sel]] * params.radial_sublength)[:, None] + np.arange(params.radial_sublength)
        up = grad_aev[pairs.i[sel][:, None], cols]
        c = np.einsum("pg,pg->p", up, dg)
        if np.any(r < MIN_DISTANCE):
            raise SingularityError("coincident atoms: bond direction undefined")
        unit = pairs.vectors[sel] / r[:, None]
        f = c[:, None] * unit
        targets += [pairs.j[sel], pairs.i[sel]]
        contribs += [f, -f]
        p, g = len(sel), params.radial_sublength
        st.count(add=p * (2 + 2 * g + g), mul=p * (4 + 5 * g + g + 3), trans=p * (2 + g),
                 gather=p * g, read=p * (g + 5) * FLOAT_BYTES)

    # angular part, chunked over triplets
    if len(trip):
        _check_triplets(pairs, trip)
        rc = params.angular_cutoff
        pidx_table = params.pair_index()
        a_n, z_n = len(params.angular_shifts), len(params.angle_shifts)
        pref = 2.0 ** (1.0 - params.zeta)
        for s in range(0, len(trip), chunk):
            sl = slice(s, s + chunk)
            pa, pb = trip.pair_ij[sl], trip.pair_ik[sl]
            ctr = trip.center[sl]
            u, w = pairs.vectors[pa], pairs.vectors[pb]
            rij, rik = pairs.distances[pa], pairs.distances[pb]
            fij, fik = cutoff_fn(rij, rc), cutoff_fn(rik, rc)
            dij, dik = cutoff_fn_grad(rij, rc), cutoff_fn_grad(rik, rc)
            theta = trip.theta[sl]
            x = theta[:, None] - params.angle_shifts
            base = 1.0 + np.cos(x)
            fz = pref * base ** params.zeta
            dfz = -pref * params.zeta * base ** (params.zeta - 1.0) * np.sin(x)
            ravg = 0.5 * (rij + rik)
            d = ravg[:, None] - params.angular_shifts
            ex = np.exp(-params.angular_eta * d * d)
            fcfc = fij * fik
            ga = ex * fcfc[:, None]
            gdr = ex * (-params.angular_eta * d) * fcfc[:, None]  # d g / d R_ij from the mean distance
            dg_ij = gdr + ex * (dij * fik)[:, None]
            dg_ik = gdr + ex * (fij * dik)[:, None]
            col0 = params.radial_length + pidx_table[species[trip.j[sl]], species[trip.k[sl]]] * params.angular_sublength
            cols = col0[:, None] + np.arange(a_n * z_n)
            up = grad_aev[ctr[:, None], cols].reshape(-1, a_n, z_n)
            up_f = np.einsum("taz,tz->ta", up, fz)
            up_df = np.einsum("taz,tz->ta", up, dfz)
            c_theta = np.einsum("ta,ta->t", up_df, ga)
            c_ij = np.einsum("ta,ta->t", up_f, dg_ij)
            c_ik = np.einsum("ta,ta->t", up_f, dg_ik)
            # d theta / d u and d theta / d w, with n = u x w
            nvec = np.cross(u, w)
            nn = np.sqrt(np.einsum("tk,tk->t", nvec, nvec))
            nn = np.maximum(nn, 1e-300)
            dth_u = -np.cross(nvec, u) / (nn * rij * rij)[:, None]
            dth_w = -np.cross(w, nvec) / (nn * rik * rik)[:, None]
            fj = c_theta[:, None] * dth_u + (c_ij / rij)[:, None] * u
            fk = c_theta[:, None] * dth_w + (c_ik / rik)[:, None] * w
            targets += [trip.j[sl], trip.k[sl], ctr]
            contribs += [fj, fk, -(fj + fk)]
            t = len(pa)
            st.count(add=t * (3 * z_n + 3 * a_n + 4 * a_n * z_n + 30),
                     mul=t * (6 * z_n + 8 * a_n + 4 * a_n * z_n + 45),
                     trans=t * (3 * z_n + a_n + 5), gather=t * (a_n * z_n + 6),
                     read=t * (a_n * z_n + 12) * FLOAT_BYTES)
    if not targets:
        return np.zeros((n, 3))
    tgt = np.concatenate(targets)
    vals = np.concatenate(contribs)
    st.count(add=3 * len(tgt), scatter=3 * len(tgt), write=3 * len(tgt) * FLOAT_BYTES)
    return ordered_scatter_add(tgt, vals, n, tape.deterministic)


def aev_of(system: AtomicSystem, params: AevParams | None = None, strategy: str = "fused") -> np.ndarray:
    """Convenience: AEV values with freshly built neighbor lists."""
    return compute_aev(system, None, params, strategy)[0].values
