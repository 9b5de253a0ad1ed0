"""Classical force field: harmonic bonds and angles, periodic dihedrals,
Lennard-Jones and Coulomb pairs under a smooth cutoff.

Energies in kcal/mol, distances in A, charges in e.  Nonbonded pairs skip
1-2 and 1-3 neighbors.  Each pair energy is multiplied by the cosine
envelope ``fc(R)`` so that energy and forces both vanish at the cutoff.

Nonbonded work is tallied in two stages: ``cff_nonbonded`` for the pair
kernel itself (29 operations per pair) and ``cff_switch`` for the
envelope.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .aev import cutoff_fn, cutoff_fn_grad
from .counters import FLOAT_BYTES, INDEX_BYTES, OpCounters, stage_of
from .errors import SingularityError
from .neighbors import PairList, build_pairs, ordered_scatter_add
from .potential import PotentialResult, timed, total_energy
from .system import SYMBOLS, AtomicSystem

COULOMB = 332.0637  # kcal/mol * A / e^2
MIN_DISTANCE = 1e-6

# generic per-element (epsilon kcal/mol, sigma A)
DEFAULT_LJ = {"H": (0.02, 2.5), "C": (0.086, 3.4), "N": (0.17, 3.25), "O": (0.21, 2.96),
              "S": (0.25, 3.56), "F": (0.061, 3.12), "Cl": (0.265, 4.4)}
# starting charges before per-molecule neutralization
BASE_CHARGE = {"H": 0.1, "C": -0.1, "N": -0.3, "O": -0.5, "S": -0.2, "F": -0.2, "Cl": -0.2}
COVALENT_RADIUS = {"H": 0.31, "C": 0.76, "N": 0.71, "O": 0.66, "S": 1.05, "F": 0.57, "Cl": 1.02}
BOND_K = 300.0
ANGLE_K = 50.0
DIHEDRAL_V = 0.3
DIHEDRAL_N = 3
DEFAULT_CUTOFF = 10.0


@dataclass(eq=False)
class CffParams:
    epsilon: np.ndarray  # per species index
    sigma: np.ndarray
    charges: np.ndarray  # per atom
    bonds: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    bond_k: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bond_r0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    angles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    angle_k: np.ndarray = field(default_factory=lambda: np.zeros(0))
    angle_theta0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dihedrals: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))
    dihedral_v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dihedral_n: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dihedral_phi0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cutoff: float = DEFAULT_CUTOFF

    def __post_init__(self):
        self.epsilon = np.asarray(self.epsilon, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.charges = np.asarray(self.charges, dtype=float)
        self.bonds = np.asarray(self.bonds, dtype=np.int64).reshape(-1, 2)
        self.angles = np.asarray(self.angles, dtype=np.int64).reshape(-1, 3)
        self.dihedrals = np.asarray(self.dihedrals, dtype=np.int64).reshape(-1, 4)
        if np.any(self.epsilon < 0) or np.any(self.sigma <= 0):
            raise ValueError("need epsilon >= 0 and sigma > 0")
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        n = len(self.charges)
        for name in ("bonds", "angles", "dihedrals"):
            t = getattr(self, name)
            if t.size and (t.min() < 0 or t.max() >= n):
                raise ValueError(f"{name} reference atoms outside 0..{n - 1}")

    @property
    def n_atoms(self) -> int:
        return len(self.charges)

    def mixed_tables(self):
        """Lorentz-Berthelot tables: 4*eps_ij and sigma_ij^2 per species pair."""
        eps = np.sqrt(np.outer(self.epsilon, self.epsilon))
        sig = 0.5 * (self.sigma[:, None] + self.sigma[None, :])
        return 4.0 * eps, sig * sig

    def exclusions(self) -> np.ndarray:
        """Sorted keys ``i * n + j`` (i < j) of 1-2 and 1-3 pairs."""
        n = self.n_atoms
        pairs = [self.bonds, self.angles[:, [0, 2]]]
        p = np.concatenate(pairs) if any(len(x) for x in pairs) else np.zeros((0, 2), dtype=np.int64)
        lo, hi = p.min(axis=1), p.max(axis=1)
        return np.unique(lo * n + hi)


def infer_bonds(system: AtomicSystem, tolerance: float = 1.2) -> np.ndarray:
    """Bonds from covalent radii: ``R < tolerance * (r_a + r_b)``."""
    radii = np.array([COVALENT_RADIUS[s] for s in SYMBOLS])[system.species]
    pairs = build_pairs(system, 2 * tolerance * radii.max() if len(radii) else 1.0)
    keep = (pairs.i < pairs.j) & (pairs.distances < tolerance * (radii[pairs.i] + radii[pairs.j]))
    return np.stack([pairs.i[keep], pairs.j[keep]], axis=1)


def _topology(n: int, bonds: np.ndarray):
    nbrs = [[] for _ in range(n)]
    for a, b in bonds:
        nbrs[a].append(b)
        nbrs[b].append(a)
    nbrs = [sorted(x) for x in nbrs]
    angles = [(a, b, c) for b in range(n) for x, a in enumerate(nbrs[b]) for c in nbrs[b][x + 1:]]
    dihedrals = []
    for b, c in bonds:
        for a in nbrs[b]:
            if a == c:
                continue
            for d in nbrs[c]:
                if d != b and d != a:
                    dihedrals.append((a, b, c, d))
    return (np.array(angles, dtype=np.int64).reshape(-1, 3),
            np.array(dihedrals, dtype=np.int64).reshape(-1, 4))


def molecule_labels(n: int, bonds: np.ndarray) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    g = coo_matrix((np.ones(len(bonds)), (bonds[:, 0], bonds[:, 1])), shape=(n, n)) if len(bonds) else \
        coo_matrix((n, n))
    return connected_components(g, directed=False)[1]


def assign_default_params(system: AtomicSystem, cutoff: float = DEFAULT_CUTOFF) -> CffParams:
    """Generic parameters; equilibrium lengths and angles taken from the input geometry."""
    n = system.n_atoms
    bonds = system.bonds if system.bonds is not None and len(system.bonds) else infer_bonds(system)
    bonds = np.sort(np.asarray(bonds, dtype=np.int64).reshape(-1, 2), axis=1)
    bonds = bonds[np.lexsort((bonds[:, 1], bonds[:, 0]))] if len(bonds) else bonds
    angles, dihedrals = _topology(n, bonds)
    q = np.array([BASE_CHARGE[s] for s in SYMBOLS])[system.species]
    labels = molecule_labels(n, bonds)
    if n:
        counts = np.bincount(labels)
        q = q - (np.bincount(labels, weights=q) / counts)[labels]
    x = system.positions
    r0 = _bond_geometry(x, bonds)[0]
    theta0 = _angle_geometry(x, angles)[0]
    return CffParams(
        epsilon=np.array([DEFAULT_LJ[s][0] for s in SYMBOLS]),
        sigma=np.array([DEFAULT_LJ[s][1] for s in SYMBOLS]),
        charges=q,
        bonds=bonds, bond_k=np.full(len(bonds), BOND_K), bond_r0=r0,
        angles=angles, angle_k=np.full(len(angles), ANGLE_K), angle_theta0=theta0,
        dihedrals=dihedrals, dihedral_v=np.full(len(dihedrals), DIHEDRAL_V),
        dihedral_n=np.full(len(dihedrals), float(DIHEDRAL_N)), dihedral_phi0=np.zeros(len(dihedrals)),
        cutoff=cutoff,
    )


def _bond_geometry(x, bonds):
    d = x[bonds[:, 1]] - x[bonds[:, 0]]
    r = np.sqrt((d * d).sum(axis=1))
    return r, d


def _angle_geometry(x, angles):
    u = x[angles[:, 0]] - x[angles[:, 1]]
    w = x[angles[:, 2]] - x[angles[:, 1]]
    cross = np.cross(u, w)
    s = np.sqrt((cross * cross).sum(axis=1))
    c = (u * w).sum(axis=1)
    return np.arctan2(s, c), u, w, s, c


def _dihedral_geometry(x, dih):
    b1 = x[dih[:, 1]] - x[dih[:, 0]]
    b2 = x[dih[:, 2]] - x[dih[:, 1]]
    b3 = x[dih[:, 3]] - x[dih[:, 2]]
    m = np.cross(b1, b2)
    nn = np.cross(b2, b3)
    b2n = np.sqrt((b2 * b2).sum(axis=1))
    phi = np.arctan2(b2n * (b1 * nn).sum(axis=1), (m * nn).sum(axis=1))
    return phi, b1, b2, b3, m, nn, b2n


def _keep(terms: np.ndarray, involved) -> np.ndarray:
    if involved is None or len(terms) == 0:
        return np.ones(len(terms), dtype=bool)
    return involved[terms].any(axis=1)


def _bonded(x, params: CffParams, involved, st, grad_parts, energy_parts):
    """Accumulate bonded energies (per atom) and gradients as (atoms, vectors) parts."""
    sel = _keep(params.bonds, involved)
    b = params.bonds[sel]
    if len(b):
        r, d = _bond_geometry(x, b)
        if r.min() < MIN_DISTANCE:
            raise SingularityError("bonded atoms coincide")
        dr = r - params.bond_r0[sel]
        k = params.bond_k[sel]
        e = k * dr * dr
        g = (2.0 * k * dr / r)[:, None] * d  # dE/d r_j
        grad_parts += [(b[:, 1], g), (b[:, 0], -g)]
        energy_parts += [(b[:, 0], 0.5 * e), (b[:, 1], 0.5 * e)]
        nb = len(b)
        st.count(add=nb * 10, mul=nb * 12, trans=nb, gather=2 * nb, scatter=4 * nb,
                 read=nb * (6 + 2) * FLOAT_BYTES + 2 * nb * INDEX_BYTES, write=nb * 8 * FLOAT_BYTES)
    sel = _keep(params.angles, involved)
    a = params.angles[sel]
    if len(a):
        theta, u, w, s, c = _angle_geometry(x, a)
        ru = np.sqrt((u * u).sum(axis=1))
        rw = np.sqrt((w * w).sum(axis=1))
        if ru.min() < MIN_DISTANCE or rw.min() < MIN_DISTANCE:
            raise SingularityError("angle arm of zero length")
        sin_t = s / (ru * rw)
        if sin_t.min() < 1e-8:
            raise SingularityError("linear angle")
        cos_t = c / (ru * rw)
        dt = theta - params.angle_theta0[sel]
        k = params.angle_k[sel]
        e = k * dt * dt
        de = 2.0 * k * dt
        # d theta / d u = (cos u/|u| - w/|w|) / (|u| sin)
        gu = (de / (ru * sin_t))[:, None] * (cos_t[:, None] * u / ru[:, None] - w / rw[:, None])
        gw = (de / (rw * sin_t))[:, None] * (cos_t[:, None] * w / rw[:, None] - u / ru[:, None])
        grad_parts += [(a[:, 0], gu), (a[:, 2], gw), (a[:, 1], -(gu + gw))]
        third = e / 3.0
        energy_parts += [(a[:, 0], third), (a[:, 1], third), (a[:, 2], third)]
        na = len(a)
        st.count(add=na * 30, mul=na * 45, trans=na * 4, gather=3 * na, scatter=6 * na,
                 read=na * (9 + 2) * FLOAT_BYTES + 3 * na * INDEX_BYTES, write=na * 12 * FLOAT_BYTES)
    sel = _keep(params.dihedrals, involved)
    dh = params.dihedrals[sel]
    if len(dh):
        phi, b1, b2, b3, m, nn, b2n = _dihedral_geometry(x, dh)
        mm = (m * m).sum(axis=1)
        nnn = (nn * nn).sum(axis=1)
        if mm.min() < 1e-12 or nnn.min() < 1e-12 or b2n.min() < MIN_DISTANCE:
            raise SingularityError("degenerate dihedral")
        v, per, phi0 = params.dihedral_v[sel], params.dihedral_n[sel], params.dihedral_phi0[sel]
        arg = per * phi - phi0
        e = 0.5 * v * (1.0 + np.cos(arg))
        de = -0.5 * v * per * np.sin(arg)
        ga = (-b2n / mm)[:, None] * m  # d phi / d r_a
        gd = (b2n / nnn)[:, None] * nn
        p = (b1 * b2).sum(axis=1) / (b2n * b2n)
        q = (b3 * b2).sum(axis=1) / (b2n * b2n)
        gb = -(1.0 + p)[:, None] * ga + q[:, None] * gd
        gc = p[:, None] * ga - (1.0 + q)[:, None] * gd
        de = de[:, None]
        grad_parts += [(dh[:, 0], de * ga), (dh[:, 1], de * gb), (dh[:, 2], de * gc), (dh[:, 3], de * gd)]
        quarter = 0.25 * e
        energy_parts += [(dh[:, k], quarter) for k in range(4)]
        nd = len(dh)
        st.count(add=nd * 45, mul=nd * 70, trans=nd * 4, gather=4 * nd, scatter=8 * nd,
                 read=nd * (12 + 3) * FLOAT_BYTES + 4 * nd * INDEX_BYTES, write=nd * 16 * FLOAT_BYTES)


def nonbonded_pairs(pairs: PairList, params: CffParams, involved=None):
    """Unordered pairs (i < j) inside the cutoff, minus exclusions and, given
    ``involved``, pairs with no involved atom.  Returns indices into ``pairs``."""
    sel = (pairs.i < pairs.j) & (pairs.distances <= params.cutoff)
    excl = params.exclusions()
    if len(excl):
        sel &= ~np.isin(pairs.i * params.n_atoms + pairs.j, excl)
    if involved is not None:
        sel &= involved[pairs.i] | involved[pairs.j]
    return np.flatnonzero(sel)


def cff_energy_forces(system: AtomicSystem, params: CffParams, pairs: PairList | None = None,
                      involved=None, counters: OpCounters | None = None,
                      deterministic: bool = False, timings: dict | None = None) -> PotentialResult:
    """Energy, per-atom energies and analytic forces.

    ``involved`` (bool per atom) restricts evaluation to terms touching at
    least one flagged atom; forces still land on every atom of such terms.
    """
    n = system.n_atoms
    if params.n_atoms != n:
        raise ValueError("parameters were assigned for a different system")
    counters = counters if counters is not None else OpCounters()
    timings = timings if timings is not None else {}
    if n == 0:
        return PotentialResult(0.0, np.zeros(0), np.zeros((0, 3)), counters, timings)
    x = system.positions
    if involved is not None:
        involved = np.asarray(involved, dtype=bool)
    grad_parts, energy_parts = [], []
    with timed(timings, "cff_nonbonded"):
        if pairs is None or pairs.cutoff < params.cutoff:
            pairs = build_pairs(system, params.cutoff)
        sel = nonbonded_pairs(pairs, params, involved)
        i, j = pairs.i[sel], pairs.j[sel]
        r = pairs.distances[sel]
        if len(r) and r.min() < MIN_DISTANCE:
            raise SingularityError("coincident atoms in the nonbonded list")
        d = pairs.vectors[sel]
        eps4_t, sig2_t = params.mixed_tables()
        si, sj = system.species[i], system.species[j]
        eps4, sig2 = eps4_t[si, sj], sig2_t[si, sj]
        qs = params.charges * np.sqrt(COULOMB)
        qq = qs[i] * qs[j]
        # pair kernel; operation tally per pair in brackets
        inv_r = 1.0 / r                                   # [1 mul]
        inv_r2 = inv_r * inv_r                            # [1 mul]
        s2 = sig2 * inv_r2                                # [1 mul]
        s6 = s2 * s2 * s2                                 # [2 mul]
        s12 = s6 * s6                                     # [1 mul]
        e_lj = eps4 * (s12 - s6)                          # [1 mul, 1 add]
        e_c = qq * inv_r                                  # [1 mul] (+1 mul forming qq)
        e_pair = e_lj + e_c                               # [1 add]
        f_r = (eps4 * (12.0 * s12 - 6.0 * s6) + e_c) * inv_r2  # [4 mul, 2 add]
        m = len(r)
        stage_of(counters, "cff_nonbonded").count(
            add=m * 12, mul=m * 17, gather=6 * m, scatter=4 * m,
            read=m * (4 + 4) * FLOAT_BYTES + 2 * m * INDEX_BYTES, write=m * 8 * FLOAT_BYTES)
        # cosine envelope: E S and the force term -(E S)' = f_r S - E S' / R
        sw = cutoff_fn(r, params.cutoff)
        dsw = cutoff_fn_grad(r, params.cutoff)
        f_r = f_r * sw - e_pair * dsw * inv_r
        e_pair = e_pair * sw
        stage_of(counters, "cff_switch").count(add=m * 2, mul=m * 8, trans=m * 2)
        g = -f_r[:, None] * d  # dE/d r_j        [3 mul] ; +-accumulation [6 add]
        half = 0.5 * e_pair                      # [1 mul] ; per-atom split [2 add]
        grad_parts += [(j, g), (i, -g)]
        energy_parts += [(i, half), (j, half)]
    with timed(timings, "cff_bonded"):
        _bonded(x, params, involved, stage_of(counters, "cff_bonded"), grad_parts, energy_parts)
    with timed(timings, "cff_reduce"):
        if grad_parts:
            atoms = np.concatenate([p[0] for p in grad_parts])
            grad = ordered_scatter_add(atoms, np.concatenate([p[1] for p in grad_parts]), n, deterministic)
            atoms = np.concatenate([p[0] for p in energy_parts])
            per_atom = ordered_scatter_add(atoms, np.concatenate([p[1] for p in energy_parts]), n, deterministic)
        else:
            grad, per_atom = np.zeros((n, 3)), np.zeros(n)
    return PotentialResult(total_energy(per_atom), per_atom, -grad, counters, timings)


def nonbonded_flops_per_pair(counters: OpCounters, n_pairs: int, with_switch: bool = False) -> float:
    if n_pairs == 0:
        return 0.0
    total = counters["cff_nonbonded"].flops
    if with_switch:
        total += counters["cff_switch"].flops
    return total / n_pairs


class CffPotential:
    """Force provider; ``mask`` selects the atoms whose terms are evaluated."""

    name = "cff"
    stages = ("cff_nonbonded", "cff_bonded", "cff_reduce")

    def __init__(self, params: CffParams | None = None, deterministic: bool = False):
        self.params = params
        self.deterministic = deterministic

    def evaluate(self, system: AtomicSystem, mask=None) -> PotentialResult:
        # equilibrium values come from the first geometry seen, then stay fixed
        if self.params is None:
            self.params = assign_default_params(system)
        return cff_energy_forces(system, self.params, involved=mask, deterministic=self.deterministic)
