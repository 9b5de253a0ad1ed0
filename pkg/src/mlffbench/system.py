"""Atomic systems and procedurally generated poly-alanine workloads.

Units throughout the package: Angstrom, amu, fs, kcal/mol, elementary charge.

Alanine residue template (10 atoms, in this order)::

    N  H  CA  HA  CB  HB1  HB2  HB3  C  O

The backbone atoms N, CA, C sit on an ideal alpha helix of radius 2.3 A at
helix parameters t = residue + {0, 1/3, 2/3}, with 100 degrees of twist and
1.5 A of rise per residue.  Consecutive backbone atoms are therefore 1.41 A
apart.  Substituents are placed in the local helix frame (radial ``e_r``,
tangential ``e_t``, axial ``e_z``):

    H   N  - 1.01 A along -e_z
    O   C  + 1.23 A along +e_z
    HA  CA + 1.09 A along (0.45 e_r - 0.89 e_z)
    CB  CA + 1.53 A along (0.89 e_r + 0.45 e_z)
    HBk CB + 1.09 A on a cone of 70.5 degrees around the CA->CB axis

Terminal caps (up to three atoms, taken in this order): a second amide H on
the first N, and OXT / HXT on the last C.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

SOLUTE = 0
SOLVENT = 1
ROLE_NAMES = ("solute", "solvent")


@dataclass(frozen=True)
class Element:
    symbol: str
    atomic_number: int
    mass: float


# Order fixes the species index used by descriptors and models.
ELEMENTS: tuple[Element, ...] = (
    Element("H", 1, 1.008),
    Element("C", 6, 12.011),
    Element("N", 7, 14.007),
    Element("O", 8, 15.999),
    Element("S", 16, 32.06),
    Element("F", 9, 18.998),
    Element("Cl", 17, 35.45),
)
SYMBOLS = tuple(e.symbol for e in ELEMENTS)
SPECIES_INDEX = {e.symbol: k for k, e in enumerate(ELEMENTS)}
MASSES = np.array([e.mass for e in ELEMENTS])


class SystemError_(ValueError):
    """Invalid atomic system or workload description."""


class ParseError(ValueError):
    pass


class MalformedLineError(ParseError):
    pass


class UnknownElementError(ParseError):
    pass


class CountMismatchError(ParseError):
    pass


def species_indices(symbols: Iterable[str]) -> np.ndarray:
    try:
        return np.array([SPECIES_INDEX[s] for s in symbols], dtype=np.int64)
    except KeyError as exc:
        raise UnknownElementError(f"unknown element symbol {exc.args[0]!r}") from None


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class AtomicSystem:
    """Immutable finite cluster of atoms.

    ``species`` holds indices into :data:`ELEMENTS`; ``roles`` holds
    :data:`SOLUTE` / :data:`SOLVENT`.  ``bonds`` is optional covalent
    connectivity (pairs of atom indices); ``box`` is ``(lo, hi)`` corners.
    """

    species: np.ndarray
    positions: np.ndarray
    roles: np.ndarray
    box: np.ndarray | None = None
    bonds: np.ndarray | None = None

    def __post_init__(self):
        species = _frozen(self.species, np.int64).reshape(-1)
        n = species.shape[0]
        positions = _frozen(self.positions, np.float64).reshape(n, 3)
        roles = _frozen(self.roles, np.int8).reshape(-1)
        if roles.shape[0] != n:
            raise SystemError_("species, positions and roles must have the same length")
        if n and (species.min() < 0 or species.max() >= len(ELEMENTS)):
            raise SystemError_("species index out of range")
        if not np.all(np.isfinite(positions)):
            raise SystemError_("positions must be finite")
        if n and not np.all((roles == SOLUTE) | (roles == SOLVENT)):
            raise SystemError_("roles must be solute (0) or solvent (1)")
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "roles", roles)
        if self.box is not None:
            box = _frozen(self.box, np.float64).reshape(2, 3)
            if n and (np.any(positions < box[0]) or np.any(positions > box[1])):
                raise SystemError_("atoms outside box")
            object.__setattr__(self, "box", box)
        if self.bonds is not None:
            bonds = _frozen(self.bonds, np.int64).reshape(-1, 2)
            if bonds.size and (bonds.min() < 0 or bonds.max() >= n):
                raise SystemError_("bond references a missing atom")
            object.__setattr__(self, "bonds", bonds)

    @property
    def n_atoms(self) -> int:
        return int(self.species.shape[0])

    def __len__(self) -> int:
        return self.n_atoms

    @property
    def symbols(self) -> list[str]:
        return [SYMBOLS[s] for s in self.species]

    @property
    def masses(self) -> np.ndarray:
        return MASSES[self.species]

    @property
    def atomic_numbers(self) -> np.ndarray:
        return np.array([ELEMENTS[s].atomic_number for s in self.species], dtype=np.int64)

    @property
    def solvent_mask(self) -> np.ndarray:
        return self.roles == SOLVENT

    @property
    def is_solvated(self) -> bool:
        return self.box is not None

    def with_positions(self, positions) -> "AtomicSystem":
        # the box only describes the generated configuration
        return replace(self, positions=positions, box=None)

    def subset(self, mask) -> "AtomicSystem":
        """Atoms selected by a boolean mask, with bonds restricted and renumbered."""
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        bonds = None
        if self.bonds is not None:
            keep = mask[self.bonds].all(axis=1)
            remap = np.full(self.n_atoms, -1, dtype=np.int64)
            remap[idx] = np.arange(idx.size)
            bonds = remap[self.bonds[keep]]
        return AtomicSystem(self.species[idx], self.positions[idx], self.roles[idx], None, bonds)

    def __eq__(self, other):
        if not isinstance(other, AtomicSystem):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (same(self.species, other.species) and same(self.positions, other.positions)
                and same(self.roles, other.roles) and same(self.box, other.box)
                and same(self.bonds, other.bonds))

    __hash__ = None


def make_system(symbols: Sequence[str], positions, roles=None, box=None, bonds=None) -> AtomicSystem:
    species = species_indices(symbols)
    if roles is None:
        roles = np.zeros(len(species), dtype=np.int8)
    return AtomicSystem(species, np.asarray(positions, dtype=float).reshape(-1, 3), roles, box, bonds)


def concatenate(systems: Sequence[AtomicSystem]) -> AtomicSystem:
    """Join systems into one, offsetting bond indices."""
    species = np.concatenate([s.species for s in systems])
    positions = np.concatenate([s.positions for s in systems]).reshape(-1, 3)
    roles = np.concatenate([s.roles for s in systems])
    bonds, offset = [], 0
    for s in systems:
        if s.bonds is not None:
            bonds.append(s.bonds + offset)
        offset += s.n_atoms
    return AtomicSystem(species, positions, roles, None,
                        np.concatenate(bonds) if bonds else None)


# ---------------------------------------------------------------------------
# workload generation
# ---------------------------------------------------------------------------

HELIX_RADIUS = 2.3
HELIX_RISE = 1.5
HELIX_TWIST = math.radians(100.0)
DEFAULT_SWEEP = tuple(range(10, 101, 10)) + tuple(range(200, 1001, 100))

_TEMPLATE_SYMBOLS = ("N", "H", "C", "H", "C", "H", "H", "H", "C", "O")
_CAP_SYMBOLS = ("H", "O", "H")
# intra-residue bonds as template offsets
_TEMPLATE_BONDS = ((0, 1), (0, 2), (2, 3), (2, 4), (4, 5), (4, 6), (4, 7), (2, 8), (8, 9))


@dataclass(frozen=True)
class WorkloadSpec:
    residues: int
    geometry: str = "helix"
    caps: int = 3
    solvated: bool = False
    water_density: float = 0.0334
    exclusion_radius: float = 2.5
    padding: float = 10.0
    seed: int = 0
    segment: int = 10  # residues per helical segment for the compact geometry

    def validate(self):
        if self.residues < 1:
            raise SystemError_("residues must be >= 1")
        if self.geometry not in ("helix", "compact"):
            raise SystemError_(f"unknown geometry {self.geometry!r}")
        if not 0 <= self.caps <= len(_CAP_SYMBOLS):
            raise SystemError_("caps must be between 0 and 3")
        if self.solvated and self.water_density <= 0:
            raise SystemError_("water_density must be positive")
        if self.exclusion_radius <= 0:
            raise SystemError_("exclusion_radius must be positive")
        if self.segment < 1:
            raise SystemError_("segment must be >= 1")


def _unit(v):
    return v / np.linalg.norm(v)


def _helix_point(t):
    ang = HELIX_TWIST * t
    return np.array([HELIX_RADIUS * math.cos(ang), HELIX_RADIUS * math.sin(ang), HELIX_RISE * t])


def _residue_coords(t0: float) -> np.ndarray:
    """Template coordinates of one residue whose N sits at helix parameter t0."""
    n, ca, c = (_helix_point(t0 + f) for f in (0.0, 1.0 / 3.0, 2.0 / 3.0))
    ang = HELIX_TWIST * (t0 + 1.0 / 3.0)
    e_r = np.array([math.cos(ang), math.sin(ang), 0.0])
    e_z = np.array([0.0, 0.0, 1.0])
    h = n - 1.01 * e_z
    o = c + 1.23 * e_z
    ha = ca + 1.09 * _unit(0.45 * e_r - 0.89 * e_z)
    cb = ca + 1.53 * _unit(0.89 * e_r + 0.45 * e_z)
    axis = _unit(cb - ca)
    p1 = _unit(np.cross(axis, e_z))
    p2 = np.cross(axis, p1)
    cone = math.radians(70.5)
    hbs = [cb + 1.09 * (math.cos(cone) * axis + math.sin(cone) * (math.cos(a) * p1 + math.sin(a) * p2))
           for a in (0.0, 2 * math.pi / 3, 4 * math.pi / 3)]
    return np.array([n, h, ca, ha, cb, *hbs, c, o])


def _cap_coords(first: np.ndarray, last: np.ndarray) -> np.ndarray:
    """Cap atoms: second amide H on the first N, OXT and HXT on the last C."""
    n, h, ca = first[0], first[1], first[2]
    bis = _unit((n - ca) + (n - h))
    h2 = n + 1.01 * bis
    c, o, ca_l = last[8], last[9], last[2]
    oxt = c + 1.25 * _unit(_unit(c - ca_l) + _unit(c - o))
    # bend C-O-H to about 109.5 degrees, pointing away from the carbonyl O
    d1 = _unit(oxt - c)
    p = (o - c) - np.dot(o - c, d1) * d1
    p = _unit(p)
    bend = math.radians(70.5)
    hxt = oxt + 0.97 * (math.cos(bend) * d1 - math.sin(bend) * p)
    return np.array([h2, oxt, hxt])


def _rot_x_pi(xyz):
    out = xyz.copy()
    out[:, 1] *= -1.0
    out[:, 2] *= -1.0
    return out


def _backbone(n_res: int) -> np.ndarray:
    return np.concatenate([_residue_coords(float(r)) for r in range(n_res)])


def _compact_layout(n_res: int, segment: int) -> np.ndarray:
    """Helical segments stacked on a serpentine 3-D grid (roughly cubic)."""
    n_seg = -(-n_res // segment)
    g = max(1, math.ceil(n_seg ** (1.0 / 3.0)))
    spacing_xy = 10.0
    spacing_z = segment * HELIX_RISE + 4.0
    base = _backbone(segment)
    base = base - base.mean(axis=0)
    flipped = _rot_x_pi(base)
    cells = []
    for layer in range(g):
        rows = range(g) if layer % 2 == 0 else reversed(range(g))
        for y in rows:
            cols = range(g) if (y + layer) % 2 == 0 else reversed(range(g))
            for x in cols:
                cells.append((x, y, layer))
    coords = []
    for s in range(n_seg):
        x, y, layer = cells[s]
        centre = np.array([x * spacing_xy, y * spacing_xy, layer * spacing_z])
        seg = base if s % 2 == 0 else flipped
        n_here = min(segment, n_res - s * segment)
        coords.append(seg[: 10 * n_here] + centre)
    return np.concatenate(coords)


def _chain_bonds(n_res: int, caps: int) -> np.ndarray:
    bonds = []
    for r in range(n_res):
        o = 10 * r
        bonds.extend((o + a, o + b) for a, b in _TEMPLATE_BONDS)
        if r:
            bonds.append((o - 2, o))  # peptide C(i-1)-N(i)
    base = 10 * n_res
    last_c = 10 * (n_res - 1) + 8
    cap_bonds = ((0, base), (last_c, base + 1), (base + 1, base + 2))
    bonds.extend(cap_bonds[:caps])
    return np.array(bonds, dtype=np.int64).reshape(-1, 2)


def generate_polyalanine(spec: WorkloadSpec) -> AtomicSystem:
    """Poly-alanine chain with ``10 * residues + caps`` atoms, optionally solvated."""
    spec.validate()
    n = spec.residues
    if spec.geometry == "helix":
        coords = _backbone(n)
    else:
        coords = _compact_layout(n, spec.segment)
    symbols = list(_TEMPLATE_SYMBOLS) * n
    if spec.caps:
        caps = _cap_coords(coords[:10], coords[-10:])[: spec.caps]
        coords = np.concatenate([coords, caps])
        symbols += list(_CAP_SYMBOLS[: spec.caps])
    coords = coords - coords.mean(axis=0)
    system = AtomicSystem(species_indices(symbols), coords,
                          np.zeros(len(symbols), dtype=np.int8), None,
                          _chain_bonds(n, spec.caps))
    if spec.solvated:
        system = solvate(system, spec.water_density, spec.exclusion_radius, spec.padding, seed=spec.seed)
    return system


def polyalanine_sweep(sizes: Iterable[int] = DEFAULT_SWEEP, **kwargs) -> list[AtomicSystem]:
    return [generate_polyalanine(WorkloadSpec(residues=n, **kwargs)) for n in sizes]


# TIP3P-like rigid water: O at origin, H at 0.9572 A, 104.52 degrees.
_WATER_HALF_ANGLE = math.radians(104.52) / 2
WATER_TEMPLATE = np.array([
    [0.0, 0.0, 0.0],
    [0.9572 * math.sin(_WATER_HALF_ANGLE), 0.0, 0.9572 * math.cos(_WATER_HALF_ANGLE)],
    [-0.9572 * math.sin(_WATER_HALF_ANGLE), 0.0, 0.9572 * math.cos(_WATER_HALF_ANGLE)],
])


def _random_rotations(rng, n):
    # uniform rotations from unit quaternions
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def solvate(system: AtomicSystem, density: float = 0.0334, exclusion_radius: float = 2.5,
            padding: float = 10.0, seed: int = 0) -> AtomicSystem:
    """Fill the padded solute bounding box with water on a jittered cubic lattice.

    Lattice spacing is ``density ** (-1/3)``; each site is jittered by at most
    5% of the spacing and the molecule gets a random orientation, which keeps
    every intermolecular H-H distance above 1 A.  Sites whose oxygen lies
    within ``exclusion_radius`` of a solute atom are skipped.
    """
    if density <= 0:
        raise SystemError_("density must be positive")
    if exclusion_radius <= 0:
        raise SystemError_("exclusion_radius must be positive")
    solute_mask = system.roles == SOLUTE
    if not solute_mask.any():
        raise SystemError_("system has no solute atoms")
    solute = system.positions[solute_mask]
    lo = system.positions.min(axis=0) - padding
    hi = system.positions.max(axis=0) + padding
    a = density ** (-1.0 / 3.0)
    counts = np.floor((hi - lo) / a).astype(int)
    rng = np.random.default_rng(seed)
    if np.all(counts > 0):
        margin = (hi - lo - counts * a) / 2
        grid = np.stack(np.meshgrid(*(np.arange(c) for c in counts), indexing="ij"), -1).reshape(-1, 3)
        sites = lo + margin + (grid + 0.5) * a
        sites = sites + rng.uniform(-0.05 * a, 0.05 * a, size=sites.shape)
        rots = _random_rotations(rng, len(sites))
        dist, _ = cKDTree(solute).query(sites, k=1)
        keep = dist >= exclusion_radius
        sites, rots = sites[keep], rots[keep]
    else:
        sites = np.zeros((0, 3))
        rots = np.zeros((0, 3, 3))
    waters = sites[:, None, :] + np.einsum("nij,aj->nai", rots, WATER_TEMPLATE)
    n_w = len(sites)
    start = system.n_atoms
    o_idx = start + 3 * np.arange(n_w)
    wbonds = np.stack([np.stack([o_idx, o_idx + 1], 1), np.stack([o_idx, o_idx + 2], 1)], 1).reshape(n_w * 2, 2)
    bonds = system.bonds if system.bonds is not None else np.zeros((0, 2), dtype=np.int64)
    return AtomicSystem(
        np.concatenate([system.species, np.tile(species_indices("OHH"), n_w)]),
        np.concatenate([system.positions, waters.reshape(-1, 3)]),
        np.concatenate([system.roles, np.full(3 * n_w, SOLVENT, dtype=np.int8)]),
        np.array([lo, hi]),
        np.concatenate([bonds, wbonds]),
    )


def min_pair_distance(positions) -> float:
    positions = np.asarray(positions)
    if len(positions) < 2:
        return math.inf
    d, _ = cKDTree(positions).query(positions, k=2)
    return float(d[:, 1].min())


# ---------------------------------------------------------------------------
# extended XYZ
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def format_system(system: AtomicSystem, comment: str = "") -> str:
    header = ["Properties=species:S:1:pos:R:3:role:S:1"]
    if system.box is not None:
        header.append('box="' + " ".join(_fmt(x) for x in system.box.ravel()) + '"')
    if system.bonds is not None:
        header.append('bonds="' + " ".join(f"{a}-{b}" for a, b in system.bonds) + '"')
    if comment:
        header.append(f'comment="{comment}"')
    lines = [str(system.n_atoms), " ".join(header)]
    for sym, (x, y, z), role in zip(system.symbols, system.positions, system.roles):
        lines.append(f"{sym} {_fmt(x)} {_fmt(y)} {_fmt(z)} {ROLE_NAMES[role]}")
    return "\n".join(lines) + "\n"


def write_system(system: AtomicSystem, path, comment: str = "", append: bool = False) -> None:
    with open(path, "a" if append else "w") as fh:
        fh.write(format_system(system, comment))


def _parse_header(line: str) -> dict:
    out = {}
    for key in ("box", "bonds"):
        tag = f'{key}="'
        pos = line.find(tag)
        if pos >= 0:
            end = line.find('"', pos + len(tag))
            if end < 0:
                raise MalformedLineError(f"unterminated {key} field in comment line")
            out[key] = line[pos + len(tag):end]
    return out


def parse_frames(text: str) -> list[AtomicSystem]:
    lines = text.splitlines()
    frames = []
    pos = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        try:
            count = int(lines[pos].strip())
        except ValueError:
            raise MalformedLineError(f"line {pos + 1}: expected atom count, got {lines[pos]!r}") from None
        if pos + 1 >= len(lines):
            raise CountMismatchError("missing comment line")
        meta = _parse_header(lines[pos + 1])
        body = []
        k = pos + 2
        while k < len(lines) and lines[k].strip() and len(lines[k].split()) != 1:
            body.append((k, lines[k]))
            k += 1
        if len(body) != count:
            raise CountMismatchError(f"header declares {count} atoms, found {len(body)}")
        symbols, coords, roles = [], [], []
        for lineno, raw in body:
            parts = raw.split()
            if len(parts) not in (4, 5):
                raise MalformedLineError(f"line {lineno + 1}: expected 'symbol x y z role'")
            if parts[0] not in SPECIES_INDEX:
                raise UnknownElementError(f"line {lineno + 1}: unknown element {parts[0]!r}")
            try:
                coords.append([float(p) for p in parts[1:4]])
            except ValueError:
                raise MalformedLineError(f"line {lineno + 1}: bad coordinate") from None
            role = parts[4] if len(parts) == 5 else "solute"
            if role not in ROLE_NAMES:
                raise MalformedLineError(f"line {lineno + 1}: unknown role {role!r}")
            symbols.append(parts[0])
            roles.append(ROLE_NAMES.index(role))
        box = None
        if "box" in meta:
            box = np.array([float(x) for x in meta["box"].split()]).reshape(2, 3)
        bonds = None
        if "bonds" in meta:
            toks = meta["bonds"].split()
            bonds = np.array([[int(x) for x in t.split("-")] for t in toks], dtype=np.int64).reshape(-1, 2)
        frames.append(make_system(symbols, np.array(coords).reshape(-1, 3), roles, box, bonds))
        pos = k
    return frames


def read_system(path) -> AtomicSystem:
    frames = parse_frames(Path(path).read_text())
    if not frames:
        raise MalformedLineError("empty file")
    return frames[0]


def read_frames(path) -> list[AtomicSystem]:
    return parse_frames(Path(path).read_text())
