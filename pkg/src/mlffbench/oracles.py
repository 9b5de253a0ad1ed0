"""Independent reference computations used by the self-checks and tests."""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .system import AtomicSystem


def random_cluster(n_atoms: int, seed: int, density: float = 0.1, species=(0, 1, 2, 3),
                   min_distance: float = 0.9) -> AtomicSystem:
    """Random atoms in a cube at ``density`` atoms/A^3, no pair closer than ``min_distance``."""
    rng = np.random.default_rng(seed)
    side = (n_atoms / density) ** (1.0 / 3.0)
    pos = np.empty((0, 3))
    while len(pos) < n_atoms:
        p = rng.uniform(0.0, side, 3)
        if len(pos) == 0 or np.min(np.linalg.norm(pos - p, axis=1)) >= min_distance:
            pos = np.vstack([pos, p])
    sp = rng.choice(np.asarray(species), n_atoms)
    return AtomicSystem(sp, pos, np.zeros(n_atoms, dtype=np.int8))


def central_difference_forces(energy, positions, h: float = 1e-5) -> np.ndarray:
    """-dE/dr by central differences of ``energy(positions)`` per coordinate."""
    x = np.array(positions, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        for k in range(3):
            old = x[i, k]
            x[i, k] = old + h
            e1 = energy(x)
            x[i, k] = old - h
            e2 = energy(x)
            x[i, k] = old
            out[i, k] = -(e1 - e2) / (2 * h)
    return out


def relative_error(reference, value) -> float:
    reference = np.asarray(reference, dtype=float)
    scale = np.linalg.norm(reference)
    diff = np.linalg.norm(np.asarray(value, dtype=float) - reference)
    return float(diff / scale) if scale > 0 else float(diff)


def random_rotation(seed: int) -> np.ndarray:
    return Rotation.random(random_state=seed).as_matrix()


def moved(system: AtomicSystem, rotation=None, shift=None, permutation=None) -> AtomicSystem:
    """Rigidly moved and/or relabelled copy (bonds dropped when relabelling)."""
    x = system.positions
    if rotation is not None:
        x = x @ np.asarray(rotation).T
    if shift is not None:
        x = x + np.asarray(shift)
    sp, roles = system.species, system.roles
    bonds = system.bonds
    if permutation is not None:
        p = np.asarray(permutation)
        x, sp, roles = x[p], sp[p], roles[p]
        if bonds is not None:
            inv = np.empty_like(p)
            inv[p] = np.arange(len(p))
            bonds = inv[bonds]
    return AtomicSystem(sp, x, roles, None if rotation is not None else system.box, bonds)
