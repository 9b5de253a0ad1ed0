import numpy as np
import pytest

from mlffbench.cff import (CffParams, CffPotential, assign_default_params, cff_energy_forces, infer_bonds,
                           molecule_labels, nonbonded_flops_per_pair, nonbonded_pairs)
from mlffbench.counters import OpCounters
from mlffbench.errors import SingularityError
from mlffbench.neighbors import build_pairs
from mlffbench.oracles import central_difference_forces, moved, random_rotation, relative_error
from mlffbench.system import WorkloadSpec, generate_polyalanine, make_system, solvate


def _lj_only(eps=0.2, sigma=3.0, cutoff=10.0):
    return CffParams(epsilon=np.full(7, eps), sigma=np.full(7, sigma), charges=np.zeros(2), cutoff=cutoff)


def test_lj_minimum():
    r_min = 2 ** (1 / 6) * 3.0
    s = make_system(["C", "C"], [[0, 0, 0], [0, 0, r_min]])
    params = _lj_only()
    res = cff_energy_forces(s, params)
    fc = 0.5 * (np.cos(np.pi * r_min / 10.0) + 1)
    assert res.energy == pytest.approx(-0.2 * fc, rel=1e-12)


def test_naive_pair_sum():
    system = generate_polyalanine(WorkloadSpec(residues=3))
    params = assign_default_params(system)
    params.bonds = np.zeros((0, 2), dtype=np.int64)
    params.angles = np.zeros((0, 3), dtype=np.int64)
    params.dihedrals = np.zeros((0, 4), dtype=np.int64)
    x, sp, q = system.positions, system.species, params.charges
    ref = 0.0
    for a in range(system.n_atoms):
        for b in range(a + 1, system.n_atoms):
            r = np.linalg.norm(x[a] - x[b])
            if r > params.cutoff:
                continue
            eps = np.sqrt(params.epsilon[sp[a]] * params.epsilon[sp[b]])
            sig = 0.5 * (params.sigma[sp[a]] + params.sigma[sp[b]])
            e = 4 * eps * ((sig / r) ** 12 - (sig / r) ** 6) + 332.0637 * q[a] * q[b] / r
            ref += e * 0.5 * (np.cos(np.pi * r / params.cutoff) + 1)
    assert cff_energy_forces(system, params).energy == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("kind", ["bonds", "angles", "dihedrals", "nonbonded"])
def test_each_term_matches_finite_differences(kind, rng):
    base = generate_polyalanine(WorkloadSpec(residues=3))
    params = assign_default_params(base)
    for other in {"bonds", "angles", "dihedrals"} - {kind}:
        setattr(params, other, np.zeros((0, getattr(params, other).shape[1]), dtype=np.int64))
    if kind != "nonbonded":
        params.epsilon[:] = 0.0
        params.charges[:] = 0.0
    s = base.with_positions(base.positions + rng.normal(0, 0.08, base.positions.shape))
    res = cff_energy_forces(s, params)
    fd = central_difference_forces(lambda x: cff_energy_forces(s.with_positions(x), params).energy, s.positions)
    assert res.energy != 0.0
    assert relative_error(fd, res.forces) < 1e-7


def test_reference_geometry_is_bonded_minimum():
    s = generate_polyalanine(WorkloadSpec(residues=2))
    params = assign_default_params(s)
    params.epsilon[:] = 0.0
    params.charges[:] = 0.0
    params.dihedral_v[:] = 0.0
    res = cff_energy_forces(s, params)
    assert abs(res.energy) < 1e-20 and np.max(np.abs(res.forces)) < 1e-9


def test_charges_neutral_per_molecule():
    s = solvate(generate_polyalanine(WorkloadSpec(residues=2)), padding=3.0)
    params = assign_default_params(s)
    labels = molecule_labels(s.n_atoms, params.bonds)
    assert labels.max() + 1 == 1 + np.count_nonzero(s.solvent_mask) // 3
    assert np.allclose(np.bincount(labels, weights=params.charges), 0.0, atol=1e-14)


def test_inferred_bonds_match_generated_topology():
    s = generate_polyalanine(WorkloadSpec(residues=4))
    inferred = set(map(tuple, infer_bonds(s).tolist()))
    generated = set(map(tuple, np.sort(s.bonds, axis=1).tolist()))
    assert generated <= inferred
    # the only extras are carbonyl O to next N, which share the peptide C
    angles = {tuple(sorted((a, c))) for a, _, c in assign_default_params(s).angles.tolist()}
    assert inferred - generated <= angles


def test_exclusions_and_cutoff():
    s = generate_polyalanine(WorkloadSpec(residues=4))
    params = assign_default_params(s, cutoff=6.0)
    pairs = build_pairs(s, 8.0)
    sel = nonbonded_pairs(pairs, params)
    got = set(zip(pairs.i[sel].tolist(), pairs.j[sel].tolist()))
    excluded = set(map(tuple, params.bonds.tolist())) | {tuple(sorted((a, c))) for a, _, c in params.angles}
    assert not got & excluded
    assert all(i < j for i, j in got)
    assert np.all(pairs.distances[sel] <= 6.0)


def test_ops_per_pair():
    s = generate_polyalanine(WorkloadSpec(residues=6))
    params = assign_default_params(s)
    c = OpCounters()
    pairs = build_pairs(s, params.cutoff)
    cff_energy_forces(s, params, pairs, counters=c)
    n = len(nonbonded_pairs(pairs, params))
    assert nonbonded_flops_per_pair(c, n) == 29
    assert nonbonded_flops_per_pair(c, n, with_switch=True) == 41


def test_involved_mask_selects_terms():
    s = solvate(generate_polyalanine(WorkloadSpec(residues=2)), padding=4.0)
    params = assign_default_params(s)
    full = cff_energy_forces(s, params)
    solvent = cff_energy_forces(s, params, involved=s.solvent_mask)
    solute_only = cff_energy_forces(s.subset(~s.solvent_mask), assign_default_params(s.subset(~s.solvent_mask)))
    both = cff_energy_forces(s, params, involved=np.ones(s.n_atoms, bool))
    assert both.energy == pytest.approx(full.energy, rel=1e-12)
    # every term touches solute only, or at least one solvent atom
    assert solute_only.energy + solvent.energy == pytest.approx(full.energy, rel=1e-10)
    assert np.allclose(solvent.forces.sum(axis=0), 0, atol=1e-9)


def test_invariance():
    s = generate_polyalanine(WorkloadSpec(residues=3))
    pot = CffPotential()
    ref = pot.evaluate(s)
    rot = random_rotation(2)
    res = pot.evaluate(moved(s, rot, [5.0, 0, 0]))
    assert res.energy == pytest.approx(ref.energy, rel=1e-12)
    assert np.allclose(res.forces, ref.forces @ rot.T, atol=1e-9)


def test_errors():
    s = make_system(["C", "C"], [[0, 0, 0], [0, 0, 0]])
    with pytest.raises(SingularityError):
        cff_energy_forces(s, _lj_only())
    with pytest.raises(ValueError):
        CffParams(epsilon=np.ones(7), sigma=np.zeros(7), charges=np.zeros(2))
    with pytest.raises(ValueError):
        cff_energy_forces(make_system(["C"], [[0, 0, 0]]), _lj_only())
