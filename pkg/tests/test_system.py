import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlffbench.system import (
    DEFAULT_SWEEP, SOLUTE, SOLVENT, AtomicSystem, CountMismatchError, MalformedLineError, UnknownElementError,
    WorkloadSpec, format_system, generate_polyalanine, make_system, min_pair_distance, parse_frames,
    read_frames, read_system, solvate, write_system,
)


@pytest.mark.parametrize("residues", [1, 2, 10, 37])
@pytest.mark.parametrize("caps", [0, 1, 2, 3])
def test_atom_count(residues, caps):
    s = generate_polyalanine(WorkloadSpec(residues=residues, caps=caps))
    assert s.n_atoms == 10 * residues + caps
    assert np.all(s.roles == SOLUTE)


def test_dipeptide_has_22_atoms(dipeptide):
    assert dipeptide.n_atoms == 22
    assert sorted(set(dipeptide.symbols)) == ["C", "H", "N", "O"]


@pytest.mark.parametrize("geometry", ["helix", "compact"])
def test_no_close_contacts(geometry):
    s = generate_polyalanine(WorkloadSpec(residues=60, geometry=geometry))
    assert min_pair_distance(s.positions) >= 0.95


def test_generation_is_deterministic():
    a = generate_polyalanine(WorkloadSpec(residues=20, geometry="compact"))
    b = generate_polyalanine(WorkloadSpec(residues=20, geometry="compact"))
    assert a == b


def test_bonds_reference_atoms_and_have_covalent_lengths():
    s = generate_polyalanine(WorkloadSpec(residues=5))
    d = np.linalg.norm(s.positions[s.bonds[:, 0]] - s.positions[s.bonds[:, 1]], axis=1)
    assert np.all((d > 0.9) & (d < 1.6))
    # a chain: one connected molecule, bonds = atoms - 1
    assert len(s.bonds) == s.n_atoms - 1


def test_default_sweep():
    assert DEFAULT_SWEEP[0] == 10 and DEFAULT_SWEEP[-1] == 1000 and len(DEFAULT_SWEEP) == 19


@pytest.mark.parametrize("bad", [dict(residues=0), dict(residues=3, geometry="sheet"), dict(residues=3, caps=4)])
def test_workload_validation(bad):
    with pytest.raises(ValueError):
        generate_polyalanine(WorkloadSpec(**bad))


def test_solvate_roles_box_and_clearance():
    solute = generate_polyalanine(WorkloadSpec(residues=3))
    s = solvate(solute, padding=5.0, seed=3)
    assert s.is_solvated
    assert np.count_nonzero(s.roles == SOLVENT) % 3 == 0 and np.any(s.roles == SOLVENT)
    water = s.positions[s.roles == SOLVENT]
    dmin = np.min(np.linalg.norm(water[:, None] - solute.positions[None], axis=2))
    assert dmin > 1.5
    assert min_pair_distance(s.positions) > 0.9
    assert np.array_equal(s.subset(s.roles == SOLUTE).positions, solute.positions)


def test_solvate_without_room_for_water():
    solute = generate_polyalanine(WorkloadSpec(residues=2))
    s = solvate(solute, density=1e-9)
    assert s.is_solvated and s.n_atoms == solute.n_atoms


def test_xyz_round_trip(tmp_path):
    s = solvate(generate_polyalanine(WorkloadSpec(residues=2)), padding=3.0)
    path = tmp_path / "s.xyz"
    write_system(s, path, comment="hello")
    back = read_system(path)
    assert back == s
    write_system(s, path, append=True)
    assert len(read_frames(path)) == 2


def test_xyz_errors():
    with pytest.raises(UnknownElementError):
        parse_frames("1\nx\nXx 0 0 0\n")
    with pytest.raises(CountMismatchError):
        parse_frames("2\nx\nH 0 0 0\n")
    with pytest.raises(MalformedLineError):
        parse_frames("1\nx\nH 0 zero 0\n")
    with pytest.raises(MalformedLineError):
        parse_frames("one\nx\nH 0 0 0\n")


def test_system_validation():
    with pytest.raises(ValueError):
        make_system(["H"], [[np.nan, 0, 0]])
    with pytest.raises(ValueError):
        AtomicSystem([0, 1], np.zeros((2, 3)), [0])
    with pytest.raises(ValueError):
        make_system(["H", "H"], np.zeros((2, 3)), bonds=[[0, 2]])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["H", "C", "N", "O", "S", "F", "Cl"]),
                          st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), max_size=8))
def test_format_parse_is_lossless(atoms):
    s = make_system([a[0] for a in atoms], [a[1:] for a in atoms])
    (back,) = parse_frames(format_system(s)) if atoms else (s,)
    assert back == s
