import numpy as np
import pytest

from mlffbench.cff import CffParams, CffPotential
from mlffbench.errors import ConfigurationError, DivergenceError
from mlffbench.md import (ACCEL, KB, SimConfig, TrajectoryStats, compose_forces, integrate, kinetic_energy,
                          maxwell_boltzmann, minimize, ns_per_day)
from mlffbench.nnp import init_model
from mlffbench.potential import PotentialResult
from mlffbench.system import WorkloadSpec, generate_polyalanine, make_system, solvate


def test_ns_per_day():
    assert ns_per_day(1000, 0.5, 43.2) == 1.0
    assert ns_per_day(2000, 0.5, 43.2) == 2.0
    assert ns_per_day(10, 1.0, 0.0) == float("inf")


def test_units():
    # 1 kcal/mol/A on 1 amu for 1 fs moves 0.5 * 4.184e-4 A
    assert ACCEL == pytest.approx(4.184e-4)
    masses = np.full(20000, 12.011)
    v = maxwell_boltzmann(masses, 300.0, seed=1)
    t = 2 * kinetic_energy(masses, v) / (3 * len(masses) * KB)
    assert t == pytest.approx(300.0, rel=0.02)
    assert np.allclose((masses[:, None] * v).sum(axis=0), 0.0, atol=1e-9)


class Harmonic:
    """Two atoms on a spring, for an analytic period check."""

    def __init__(self, k=100.0, r0=1.0):
        self.k, self.r0 = k, r0

    def evaluate(self, system, mask=None):
        d = system.positions[1] - system.positions[0]
        r = np.linalg.norm(d)
        e = self.k * (r - self.r0) ** 2
        f = -2 * self.k * (r - self.r0) * d / r
        return PotentialResult(e, np.array([e / 2, e / 2]), np.array([-f, f]))


def test_harmonic_period_and_energy():
    s = make_system(["C", "C"], [[0, 0, 0], [0, 0, 1.1]])
    cfg = SimConfig(dt=0.05, steps=4000, warmup_steps=0, temperature=0.0)
    stats = integrate(s, Harmonic(), cfg, velocities=np.zeros((2, 3)))
    mu = 12.011 / 2
    omega = np.sqrt(2 * 100.0 * ACCEL / mu)
    period = 2 * np.pi / omega
    z = stats.potential
    minima = np.flatnonzero((z[1:-1] < z[:-2]) & (z[1:-1] <= z[2:])) + 1
    # potential minima occur twice per period
    measured = 2 * np.mean(np.diff(minima)) * cfg.dt
    assert measured == pytest.approx(period, rel=1e-3)
    assert stats.energy_fluctuation() < 1e-3


def test_lj_dimer_conserves_energy():
    s = make_system(["C", "C"], [[0, 0, 0], [0, 0, 3.6]])
    params = CffParams(epsilon=np.full(7, 0.1), sigma=np.full(7, 3.4), charges=np.zeros(2))
    stats = integrate(s, CffPotential(params), SimConfig(dt=0.5, steps=2000, warmup_steps=0, temperature=50.0))
    assert stats.energy_fluctuation() < 1e-4


def test_stage_times_partition_elapsed():
    s = generate_polyalanine(WorkloadSpec(residues=2))
    stats = integrate(s, compose_forces("CFFsys", s), SimConfig(steps=20, warmup_steps=5))
    assert len(stats.potential) == 25 and len(stats.step_times) == 20
    assert stats.stage_times["update"] + stats.stage_times["force"] == pytest.approx(stats.elapsed, rel=1e-9)
    assert any(k.startswith("force/cff:") for k in stats.stage_times)
    d = stats.to_dict()
    assert d["ns_per_day"] == pytest.approx(ns_per_day(20, 0.5, stats.elapsed))
    assert set(d["stage_seconds_per_step"]) == set(d["stage_seconds"])


def test_energy_drift_definition():
    e = np.r_[np.full(10, -100.0), np.full(80, -100.5), np.full(10, -101.0)]
    stats = TrajectoryStats(100, 0, 0.5, 1.0, {}, np.zeros(100), e, np.zeros(100), -100.0,
                            np.zeros((1, 3)), np.zeros((1, 3)))
    assert stats.energy_drift() == pytest.approx(0.01)
    assert stats.energy_fluctuation() == pytest.approx(0.01)


def test_modes():
    solute = generate_polyalanine(WorkloadSpec(residues=2))
    solvated = solvate(solute, padding=4.0)
    model = init_model(0)
    with pytest.raises(ConfigurationError):
        compose_forces("CMLsys", solute, mlff_model=model)
    with pytest.raises(ConfigurationError):
        compose_forces("QMsys", solute)
    mlff = compose_forces("MLFFsys", solvated, mlff_model=model).evaluate(solvated)
    assert not mlff.forces[solvated.solvent_mask].any()
    cml = compose_forces("CMLsys", solvated, mlff_model=model).evaluate(solvated)
    assert cml.forces[solvated.solvent_mask].any()
    assert set(cml.timings) >= {"mlff:aev_forward", "cff:cff_nonbonded"}
    assert "cff:cff_nonbonded" in cml.counters


def test_cml_without_solvent_is_mlff_exactly():
    solute = generate_polyalanine(WorkloadSpec(residues=3))
    empty_box = solvate(solute, density=1e-9)
    model = init_model(0)
    a = compose_forces("CMLsys", empty_box, mlff_model=model).evaluate(empty_box)
    b = compose_forces("MLFFsys", solute, mlff_model=model).evaluate(solute)
    assert a.energy == b.energy and np.array_equal(a.forces, b.forces)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig(steps=10, warmup_steps=10)
    with pytest.raises(ConfigurationError):
        SimConfig(dt=0.0)
    with pytest.raises(ConfigurationError):
        SimConfig(dump_every=5)


class Exploding:
    def evaluate(self, system, mask=None):
        n = system.n_atoms
        e = float("nan") if system.positions[0, 0] > 0.01 else 0.0
        return PotentialResult(e, np.zeros(n), np.zeros((n, 3)))


def test_divergence_is_reported():
    s = make_system(["H", "H"], [[0, 0, 0], [1, 0, 0]])
    with pytest.raises(DivergenceError) as info:
        integrate(s, Exploding(), SimConfig(steps=100, warmup_steps=0), velocities=[[0.01, 0, 0], [0, 0, 0]])
    assert info.value.step == 3  # x = 0.005 A per step crosses 0.01 at step 3


def test_trajectory_dump(tmp_path):
    from mlffbench.system import read_frames
    s = generate_polyalanine(WorkloadSpec(residues=1))
    path = tmp_path / "t.xyz"
    integrate(s, compose_forces("CFFsys", s), SimConfig(steps=10, warmup_steps=0, dump_every=5, dump_path=str(path)))
    assert len(read_frames(path)) == 3


def test_minimize_lowers_energy():
    s = generate_polyalanine(WorkloadSpec(residues=3))
    pot = compose_forces("CFFsys", s)
    e0 = pot.evaluate(s).energy
    relaxed, res = minimize(s, pot, max_iter=50)
    assert res.energy < e0


def test_deterministic_trajectory_repeats_bitwise():
    s = generate_polyalanine(WorkloadSpec(residues=2))
    cfg = SimConfig(mode="MLFFsys", steps=10, warmup_steps=2, deterministic=True, seed=3)
    runs = [integrate(s, compose_forces("MLFFsys", s, mlff_model=init_model(0), deterministic=True), cfg)
            for _ in range(2)]
    assert np.array_equal(runs[0].final_positions, runs[1].final_positions)
    assert np.array_equal(runs[0].total, runs[1].total)
    assert runs[0].counters == runs[1].counters


def test_solvated_atoms_may_leave_the_generation_box():
    s = solvate(generate_polyalanine(WorkloadSpec(residues=1)), padding=3.0)
    v = np.zeros((s.n_atoms, 3))
    v[-3:] = [0.5, 0.0, 0.0]  # last water, A/fs: 7.5 A in 30 steps
    stats = integrate(s, compose_forces("CFFsys", s), SimConfig(steps=30, warmup_steps=0), velocities=v)
    assert stats.final_positions[-1, 0] > s.box[1, 0]


def test_cml_solvent_forces_equal_pure_cff():
    solute = generate_polyalanine(WorkloadSpec(residues=2))
    solvated = solvate(solute, padding=4.0)
    model = init_model(0)
    cml = compose_forces("CMLsys", solvated, mlff_model=model).evaluate(solvated)
    cff = compose_forces("CFFsys", solvated).evaluate(solvated)
    w = solvated.solvent_mask
    np.testing.assert_allclose(cml.forces[w], cff.forces[w], rtol=0, atol=1e-9 * np.abs(cff.forces).max())
