import numpy as np
import pytest

from mlffbench.aev import compute_aev
from mlffbench.counters import OpCounters
from mlffbench.errors import StaleTapeError, UnsupportedSpeciesError
from mlffbench.nnp import (AniPotential, count_nnp_ops, init_model, nnp_backward, nnp_energy, softplus,
                           softplus_grad)
from mlffbench.oracles import central_difference_forces, moved, random_cluster, random_rotation, relative_error
from mlffbench.system import make_system


def test_softplus_is_smooth_relu_limit():
    x = np.linspace(-3, 3, 61)
    assert np.all(softplus(x, 0.1) >= np.maximum(x, 0))
    assert np.max(softplus(x, 0.1) - np.maximum(x, 0)) <= 0.1 * np.log(2) + 1e-15
    h = 1e-6
    assert np.allclose((softplus(x + h, 0.1) - softplus(x - h, 0.1)) / (2 * h), softplus_grad(x, 0.1), atol=1e-7)


def test_default_ops_per_atom():
    model = init_model(0)
    assert model.widths == (1008, 256, 192, 160, 1)
    assert count_nnp_ops(model, 1) == 676160
    assert count_nnp_ops(model, 1, convention="macs") == 338080
    assert count_nnp_ops(init_model(0, ensemble_size=8), {"H": 3, "C": 2}) == 5 * 8 * 676160


def test_counted_forward_equals_analytic():
    s = random_cluster(25, 3)
    model = init_model(1, ensemble_size=2)
    c = OpCounters()
    aev, _ = compute_aev(s)
    nnp_energy(aev, s.species, model, c)
    assert c["nnp_forward"].arithmetic == count_nnp_ops(model, s.n_atoms)


def test_energy_is_sum_of_atom_energies():
    s = random_cluster(25, 3)
    model = init_model(0)
    aev, _ = compute_aev(s)
    e, per_atom, _ = nnp_energy(aev, s.species, model)
    assert e == pytest.approx(per_atom.sum(), rel=1e-14)
    # each atom's energy only depends on its own AEV row and element
    single = [nnp_energy(aev.values[k:k + 1], s.species[k:k + 1], model)[0] for k in range(3)]
    assert np.allclose(single, per_atom[:3], rtol=1e-13)


def test_ensemble_mean():
    s = random_cluster(10, 2)
    aev, _ = compute_aev(s)
    big = init_model(5, ensemble_size=3)
    parts = []
    for m in range(3):
        sub = init_model(5)
        sub.members = {k: [v[m]] for k, v in big.members.items()}
        parts.append(nnp_energy(aev, s.species, sub)[1])
    assert np.allclose(nnp_energy(aev, s.species, big)[1], np.mean(parts, axis=0), rtol=1e-13)


def test_gradient_wrt_aev(rng):
    s = random_cluster(6, 4)
    model = init_model(2)
    x = compute_aev(s)[0].values
    g = nnp_backward(nnp_energy(x, s.species, model)[2], model)
    cols = rng.choice(np.flatnonzero(x.any(axis=0)), 15, replace=False)
    fd = []
    for c in cols:
        xp, xm = x.copy(), x.copy()
        xp[:, c] += 1e-5
        xm[:, c] -= 1e-5
        fd.append((nnp_energy(xp, s.species, model)[0] - nnp_energy(xm, s.species, model)[0]) / 2e-5)
    assert relative_error(fd, g[:, cols].sum(axis=0)) < 1e-7


def test_forces_match_finite_differences():
    s = random_cluster(15, 11)
    pot = AniPotential(init_model(3))
    res = pot.evaluate(s)
    fd = central_difference_forces(lambda x: pot.evaluate(s.with_positions(x)).energy, s.positions)
    assert relative_error(fd, res.forces) < 1e-7
    assert np.max(np.abs(res.forces.sum(axis=0))) < 1e-9


def test_invariance_and_permutation():
    s = random_cluster(20, 6)
    pot = AniPotential(init_model(0), deterministic=True)
    ref = pot.evaluate(s)
    rot = random_rotation(4)
    res = pot.evaluate(moved(s, rot, [3.0, -1.0, 2.0]))
    assert res.energy == pytest.approx(ref.energy, rel=1e-12)
    assert np.allclose(res.forces, ref.forces @ rot.T, atol=1e-10)
    p = np.random.default_rng(0).permutation(20)
    res = pot.evaluate(moved(s, permutation=p))
    assert res.energy == ref.energy and np.array_equal(res.forces, ref.forces[p])


def test_mask_evaluates_subsystem():
    s = random_cluster(20, 6)
    pot = AniPotential(init_model(0))
    mask = np.arange(20) < 12
    res = pot.evaluate(s, mask)
    sub = pot.evaluate(s.subset(mask))
    assert res.energy == sub.energy
    assert not res.forces[~mask].any()


def test_errors():
    model = init_model(0, species=("H", "C"))
    s = make_system(["H", "O"], [[0, 0, 0], [0, 0, 1.0]])
    aev, _ = compute_aev(s)
    with pytest.raises(UnsupportedSpeciesError):
        nnp_energy(aev, s.species, model)
    with pytest.raises(ValueError):
        init_model(0, widths=(1008, 4))
    model = init_model(0)
    _, _, tape = nnp_energy(aev, s.species, model)
    tape.invalidate()
    with pytest.raises(StaleTapeError):
        nnp_backward(tape, model)
