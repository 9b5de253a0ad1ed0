import numpy as np
import pytest

from mlffbench.et import EtPotential, init_et
from mlffbench.modelio import ModelFormatError, from_bytes, from_json, load_model, save_model, to_bytes, to_json
from mlffbench.nnp import AniPotential, init_model
from mlffbench.oracles import random_cluster


@pytest.mark.parametrize("suffix", [".json", ".bin"])
def test_round_trip_preserves_energies(tmp_path, suffix):
    s = random_cluster(15, 0)
    for model, pot in ((init_model(1, ensemble_size=2), AniPotential), (init_et(2), EtPotential)):
        path = tmp_path / f"m{suffix}"
        save_model(model, path)
        back = load_model(path)
        a, b = pot(model).evaluate(s), pot(back).evaluate(s)
        assert a.energy == b.energy and np.array_equal(a.forces, b.forces)


def test_in_memory_encodings_agree():
    model = init_et(0, channels=8, heads=2, rbf_count=4)
    a, b = from_json(to_json(model)), from_bytes(to_bytes(model))
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)


def test_corrupt_files():
    with pytest.raises(ModelFormatError):
        from_bytes(b"NOTMODEL" + b"\0" * 16)
    with pytest.raises(ModelFormatError):
        from_bytes(to_bytes(init_model(0, widths=(1008, 2, 1)))[:-8])
    with pytest.raises(ModelFormatError):
        from_json('{"format": "something-else"}')
    model = init_model(0, widths=(1008, 2, 1))
    model.members["H"][0].weights[0][0, 0] = np.nan
    with pytest.raises(ModelFormatError):
        to_json(model)
