import numpy as np
import pytest

from nhmm.checkpoint import Checkpoint, content_hash, file_hash, load_checkpoint, save_checkpoint, to_bytes
from nhmm.data import NormStats, Vocabulary
from nhmm.errors import FormatError
from nhmm.lattice import nll_loss
from nhmm.numerics import AdamState, adam_step, reverse_grad

from .helpers import randomized_model, tiny_config


@pytest.fixture
def ckpt():
    model = randomized_model(tiny_config(), seed=1)
    rng = np.random.default_rng(0)
    model.zero_grad()
    reverse_grad(nll_loss(model, [([0, 1], rng.normal(size=(6, 3)))]).loss)
    params = model.trainable()
    adam = AdamState(lr=2e-3)
    adam_step({k: p.data for k, p in params.items()}, {k: p.grad for k, p in params.items()}, adam)
    norm = NormStats(np.array([0.5, -1.0, 2.0]), np.array([1.5, 0.25, 3.0]), 120, 30)
    return Checkpoint(model, norm, Vocabulary(list("abcde")), 1, adam, {"seed": 4})


def test_round_trip(tmp_path, ckpt):
    digest = save_checkpoint(tmp_path / "c.nhmc", ckpt)
    assert digest == file_hash(tmp_path / "c.nhmc") == content_hash(to_bytes(ckpt))
    back = load_checkpoint(tmp_path / "c.nhmc")
    assert back.model.cfg == ckpt.model.cfg
    assert back.model.initial_tau == ckpt.model.initial_tau
    for name, p in ckpt.model.params.items():
        np.testing.assert_array_equal(back.model[name].data, p.data.astype(np.float32))
    np.testing.assert_array_equal(back.norm.std, ckpt.norm.std)
    assert (back.norm.n_frames, back.norm.n_symbols) == (120, 30)
    assert back.vocab.symbols == list("abcde")
    assert back.update == 1 and back.run_config == {"seed": 4}


def test_adam_state_preserved(tmp_path, ckpt):
    save_checkpoint(tmp_path / "c.nhmc", ckpt)
    a = load_checkpoint(tmp_path / "c.nhmc").adam
    assert (a.lr, a.step) == (2e-3, 1)
    assert set(a.m) == set(ckpt.adam.m)
    for k in a.m:
        np.testing.assert_allclose(a.m[k], ckpt.adam.m[k], rtol=1e-6, atol=1e-30)
        np.testing.assert_allclose(a.v[k], ckpt.adam.v[k], rtol=1e-6, atol=1e-30)


def test_loaded_model_is_trainable(tmp_path, ckpt):
    save_checkpoint(tmp_path / "c.nhmc", ckpt)
    model = load_checkpoint(tmp_path / "c.nhmc").model
    reverse_grad(nll_loss(model, [([2], np.zeros((3, 3)))]).loss)
    assert model["outputnet.out.weight"].grad is not None


def test_resaving_is_stable(tmp_path, ckpt):
    save_checkpoint(tmp_path / "a.nhmc", ckpt)
    back = load_checkpoint(tmp_path / "a.nhmc")
    assert save_checkpoint(tmp_path / "b.nhmc", back) == file_hash(tmp_path / "a.nhmc")


def test_bad_magic(tmp_path):
    (tmp_path / "c.nhmc").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError) as e:
        load_checkpoint(tmp_path / "c.nhmc")
    assert e.value.offset == 0


def test_truncated(tmp_path, ckpt):
    save_checkpoint(tmp_path / "c.nhmc", ckpt)
    blob = (tmp_path / "c.nhmc").read_bytes()
    (tmp_path / "d.nhmc").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "d.nhmc")
