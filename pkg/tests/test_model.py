import numpy as np
import pytest

from nhmm.data import NormStats
from nhmm.errors import ConfigError, ContractError, InputError
from nhmm.lattice import build_lattice, nll_loss
from nhmm.model import ModelConfig, expected_param_count, flat_start_init, param_count
from nhmm.numerics import AdamState, Tensor, adam_step, reverse_grad
from nhmm.numerics.logspace import gaussian_diag_logpdf

from .helpers import randomized_model, tiny_config


@pytest.fixture
def flat():
    return flat_start_init(tiny_config(), seed=0, initial_tau=0.3)


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig(vocab_size=3, acoustic_dim=2)
        assert cfg.states_per_symbol == 2
        assert cfg.variance_floor == 0.001

    @pytest.mark.parametrize(
        "kw",
        [
            {"states_per_symbol": 0},
            {"state_dim": -1},
            {"prenet_dims": ()},
            {"variance_floor": 0.0},
            {"prenet_dropout": 1.0},
            {"conv_kernel": 4},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            tiny_config(**kw)

    def test_dict_round_trip(self):
        cfg = tiny_config()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestEncode:
    def test_two_states_per_symbol(self, flat):
        sv = flat.encode([0, 1, 2, 3, 4])
        assert sv.n_states == 10 and sv.vectors.shape == (10, 3)
        assert sv.n_symbols == 5

    def test_one_state_per_symbol(self):
        model = flat_start_init(tiny_config(states_per_symbol=1), seed=0)
        assert model.encode([0, 1, 2, 3, 4]).n_states == 5

    def test_deterministic(self, flat):
        a = flat.encode([1, 2, 3]).vectors.data
        b = flat.encode([1, 2, 3]).vectors.data
        np.testing.assert_array_equal(a, b)

    def test_unknown_symbol_names_position(self, flat):
        with pytest.raises(InputError, match="position 2"):
            flat.encode([0, 1, 7])

    def test_empty(self, flat):
        with pytest.raises(InputError):
            flat.encode([])

    def test_padding_does_not_leak(self, flat):
        # batched encoding of a short sequence padded next to a long one
        short = flat.encode([2, 1]).vectors.data
        ids = np.array([[2, 1, 0, 0], [3, 4, 1, 2]])
        batched = flat.encode_batch(ids, np.array([2, 4])).data
        np.testing.assert_allclose(batched[0, :4], short, atol=1e-12)

    def test_gradients_reach_encoder(self):
        model = randomized_model(tiny_config(), seed=3)
        frames = np.random.default_rng(0).normal(size=(6, 3))
        res = nll_loss(model, [([0, 2], frames)])
        reverse_grad(res.loss)
        for name in ("encoder.embedding", "encoder.conv.weight", "encoder.lstm_bw.w_hh", "go_token"):
            assert np.any(model[name].grad != 0), name


class TestDecoder:
    def test_deterministic_without_dropout(self, flat):
        x = np.array([0.1, -0.2, 0.3])
        s0 = flat.initial_decoder_state()
        a = flat.decoder_advance(x, s0).h.data
        b = flat.decoder_advance(x, s0).h.data
        np.testing.assert_array_equal(a, b)

    def test_seeded_dropout(self, flat):
        x = np.array([0.1, -0.2, 0.3])
        s0 = flat.initial_decoder_state()
        a = flat.decoder_advance(x, s0, True, np.random.default_rng(5)).h.data
        b = flat.decoder_advance(x, s0, True, np.random.default_rng(5)).h.data
        np.testing.assert_array_equal(a, b)

    def test_first_frame_uses_go_token(self, flat):
        rng = np.random.default_rng(0)
        x1, x2 = rng.normal(size=(1, 4, 3)), rng.normal(size=(1, 4, 3))
        a1 = flat.decoder_sequence(x1).data
        a2 = flat.decoder_sequence(x2).data
        np.testing.assert_array_equal(a1[0, 0], a2[0, 0])
        assert not np.allclose(a1[0, 1], a2[0, 1])
        stepwise = flat.decoder_advance(None, flat.initial_decoder_state()).h.data
        np.testing.assert_allclose(stepwise, a1[0, 0], atol=1e-14)

    def test_dimension_mismatch(self, flat):
        with pytest.raises(ContractError):
            flat.decoder_advance(np.zeros(5), flat.initial_decoder_state())

    def test_teacher_forcing_matches_stepwise(self):
        model = randomized_model(tiny_config(), seed=4)
        frames = np.random.default_rng(1).normal(size=(5, 3))
        seq = model.decoder_sequence(frames[None]).data[0]
        state = model.initial_decoder_state()
        prev = None
        for t in range(5):
            state = model.decoder_advance(prev, state)
            np.testing.assert_allclose(state.h.data, seq[t], atol=1e-12)
            prev = frames[t]


class TestOutputNet:
    def test_flat_start_mean_and_scale(self, flat):
        rng = np.random.default_rng(0)
        for _ in range(5):
            p = flat.output_net(Tensor(rng.normal(size=3)), Tensor(rng.normal(size=4)))
            np.testing.assert_allclose(p.mu.data, 0.0, atol=0)
            np.testing.assert_allclose(p.sigma.data, 1.0, rtol=1e-14)

    def test_flat_start_tau_constant(self, flat):
        sv = flat.encode([0, 1, 2]).vectors
        frames = np.random.default_rng(0).normal(size=(8, 3))
        lat = build_lattice(flat, sv, frames)
        np.testing.assert_allclose(np.exp(lat.log_tau.data), 0.3, rtol=1e-12)
        assert np.ptp(lat.log_tau.data) == 0.0

    def test_log_forms_consistent(self):
        model = randomized_model(tiny_config(), seed=2, scale=3.0)
        rng = np.random.default_rng(0)
        p = model.output_net(Tensor(rng.normal(size=(20, 3))), Tensor(rng.normal(size=(20, 4))))
        tau = np.exp(p.log_tau.data)
        np.testing.assert_allclose(np.exp(p.log_one_minus_tau.data), 1.0 - tau, atol=1e-10)

    def test_states_differ_after_training_like_perturbation(self):
        model = randomized_model(tiny_config(), seed=1)
        a = Tensor(np.random.default_rng(0).normal(size=4))
        p1 = model.output_net(Tensor(np.array([1.0, 0.0, 0.0])), a)
        p2 = model.output_net(Tensor(np.array([0.0, 1.0, -1.0])), a)
        assert not np.allclose(p1.mu.data, p2.mu.data)
        assert not np.allclose(p1.log_tau.data, p2.log_tau.data)

    def test_sigma_floor(self):
        model = randomized_model(tiny_config(), seed=1, scale=50.0)
        rng = np.random.default_rng(0)
        p = model.output_net(Tensor(rng.normal(size=(200, 3)) * 10), Tensor(rng.normal(size=(200, 4))))
        assert p.sigma.data.min() >= model.cfg.variance_floor

    def test_markov_property(self):
        # Emission parameters for (state, frame) must not depend on which
        # states were visited earlier, only on the observed frames.
        model = randomized_model(tiny_config(), seed=5)
        sv = model.encode([0, 3, 1]).vectors
        frames = np.random.default_rng(2).normal(size=(6, 3))

        def run(path):
            state, prev, out = model.initial_decoder_state(), None, []
            for t, s in enumerate(path):
                state = model.decoder_advance(prev, state, True, np.random.default_rng(t))
                out.append(model.output_net(sv[s], state.h))
                prev = frames[t]
            return state, out

        final_a, _ = run([0, 0, 1, 2, 3, 4])
        final_b, _ = run([0, 1, 1, 1, 2, 2])
        pa = model.output_net(sv[4], final_a.h)
        pb = model.output_net(sv[4], final_b.h)
        for x, y in ((pa.mu, pb.mu), (pa.sigma, pb.sigma), (pa.log_tau, pb.log_tau)):
            np.testing.assert_array_equal(x.data, y.data)


class TestFlatStart:
    def test_zero_frame_logpdf_every_state(self):
        model = flat_start_init(tiny_config(acoustic_dim=1), seed=0)
        sv = model.encode([0, 1, 2]).vectors
        p = model.output_net(sv, model.decoder_advance(None, model.initial_decoder_state()).h)
        vals = gaussian_diag_logpdf(np.zeros((6, 1)), p.mu.data, p.sigma.data)
        np.testing.assert_allclose(vals, -0.918939, atol=1e-6)

    def test_tau_half(self):
        model = flat_start_init(tiny_config(), seed=0, initial_tau=0.5)
        assert model["outputnet.out.bias"].data[-1] == 0.0
        p = model.output_net(Tensor(np.ones(3)), Tensor(np.ones(4)))
        assert float(np.exp(p.log_tau.data)) == 0.5

    def test_output_weights_zero_other_layers_random(self, flat):
        assert np.all(flat["outputnet.out.weight"].data == 0)
        assert np.any(flat["outputnet.hidden.w_state"].data != 0)
        assert np.any(flat["encoder.embedding"].data != 0)

    def test_tau_from_data_stats(self):
        stats = NormStats(np.zeros(3), np.ones(3), n_frames=400, n_symbols=50)
        model = flat_start_init(tiny_config(), stats)
        assert model.initial_tau == pytest.approx(2 * 50 / 400)

    def test_tau_fallback(self):
        assert flat_start_init(tiny_config()).initial_tau == 0.1

    def test_one_step_moves_output_layer(self, flat):
        rng = np.random.default_rng(0)
        batch = [(rng.integers(0, 5, size=3), rng.normal(size=(9, 3))) for _ in range(2)]
        res = nll_loss(flat, batch)
        reverse_grad(res.loss)
        g = flat["outputnet.out.weight"].grad
        assert np.any(g != 0)
        params = flat.trainable()
        adam_step({k: p.data for k, p in params.items()},
                  {k: p.grad for k, p in params.items() if p.grad is not None},
                  AdamState(lr=1e-3))
        assert np.any(flat["outputnet.out.weight"].data != 0)

    def test_go_token_frozen_when_not_learnable(self):
        model = flat_start_init(tiny_config(learn_go_token=False))
        assert "go_token" not in model.trainable()


class TestParamCount:
    def test_embedding_alone(self):
        assert param_count({"emb": Tensor(np.zeros((10, 4)))})["total"] == 40

    def test_matches_hand_computed_formula(self):
        # embedding 20 + conv 39 + 2 LSTMs 168 + proj 42 + go 3 + prenet 16
        # + decoder LSTM 144 + output hidden 32 + output layer 35
        model = flat_start_init(tiny_config())
        counts = param_count(model)
        assert counts["total"] == 499
        assert counts["total"] == expected_param_count(model.cfg)
        assert counts["encoder.embedding"] == 20

    def test_two_states_larger(self):
        c2 = param_count(flat_start_init(tiny_config(states_per_symbol=2)))["total"]
        c1 = param_count(flat_start_init(tiny_config(states_per_symbol=1)))["total"]
        assert c2 > c1

    def test_default_config_formula(self):
        cfg = ModelConfig(vocab_size=8, acoustic_dim=4)
        assert param_count(flat_start_init(cfg))["total"] == expected_param_count(cfg)
