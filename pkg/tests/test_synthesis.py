import math
from fractions import Fraction

import numpy as np
import pytest

from nhmm.errors import ConfigError, InputError
from nhmm.model import flat_start_init
from nhmm.synthesis import (
    DEFAULT_QUANTILE,
    SynthesisOptions,
    format_rate_report,
    quantile_advance,
    quantile_duration,
    rate_report,
    sampled_advance,
    synthesize,
)

from .helpers import randomized_model, tiny_config


def constant_tau_model(tau, K=2):
    return flat_start_init(tiny_config(states_per_symbol=K), seed=0, initial_tau=tau)


def closed_form_duration(tau, q):
    """min{d : 1 - (1 - tau)^d >= q} in exact rational arithmetic."""
    tau, q = Fraction(str(tau)), Fraction(str(q))
    d = 1
    while 1 - (1 - tau) ** d < q:
        d += 1
    return d


class TestQuantileAdvance:
    def test_half_half_advances_after_one(self):
        assert quantile_advance([0.5], 0.5)

    def test_tau_tenth(self):
        assert quantile_duration(0.1, 0.5) == 7
        assert quantile_duration(0.1, 0.9) == 22
        assert not quantile_advance([0.1] * 6, 0.5)
        assert quantile_advance([0.1] * 7, 0.5)

    def test_frame_dependent_history(self):
        # survival after two frames is 0.8 * 0.4 = 0.32
        assert not quantile_advance([0.2], 0.6)
        assert quantile_advance([0.2, 0.6], 0.6)
        assert not quantile_advance([0.2, 0.6], 0.7)

    def test_larger_q_never_advances_earlier(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            hist = rng.uniform(0.01, 0.99, size=rng.integers(1, 10))
            q1, q2 = np.sort(rng.uniform(0.01, 0.99, size=2))
            if quantile_advance(hist, q2):
                assert quantile_advance(hist, q1)

    @pytest.mark.parametrize("tau", [0.1, 0.3, 0.5])
    @pytest.mark.parametrize("q", [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_closed_form(self, tau, q):
        assert quantile_duration(tau, q) == closed_form_duration(tau, q)

    def test_frozen_table(self):
        table = {0.1: [1, 4, 7, 12, 22], 0.3: [1, 1, 2, 4, 7], 0.5: [1, 1, 1, 2, 4]}
        for tau, want in table.items():
            assert [quantile_duration(tau, q) for q in (0.1, 0.3, 0.5, 0.7, 0.9)] == want


class TestSampledAdvance:
    def test_near_one(self):
        rng = np.random.default_rng(0)
        frac = np.mean([sampled_advance(1 - 1e-9, rng) for _ in range(1000)])
        assert 0.99 <= frac <= 1.0

    def test_half(self):
        rng = np.random.default_rng(1)
        frac = np.mean([sampled_advance(0.5, rng) for _ in range(10_000)])
        assert abs(frac - 0.5) <= 0.02

    def test_reproducible(self):
        a = [sampled_advance(0.3, r) for r in [np.random.default_rng(7)] for _ in range(50)]
        b = [sampled_advance(0.3, r) for r in [np.random.default_rng(7)] for _ in range(50)]
        assert a == b


class TestSynthesize:
    def test_constant_tau_mean_mode(self):
        model = constant_tau_model(0.3)
        res = synthesize(model, [0, 1, 2], SynthesisOptions(q=0.5))
        assert res.reason == "completed"
        assert np.all(res.frames == 0.0)
        d = closed_form_duration(0.3, 0.5)
        assert res.durations.tolist() == [d] * 6
        assert res.n_frames == 6 * d

    def test_default_q_depends_on_states_per_symbol(self):
        for K in (1, 2):
            res = synthesize(constant_tau_model(0.2, K), [1, 2])
            d = closed_form_duration(0.2, DEFAULT_QUANTILE[K])
            assert res.durations.tolist() == [d] * (2 * K)

    def test_same_seed_bit_identical(self):
        model = randomized_model(tiny_config(), seed=3)
        for mode in ("mean", "sampled"):
            opts = SynthesisOptions(acoustic_mode=mode, duration_mode="sampled", seed=11)
            a, b = synthesize(model, [0, 4, 2], opts), synthesize(model, [0, 4, 2], opts)
            assert a.frames.tobytes() == b.frames.tobytes()
            np.testing.assert_array_equal(a.alignment.states, b.alignment.states)

    def test_different_seed_differs_when_sampling(self):
        model = randomized_model(tiny_config(), seed=3)
        a = synthesize(model, [0, 4, 2], SynthesisOptions(acoustic_mode="sampled", seed=1))
        b = synthesize(model, [0, 4, 2], SynthesisOptions(acoustic_mode="sampled", seed=2))
        assert a.frames.shape != b.frames.shape or not np.array_equal(a.frames, b.frames)

    def test_sampled_duration_tau_one(self):
        model = constant_tau_model(0.99)
        model["outputnet.out.bias"].data[-1] = 60.0  # tau == 1 to double precision
        res = synthesize(model, [0, 1, 2, 3], SynthesisOptions(duration_mode="sampled"))
        assert res.n_frames == 8
        np.testing.assert_array_equal(res.alignment.states, np.arange(8))

    def test_cap_reached_is_flagged(self):
        model = constant_tau_model(0.01)
        res = synthesize(model, [0, 1], SynthesisOptions(q=0.9, max_frames=10))
        assert res.reason == "cap_reached"
        assert res.n_frames == 10
        assert res.alignment.is_valid() and not res.alignment.is_complete()

    def test_default_cap_is_thirty_per_state(self):
        model = constant_tau_model(0.01)
        res = synthesize(model, [3], SynthesisOptions(q=0.99))
        assert res.reason == "cap_reached" and res.n_frames == 60

    def test_per_state_overrides(self):
        model = constant_tau_model(0.1)
        res = synthesize(model, [0, 1], SynthesisOptions(q=0.5, state_q={1: 0.9, 3: 0.1}))
        assert res.durations.tolist() == [7, 22, 7, 1]

    def test_rate_monotone_in_q(self):
        model = constant_tau_model(0.2)
        totals = [synthesize(model, [0, 1, 2], SynthesisOptions(q=q)).n_frames for q in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert totals == sorted(totals)
        assert totals[0] < totals[-1]

    def test_alignment_always_valid(self):
        rng = np.random.default_rng(5)
        model = randomized_model(tiny_config(), seed=5, scale=2.0)
        for i in range(30):
            syms = rng.integers(0, 5, size=rng.integers(1, 4))
            opts = SynthesisOptions(
                acoustic_mode=("mean", "sampled")[i % 2], duration_mode=("quantile", "sampled")[i % 3 == 0], seed=i
            )
            res = synthesize(model, syms, opts)
            assert res.alignment.is_valid()
            assert res.durations.sum() == res.n_frames == res.taus.size
            if res.reason == "completed":
                assert res.alignment.is_complete()

    @pytest.mark.parametrize(
        "kw", [{"q": 0.0}, {"q": 1.0}, {"state_q": {0: 1.5}}, {"acoustic_mode": "greedy"}, {"duration_mode": "mean"}]
    )
    def test_invalid_options(self, kw):
        with pytest.raises(ConfigError):
            SynthesisOptions(**kw)

    def test_cap_below_state_count(self):
        with pytest.raises(ConfigError):
            synthesize(constant_tau_model(0.5), [0, 1], SynthesisOptions(max_frames=3))

    def test_bad_symbols(self):
        model = constant_tau_model(0.5)
        with pytest.raises(InputError):
            synthesize(model, [])
        with pytest.raises(InputError, match="position 1"):
            synthesize(model, [0, 9])


class TestRateReport:
    def test_sums_and_merge(self):
        model = constant_tau_model(0.1)
        res = synthesize(model, [0, 1], SynthesisOptions(q=0.5, state_q={1: 0.9}))
        rep = rate_report(res)
        assert sum(rep["state_durations"]) == rep["total_frames"] == res.n_frames
        assert rep["symbol_durations"] == [7 + 22, 7 + 7]
        assert rep["frames_per_symbol"] == pytest.approx(43 / 2)
        assert rep["termination"] == "completed"

    def test_text_format(self):
        rep = rate_report(synthesize(constant_tau_model(0.5), [0], SynthesisOptions(q=0.5)))
        text = format_rate_report(rep, {"checkpoint": "abc"})
        lines = dict(line.split("=", 1) for line in text.strip().splitlines())
        assert lines["checkpoint"] == "abc"
        assert lines["state_durations"] == "1,1"
        assert math.isclose(float(lines["frames_per_symbol"]), 2.0)
