"""Bandit engine: counters, feedback word, quality factors, selection, reconfiguration."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from reconphy import bandit as bd
from reconphy.errors import ConfigError, FeedbackError, StateError


def learn_state(X, T, n, Y=None, **cfg):
    K = len(X)
    state = bd.reset(bd.BanditConfig(K=K, **cfg))
    state.X = np.array(X, dtype=float)
    state.T = np.array(T, dtype=np.int64)
    state.Y = np.array(Y if Y is not None else [0.0] * K, dtype=float)
    state.n = n
    return state


def play(state, rng, slots):
    """Play ``slots`` slots with uniform rewards; return the feedback log."""
    log = []
    for _ in range(slots):
        arm = bd.select(state)
        r = float(rng.random())
        w = bd.encode_feedback(arm, state.mode, r, state.cfg)
        bd.update(state, w)
        log.append(bd.decode_feedback(w, state.cfg))
    return log


class TestConfig:
    def test_defaults(self):
        cfg = bd.BanditConfig(K=5)
        assert (cfg.alpha, cfg.alpha1, cfg.alpha2, cfg.K_max, cfg.N) == (2.0, 1.0, 1.0, 8, 10_000)

    @pytest.mark.parametrize("kw", [dict(K=0), dict(K=9), dict(K=3, N=2), dict(K=3, alpha=3.0), dict(K=3, alpha1=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            bd.BanditConfig(**kw)

    @pytest.mark.parametrize("text, expected", [("ucb", "UCB"), ("UCB-V", "UCB_V"), ("ucb_t", "UCB_T"), ("UCB-Tuned", "UCB_T")])
    def test_algorithm_names(self, text, expected):
        assert bd.Algorithm.parse(text).value == expected

    def test_numeric_mode_parse(self):
        assert str(bd.NumericMode.parse("11")) == "Q4.7"
        assert str(bd.NumericMode.parse("WL27")) == "Q4.23"
        assert bd.NumericMode.parse("float").kind == "float32"
        assert bd.NumericMode.parse(str(bd.NumericMode.parse("Q4.2"))) == bd.NumericMode.word_length(6)
        with pytest.raises(ConfigError):
            bd.NumericMode.parse("half")


class TestReset:
    def test_zero_counters(self):
        s = bd.reset(bd.BanditConfig(K=3))
        assert s.X.tolist() == [0, 0, 0] and s.T.tolist() == [0, 0, 0] and s.n == 1
        assert s.mode is bd.Mode.INIT

    def test_seeded_order_is_deterministic_permutation(self):
        cfg = bd.BanditConfig(K=5, rng_seed=7)
        a, b = bd.reset(cfg), bd.reset(cfg)
        assert np.array_equal(a.init_order, b.init_order)
        assert sorted(a.init_order.tolist()) == [0, 1, 2, 3, 4]

    def test_batch_orders_follow_seeds(self):
        cfg = bd.BanditConfig(K=5)
        batch = bd.reset(cfg, seeds=[3, 4])
        assert np.array_equal(batch.init_order[1], bd.reset(cfg.replace(rng_seed=4)).init_order)


class TestFeedback:
    def test_field_widths(self):
        assert bd.index_bits(8) == 3 and bd.reward_bits(8) == 28
        assert bd.index_bits(4) == 2 and bd.reward_bits(4) == 29

    def test_half_reward_layout(self):
        cfg = bd.BanditConfig(K=4, K_max=4)
        w = bd.encode_feedback(1, 1, 0.5, cfg)
        assert w.raw & ((1 << 29) - 1) == 1 << 28
        assert w.raw >> 30 == 1 and (w.raw >> 29) & 1 == 1
        assert bd.decode_feedback(w, cfg) == (1, bd.Mode.LEARN, 0.5)

    def test_zero_reward(self):
        w = bd.encode_feedback(2, 0, 0.0, bd.BanditConfig(K=4))
        assert w.raw & ((1 << 28) - 1) == 0

    def test_reward_saturates_below_one(self):
        cfg = bd.BanditConfig(K=4)
        _, _, r = bd.decode_feedback(bd.encode_feedback(0, 1, 1.0, cfg), cfg)
        assert r == 1 - 2.0**-28

    def test_truncation_bound(self):
        cfg = bd.BanditConfig(K=7)
        rng = np.random.default_rng(0)
        r = rng.random(10_000)
        _, _, back = bd.unpack_feedback(bd.pack_feedback(np.zeros(10_000, int), 1, r, cfg.K_max), cfg.K_max)
        assert np.all(back <= r) and np.all(r - back < 2.0**-28)

    def test_bijection_on_random_words(self):
        k_max = 8
        words = np.random.default_rng(1).integers(0, 1 << 32, 100_000, dtype=np.uint64).astype(np.uint32)
        arm, mode, reward = bd.unpack_feedback(words, k_max)
        assert np.array_equal(bd.pack_feedback(arm, mode, reward, k_max), words)

    def test_errors(self):
        cfg = bd.BanditConfig(K=3)
        with pytest.raises(FeedbackError):
            bd.encode_feedback(8, 1, 0.5, cfg)
        with pytest.raises(FeedbackError):
            bd.decode_feedback(bd.encode_feedback(5, 1, 0.5, cfg), cfg)
        with pytest.raises(FeedbackError):
            bd.encode_feedback(0, 1, float("nan"), cfg)
        with pytest.raises(FeedbackError):
            bd.FeedbackWord.from_bytes(b"\x00\x01")

    def test_trace_file_little_endian(self, tmp_path):
        cfg = bd.BanditConfig(K=5)
        words = [bd.encode_feedback(a, 1, a / 7, cfg) for a in range(5)]
        path = tmp_path / "fb.bin"
        bd.write_feedback_trace(path, words)
        data = path.read_bytes()
        assert data[:4] == words[0].to_bytes() and len(data) == 20
        assert bd.read_feedback_trace(path) == words


class TestUpdate:
    def test_single_step(self):
        s = bd.reset(bd.BanditConfig(K=3))
        bd.mark_selected(s, 1)
        bd.update_arrays(s, 1, 0.7)
        assert s.X.tolist() == [0, 0.7, 0] and s.T.tolist() == [0, 1, 0] and s.n == 2
        assert s.Y[1] == pytest.approx(0.49)

    def test_zero_reward_only_counts(self):
        s = bd.reset(bd.BanditConfig(K=3))
        bd.mark_selected(s, 2)
        bd.update_arrays(s, 2, 0.0)
        assert s.X.tolist() == [0, 0, 0] and s.T.tolist() == [0, 0, 1]

    def test_update_requires_selection(self):
        with pytest.raises(StateError):
            bd.update_arrays(bd.reset(bd.BanditConfig(K=3)), 0, 0.5)

    def test_replay_oracle(self):
        s = bd.reset(bd.BanditConfig(K=4, rng_seed=2))
        log = play(s, np.random.default_rng(5), 10)
        for k in range(4):
            rs = [r for a, _, r in log if a == k]
            assert s.T[k] == len(rs)
            assert s.X[k] == pytest.approx(sum(rs), abs=1e-15)
            assert s.Y[k] == pytest.approx(sum(r * r for r in rs), abs=1e-15)

    def test_init_coverage(self):
        s = bd.reset(bd.BanditConfig(K=6, rng_seed=9))
        play(s, np.random.default_rng(0), 6)
        assert s.T.tolist() == [1] * 6 and s.mode is bd.Mode.LEARN

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.sampled_from(list(bd.Algorithm)), st.integers(0, 2**31), st.integers(0, 60))
    def test_conservation_and_nonnegative_variance(self, K, alg, seed, slots):
        s = bd.reset(bd.BanditConfig(K=K, algorithm=alg, rng_seed=seed, numeric_mode=bd.NumericMode.word_length(11)))
        rng = np.random.default_rng(seed)
        play(s, rng, K + slots)
        assert s.T.sum() == s.n - 1
        for fn in (bd.qf_ucbv, bd.qf_ucbt):
            v = fn(s).variance
            if fn is bd.qf_ucbv:
                assert np.all(v >= 0)


class TestQualityFactors:
    def test_ucb_two_arms(self):
        q = bd.qf_ucb(learn_state([0.5, 0.7], [1, 1], 3)).q
        b = math.sqrt(2 * math.log(3))
        assert q == pytest.approx([0.5 + b, 0.7 + b], abs=1e-12)
        assert q == pytest.approx([1.9823, 2.1823], abs=1e-4)

    def test_ucb_symmetric(self):
        q = bd.qf_ucb(learn_state([0.0] * 4, [3] * 4, 20)).q
        assert np.all(q == q[0])

    def test_ucb_fixed_wl27_close_to_float(self):
        fx = bd.qf_ucb(learn_state([0.5, 0.7], [1, 1], 3, numeric_mode=bd.NumericMode.word_length(27))).q
        fl = bd.qf_ucb(learn_state([0.5, 0.7], [1, 1], 3)).q
        assert np.all(np.abs(fx - fl) <= 2.0**-20)

    def test_ucbv_zero_variance(self):
        q = bd.qf_ucbv(learn_state([0.5, 0.7], [1, 1], 3, Y=[0.5**2, 0.7**2])).q
        assert q == pytest.approx([0.5 + math.log(3), 0.7 + math.log(3)], abs=1e-12)

    def test_ucbv_deterministic_rewards(self):
        s = learn_state([1.5, 2.4], [3, 4], 8, Y=[0.75, 1.44])
        q = bd.qf_ucbv(s)
        assert q.variance == pytest.approx([0, 0], abs=1e-15)
        assert q.q == pytest.approx([0.5 + math.log(8) / 3, 0.6 + math.log(8) / 4], abs=1e-12)

    def test_ucbt_single_arm(self):
        q = bd.qf_ucbt(learn_state([0.5], [1], 2, Y=[0.25], K_max=8)).q
        assert q[0] == pytest.approx(math.sqrt(2 * math.log(2)), abs=1e-12)
        assert q[0] == pytest.approx(1.1774, abs=1e-4)

    def test_ucbt_zero_variance_is_pure_bonus(self):
        s = learn_state([0.3, 1.6], [1, 2], 5, Y=[0.09, 1.28])
        assert bd.qf_ucbt(s).q == pytest.approx(np.sqrt(2 * math.log(5) / np.array([1, 2])), abs=1e-12)

    def test_ucbt_classical_flag(self):
        s = learn_state([0.5, 1.2], [2, 3], 9, Y=[0.2, 0.6], ucbt_classical=True)
        lt = math.log(9) / np.array([2, 3])
        mean = np.array([0.25, 0.4])
        v = np.array([0.1, 0.2]) - mean**2
        expected = mean + np.sqrt(lt * np.minimum(0.25, v + np.sqrt(2 * lt)))
        assert bd.qf_ucbt(s).q == pytest.approx(expected, abs=1e-12)

    def test_ucbt_wl27_close_to_float(self):
        args = ([0.9, 2.2, 0.4], [2, 5, 1], 12)
        Y = [0.5, 1.1, 0.16]
        fx = bd.qf_ucbt(learn_state(*args, Y=Y, numeric_mode=bd.NumericMode.word_length(27))).q
        fl = bd.qf_ucbt(learn_state(*args, Y=Y)).q
        assert np.all(np.abs(fx - fl) <= 2.0**-20)

    def test_qf_requires_learn_mode(self):
        with pytest.raises(StateError):
            bd.qf_ucb(bd.reset(bd.BanditConfig(K=3)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(8, 27), st.sampled_from(list(bd.Algorithm)), st.integers(0, 2**31))
    def test_fixed_within_stage_bound(self, wl, alg, seed):
        rng = np.random.default_rng(seed)
        K = 5
        T = rng.integers(1, 400, K)
        X = rng.random(K) * T
        Y = np.minimum(X, X * rng.random(K) + X**2 / T)
        n = int(T.sum()) + 1
        fixed = bd.compute_qf(learn_state(X, T, n, Y=Y, algorithm=alg, numeric_mode=bd.NumericMode.word_length(wl))).q
        flt = bd.compute_qf(learn_state(X, T, n, Y=Y, algorithm=alg)).q
        assume(np.all(np.abs(flt) < 7.5))  # saturation is covered by the fixed-point suite
        # each datapath stage adds at most one LSB, plus propagation through sqrt of the variance term
        lsb = 2.0 ** -(wl - bd.QF_INT_BITS)
        bound = 6 * lsb + (math.sqrt(math.log(n) * 3 * lsb) if alg is bd.Algorithm.UCB_V else 0.0)
        assert np.all(np.abs(fixed - flt) <= bound)


class TestSelect:
    def test_init_order_lookup(self):
        s = bd.reset(bd.BanditConfig(K=3))
        s.init_order = np.array([2, 0, 1])
        s.n = 2
        assert bd.select(s) == 0

    def test_ties_go_to_lowest_index(self):
        s = learn_state([0.1] * 3, [1] * 3, 4)
        assert bd.select(s, qf=bd.QfVector(np.array([1.0, 2.0, 2.0]), 4)) == 1

    def test_increasing_q_picks_last(self):
        s = learn_state([0.1] * 4, [1] * 4, 5)
        assert bd.select(s, qf=bd.QfVector(np.arange(4.0), 5)) == 3

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=2, max_size=8), st.floats(0.01, 100))
    def test_scale_invariance(self, q, c):
        K = len(q)
        s = learn_state([0.1] * K, [1] * K, K + 1)
        a = bd.select(s, qf=bd.QfVector(np.array(q), K + 1))
        scaled = np.array(q) * c
        if np.all(np.isfinite(scaled)) and len(set(scaled)) == len(set(q)):
            assert bd.select(s, qf=bd.QfVector(scaled, K + 1)) == a

    def test_mu1_float_majority_arm5(self):
        # gains of a five-arm bank, best arm has mean 0.9
        mu = np.array([0.5, 0.8, 0.61, 0.45, 0.9])
        sd = np.sqrt([0.01, 0.02, 0.08, 0.06, 0.07])
        s = bd.reset(bd.BanditConfig(K=5), seeds=range(10))
        z = np.random.default_rng(0).standard_normal((10_000, 10))
        pulls = np.zeros((10, 5), int)
        for n in range(10_000):
            a = bd.select(s)
            r = np.clip(mu[a] + sd[a] * z[n], 0, 1)
            bd.update_arrays(s, a, r)
            pulls[np.arange(10), a] += 1
        assert np.all(pulls.argmax(axis=1) == 4)
        assert np.all(pulls[:, 4] > 5_000)


class TestReconfigure:
    def _played(self):
        s = bd.reset(bd.BanditConfig(K=5, rng_seed=1))
        play(s, np.random.default_rng(2), 40)
        return s

    def test_algorithm_switch_preserves_counters(self):
        s = self._played()
        t = bd.reconfigure(s, bd.Algorithm.UCB_T)
        assert t.cfg.algorithm is bd.Algorithm.UCB_T and t.n == s.n
        for name in ("X", "T", "Y"):
            assert getattr(t, name).tobytes() == getattr(s, name).tobytes()
        np.testing.assert_array_equal(bd.compute_qf(t).q, bd.qf_ucbt(s).q)

    def test_same_algorithm_is_identity(self):
        s = self._played()
        assert bd.reconfigure(s, bd.Algorithm.UCB) is s

    def test_shrink_k_restarts_init(self):
        s = bd.reconfigure(self._played(), K=4)
        assert s.mode is bd.Mode.INIT and s.n == 1 and s.K == 4
        seen = []
        for _ in range(4):
            a = bd.select(s)
            seen.append(a)
            bd.update_arrays(s, a, 0.5)
        assert sorted(seen) == [0, 1, 2, 3]

    def test_k_above_kmax(self):
        with pytest.raises(ConfigError):
            bd.reconfigure(self._played(), K=9)
