"""Fading channel bank, AWGN and pilot-power reward."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from reconphy import channel as ch
from reconphy.errors import ConfigError, MeasurementError


def clipped_mean_oracle(mu, var):
    """E[clip(G, 0, 1)] by numerical integration of the Normal density."""
    s = math.sqrt(var)
    inside, _ = integrate.quad(lambda g: g * stats.norm.pdf(g, mu, s), 0.0, 1.0)
    return inside + stats.norm.sf(1.0, mu, s)


class TestChannelSpec:
    def test_validation(self):
        with pytest.raises(ConfigError):
            ch.ChannelSpec((0.5, 0.6), (0.1,))
        with pytest.raises(ConfigError):
            ch.ChannelSpec((1.2,), (0.1,))
        with pytest.raises(ConfigError):
            ch.ChannelSpec((0.5,), (-0.1,))
        with pytest.raises(ConfigError):
            ch.ChannelSpec((0.5,), (0.1,), noise_n0=-1)

    def test_best_arm_ties_low(self):
        assert ch.ChannelSpec((0.3, 0.9, 0.9), (0, 0, 0)).best_arm() == 1

    @pytest.mark.parametrize("mu, var", [(0.9, 0.07), (0.46, 0.2), (0.5, 0.01), (0.98, 0.01), (0.3, 0.03)])
    def test_clipped_mean_matches_integration(self, mu, var):
        assert ch.clipped_normal_mean(mu, var) == pytest.approx(clipped_mean_oracle(mu, var), abs=1e-9)


class TestFading:
    def test_zero_variance_is_deterministic(self):
        spec = ch.ChannelSpec((0.7,), (0.0,))
        rng = np.random.default_rng(0)
        assert all(ch.sample_fading(spec, 0, rng).gain == 0.7 for _ in range(100))

    def test_seeded_draws_repeat(self):
        spec = ch.ChannelSpec((0.5, 0.9), (0.1, 0.07))
        a = [ch.sample_fading(spec, 1, np.random.default_rng(4)) for _ in range(3)]
        b = [ch.sample_fading(spec, 1, np.random.default_rng(4)) for _ in range(3)]
        assert a == b

    def test_monte_carlo_mean(self):
        spec = ch.ChannelSpec((0.9,), (0.07,))
        z = np.random.default_rng(1).standard_normal(100_000)
        g = ch.gain_from_normal(spec, 0, z)
        target = clipped_mean_oracle(0.9, 0.07)
        assert abs(g.mean() - target) < 3 * g.std() / math.sqrt(g.size)
        assert g.min() >= 0 and g.max() <= 1

    def test_rewards_converge_to_clipped_mean(self):
        spec = ch.ChannelSpec((0.4, 0.8, 0.46), (0.01, 0.02, 0.2), noise_n0=0.0)
        rng = np.random.default_rng(2)
        pilots = np.array([1, 1, 1, -1], dtype=complex)
        for arm in range(spec.K):
            z = rng.standard_normal(100_000)
            gains = ch.gain_from_normal(spec, arm, z)
            rx = np.sqrt(gains)[:, None] * np.exp(1j * rng.uniform(0, 2 * np.pi, gains.size))[:, None] * pilots
            r = ch.measure_reward_batch(pilots, rx)
            assert r.mean() == pytest.approx(clipped_mean_oracle(spec.mu[arm], spec.sigma2[arm]), rel=0.01)


class TestApplyChannel:
    def test_identity(self):
        x = np.exp(1j * np.arange(64) / 3)
        spec = ch.ChannelSpec((0.5,), (0.0,), noise_n0=0.0)
        assert np.allclose(ch.apply_channel(x, ch.FadingDraw(1.0, 0.0), spec), x)

    def test_power_scales_with_gain(self):
        x = np.exp(2j * np.pi * 5 * np.arange(64) / 64)
        y = ch.apply_channel(x, ch.FadingDraw(0.25, 1.1), ch.ChannelSpec((0.5,), (0.0,), 0.0))
        assert np.sum(np.abs(y) ** 2) == pytest.approx(0.25 * np.sum(np.abs(x) ** 2), rel=1e-12)

    def test_noise_power(self):
        spec = ch.ChannelSpec((0.5,), (0.0,), noise_n0=0.02)
        y = ch.apply_channel(np.zeros(10_000), ch.FadingDraw(1.0, 0.0), spec, np.random.default_rng(3))
        assert np.mean(np.abs(y) ** 2) == pytest.approx(0.02, rel=0.05)

    def test_noise_requires_rng(self):
        with pytest.raises(ValueError):
            ch.apply_channel(np.ones(4), ch.FadingDraw(1.0, 0.0), ch.ChannelSpec((0.5,), (0.0,), 0.1))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 2 * math.pi), st.floats(-3, 3), st.integers(0, 2**31))
    def test_linear_without_noise(self, g, phase, a, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, 32)) + 1j * rng.standard_normal((2, 32))
        spec = ch.ChannelSpec((0.5,), (0.0,), 0.0)
        d = ch.FadingDraw(g, phase)
        lhs = ch.apply_channel(a * x + y, d, spec)
        rhs = a * ch.apply_channel(x, d, spec) + ch.apply_channel(y, d, spec)
        assert np.allclose(lhs, rhs, atol=1e-12)


class TestReward:
    pilots = np.array([1, 1, 1, -1], dtype=complex)

    def test_identity_is_one(self):
        assert ch.measure_reward(self.pilots, self.pilots) == 1.0

    def test_half_amplitude_quarter_power(self):
        assert ch.measure_reward(self.pilots, 0.5 * self.pilots) == pytest.approx(0.25)

    def test_clipped_at_one(self):
        assert ch.measure_reward(self.pilots, 3 * self.pilots) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 2 * math.pi))
    def test_noiseless_reward_equals_gain(self, g, phase):
        rx = ch.apply_channel(self.pilots, ch.FadingDraw(g, phase), ch.ChannelSpec((0.5,), (0.0,), 0.0))
        assert abs(ch.measure_reward(self.pilots, rx) - g) <= 1e-12

    def test_bad_inputs(self):
        with pytest.raises(MeasurementError):
            ch.measure_reward([], [])
        with pytest.raises(MeasurementError):
            ch.measure_reward(np.zeros(4), np.zeros(4))
