"""Bank of flat-fading channels with AWGN and pilot-power reward measurement."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MeasurementError

DEFAULT_N0 = 0.02


@dataclass(frozen=True)
class ChannelSpec:
    """Per-arm mean/variance of the power gain plus the receiver noise level.

    ``noise_n0`` is the total complex noise power per sample (``E|w|^2``).
    """

    mu: tuple[float, ...]
    sigma2: tuple[float, ...]
    noise_n0: float = DEFAULT_N0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        object.__setattr__(self, "sigma2", tuple(float(v) for v in self.sigma2))
        if len(self.mu) != len(self.sigma2):
            raise ConfigError("mu and sigma2 must have one entry per arm")
        if not self.mu:
            raise ConfigError("a channel bank needs at least one arm")
        if any(not 0.0 < m < 1.0 for m in self.mu):
            raise ConfigError(f"every mean gain must lie in (0, 1): {self.mu}")
        if any(v < 0 for v in self.sigma2):
            raise ConfigError("variances must be non-negative")
        if self.noise_n0 < 0:
            raise ConfigError("noise_n0 must be non-negative")

    @property
    def K(self) -> int:
        return len(self.mu)

    @property
    def mu_array(self) -> np.ndarray:
        return np.asarray(self.mu)

    @property
    def sigma_array(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.sigma2))

    def expected_gain(self) -> np.ndarray:
        """Mean of the clipped gain per arm (what the reward converges to)."""
        return np.array([clipped_normal_mean(m, v) for m, v in zip(self.mu, self.sigma2)])

    def best_arm(self) -> int:
        """Arm with the largest nominal mean (lowest index on ties)."""
        return int(np.argmax(self.mu_array))

    def with_noise(self, noise_n0: float) -> "ChannelSpec":
        return ChannelSpec(self.mu, self.sigma2, noise_n0)


@dataclass(frozen=True)
class FadingDraw:
    gain: float
    phase: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError(f"gain {self.gain} outside [0, 1]")

    @property
    def coefficient(self) -> complex:
        return math.sqrt(self.gain) * complex(math.cos(self.phase), math.sin(self.phase))


def clipped_normal_mean(mu: float, var: float, lo: float = 0.0, hi: float = 1.0) -> float:
    """E[clip(G, lo, hi)] for G ~ Normal(mu, var)."""
    if var == 0:
        return min(max(mu, lo), hi)
    s = math.sqrt(var)
    a, b = (lo - mu) / s, (hi - mu) / s
    cdf = lambda z: 0.5 * math.erfc(-z / math.sqrt(2))  # noqa: E731
    pdf = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
    inside = mu * (cdf(b) - cdf(a)) + s * (pdf(a) - pdf(b))
    return lo * cdf(a) + inside + hi * (1 - cdf(b))


def gain_from_normal(spec: ChannelSpec, arm, z) -> np.ndarray:
    """Map standard-normal draws to clipped gains for the given arm(s)."""
    arm = np.asarray(arm)
    return np.clip(spec.mu_array[arm] + spec.sigma_array[arm] * z, 0.0, 1.0)


def sample_fading(spec: ChannelSpec, arm: int, rng: np.random.Generator) -> FadingDraw:
    """Gain ~ Normal(mu, sigma^2) clipped to [0, 1]; phase uniform on [0, 2pi)."""
    z = rng.standard_normal()
    u = rng.random()
    return FadingDraw(float(gain_from_normal(spec, arm, z)), 2 * math.pi * u)


def complex_noise(rng: np.random.Generator, shape, n0: float) -> np.ndarray:
    """Circular complex Gaussian noise with ``E|w|^2 = n0``."""
    w = rng.standard_normal((*np.atleast_1d(shape), 2)) if np.ndim(shape) else rng.standard_normal((shape, 2))
    return math.sqrt(n0 / 2) * (w[..., 0] + 1j * w[..., 1])


def apply_channel(
    samples,
    draw: FadingDraw,
    spec: ChannelSpec,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """``sqrt(gain) * exp(j*phase) * samples + w``."""
    samples = np.asarray(samples, dtype=np.complex128)
    out = draw.coefficient * samples
    if spec.noise_n0 > 0:
        if rng is None:
            raise ValueError("an RNG is required when noise_n0 > 0")
        out = out + complex_noise(rng, samples.shape, spec.noise_n0)
    return out


def measure_reward(tx_pilots, rx_pilots) -> float:
    """Received-to-transmitted pilot power ratio, clipped to at most 1."""
    tx = np.asarray(tx_pilots)
    rx = np.asarray(rx_pilots)
    if tx.size == 0 or tx.shape != rx.shape:
        raise MeasurementError("pilot lists must be non-empty and of equal length")
    p_tx = float(np.sum(np.abs(tx) ** 2))
    if p_tx <= 0:
        raise MeasurementError("transmitted pilots carry no power")
    return min(1.0, float(np.sum(np.abs(rx) ** 2)) / p_tx)


def measure_reward_batch(tx_pilots, rx_pilots) -> np.ndarray:
    """Row-wise :func:`measure_reward` over the last axis."""
    p_tx = np.sum(np.abs(tx_pilots) ** 2, axis=-1)
    if np.any(p_tx <= 0):
        raise MeasurementError("transmitted pilots carry no power")
    return np.minimum(1.0, np.sum(np.abs(rx_pilots) ** 2, axis=-1) / p_tx)
