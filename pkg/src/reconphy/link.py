"""Slot-level closed loop: channel selection, modulation choice, PHY, feedback.

Many independent runs (one per seed) are advanced in lockstep so that the PHY
processing of a slot is a single vectorised call. Every run owns its random
streams, pre-drawn in fixed-size chunks, so the result of a run does not
depend on which other runs share its batch; a one-run experiment reproduces
a plain :func:`run_slot` loop exactly.

Retransmissions only affect the throughput model, never the learning loop
(the reward comes from the first transmission), so they are simulated after
the fact from a generator keyed on ``(seed, slot)``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from . import bandit as bd
from . import phy
from .channel import ChannelSpec, measure_reward_batch
from .errors import ConfigError

LEAD_MIN = 16
LEAD_MAX = 48
FRAME_LEN = phy.PREAMBLE_LEN + phy.SYMBOL_LEN
STREAM_LEN = LEAD_MAX + FRAME_LEN
SEARCH_LEN = LEAD_MAX + phy.STF_LEN + 64
BITS_QPSK = phy.N_DATA * phy.QPSK.bits_per_symbol  # 96
BITS_QAM16 = phy.N_DATA * phy.QAM16.bits_per_symbol  # 192
DEFAULT_MOD_THRESHOLD = 0.8
DEFAULT_EQUALIZER = phy.EQ_CONJ
CHUNK = 64

_STREAM_FADING, _STREAM_PAYLOAD, _STREAM_NOISE, _STREAM_POLICY, _STREAM_RETRY = range(5)


class ChannelPolicy(str, enum.Enum):
    BANDIT = "bandit"
    ORACLE = "oracle"
    RANDOM = "random"


class ModPolicy(str, enum.Enum):
    QPSK = "qpsk"
    QAM16 = "qam16"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class LinkPolicy:
    """How the channel and the modulation are picked each slot.

    ``mod_threshold`` is the running mean-reward estimate of the chosen arm
    at or above which the adaptive policy switches to 16-QAM.
    ``adaptive_scope="horizon"`` instead fixes each arm's modulation for the
    whole horizon from its configured mean gain.
    """

    channel: ChannelPolicy = ChannelPolicy.BANDIT
    modulation: ModPolicy = ModPolicy.ADAPTIVE
    mod_threshold: float = DEFAULT_MOD_THRESHOLD
    adaptive_scope: str = "slot"

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel", ChannelPolicy(self.channel))
        object.__setattr__(self, "modulation", ModPolicy(self.modulation))
        if not 0.0 < self.mod_threshold < 1.0:
            raise ConfigError(f"mod_threshold must lie in (0, 1), got {self.mod_threshold}")
        if self.adaptive_scope not in ("slot", "horizon"):
            raise ConfigError(f"adaptive_scope must be 'slot' or 'horizon', got {self.adaptive_scope!r}")

    @property
    def name(self) -> str:
        return f"{self.channel.value}/{self.modulation.value}"


@dataclass(frozen=True)
class ThroughputModel:
    base_rate_qpsk: float = 50.0
    base_rate_qam: float = 100.0
    feedback_fraction: float = 0.30
    ber_target: float = 0.01
    max_transmissions: int = 50

    def __post_init__(self) -> None:
        if self.feedback_fraction < 0:
            raise ConfigError("feedback_fraction must be non-negative")
        if not 0.0 < self.ber_target < 1.0:
            raise ConfigError("ber_target must lie in (0, 1)")
        if self.max_transmissions < 1:
            raise ConfigError("max_transmissions must be at least 1")

    def slot_time(self, transmissions) -> np.ndarray:
        """First transmission costs 1; every retry costs 1 + feedback_fraction."""
        t = np.asarray(transmissions, dtype=np.float64)
        return 1.0 + (t - 1.0) * (1.0 + self.feedback_fraction)

    def passes(self, errors, bits) -> np.ndarray:
        return np.asarray(errors) <= self.ber_target * np.asarray(bits)


@dataclass(frozen=True)
class SlotReport:
    slot: int
    arm: int
    modulation: str
    reward: float
    bits_tx: int
    bit_errors: int
    retransmissions: int = 0
    synced: bool = True
    delivered: bool = True

    def __post_init__(self) -> None:
        if not 0 <= self.bit_errors <= self.bits_tx:
            raise ValueError("bit_errors must lie in [0, bits_tx]")
        if not 0.0 <= self.reward <= 1.0:
            raise ValueError("reward must lie in [0, 1]")

    @property
    def transmissions(self) -> int:
        return 1 + self.retransmissions


# ---------------------------------------------------------------------------
# modulation choice and throughput
# ---------------------------------------------------------------------------

def choose_modulation(policy: LinkPolicy, est_mean, arm=None) -> phy.ModScheme:
    """Fixed policies are constant; adaptive picks 16-QAM iff the estimate reaches the threshold.

    ``est_mean`` is either the per-arm vector ``X/T`` (then ``arm`` selects
    the entry) or the scalar estimate of the chosen arm. ``None``/NaN (arm
    never played) means QPSK.
    """
    if policy.modulation is ModPolicy.QPSK:
        return phy.QPSK
    if policy.modulation is ModPolicy.QAM16:
        return phy.QAM16
    if est_mean is None:
        return phy.QPSK
    est = np.asarray(est_mean, dtype=np.float64)
    if arm is not None and est.ndim:
        est = est[arm]
    est = float(est)
    return phy.QAM16 if est == est and est >= policy.mod_threshold else phy.QPSK


def compute_throughput(reports, model: ThroughputModel = ThroughputModel()) -> tuple[float, float]:
    """(Mbps, average transmissions per slot) under the retransmission time model.

    A slot that ends below the BER target delivers its payload; a slot that
    exhausts the transmission cap delivers nothing. Throughput is scaled so
    that a retry-free QPSK slot is worth exactly ``base_rate_qpsk``.
    """
    if isinstance(reports, dict):
        bits = np.asarray(reports["bits"])
        tx = np.asarray(reports["transmissions"])
        delivered = np.asarray(reports["delivered"])
    else:
        reports = list(reports)
        if not reports:
            raise ValueError("no slot reports")
        bits = np.array([r.bits_tx for r in reports])
        tx = np.array([r.transmissions for r in reports])
        delivered = np.array([r.delivered for r in reports])
    if bits.size == 0:
        raise ValueError("no slot reports")
    good_bits = float(np.sum(np.where(delivered, bits, 0)))
    time = float(np.sum(model.slot_time(tx)))
    mbps = model.base_rate_qpsk * (good_bits / BITS_QPSK) / time
    return mbps, float(np.mean(tx))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def _generators(seed: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(4)
    return [np.random.default_rng(c) for c in children]


@dataclass
class SlotDraws:
    """Random inputs of one slot, one row per stream."""

    z: np.ndarray  # fading, standard normal
    phase_u: np.ndarray
    lead_u: np.ndarray
    payload: np.ndarray  # (S, 192) bits
    noise: np.ndarray  # (S, L, 2) standard normal
    policy_u: np.ndarray


class BatchStreams:
    """Per-seed random streams, pre-drawn ``CHUNK`` slots at a time.

    Each seed owns four generators (fading, payload, noise, random policy)
    spawned from ``SeedSequence(seed)``, so the draws of a seed never depend
    on the other seeds in the batch.
    """

    def __init__(self, seeds: Sequence[int], stream_len: int = STREAM_LEN, chunk: int = CHUNK):
        self.seeds = [int(s) for s in seeds]
        self.gens = [_generators(s) for s in self.seeds]
        self.stream_len = stream_len
        self.chunk = chunk
        self._pos = chunk

    def _refill(self) -> None:
        C, L = self.chunk, self.stream_len
        fz, fu, bits, noise, pol = [], [], [], [], []
        for g_fade, g_pay, g_noise, g_pol in self.gens:
            fz.append(g_fade.standard_normal(C))
            fu.append(g_fade.random((C, 2)))
            bits.append(g_pay.integers(0, 2, (C, BITS_QAM16), dtype=np.int8))
            noise.append(g_noise.standard_normal((C, L, 2), dtype=np.float32))
            pol.append(g_pol.random(C))
        self._z = np.stack(fz, axis=1)
        self._u = np.stack(fu, axis=1)
        self._bits = np.stack(bits, axis=1)
        self._noise = np.stack(noise, axis=1)
        self._pol = np.stack(pol, axis=1)
        self._pos = 0

    def take(self) -> SlotDraws:
        if self._pos == self.chunk:
            self._refill()
        j = self._pos
        self._pos += 1
        return SlotDraws(self._z[j], self._u[j, :, 0], self._u[j, :, 1], self._bits[j], self._noise[j], self._pol[j])


# ---------------------------------------------------------------------------
# one lockstep slot
# ---------------------------------------------------------------------------

_CHAN_CODES = {ChannelPolicy.BANDIT: 0, ChannelPolicy.ORACLE: 1, ChannelPolicy.RANDOM: 2}
_MOD_CODES = {ModPolicy.QPSK: 0, ModPolicy.QAM16: 1, ModPolicy.ADAPTIVE: 2}


@dataclass
class _Rows:
    """Per-row (one row = one run) parameters of a lockstep batch."""

    seeds: np.ndarray
    stream_idx: np.ndarray
    mu: np.ndarray
    sd: np.ndarray
    n0: np.ndarray
    best: np.ndarray
    chan: np.ndarray
    mod: np.ndarray
    thr: np.ndarray
    identity: np.ndarray
    per_horizon: np.ndarray

    @classmethod
    def build(cls, entries, unique_seeds: list[int]) -> "_Rows":
        """``entries``: iterable of ``(seed, ChannelSpec, LinkPolicy, identity)``."""
        pos = {s: i for i, s in enumerate(unique_seeds)}
        e = list(entries)
        return cls(
            seeds=np.array([x[0] for x in e], dtype=np.int64),
            stream_idx=np.array([pos[x[0]] for x in e], dtype=np.int64),
            mu=np.stack([x[1].mu_array for x in e]),
            sd=np.stack([x[1].sigma_array for x in e]),
            n0=np.array([0.0 if x[3] else x[1].noise_n0 for x in e]),
            best=np.array([x[1].best_arm() for x in e], dtype=np.int64),
            chan=np.array([_CHAN_CODES[x[2].channel] for x in e]),
            mod=np.array([_MOD_CODES[x[2].modulation] for x in e]),
            thr=np.array([x[2].mod_threshold for x in e]),
            identity=np.array([bool(x[3]) for x in e]),
            per_horizon=np.array([x[2].adaptive_scope == "horizon" for x in e]),
        )

    def __len__(self) -> int:
        return self.seeds.shape[0]


@dataclass
class SlotBatch:
    """Outcome of one slot for every row of the batch."""

    slot: int
    arms: np.ndarray
    qam: np.ndarray
    rewards: np.ndarray
    bits: np.ndarray
    errors: np.ndarray
    found: np.ndarray
    # retransmission context
    gain: np.ndarray
    phase: np.ndarray
    payload: np.ndarray
    clean_data: np.ndarray | None = None
    H_data: np.ndarray | None = None


def _use_qam(rows: _Rows, X: np.ndarray, T: np.ndarray, arms: np.ndarray) -> np.ndarray:
    """Adaptive rows pick 16-QAM iff the chosen arm's running mean (or, per horizon,
    its configured mean) reaches the threshold."""
    x = np.take_along_axis(X, arms[:, None], axis=1)[:, 0]
    t = np.take_along_axis(T, arms[:, None], axis=1)[:, 0]
    adaptive = (t > 0) & (x >= rows.thr * np.maximum(t, 1))
    static = rows.mu[np.arange(len(arms)), arms] >= rows.thr
    adaptive = np.where(rows.per_horizon, static, adaptive)
    return np.where(rows.mod == 2, adaptive, rows.mod == 1)


def _place(frames: np.ndarray, leads: np.ndarray, length: int) -> np.ndarray:
    out = np.zeros((frames.shape[0], length), dtype=np.complex128)
    flat = (np.arange(frames.shape[0]) * length + leads)[:, None] + np.arange(frames.shape[1])
    out.reshape(-1)[flat] = frames
    return out


def _modulate_rows(payload: np.ndarray, qam: np.ndarray) -> np.ndarray:
    s_q = phy.modulate(payload[:, :BITS_QPSK], phy.QPSK)
    s_16 = phy.modulate(payload, phy.QAM16)
    return np.where(qam[:, None], s_16, s_q)


def _count_errors(eq: np.ndarray, payload: np.ndarray, qam: np.ndarray) -> np.ndarray:
    """Bit errors per row of equalised data symbols (last axis = 48 bins)."""
    e_q = np.sum(phy.demodulate(eq, phy.QPSK) != payload[..., :BITS_QPSK], axis=-1)
    e_16 = np.sum(phy.demodulate(eq, phy.QAM16) != payload, axis=-1)
    return np.where(qam, e_16, e_q)


def _leads(u: np.ndarray) -> np.ndarray:
    return LEAD_MIN + (u * (LEAD_MAX - LEAD_MIN + 1)).astype(np.int64)


def _transmit_receive(payload, qam, gain, phase, leads, noise, n0, equalizer):
    """Build frames, pass them through the flat channel plus AWGN and run the receiver."""
    syms = _modulate_rows(payload, qam)
    frames = phy.build_frame(syms[:, None, :])
    coef = np.sqrt(gain) * np.exp(1j * phase)
    tx = _place(frames, leads, noise.shape[1])
    rx = coef[:, None] * tx + (np.sqrt(n0 / 2)[:, None] * (noise[..., 0] + 1j * noise[..., 1]))
    res = phy.receive(rx, 1, equalizer, search_len=SEARCH_LEN)
    return tx, coef, res


def _step(rows: _Rows, state: bd.BanditState, draws: SlotDraws, slot: int, equalizer: str, keep_retry: bool) -> SlotBatch:
    si = rows.stream_idx
    R = len(rows)
    K = state.K
    mode = state.mode
    if mode is bd.Mode.LEARN and (rows.chan != 0).any():
        # oracle/random rows never ran INIT in order; their QFs are unused, so
        # pad their counts to keep the datapath defined
        view = state.copy()
        view.T = np.where((rows.chan == 0)[:, None], state.T, np.maximum(state.T, 1))
        bandit_arms = np.asarray(bd.select(view)).reshape(R)
    else:
        bandit_arms = np.asarray(bd.select(state)).reshape(R)
    random_arms = np.minimum((draws.policy_u[si] * K).astype(np.int64), K - 1)
    arms = np.select([rows.chan == 0, rows.chan == 1], [bandit_arms, rows.best], random_arms)
    bd.mark_selected(state, arms)
    qam = _use_qam(rows, state.X, state.T, arms)

    gain = np.clip(rows.mu[np.arange(R), arms] + rows.sd[np.arange(R), arms] * draws.z[si], 0.0, 1.0)
    phase = 2 * np.pi * draws.phase_u[si]
    gain = np.where(rows.identity, 1.0, gain)
    phase = np.where(rows.identity, 0.0, phase)
    payload = draws.payload[si]

    tx, coef, res = _transmit_receive(payload, qam, gain, phase, _leads(draws.lead_u[si]), draws.noise[si], rows.n0, equalizer)
    found = res.found
    bits = np.where(qam, BITS_QAM16, BITS_QPSK)
    errors = np.where(found, _count_errors(res.equalized[:, 0, :], payload, qam), bits)
    rewards = np.where(found, measure_reward_batch(phy.GRID.pilot_values, res.pilots_freq[:, 0, :]), 0.0)

    # the reward travels back to the bandit through the 32-bit feedback register
    words = bd.pack_feedback(arms, int(mode), rewards, state.cfg.K_max)
    fb_arms, _, fb_rewards = bd.unpack_feedback(words, state.cfg.K_max)
    bd.update_arrays(state, fb_arms, fb_rewards)

    out = SlotBatch(slot, arms, qam, rewards, bits, errors, found, gain, phase, payload)
    if keep_retry:
        # noiseless part of the first transmission seen through the receiver's own
        # timing, CFO correction and FFT window
        out.clean_data = phy.extract_data(coef[:, None] * tx, res.sync)[:, 0, :]
        out.H_data = res.H[:, phy.GRID.data_indices]
    return out


# ---------------------------------------------------------------------------
# retransmissions
# ---------------------------------------------------------------------------

def _retry_rng(seed: int, slot: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STREAM_RETRY, int(slot)])


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _retry_uniform(seeds, slot: int) -> np.ndarray:
    """One uniform in [0, 1) per ``(seed, slot)``, a pure function of the pair."""
    with np.errstate(over="ignore"):
        h = _splitmix64(np.asarray(seeds, dtype=np.uint64) ^ np.uint64(_STREAM_RETRY << 56))
        h = _splitmix64(h ^ np.uint64(slot))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def rail_error_distribution(values, sd, true_codes, scheme: phy.ModScheme) -> np.ndarray:
    """Probability of 0..bits_per_rail bit errors on each slicer rail.

    ``values`` are noiseless equalised rail values, ``sd`` the standard
    deviation of the Gaussian noise on each rail (0 = noiseless) and
    ``true_codes`` the transmitted rail codes. Returns shape
    ``values.shape + (bits_per_rail + 1,)``.
    """
    values = np.asarray(values, dtype=np.float64)
    sd = np.broadcast_to(np.asarray(sd, dtype=np.float64), values.shape)
    codes = np.asarray(true_codes, dtype=np.int64)
    thr = scheme.thresholds
    order = np.argsort(scheme.levels)
    nb = scheme.bits_per_rail
    edges = np.concatenate([[-np.inf], thr, [np.inf]])
    safe = np.where(sd > 0, sd, 1.0)
    cdf = special.ndtr((edges - values[..., None]) / safe[..., None])
    region_p = np.diff(cdf, axis=-1)
    hard = np.searchsorted(thr, values, side="right")
    noiseless = np.arange(len(order)) == hard[..., None]
    region_p = np.where((sd > 0)[..., None], region_p, noiseless.astype(np.float64))
    # bit errors if region j is decided: popcount(code(j) XOR true code)
    diff = order[None, :] ^ np.arange(len(order))[:, None]
    nerr = sum((diff >> b) & 1 for b in range(nb))
    onehot = (nerr[..., None] == np.arange(nb + 1)).astype(np.float64)  # (code, region, errors)
    return np.einsum("...j,...je->...e", region_p, onehot[codes])


def prob_at_most(dist: np.ndarray, k: int) -> np.ndarray:
    """P(sum over the rail axis (-2) of independent error counts <= k)."""
    dist = np.asarray(dist, dtype=np.float64)
    if k == 0:
        return np.prod(dist[..., 0], axis=-1)
    # truncated convolution of the per-rail distributions, pairwise in a tree
    acc = np.zeros(dist.shape[:-1] + (k + 1,))
    w = min(k + 1, dist.shape[-1])
    acc[..., :w] = dist[..., :w]
    while acc.shape[-2] > 1:
        if acc.shape[-2] % 2:
            one = np.zeros(acc.shape[:-2] + (1, k + 1))
            one[..., 0] = 1.0
            acc = np.concatenate([acc, one], axis=-2)
        a, b = acc[..., 0::2, :], acc[..., 1::2, :]
        new = np.zeros_like(a)
        for e in range(k + 1):
            new[..., e:] += a[..., e : e + 1] * b[..., : k + 1 - e]
        acc = new
    return acc[..., 0, :].sum(axis=-1)


def retry_pass_probability(clean_data, H_data, n0, payload, qam, equalizer: str, model: ThroughputModel) -> np.ndarray:
    """Exact probability that one data-only retransmission meets the BER target.

    A retry re-sends the data symbol through the same flat channel with
    fresh complex AWGN of power ``n0`` per bin; the receiver keeps its
    channel estimate. Equalisation is linear per bin and slicing is per
    rail, so each rail sees independent Gaussian noise of known spread and
    its bit errors follow from Gaussian tail integrals.
    """
    clean_data = np.asarray(clean_data)
    H = np.asarray(H_data)
    mag = np.abs(H)
    erased = mag < phy.EPS_EQ
    if equalizer == phy.EQ_CONJ:
        eq = clean_data * np.conj(H)
        sd = np.sqrt(np.asarray(n0)[:, None] / 2) * mag
    elif equalizer == phy.EQ_ZF:
        eq = clean_data * np.conj(H) / np.where(erased, 1.0, mag**2)
        sd = np.sqrt(np.asarray(n0)[:, None] / 2) / np.where(erased, 1.0, mag)
    else:
        raise ValueError(f"unknown equaliser mode {equalizer!r}")
    eq = np.where(erased, 0.0, eq)
    sd = np.where(erased, 0.0, sd)
    p = np.empty(clean_data.shape[0])
    for use_qam, scheme, bits in ((False, phy.QPSK, BITS_QPSK), (True, phy.QAM16, BITS_QAM16)):
        sel = np.flatnonzero(np.asarray(qam) == use_qam)
        if not sel.size:
            continue
        nb = scheme.bits_per_rail
        rail_bits = np.asarray(payload)[sel, :bits].reshape(sel.size, phy.N_DATA, 2, nb)
        codes = np.zeros(rail_bits.shape[:-1], dtype=np.int64)
        for b in range(nb):
            codes = (codes << 1) | rail_bits[..., b]
        vals = np.stack([eq[sel].real, eq[sel].imag], axis=-1)
        sds = np.stack([sd[sel], sd[sel]], axis=-1)
        dist = rail_error_distribution(vals, sds, codes, scheme).reshape(sel.size, 2 * phy.N_DATA, nb + 1)
        k = int(np.floor(model.ber_target * bits + 1e-12))
        p[sel] = prob_at_most(dist, k)
    return np.clip(p, 0.0, 1.0)


def geometric_trials(p, u) -> np.ndarray:
    """Number of independent trials up to and including the first success,
    drawn by inversion from uniforms ``u`` in [0, 1); ``p = 0`` gives a huge count."""
    p = np.asarray(p, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    big = np.iinfo(np.int64).max // 4
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        k = np.floor(np.log1p(-u) / np.log1p(-np.minimum(p, 1.0))) + 1
    k = np.where(p >= 1.0, 1, k)
    k = np.where(p <= 0.0, big, k)
    return np.minimum(np.nan_to_num(k, nan=big, posinf=big), big).astype(np.int64)


def simulate_retries(
    batch: SlotBatch,
    rows: _Rows,
    equalizer: str,
    model: ThroughputModel,
    deferred: "FrameRetryQueue | None" = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Transmissions used and delivery flag for every slot of the batch.

    Retries re-send the same payload over the same fading realisation with
    fresh noise until the BER target is met or ``max_transmissions`` is
    reached. If the first attempt synchronised, the receiver keeps its
    timing, CFO and channel estimate and only the data symbol is re-sent:
    every retry then passes independently with the probability given by
    :func:`retry_pass_probability`, so the retry count is a geometric draw.
    Otherwise the whole frame is re-sent and re-synchronised sample by
    sample. A slot whose gain is exactly zero receives pure noise and is
    charged the full cap without simulation (a pass would need every
    payload bit guessed right).

    With ``deferred`` the re-synchronised slots are appended to that queue
    and reported here as capped and undelivered; the caller corrects its
    totals when the queue is flushed.
    """
    R = batch.arms.shape[0]
    cap = model.max_transmissions
    first_ok = model.passes(batch.errors, batch.bits)
    tx = np.ones(R, dtype=np.int64)
    delivered = first_ok.copy()
    pending = np.flatnonzero(~first_ok)
    if cap == 1 or pending.size == 0:
        return tx, delivered
    tx[pending] = cap
    n_retry = cap - 1

    n0 = rows.n0

    idx = pending[batch.found[pending]]
    if idx.size:
        p = retry_pass_probability(
            batch.clean_data[idx], batch.H_data[idx], n0[idx], batch.payload[idx], batch.qam[idx], equalizer, model
        )
        u = _retry_uniform(rows.seeds[idx], batch.slot)
        k = geometric_trials(p, u)
        hit = k <= n_retry
        tx[idx[hit]] = 1 + k[hit]
        delivered[idx] = hit

    idx = pending[~batch.found[pending] & (batch.gain[pending] > 0)]
    if idx.size:
        queue = deferred if deferred is not None else FrameRetryQueue(equalizer, model)
        queue.add(batch, rows, idx)
        if deferred is None:
            for r, _, t, ok in queue.flush():
                tx[r], delivered[r] = t, ok
    return tx, delivered


@dataclass
class FrameRetryQueue:
    """Full-frame retransmissions of unsynchronised slots, simulated in batches.

    Each queued slot draws its retries from its own ``(seed, slot)``
    generator, so results do not depend on how slots are grouped.
    """

    equalizer: str
    model: ThroughputModel
    limit: int = 48
    items: list = field(default_factory=list)

    def add(self, batch: SlotBatch, rows: _Rows, idx) -> None:
        for r in np.asarray(idx).tolist():
            self.items.append(
                (r, batch.slot, int(rows.seeds[r]), batch.payload[r], bool(batch.qam[r]), int(batch.bits[r]),
                 float(batch.gain[r]), float(batch.phase[r]), float(rows.n0[r]))
            )

    @property
    def full(self) -> bool:
        return len(self.items) >= self.limit

    def flush(self) -> list[tuple[int, int, int, bool]]:
        """Simulate every queued slot; returns ``(row, slot, transmissions, delivered)``."""
        items, self.items = self.items, []
        if not items:
            return []
        cap = self.model.max_transmissions
        n_retry = cap - 1
        gens = [_retry_rng(it[2], it[1]) for it in items]
        payload = np.stack([it[3] for it in items])
        qam = np.array([it[4] for it in items])
        bits = np.array([it[5] for it in items])
        gain = np.array([it[6] for it in items])
        phase = np.array([it[7] for it in items])
        n0 = np.array([it[8] for it in items])
        tx = np.full(len(items), cap, dtype=np.int64)
        ok_all = np.zeros(len(items), dtype=bool)
        live = np.arange(len(items))
        done = 0
        per_round = 7
        frames = phy.build_frame(_modulate_rows(payload, qam)[:, None, :])
        coef = np.sqrt(gain) * np.exp(1j * phase)
        while live.size and done < n_retry:
            m = min(per_round, n_retry - done)
            # noise over the detection span first; the rest only for frames that are detected
            head = np.concatenate([gens[i].standard_normal((m, SEARCH_LEN, 2), dtype=np.float32) for i in live])
            lead_u = np.concatenate([gens[i].random(m) for i in live])
            rep = lambda a: np.repeat(a[live], m, axis=0)  # noqa: E731
            p, q, nb, s0 = rep(payload), rep(qam), rep(bits), rep(n0)
            clean = rep(coef)[:, None] * _place(rep(frames), _leads(lead_u), STREAM_LEN)
            amp = np.sqrt(s0 / 2)[:, None]
            rx_head = clean[:, :SEARCH_LEN] + amp * (head[..., 0] + 1j * head[..., 1])
            _, _, M = phy.autocorrelate(rx_head)
            detected, _ = phy.detect_boundaries(M)
            errs = nb.copy()
            det = detected.reshape(live.size, m)
            sel = np.flatnonzero(detected)
            if sel.size:
                tails = [gens[i].standard_normal((int(c), STREAM_LEN - SEARCH_LEN, 2), dtype=np.float32)
                         for i, c in zip(live, det.sum(axis=1)) if c]
                tail = np.concatenate(tails)
                rx = clean[sel].copy()
                rx[:, :SEARCH_LEN] = rx_head[sel]
                rx[:, SEARCH_LEN:] += amp[sel] * (tail[..., 0] + 1j * tail[..., 1])
                res = phy.receive(rx, 1, self.equalizer, search_len=SEARCH_LEN)
                errs[sel] = np.where(res.found, _count_errors(res.equalized[:, 0, :], p[sel], q[sel]), nb[sel])
            ok = self.model.passes(errs, nb).reshape(live.size, m)
            hit = ok.any(axis=1)
            tx[live[hit]] = 2 + done + np.argmax(ok[hit], axis=1)
            ok_all[live[hit]] = True
            live = live[~hit]
            done += m
        return [(it[0], it[1], int(t), bool(o)) for it, t, o in zip(items, tx, ok_all)]


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a batch of runs."""

    name: str
    bandit: bd.BanditConfig
    channels: ChannelSpec
    policy: LinkPolicy = LinkPolicy()
    model: ThroughputModel = ThroughputModel()
    seeds: tuple[int, ...] = tuple(range(1, 11))
    n_runs: int | None = None
    equalizer: str = DEFAULT_EQUALIZER
    retransmissions: bool = True
    identity_channel: bool = False
    output_dir: str = "out"

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.n_runs is None:
            object.__setattr__(self, "n_runs", len(self.seeds))
        self.validate()

    def validate(self) -> None:
        if self.channels.K != self.bandit.K:
            raise ConfigError(f"{self.channels.K} channels configured but bandit K = {self.bandit.K}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.n_runs != len(self.seeds):
            raise ConfigError(f"n_runs = {self.n_runs} but {len(self.seeds)} seeds given")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.equalizer not in (phy.EQ_ZF, phy.EQ_CONJ):
            raise ConfigError(f"unknown equalizer {self.equalizer!r}")

    def replace(self, **changes) -> "ExperimentConfig":
        if "seeds" in changes and "n_runs" not in changes:
            changes["n_runs"] = None
        return replace(self, **changes)


@dataclass
class ExperimentResult:
    """Per-run totals plus cross-run means.

    ``pulls`` has shape ``(runs, K)``; the per-run scalar arrays have length
    ``runs``. ``slots`` optionally keeps per-slot arrays of shape ``(runs, N)``.
    """

    config: ExperimentConfig
    pulls: np.ndarray
    bits: np.ndarray
    errors: np.ndarray
    reward: np.ndarray
    qam_slots: np.ndarray
    sync_failures: np.ndarray
    delivered_bits: np.ndarray
    time_units: np.ndarray
    transmissions: np.ndarray
    slots: dict | None = field(default=None, repr=False)

    @property
    def error_pct(self) -> float:
        """Bit errors of first transmissions over all runs, in percent."""
        return 100.0 * float(self.errors.sum()) / float(self.bits.sum())

    @property
    def pull_share(self) -> np.ndarray:
        """Mean fraction of slots spent on each arm."""
        return (self.pulls / self.pulls.sum(axis=1, keepdims=True)).mean(axis=0)

    @property
    def mean_pulls(self) -> np.ndarray:
        return self.pulls.mean(axis=0)

    @property
    def throughput(self) -> float:
        """Mbps over all runs (see :func:`compute_throughput`)."""
        m = self.config.model
        return m.base_rate_qpsk * float(self.delivered_bits.sum()) / BITS_QPSK / float(self.time_units.sum())

    @property
    def avg_transmissions(self) -> float:
        return float(self.transmissions.sum()) / float(self.pulls.sum())


_TRACE_FIELDS = [
    ("arm", np.int64),
    ("qam", bool),
    ("reward", np.float64),
    ("bits", np.int64),
    ("errors", np.int64),
    ("retries", np.int64),
    ("synced", bool),
    ("delivered", bool),
]


def _group_key(cfg: ExperimentConfig):
    return (cfg.bandit.replace(rng_seed=0), cfg.equalizer, cfg.retransmissions, cfg.model)


def run_experiments(cfgs: Sequence[ExperimentConfig], keep_slots: bool = False) -> list[ExperimentResult]:
    """Run several experiments, batching all compatible runs in one lockstep loop.

    Experiments sharing the bandit configuration (apart from seeds),
    equaliser, throughput model and retransmission switch are simulated
    together. A run's random streams depend only on its seed, so each
    result is identical to running its experiment alone.
    """
    cfgs = list(cfgs)
    for c in cfgs:
        c.validate()
    results: list[ExperimentResult | None] = [None] * len(cfgs)
    groups: dict = {}
    for i, c in enumerate(cfgs):
        groups.setdefault(_group_key(c), []).append(i)
    for members in groups.values():
        for i, res in zip(members, _run_group([cfgs[i] for i in members], keep_slots)):
            results[i] = res
    return results


def run_experiment(cfg: ExperimentConfig, keep_slots: bool = False) -> ExperimentResult:
    """Run ``cfg.bandit.N`` slots for every seed of one experiment."""
    return run_experiments([cfg], keep_slots)[0]


def _run_group(cfgs: list[ExperimentConfig], keep_slots: bool) -> list[ExperimentResult]:
    base = cfgs[0]
    entries = [(s, c.channels, c.policy, c.identity_channel) for c in cfgs for s in c.seeds]
    unique = sorted({e[0] for e in entries})
    rows = _Rows.build(entries, unique)
    R, N, K = len(rows), base.bandit.N, base.bandit.K
    state = bd.reset(base.bandit, rows.seeds.tolist())
    streams = BatchStreams(unique)
    model = base.model

    pulls = np.zeros((R, K), dtype=np.int64)
    bits = np.zeros(R, dtype=np.int64)
    errors = np.zeros(R, dtype=np.int64)
    reward = np.zeros(R)
    qam_slots = np.zeros(R, dtype=np.int64)
    sync_fail = np.zeros(R, dtype=np.int64)
    delivered = np.zeros(R, dtype=np.int64)
    transmissions = np.zeros(R, dtype=np.int64)
    trace = {k: np.zeros((R, N), dtype=t) for k, t in _TRACE_FIELDS} if keep_slots else None

    r_idx = np.arange(R)
    queue = FrameRetryQueue(base.equalizer, model)
    cap = model.max_transmissions

    def settle() -> None:
        # replace the provisional capped/undelivered entries of re-synchronised slots
        for r, slot, t, ok in queue.flush():
            transmissions[r] += t - cap
            if ok:
                delivered[r] += bits_of[(r, slot)]
            if trace is not None:
                trace["retries"][r, slot - 1] = t - 1
                trace["delivered"][r, slot - 1] = ok

    bits_of: dict = {}
    for n in range(N):
        b = _step(rows, state, streams.take(), n + 1, base.equalizer, base.retransmissions)
        if base.retransmissions:
            before = len(queue.items)
            tx, ok = simulate_retries(b, rows, base.equalizer, model, deferred=queue)
            for it in queue.items[before:]:
                bits_of[(it[0], it[1])] = it[5]
            if queue.full:
                settle()
        else:
            tx, ok = np.ones(R, dtype=np.int64), model.passes(b.errors, b.bits)
        pulls[r_idx, b.arms] += 1
        bits += b.bits
        errors += b.errors
        reward += b.rewards
        qam_slots += b.qam
        sync_fail += ~b.found
        delivered += np.where(ok, b.bits, 0)
        transmissions += tx
        if trace is not None:
            for key, val in (
                ("arm", b.arms), ("qam", b.qam), ("reward", b.rewards), ("bits", b.bits),
                ("errors", b.errors), ("retries", tx - 1), ("synced", b.found), ("delivered", ok),
            ):
                trace[key][:, n] = val
    settle()
    # slot time is affine in the transmission count, so the total follows from integers
    time_units = N + (transmissions - N) * (1.0 + model.feedback_fraction)

    out = []
    lo = 0
    for c in cfgs:
        sl = slice(lo, lo + len(c.seeds))
        lo += len(c.seeds)
        out.append(
            ExperimentResult(
                c, pulls[sl], bits[sl], errors[sl], reward[sl], qam_slots[sl], sync_fail[sl],
                delivered[sl], time_units[sl], transmissions[sl],
                {k: v[sl] for k, v in trace.items()} if trace is not None else None,
            )
        )
    return out


def slot_reports(result: ExperimentResult, run: int = 0) -> list[SlotReport]:
    """Per-slot records of one run (requires ``keep_slots=True``)."""
    if result.slots is None:
        raise ValueError("experiment was run without keep_slots")
    s = result.slots
    return [
        SlotReport(
            slot=n + 1,
            arm=int(s["arm"][run, n]),
            modulation="QAM16" if s["qam"][run, n] else "QPSK",
            reward=float(s["reward"][run, n]),
            bits_tx=int(s["bits"][run, n]),
            bit_errors=int(s["errors"][run, n]),
            retransmissions=int(s["retries"][run, n]),
            synced=bool(s["synced"][run, n]),
            delivered=bool(s["delivered"][run, n]),
        )
        for n in range(s["arm"].shape[1])
    ]


def write_trace(path, reports: Sequence[SlotReport]) -> None:
    """CSV trace, one row per slot (arms are written 1-based)."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "arm", "modulation", "reward", "bits", "errors", "retries"])
        for r in reports:
            w.writerow([r.slot, r.arm + 1, r.modulation, f"{r.reward:.6f}", r.bits_tx, r.bit_errors, r.retransmissions])


# ---------------------------------------------------------------------------
# single-run stepping
# ---------------------------------------------------------------------------

class LinkRng:
    """Random streams of one run, consumed one slot at a time by :func:`run_slot`."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams = BatchStreams([self.seed])
        self.slot = 0

    def take(self) -> SlotDraws:
        self.slot += 1
        return self._streams.take()


def run_slot(
    state: bd.BanditState,
    policy: LinkPolicy,
    spec: ChannelSpec,
    rng: LinkRng,
    model: ThroughputModel | None = ThroughputModel(),
    equalizer: str = DEFAULT_EQUALIZER,
    identity_channel: bool = False,
) -> tuple[SlotReport, bd.BanditState]:
    """Advance one run by one slot; the input state is left untouched.

    Calling this ``N`` times from ``bandit.reset(cfg.replace(rng_seed=s))``
    with ``LinkRng(s)`` reproduces :func:`run_experiment` for seed ``s``.
    ``model=None`` skips the retransmission simulation.
    """
    single = state.X.ndim == 1
    st = state.copy()
    if single:
        st.X, st.T, st.Y = st.X[None], st.T[None], st.Y[None]
        st.init_order = st.init_order[None]
    rows = _Rows.build([(rng.seed, spec, policy, identity_channel)], [rng.seed])
    b = _step(rows, st, rng.take(), rng.slot, equalizer, model is not None)
    if model is not None:
        tx, ok = simulate_retries(b, rows, equalizer, model)
        tx, ok = int(tx[0]), bool(ok[0])
    else:
        tx, ok = 1, True
    if single:
        st.X, st.T, st.Y = st.X[0], st.T[0], st.Y[0]
        st.init_order = st.init_order[0]
    report = SlotReport(
        slot=rng.slot,
        arm=int(b.arms[0]),
        modulation="QAM16" if b.qam[0] else "QPSK",
        reward=float(b.rewards[0]),
        bits_tx=int(b.bits[0]),
        bit_errors=int(b.errors[0]),
        retransmissions=tx - 1,
        synced=bool(b.found[0]),
        delivered=ok,
    )
    return report, st


# ---------------------------------------------------------------------------
# channel selection without the PHY
# ---------------------------------------------------------------------------

@dataclass
class SelectionResult:
    """Outcome of bandit-only runs: pulls ``(runs, K)`` and total reward per run."""

    pulls: np.ndarray
    total_reward: np.ndarray

    @property
    def pull_share(self) -> np.ndarray:
        return (self.pulls / self.pulls.sum(axis=1, keepdims=True)).mean(axis=0)

    @property
    def mean_pulls(self) -> np.ndarray:
        return self.pulls.mean(axis=0)


def run_channel_selection(
    cfg: bd.BanditConfig,
    spec: ChannelSpec,
    seeds: Sequence[int],
    state: bd.BanditState | None = None,
    n_slots: int | None = None,
) -> tuple[SelectionResult, bd.BanditState]:
    """Bandit loop whose reward is the drawn power gain itself.

    This is the learning problem in isolation (a noiseless pilot
    measurement): each slot draws the gain of the selected arm, packs it
    into the feedback word and updates the counters. ``state`` continues an
    existing batch (e.g. after a reconfiguration); ``n_slots`` defaults to
    ``cfg.N``.
    """
    seeds = [int(s) for s in seeds]
    if spec.K != cfg.K:
        raise ConfigError(f"{spec.K} channels configured but bandit K = {cfg.K}")
    if state is None:
        state = bd.reset(cfg, seeds)
    n_slots = cfg.N if n_slots is None else n_slots
    z = np.stack([_generators(s)[0].standard_normal(n_slots) for s in seeds], axis=1)
    R = len(seeds)
    pulls = np.zeros((R, cfg.K), dtype=np.int64)
    total = np.zeros(R)
    rows = np.arange(R)
    mu, sd = spec.mu_array, spec.sigma_array
    for n in range(n_slots):
        mode = state.mode
        arms = np.asarray(bd.select(state)).reshape(R)
        gain = np.clip(mu[arms] + sd[arms] * z[n], 0.0, 1.0)
        words = bd.pack_feedback(arms, int(mode), gain, cfg.K_max)
        fb_arms, _, fb_rewards = bd.unpack_feedback(words, cfg.K_max)
        bd.update_arrays(state, fb_arms, fb_rewards)
        pulls[rows, arms] += 1
        total += fb_rewards
    return SelectionResult(pulls, total), state
