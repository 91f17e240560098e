"""UCB-family channel selection engine.

The engine keeps the per-arm accumulators of the initialisation and
parameter update (IPU) stage, computes quality factors (QF) for UCB, UCB-V
and UCB-Tuned in float64, float32 or a fixed-point datapath, and picks the
arm with the largest QF.

Counters are stored as numpy arrays whose last axis is the arm axis, so one
:class:`BanditState` can hold a single experiment (shape ``(K,)``) or several
experiments advancing in lockstep (shape ``(R, K)``). Arm indices are 0-based
throughout this module.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FeedbackError, StateError
from .fixedpoint import QFormat, quantize_array


class Algorithm(str, enum.Enum):
    UCB = "UCB"
    UCB_V = "UCB_V"
    UCB_T = "UCB_T"

    @classmethod
    def parse(cls, text: str) -> "Algorithm":
        """Lenient name lookup: ``ucb-v``, ``UCBV``, ``UCB-Tuned`` ..."""
        key = re.sub(r"[^a-z]", "", str(text).lower())
        table = {"ucb": cls.UCB, "ucbv": cls.UCB_V, "ucbt": cls.UCB_T, "ucbtuned": cls.UCB_T}
        if key not in table:
            raise ConfigError(f"unknown bandit algorithm {text!r}")
        return table[key]


class Mode(enum.IntEnum):
    INIT = 0
    LEARN = 1


QF_INT_BITS = 4


@dataclass(frozen=True)
class NumericMode:
    """Arithmetic used by the QF datapath: ``float64``, ``float32`` or ``fixed``."""

    kind: str = "float64"
    fmt: QFormat | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("float64", "float32", "fixed"):
            raise ConfigError(f"unknown numeric mode {self.kind!r}")
        if (self.kind == "fixed") != (self.fmt is not None):
            raise ConfigError("a QFormat is required for, and only for, fixed mode")

    @classmethod
    def word_length(cls, wl: int, int_bits: int = QF_INT_BITS) -> "NumericMode":
        return cls("fixed", QFormat.for_word_length(wl, int_bits))

    @classmethod
    def parse(cls, text: str | int) -> "NumericMode":
        """Accept ``float64``, ``float32``/``float``, a word-length (``11``) or ``Q4.7``."""
        s = str(text).strip().lower()
        if s in ("float64", "double"):
            return cls("float64")
        if s in ("float32", "float", "sp", "single"):
            return cls("float32")
        if s.startswith("wl"):
            s = s[2:]
        if s.isdigit():
            try:
                return cls.word_length(int(s))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            return cls("fixed", QFormat.parse(s))
        except ValueError:
            raise ConfigError(f"cannot parse numeric mode {text!r}") from None

    @property
    def label(self) -> str:
        """Short name for tables: ``float``, ``float64`` or the word-length."""
        if self.kind == "fixed":
            return str(self.fmt.total_bits)
        return "float" if self.kind == "float32" else self.kind

    def __str__(self) -> str:
        return str(self.fmt) if self.kind == "fixed" else self.kind


@dataclass(frozen=True)
class BanditConfig:
    K: int
    K_max: int = 8
    N: int = 10_000
    algorithm: Algorithm = Algorithm.UCB
    alpha: float = 2.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    numeric_mode: NumericMode = NumericMode()
    rng_seed: int = 0
    ucbt_classical: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        self.validate()

    def validate(self) -> None:
        if not 1 <= self.K <= self.K_max:
            raise ConfigError(f"need 1 <= K <= K_max, got K={self.K}, K_max={self.K_max}")
        if self.K_max > 1 << 16:
            raise ConfigError("K_max too large for the 32-bit feedback word")
        if self.N < self.K:
            raise ConfigError(f"horizon N={self.N} shorter than the {self.K}-slot INIT phase")
        if not 0.5 <= self.alpha <= 2.0:
            raise ConfigError(f"alpha must lie in [0.5, 2], got {self.alpha}")
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ConfigError("alpha1 and alpha2 must be positive")

    def replace(self, **changes) -> "BanditConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class BanditState:
    """IPU registers. ``n`` is the index of the slot about to be played (from 1)."""

    cfg: BanditConfig
    n: int
    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    init_order: np.ndarray
    selected: np.ndarray | None = None
    seeds: tuple[int, ...] | None = None

    @property
    def K(self) -> int:
        return self.X.shape[-1]

    @property
    def mode(self) -> Mode:
        return Mode.INIT if self.n <= self.K else Mode.LEARN

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.X.shape[:-1]

    def copy(self) -> "BanditState":
        return BanditState(
            self.cfg,
            self.n,
            self.X.copy(),
            self.T.copy(),
            self.Y.copy(),
            self.init_order.copy(),
            None if self.selected is None else np.array(self.selected, copy=True),
            self.seeds,
        )


@dataclass
class QfVector:
    q: np.ndarray
    valid_for_n: int
    variance: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# feedback word
# ---------------------------------------------------------------------------

def index_bits(k_max: int) -> int:
    return max(0, math.ceil(math.log2(k_max))) if k_max > 1 else 0


def reward_bits(k_max: int) -> int:
    return 32 - index_bits(k_max) - 1


def pack_feedback(arm, mode, reward, k_max: int) -> np.ndarray:
    """Vectorised encoder. The reward is truncated toward zero to the field width
    and saturates just below 1."""
    ib = index_bits(k_max)
    rb = reward_bits(k_max)
    arm = np.asarray(arm, dtype=np.uint64)
    mode = np.asarray(mode, dtype=np.uint64) & 1
    reward = np.asarray(reward, dtype=np.float64)
    if np.isnan(reward).any():
        raise FeedbackError("reward is NaN")
    field_max = (1 << rb) - 1
    rcode = np.clip(np.floor(np.clip(reward, 0.0, 1.0) * (1 << rb)), 0, field_max).astype(np.uint64)
    if ib and (arm >= (1 << ib)).any():
        raise FeedbackError(f"arm index does not fit in {ib} bits")
    word = (arm << np.uint64(32 - ib)) if ib else np.zeros_like(arm)
    word = word | (mode << np.uint64(rb)) | rcode
    return word.astype(np.uint32)


def unpack_feedback(word, k_max: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ib = index_bits(k_max)
    rb = reward_bits(k_max)
    w = np.asarray(word, dtype=np.uint64)
    arm = (w >> np.uint64(32 - ib)) if ib else np.zeros_like(w)
    mode = (w >> np.uint64(rb)) & np.uint64(1)
    reward = (w & np.uint64((1 << rb) - 1)).astype(np.float64) / float(1 << rb)
    return arm.astype(np.int64), mode.astype(np.int64), reward


@dataclass(frozen=True)
class FeedbackWord:
    """32-bit feedback register: arm index (MSBs), mode bit, reward fraction (LSBs)."""

    raw: int

    def __post_init__(self) -> None:
        if not 0 <= self.raw < 1 << 32:
            raise FeedbackError(f"feedback word {self.raw} is not a 32-bit unsigned value")

    def to_bytes(self) -> bytes:
        return int(self.raw).to_bytes(4, "little")

    @classmethod
    def from_bytes(cls, data: bytes) -> "FeedbackWord":
        if len(data) != 4:
            raise FeedbackError("a feedback word is exactly 4 bytes")
        return cls(int.from_bytes(data, "little"))


def encode_feedback(arm: int, mode: int | Mode, reward: float, cfg: BanditConfig) -> FeedbackWord:
    return FeedbackWord(int(pack_feedback(arm, int(mode), reward, cfg.K_max)))


def decode_feedback(w: FeedbackWord, cfg: BanditConfig) -> tuple[int, Mode, float]:
    arm, mode, reward = unpack_feedback(w.raw, cfg.K_max)
    arm = int(arm)
    if arm >= cfg.K:
        raise FeedbackError(f"feedback names arm {arm} but only {cfg.K} arms are configured")
    return arm, Mode(int(mode)), float(reward)


def write_feedback_trace(path, words) -> None:
    """Store feedback words as consecutive little-endian uint32 values."""
    raw = np.asarray([w.raw if isinstance(w, FeedbackWord) else int(w) for w in words], dtype="<u4")
    raw.tofile(path)


def read_feedback_trace(path) -> list[FeedbackWord]:
    return [FeedbackWord(int(v)) for v in np.fromfile(path, dtype="<u4")]


# ---------------------------------------------------------------------------
# IPU: reset / update
# ---------------------------------------------------------------------------

def reset(cfg: BanditConfig, seeds=None) -> BanditState:
    """Fresh state with all counters zero and a seeded INIT order.

    ``seeds`` (a sequence) creates a batch of independent states, one per seed;
    by default a single state seeded with ``cfg.rng_seed`` is returned.
    """
    cfg.validate()
    seed_list = [cfg.rng_seed] if seeds is None else list(seeds)
    orders = np.stack([np.random.default_rng(s).permutation(cfg.K) for s in seed_list])
    shape = (len(seed_list), cfg.K)
    if seeds is None:
        orders = orders[0]
        shape = (cfg.K,)
    return BanditState(
        cfg=cfg,
        n=1,
        X=np.zeros(shape),
        T=np.zeros(shape, dtype=np.int64),
        Y=np.zeros(shape),
        init_order=orders,
        seeds=None if seeds is None else tuple(seed_list),
    )


def mark_selected(state: BanditState, arms) -> None:
    """Record the arm(s) played in the current slot (used when the caller, not
    :func:`select`, chose the channel)."""
    state.selected = np.asarray(arms, dtype=np.int64).reshape(state.batch_shape)


def update_arrays(state: BanditState, arms, rewards) -> BanditState:
    """Apply one slot of feedback to every experiment in the batch."""
    if state.selected is None:
        raise StateError("update called before any arm was selected in this slot")
    arms = np.asarray(arms, dtype=np.int64).reshape(state.batch_shape)
    rewards = np.asarray(rewards, dtype=np.float64).reshape(state.batch_shape)
    if ((arms < 0) | (arms >= state.K)).any():
        raise FeedbackError("feedback arm index out of range")
    onehot = arms[..., None] == np.arange(state.K)
    state.X = state.X + onehot * rewards[..., None]
    state.Y = state.Y + onehot * (rewards**2)[..., None]
    state.T = state.T + onehot
    state.n += 1
    state.selected = None
    return state


def update(state: BanditState, feedback: FeedbackWord) -> BanditState:
    """IPU update from a single experiment's feedback word."""
    arm, _, reward = decode_feedback(feedback, state.cfg)
    return update_arrays(state, arm, reward)


# ---------------------------------------------------------------------------
# QF datapath
# ---------------------------------------------------------------------------

def _stage(mode: NumericMode):
    if mode.kind == "float64":
        return lambda v: np.asarray(v, dtype=np.float64)
    if mode.kind == "float32":
        return lambda v: np.asarray(v, dtype=np.float32).astype(np.float64)
    fmt = mode.fmt
    return lambda v: quantize_array(v, fmt)


def _require_learn(state: BanditState) -> None:
    if state.mode is Mode.INIT or (state.T < 1).any():
        raise StateError("quality factors are only defined in LEARN mode (every arm pulled once)")


def _common(state: BanditState, cfg: BanditConfig):
    _require_learn(state)
    q = _stage(cfg.numeric_mode)
    T = state.T.astype(np.float64)
    mean = q(state.X / T)
    # ln(n)/T feeds the bonus blocks at extended precision; each block registers
    # only its own output in the datapath format
    log_over_t = math.log(state.n) / T
    return q, T, mean, log_over_t


def _variance(state, q, T, mean):
    second = q(state.Y / T)
    return q(second - q(mean * mean))


def qf_ucb(state: BanditState, cfg: BanditConfig | None = None) -> QfVector:
    """``X/T + sqrt(alpha * ln(n) / T)``."""
    cfg = cfg or state.cfg
    q, T, mean, lt = _common(state, cfg)
    bonus = q(np.sqrt(cfg.alpha * lt))
    return QfVector(q(mean + bonus), state.n)


def qf_ucbv(state: BanditState, cfg: BanditConfig | None = None) -> QfVector:
    """``X/T + sqrt(alpha1 * ln(n) * V / T) + alpha2 * ln(n) / T``, V clamped at 0."""
    cfg = cfg or state.cfg
    q, T, mean, lt = _common(state, cfg)
    var = np.maximum(_variance(state, q, T, mean), 0.0)
    b1 = q(np.sqrt(cfg.alpha1 * lt * var))
    b2 = q(cfg.alpha2 * lt)
    return QfVector(q(q(mean + b1) + b2), state.n, variance=var)


def qf_ucbt(state: BanditState, cfg: BanditConfig | None = None) -> QfVector:
    """UCB-Tuned quality factor.

    Default form: ``Y/T - (X/T)**2 + sqrt(alpha * ln(n) / T)`` (no mean term).
    With ``cfg.ucbt_classical`` the textbook form
    ``X/T + sqrt(ln(n)/T * min(1/4, V + sqrt(2 ln(n) / T)))`` is used instead.
    """
    cfg = cfg or state.cfg
    q, T, mean, lt = _common(state, cfg)
    var = _variance(state, q, T, mean)
    if cfg.ucbt_classical:
        v = np.minimum(q(np.maximum(var, 0.0) + q(np.sqrt(2.0 * lt))), 0.25)
        return QfVector(q(mean + q(np.sqrt(lt * v))), state.n, variance=var)
    bonus = q(np.sqrt(cfg.alpha * lt))
    return QfVector(q(var + bonus), state.n, variance=var)


_QF = {Algorithm.UCB: qf_ucb, Algorithm.UCB_V: qf_ucbv, Algorithm.UCB_T: qf_ucbt}


def compute_qf(state: BanditState, cfg: BanditConfig | None = None) -> QfVector:
    cfg = cfg or state.cfg
    return _QF[cfg.algorithm](state, cfg)


def select(state: BanditState, cfg: BanditConfig | None = None, qf: QfVector | None = None):
    """Arm to play in slot ``state.n``.

    INIT mode follows ``init_order``; LEARN mode takes the argmax of the QF,
    breaking ties toward the lowest index. Returns an ``int`` for a single
    experiment and an array for a batch.
    """
    cfg = cfg or state.cfg
    if state.mode is Mode.INIT:
        arms = state.init_order[..., state.n - 1]
    else:
        if qf is None:
            qf = compute_qf(state, cfg)
        arms = np.argmax(qf.q, axis=-1)
    state.selected = np.asarray(arms, dtype=np.int64)
    return int(arms) if np.ndim(arms) == 0 else np.asarray(arms, dtype=np.int64)


def reconfigure(
    state: BanditState,
    algorithm: Algorithm | str | None = None,
    K: int | None = None,
) -> BanditState:
    """Switch algorithm (counters kept) and/or arm count (fresh experiment)."""
    cfg = state.cfg
    if K is not None and K != cfg.K:
        if K > cfg.K_max:
            raise ConfigError(f"cannot reconfigure to K={K}: K_max is {cfg.K_max}")
        new_cfg = cfg.replace(K=K, algorithm=Algorithm(algorithm) if algorithm else cfg.algorithm)
        return reset(new_cfg, state.seeds)
    if algorithm is None or Algorithm(algorithm) == cfg.algorithm:
        return state
    new_state = state.copy()
    new_state.cfg = cfg.replace(algorithm=Algorithm(algorithm))
    return new_state
