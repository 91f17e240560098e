"""OFDM baseband transceiver modelled on the 802.11a physical layer.

Everything operates on numpy arrays whose last axis is the sample (or
subcarrier) axis, so a stack of independent frames can be processed in one
call. Frequency-domain vectors are stored in FFT bin order: bin ``b`` holds
subcarrier ``b`` for ``b < 32`` and subcarrier ``b - 64`` otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import EqError, LengthError, SyncError
from .fixedpoint import Q1_15, FixedValue

N_FFT = 64
CP_LEN = 16
SYMBOL_LEN = N_FFT + CP_LEN
STF_LEN = 160
LTF_CP_LEN = 32
PREAMBLE_LEN = 320
CORR_LAG = 16
CORR_WINDOW = 32
SYNC_THRESHOLD = 0.75
EPS_ENERGY = 1e-12
EPS_EQ = 1e-6

# Preamble layout (offsets from the first preamble sample).
LTF1_START = STF_LEN + LTF_CP_LEN  # 192
LTF2_START = LTF1_START + N_FFT  # 256


# ---------------------------------------------------------------------------
# constellations
# ---------------------------------------------------------------------------

class ModKind(str, Enum):
    QPSK = "QPSK"
    QAM16 = "QAM16"


@dataclass(frozen=True)
class ModScheme:
    """A square constellation described one rail (I or Q) at a time.

    ``constellation`` maps the per-rail bit tuple (MSB first) to its Q1.15 level.
    """

    kind: ModKind
    bits_per_symbol: int
    constellation: dict = field(compare=False, hash=False)

    @property
    def bits_per_rail(self) -> int:
        return self.bits_per_symbol // 2

    @property
    def levels(self) -> np.ndarray:
        """Rail levels indexed by the integer value of the rail bits."""
        out = np.empty(1 << self.bits_per_rail)
        for bits, value in self.constellation.items():
            out[_bits_to_int(bits)] = value.to_real()
        return out

    @property
    def thresholds(self) -> np.ndarray:
        """Slicer decision boundaries: midpoints between adjacent sorted levels."""
        s = np.sort(self.levels)
        return (s[1:] + s[:-1]) / 2

    def __str__(self) -> str:
        return self.kind.value


def _bits_to_int(bits: tuple[int, ...]) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | b
    return v


QPSK = ModScheme(
    ModKind.QPSK,
    2,
    {
        (0,): FixedValue.from_hex(0xA57E, Q1_15),
        (1,): FixedValue.from_hex(0x5A82, Q1_15),
    },
)

QAM16 = ModScheme(
    ModKind.QAM16,
    4,
    {
        (0, 0): FixedValue.from_hex(0x8692, Q1_15),
        (0, 1): FixedValue.from_hex(0x287A, Q1_15),
        (1, 0): FixedValue.from_hex(0xD786, Q1_15),
        (1, 1): FixedValue.from_hex(0x796E, Q1_15),
    },
)

PILOT_PLUS = FixedValue.from_hex(0x7FFF, Q1_15)
PILOT_MINUS = FixedValue.from_hex(0x8001, Q1_15)


def scheme_by_name(name) -> ModScheme:
    if isinstance(name, ModScheme):
        return name
    key = str(getattr(name, "value", name)).upper().replace("-", "")
    if key == "QPSK":
        return QPSK
    if key in ("QAM16", "16QAM"):
        return QAM16
    raise ValueError(f"unknown modulation {name!r}")


def modulate(bits, scheme: ModScheme) -> np.ndarray:
    """Map bits to complex symbols, the first half of each group on I, the rest on Q."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.shape[-1] % scheme.bits_per_symbol:
        raise LengthError(
            f"{bits.shape[-1]} bits is not a multiple of {scheme.bits_per_symbol} bits per symbol"
        )
    groups = bits.reshape(*bits.shape[:-1], -1, 2, scheme.bits_per_rail)
    weights = 1 << np.arange(scheme.bits_per_rail - 1, -1, -1)
    idx = groups @ weights
    lv = scheme.levels[idx]
    return lv[..., 0] + 1j * lv[..., 1]


def _slice_rail(x: np.ndarray, scheme: ModScheme) -> np.ndarray:
    """Index of the nearest level; a value exactly on a boundary goes to the upper level."""
    levels = scheme.levels
    order = np.argsort(levels)
    pos = np.searchsorted(scheme.thresholds, x, side="right")
    return order[pos]


def demodulate(symbols, scheme: ModScheme) -> np.ndarray:
    """Hard-decision per-rail slicing back to bits."""
    symbols = np.asarray(symbols)
    rails = np.stack([_slice_rail(symbols.real, scheme), _slice_rail(symbols.imag, scheme)], axis=-1)
    shifts = np.arange(scheme.bits_per_rail - 1, -1, -1)
    bits = (rails[..., None] >> shifts) & 1
    return bits.reshape(*symbols.shape[:-1], -1).astype(np.int8)


# ---------------------------------------------------------------------------
# resource grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResourceGrid:
    """Data/pilot/null bin assignment of one OFDM symbol (FFT bin indices)."""

    n_fft: int
    data_indices: np.ndarray = field(compare=False)
    pilot_indices: np.ndarray = field(compare=False)
    null_indices: np.ndarray = field(compare=False)
    pilot_values: np.ndarray = field(compare=False)

    @classmethod
    def ieee80211a(cls) -> "ResourceGrid":
        pilots_sc = np.array([-21, -7, 7, 21])
        active_sc = np.array([k for k in range(-26, 27) if k != 0])
        data_sc = np.array([k for k in active_sc if k not in pilots_sc])
        to_bin = lambda sc: np.asarray(sc) % N_FFT  # noqa: E731
        occupied = set(to_bin(active_sc).tolist())
        nulls = np.array(sorted(set(range(N_FFT)) - occupied))
        pv = np.array([PILOT_PLUS, PILOT_PLUS, PILOT_PLUS, PILOT_MINUS])
        return cls(
            N_FFT,
            to_bin(data_sc),
            to_bin(pilots_sc),
            nulls,
            np.array([p.to_real() for p in pv]),
        )

    @property
    def occupied_indices(self) -> np.ndarray:
        return np.sort(np.concatenate([self.data_indices, self.pilot_indices]))


GRID = ResourceGrid.ieee80211a()
N_DATA = len(GRID.data_indices)


def map_resources(data_syms, pilot_syms=None, grid: ResourceGrid = GRID) -> np.ndarray:
    """Place 48 data and 4 pilot symbols onto the 64 FFT bins; nulls stay zero."""
    data_syms = np.asarray(data_syms, dtype=np.complex128)
    if data_syms.shape[-1] != len(grid.data_indices):
        raise LengthError(f"expected {len(grid.data_indices)} data symbols, got {data_syms.shape[-1]}")
    if pilot_syms is None:
        pilot_syms = grid.pilot_values
    out = np.zeros((*data_syms.shape[:-1], grid.n_fft), dtype=np.complex128)
    out[..., grid.data_indices] = data_syms
    out[..., grid.pilot_indices] = pilot_syms
    return out


def demap_resources(freq, grid: ResourceGrid = GRID) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`map_resources`: returns ``(data, pilots)``."""
    freq = np.asarray(freq)
    if freq.shape[-1] != grid.n_fft:
        raise LengthError(f"expected {grid.n_fft} bins, got {freq.shape[-1]}")
    return freq[..., grid.data_indices], freq[..., grid.pilot_indices]


# ---------------------------------------------------------------------------
# radix-2 FFT (unitary scaling)
# ---------------------------------------------------------------------------

def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


_BITREV = _bit_reverse(N_FFT)


_TWIDDLES = {
    sign: [np.exp(sign * 2j * np.pi * np.arange(m) / (2 * m)) for m in (1 << b for b in range(6))]
    for sign in (-1, +1)
}


def _fft_radix2(x: np.ndarray, sign: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.shape[-1] != N_FFT:
        raise LengthError(f"expected {N_FFT} samples, got {x.shape[-1]}")
    lead = x.shape[:-1]
    y = x[..., _BITREV]
    out = np.empty_like(y)
    m = 1
    for tw in _TWIDDLES[sign]:
        y = y.reshape(*lead, N_FFT // (2 * m), 2, m)
        o = out.reshape(*lead, N_FFT // (2 * m), 2, m)
        odd = y[..., 1, :] * tw
        np.add(y[..., 0, :], odd, out=o[..., 0, :])
        np.subtract(y[..., 0, :], odd, out=o[..., 1, :])
        y, out = o, y
        m *= 2
    return y.reshape(*lead, N_FFT) * (1 / np.sqrt(N_FFT))


def fft64(time) -> np.ndarray:
    """Forward 64-point DFT, scaled by 1/8 so that the transform is unitary."""
    return _fft_radix2(time, -1)


def ifft64(freq) -> np.ndarray:
    """Inverse of :func:`fft64`."""
    return _fft_radix2(freq, +1)


def dft_direct(x, inverse: bool = False) -> np.ndarray:
    """O(N^2) reference DFT with the same unitary scaling."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    sign = 1 if inverse else -1
    w = np.exp(sign * 2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)
    return x @ w.T


# ---------------------------------------------------------------------------
# symbols and preamble
# ---------------------------------------------------------------------------

def add_cp(symbol) -> np.ndarray:
    symbol = np.asarray(symbol)
    if symbol.shape[-1] != N_FFT:
        raise LengthError(f"expected {N_FFT} samples, got {symbol.shape[-1]}")
    return np.concatenate([symbol[..., N_FFT - CP_LEN:], symbol], axis=-1)


def strip_cp(samples) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.shape[-1] != SYMBOL_LEN:
        raise LengthError(f"expected {SYMBOL_LEN} samples, got {samples.shape[-1]}")
    return samples[..., CP_LEN:]


def _from_subcarriers(values: dict[int, complex]) -> np.ndarray:
    freq = np.zeros(N_FFT, dtype=np.complex128)
    for sc, v in values.items():
        freq[sc % N_FFT] = v
    return freq


_STF_SC = {
    -24: 1 + 1j, -20: -1 - 1j, -16: 1 + 1j, -12: -1 - 1j, -8: -1 - 1j, -4: 1 + 1j,
    4: -1 - 1j, 8: -1 - 1j, 12: 1 + 1j, 16: 1 + 1j, 20: 1 + 1j, 24: 1 + 1j,
}
_LTF_VALUES = [
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1,
    0,
    1, -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1,
]

STF_FREQ = _from_subcarriers({k: np.sqrt(13 / 6) * v for k, v in _STF_SC.items()})
LTF_FREQ = _from_subcarriers({k: v for k, v in zip(range(-26, 27), _LTF_VALUES) if v})


def build_preamble() -> np.ndarray:
    """Ten 16-sample short training repeats, a 32-sample guard, two long training symbols."""
    stf = ifft64(STF_FREQ)
    ltf = ifft64(LTF_FREQ)
    short = np.tile(stf[:CORR_LAG], STF_LEN // CORR_LAG)
    long_ = np.concatenate([ltf[-LTF_CP_LEN:], ltf, ltf])
    return np.concatenate([short, long_])


PREAMBLE = build_preamble()


@dataclass(frozen=True)
class OfdmFrame:
    samples: np.ndarray
    n_data_symbols: int

    def __post_init__(self) -> None:
        if self.samples.shape[-1] != PREAMBLE_LEN + SYMBOL_LEN * self.n_data_symbols:
            raise LengthError("frame length does not match its symbol count")

    def __len__(self) -> int:
        return self.samples.shape[-1]


def build_frame(data_syms, pilot_syms=None) -> np.ndarray:
    """Preamble followed by one CP-prefixed OFDM symbol per row of 48 data symbols.

    ``data_syms`` has shape ``(..., n_symbols, 48)``; the result has shape
    ``(..., 320 + 80 * n_symbols)``.
    """
    data_syms = np.asarray(data_syms, dtype=np.complex128)
    sym = add_cp(ifft64(map_resources(data_syms, pilot_syms)))
    body = sym.reshape(*sym.shape[:-2], -1)
    pre = np.broadcast_to(PREAMBLE, (*body.shape[:-1], PREAMBLE_LEN))
    return np.concatenate([pre, body], axis=-1)


def transmit(bits, scheme: ModScheme) -> OfdmFrame:
    """Bits → symbols → grid → IFFT → CP, behind the preamble."""
    syms = modulate(bits, scheme)
    if syms.shape[-1] % N_DATA:
        raise LengthError(f"payload must fill whole OFDM symbols of {N_DATA * scheme.bits_per_symbol} bits")
    syms = syms.reshape(*syms.shape[:-1], -1, N_DATA)
    return OfdmFrame(build_frame(syms), syms.shape[-2])


# ---------------------------------------------------------------------------
# synchronisation
# ---------------------------------------------------------------------------

def _window_sum(x: np.ndarray, width: int) -> np.ndarray:
    c = np.cumsum(x, axis=-1)
    zero = np.zeros((*x.shape[:-1], 1), dtype=c.dtype)
    c = np.concatenate([zero, c], axis=-1)
    return c[..., width:] - c[..., :-width]


def autocorrelate(r) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Delay-and-correlate traces ``(P, R, M)`` at lag 16 over a 32-sample window.

    ``M`` is normalised by ``max(R, R0)^2`` where ``R0`` is the energy of the
    leading window. Inside a periodic region and on rising edges this equals
    ``|P|^2 / R^2``; on falling edges it keeps ``M <= 1`` (Cauchy-Schwarz).
    """
    r = np.asarray(r, dtype=np.complex128)
    n = r.shape[-1] - CORR_LAG - CORR_WINDOW + 1
    if n < 1:
        raise LengthError(f"stream needs at least {CORR_LAG + CORR_WINDOW} samples")
    prod = np.conj(r[..., :-CORR_LAG]) * r[..., CORR_LAG:]
    P = _window_sum(prod, CORR_WINDOW)[..., :n]
    energy = np.abs(r) ** 2
    W = _window_sum(energy, CORR_WINDOW)
    R0 = W[..., :n]
    R = W[..., CORR_LAG : CORR_LAG + n]
    den = np.maximum(R, R0)
    ok = R >= EPS_ENERGY
    M = np.where(ok, np.abs(P) ** 2 / np.where(ok, den, 1.0) ** 2, 0.0)
    return P, R, np.clip(M, 0.0, 1.0)


MIN_RUN = 4


def _first_crossing(M: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """First index starting ``MIN_RUN`` consecutive supra-threshold samples."""
    above = M > threshold
    if above.shape[-1] < MIN_RUN:
        z = np.zeros(above.shape[:-1], dtype=np.int64)
        return z.astype(bool), z
    L = above.shape[-1] - MIN_RUN + 1
    run = above[..., :L].copy()
    for k in range(1, MIN_RUN):
        run &= above[..., k : k + L]
    return run.any(axis=-1), np.argmax(run, axis=-1)


def _plateau_end(M: np.ndarray, threshold: float, span: int) -> tuple[np.ndarray, np.ndarray]:
    """Last supra-threshold index within ``span`` samples of the first crossing."""
    found, first = _first_crossing(M, threshold)
    idx = np.arange(M.shape[-1])
    inside = (idx >= first[..., None]) & (idx < first[..., None] + span) & (M > threshold)
    last = M.shape[-1] - 1 - np.argmax(inside[..., ::-1], axis=-1)
    return found, last


def _calibrate() -> tuple[int, int]:
    lead = 64
    stream = np.concatenate([np.zeros(lead), PREAMBLE, np.zeros(SYMBOL_LEN)])
    _, _, M = autocorrelate(stream)
    found, first = _first_crossing(M, SYNC_THRESHOLD)
    above = np.flatnonzero(M > SYNC_THRESHOLD)
    last = int(above[above < first + STF_LEN].max())
    assert found
    span = last - int(first) + 1 + MIN_RUN
    return span, lead + PREAMBLE_LEN - last


PLATEAU_SPAN, PLATEAU_TO_PAYLOAD = _calibrate()


def detect_boundaries(M, threshold: float = SYNC_THRESHOLD) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised frame detection: ``(found, frame_start)`` per row.

    The first low-to-high transition of ``M > threshold`` opens a search
    window as long as the noiseless short-preamble plateau; the last
    supra-threshold index in that window marks the plateau end, which lies a
    fixed distance before the first payload sample. Noise can only pull the
    end earlier, and an early estimate lands harmlessly inside the cyclic
    prefix.
    """
    M = np.asarray(M)
    found, last = _plateau_end(M, threshold, PLATEAU_SPAN)
    return found, last + PLATEAU_TO_PAYLOAD


def detect_boundary(M, threshold: float = SYNC_THRESHOLD) -> int:
    """Index of the first payload sample of the earliest frame in the trace."""
    M = np.asarray(M)
    if M.ndim != 1 or M.size == 0:
        raise SyncError("detect_boundary expects a non-empty 1-D metric trace")
    found, start = detect_boundaries(M, threshold)
    if not found:
        raise SyncError("no supra-threshold plateau in metric trace")
    return int(start)


def estimate_cfo(r, stage: str = "coarse") -> np.ndarray | float:
    """Carrier offset in radians/sample from a preamble-aligned stream.

    ``r[..., 0]`` must be the first preamble sample. The coarse stage uses
    lag 16 over the short training field (skipping its first repeat); the
    fine stage uses lag 64 between the two long training symbols.
    """
    r = np.asarray(r)
    if stage == "coarse":
        lag, a, b = CORR_LAG, CORR_LAG, STF_LEN - CORR_LAG
    elif stage == "fine":
        lag, a, b = N_FFT, LTF1_START, LTF1_START + N_FFT
    else:
        raise ValueError(f"unknown CFO stage {stage!r}")
    if r.shape[-1] < b + lag:
        raise SyncError(f"{stage} CFO estimation needs {b + lag} samples, got {r.shape[-1]}")
    acc = np.sum(np.conj(r[..., a:b]) * r[..., a + lag:b + lag], axis=-1)
    w = np.angle(acc) / lag
    return float(w) if np.ndim(w) == 0 else w


def correct_cfo(r, omega) -> np.ndarray:
    """``r[i] * exp(-j*omega*i)``."""
    r = np.asarray(r)
    i = np.arange(r.shape[-1])
    return r * np.exp(-1j * np.asarray(omega)[..., None] * i)


def apply_cfo(r, omega) -> np.ndarray:
    """Inject a carrier offset (test helper)."""
    return correct_cfo(r, -np.asarray(omega))


# ---------------------------------------------------------------------------
# channel estimation / equalisation
# ---------------------------------------------------------------------------

def estimate_channel(rx_ltf_freq, known_ltf_freq=LTF_FREQ) -> np.ndarray:
    """Per-bin channel estimate ``rx * conj(known)``; null bins are set to 1."""
    rx = np.asarray(rx_ltf_freq)
    known = np.asarray(known_ltf_freq)
    occ = np.abs(known) > 0
    return np.where(occ, rx * np.conj(known), 1.0 + 0j)


EQ_ZF = "zf"
EQ_CONJ = "conj"


def equalize(freq_syms, H, mode: str = EQ_ZF, return_erased: bool = False):
    """One-tap equalisation per bin.

    ``zf`` divides by the channel (``y*conj(H)/|H|^2``); ``conj`` only
    derotates (``y*conj(H)``), i.e. a single complex multiply per bin against
    the preamble-derived estimate without amplitude normalisation. Bins with
    ``|H| < EPS_EQ`` are zeroed and flagged as erased.
    """
    y = np.asarray(freq_syms)
    H = np.asarray(H)
    mag2 = np.abs(H) ** 2
    erased = np.broadcast_to(np.sqrt(mag2) < EPS_EQ, np.broadcast_shapes(y.shape, H.shape))
    if erased.size and erased.all():
        raise EqError("every bin of the channel estimate is below the equaliser guard")
    if mode == EQ_ZF:
        out = np.where(erased, 0.0, y * np.conj(H) / np.where(erased, 1.0, mag2))
    elif mode == EQ_CONJ:
        out = np.where(erased, 0.0, y * np.conj(H))
    else:
        raise ValueError(f"unknown equaliser mode {mode!r}")
    return (out, erased) if return_erased else out


# ---------------------------------------------------------------------------
# receiver chain
# ---------------------------------------------------------------------------

TIMING_BACKOFF = 1


@dataclass
class SyncResult:
    frame_start: np.ndarray | int
    coarse_cfo: np.ndarray | float
    fine_cfo: np.ndarray | float
    metric_trace: np.ndarray


@dataclass
class RxResult:
    """Receiver outputs for a stack of streams (leading axes preserved)."""

    found: np.ndarray
    sync: SyncResult
    H: np.ndarray
    data_freq: np.ndarray  # raw FFT data bins, (..., n_symbols, 48)
    pilots_freq: np.ndarray  # raw FFT pilot bins, (..., n_symbols, 4)
    equalized: np.ndarray  # (..., n_symbols, 48)


def _gather(r: np.ndarray, start: np.ndarray, length: int) -> np.ndarray:
    idx = start[..., None] + np.arange(length)
    idx = np.clip(idx, 0, r.shape[-1] - 1)
    return np.take_along_axis(r, idx, axis=-1)


def _windows(r2: np.ndarray, pre_start: np.ndarray, omega: np.ndarray, offsets) -> np.ndarray:
    """CFO-corrected 64-sample windows at ``pre_start + offsets``: shape (R, len(offsets), 64)."""
    rel = np.asarray(offsets)[:, None] + np.arange(N_FFT)  # relative to preamble start
    idx = np.clip(pre_start[:, None, None] + rel, 0, r2.shape[-1] - 1)
    w = np.take_along_axis(r2, idx.reshape(r2.shape[0], -1), axis=-1).reshape(idx.shape)
    # exp(-j w (off + n)) factorised into per-window and per-sample rotations
    rot_off = np.exp(-1j * omega[:, None] * np.asarray(offsets, dtype=np.float64))
    rot_n = np.exp(-1j * omega[:, None] * np.arange(N_FFT))
    return w * rot_off[:, :, None] * rot_n[:, None, :]


def _cfo_estimates(r2: np.ndarray, pre_start: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coarse and fine CFO; the coarse correction enters the fine stage as a constant phase."""
    span = np.arange(CORR_LAG, STF_LEN - CORR_LAG)
    idx = np.clip(pre_start[:, None] + span, 0, r2.shape[-1] - 1 - CORR_LAG)
    a = np.take_along_axis(r2, idx, axis=-1)
    b = np.take_along_axis(r2, idx + CORR_LAG, axis=-1)
    coarse = np.angle(np.sum(np.conj(a) * b, axis=-1)) / CORR_LAG
    idx = np.clip(pre_start[:, None] + LTF1_START + np.arange(N_FFT), 0, r2.shape[-1] - 1 - N_FFT)
    a = np.take_along_axis(r2, idx, axis=-1)
    b = np.take_along_axis(r2, idx + N_FFT, axis=-1)
    acc = np.sum(np.conj(a) * b, axis=-1) * np.exp(-1j * coarse * N_FFT)
    return coarse, np.angle(acc) / N_FFT


def receive(
    stream,
    n_data_symbols: int = 1,
    equalizer: str = EQ_ZF,
    threshold: float = SYNC_THRESHOLD,
    backoff: int = TIMING_BACKOFF,
    search_len: int | None = None,
) -> RxResult:
    """Synchronise, correct CFO, estimate the channel and equalise.

    Works on a single stream or a stack ``(..., L)``. Rows where no frame is
    found have ``found == False``; their outputs are meaningless. FFT windows
    are taken ``backoff`` samples early (inside the cyclic prefix), which the
    channel estimate absorbs because the training symbols are windowed the
    same way. ``search_len`` limits the frame search to the first samples of
    the stream (the metric trace then covers only that span).
    """
    r = np.asarray(stream, dtype=np.complex128)
    single = r.ndim == 1
    if single:
        r = r[None]
    lead = r.shape[:-1]
    r2 = r.reshape(-1, r.shape[-1])
    _, _, M = autocorrelate(r2 if search_len is None else r2[:, :search_len])
    found, start = detect_boundaries(M, threshold)
    need = PREAMBLE_LEN + SYMBOL_LEN * n_data_symbols
    pre_start = start - PREAMBLE_LEN
    found &= (pre_start >= 0) & (pre_start + need <= r2.shape[-1])
    pre_start = np.clip(pre_start, 0, max(r2.shape[-1] - need, 0))

    coarse, fine = _cfo_estimates(r2, pre_start)
    b = backoff
    offsets = [LTF1_START - b, LTF2_START - b] + [
        PREAMBLE_LEN + k * SYMBOL_LEN + CP_LEN - b for k in range(n_data_symbols)
    ]
    freq = fft64(_windows(r2, pre_start, coarse + fine, offsets))
    H = estimate_channel(freq[:, :2].mean(axis=1))
    data, pilots = demap_resources(freq[:, 2:])
    Hd = H[:, None, GRID.data_indices]
    if equalizer == EQ_CONJ:
        eq = data * np.conj(Hd)
    else:
        mag2 = np.abs(Hd) ** 2
        bad = mag2 < EPS_EQ**2
        eq = np.where(bad, 0.0, data * np.conj(Hd) / np.where(bad, 1.0, mag2))

    def shape(a, tail):
        a = a.reshape(*lead, *tail)
        return a[0] if single else a

    sync = SyncResult(
        frame_start=int(start[0]) if single else start.reshape(lead),
        coarse_cfo=float(coarse[0]) if single else coarse.reshape(lead),
        fine_cfo=float(fine[0]) if single else fine.reshape(lead),
        metric_trace=M[0] if single else M.reshape(*lead, -1),
    )
    return RxResult(
        found=bool(found[0]) if single else found.reshape(lead),
        sync=sync,
        H=shape(H, (N_FFT,)),
        data_freq=shape(data, (n_data_symbols, N_DATA)),
        pilots_freq=shape(pilots, (n_data_symbols, len(GRID.pilot_indices))),
        equalized=shape(eq, (n_data_symbols, N_DATA)),
    )


def extract_data(stream, sync: SyncResult, n_data_symbols: int = 1, backoff: int = TIMING_BACKOFF) -> np.ndarray:
    """Data-bin FFT outputs of ``stream`` processed with an existing synchronisation.

    Applies the same frame window, CFO correction and FFT placement that
    :func:`receive` used, which makes it possible to push another signal
    (e.g. the noiseless part of the received stream) through the identical
    linear front end. Returns shape ``(..., n_data_symbols, 48)``.
    """
    r = np.asarray(stream, dtype=np.complex128)
    r2 = r.reshape(-1, r.shape[-1])
    need = PREAMBLE_LEN + SYMBOL_LEN * n_data_symbols
    start = np.asarray(sync.frame_start).reshape(-1)
    pre_start = np.clip(start - PREAMBLE_LEN, 0, max(r2.shape[-1] - need, 0))
    omega = (np.asarray(sync.coarse_cfo) + np.asarray(sync.fine_cfo)).reshape(-1)
    offsets = [PREAMBLE_LEN + k * SYMBOL_LEN + CP_LEN - backoff for k in range(n_data_symbols)]
    data, _ = demap_resources(fft64(_windows(r2, pre_start, omega, offsets)))
    return data.reshape(*r.shape[:-1], n_data_symbols, N_DATA)


def receive_bits(stream, scheme: ModScheme, n_data_symbols: int = 1, equalizer: str = EQ_ZF) -> np.ndarray:
    """Full receive chain on a single stream; raises :class:`SyncError` if no frame is found."""
    rx = receive(stream, n_data_symbols, equalizer)
    if not np.all(rx.found):
        raise SyncError("frame not detected")
    bits = demodulate(rx.equalized, scheme)
    return bits.reshape(*bits.shape[:-2], -1)


# ---------------------------------------------------------------------------
# raw IQ files
# ---------------------------------------------------------------------------

def write_raw_iq(path, samples) -> None:
    """Interleaved float32 little-endian I/Q."""
    s = np.asarray(samples, dtype=np.complex128).ravel()
    iq = np.empty(2 * s.size, dtype="<f4")
    iq[0::2] = s.real
    iq[1::2] = s.imag
    Path(path).write_bytes(iq.tobytes())


def read_raw_iq(path) -> np.ndarray:
    iq = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if iq.size % 2:
        raise LengthError("raw IQ file holds an odd number of floats")
    return iq[0::2].astype(np.float64) + 1j * iq[1::2].astype(np.float64)
