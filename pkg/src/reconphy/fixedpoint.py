"""Signed fixed-point arithmetic with configurable word-length.

Values are held as two's complement integers (``raw``) together with a
:class:`QFormat`. Every operation is evaluated at extended precision and
then rounded back into the operand format, saturating at the format bounds.
This mirrors a hardware datapath in which each block (adder, multiplier,
square root, logarithm) has its own output register of fixed width.

The integer kernels (``*_raw``) operate on numpy ``int64`` arrays so that the
same arithmetic is shared by the scalar :class:`FixedValue` type and the
vectorised bandit datapath.
"""

from __future__ import annotations

import contextlib
import re
from dataclasses import dataclass
from typing import Iterator

import numpy as np

ROUND_NEAREST_EVEN = "nearest_even"
ROUND_TRUNCATE = "truncate"
_ROUNDING_MODES = (ROUND_NEAREST_EVEN, ROUND_TRUNCATE)

_rounding = ROUND_NEAREST_EVEN


class DomainError(ValueError):
    """Raised for square roots of negative or logarithms of non-positive values."""


def get_rounding() -> str:
    return _rounding


def set_rounding(mode: str) -> None:
    """Select the global rounding mode used by every quantisation step."""
    global _rounding
    if mode not in _ROUNDING_MODES:
        raise ValueError(f"unknown rounding mode {mode!r}; expected one of {_ROUNDING_MODES}")
    _rounding = mode


@contextlib.contextmanager
def rounding(mode: str) -> Iterator[None]:
    """Temporarily switch the global rounding mode."""
    previous = _rounding
    set_rounding(mode)
    try:
        yield
    finally:
        set_rounding(previous)


@dataclass(frozen=True)
class QFormat:
    """Word-length/fraction split of a fixed-point number.

    ``QFormat(16, 15)`` is the Q1.15 format used for the constellation ROM.
    """

    total_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self) -> None:
        if not 2 <= self.total_bits <= 32:
            raise ValueError(f"total_bits must be in [2, 32], got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(
                f"frac_bits must be in [0, total_bits), got {self.frac_bits} for {self.total_bits} bits"
            )

    @classmethod
    def parse(cls, text: str) -> "QFormat":
        """Parse ``"Q1.15"`` style notation (integer bits include the sign)."""
        m = re.fullmatch(r"\s*[Qq](\d+)\.(\d+)\s*", text)
        if not m:
            raise ValueError(f"cannot parse Q-format {text!r}")
        int_bits, frac_bits = int(m.group(1)), int(m.group(2))
        return cls(int_bits + frac_bits, frac_bits)

    @classmethod
    def for_word_length(cls, word_length: int, int_bits: int = 4) -> "QFormat":
        """Datapath format for a given total word-length with ``int_bits`` integer bits."""
        return cls(word_length, word_length - int_bits)

    @property
    def int_bits(self) -> int:
        return self.total_bits - self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1 if self.signed else (1 << self.total_bits) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return self.raw_min * self.lsb

    @property
    def max_value(self) -> float:
        return self.raw_max * self.lsb

    def __str__(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}"


# ---------------------------------------------------------------------------
# integer kernels
# ---------------------------------------------------------------------------

def _saturate(raw: np.ndarray, fmt: QFormat) -> tuple[np.ndarray, np.ndarray]:
    sat = (raw > fmt.raw_max) | (raw < fmt.raw_min)
    return np.clip(raw, fmt.raw_min, fmt.raw_max).astype(np.int64), sat


def _round_float(scaled: np.ndarray) -> np.ndarray:
    if _rounding == ROUND_NEAREST_EVEN:
        return np.rint(scaled)
    return np.floor(scaled)


def _round_shift(value: np.ndarray, shift: int) -> np.ndarray:
    """Divide an int64 array by ``2**shift`` using the global rounding mode."""
    value = np.asarray(value, dtype=np.int64)
    if shift <= 0:
        return value << -shift
    q = value >> shift  # floor division
    if _rounding == ROUND_TRUNCATE:
        return q
    r = value - (q << shift)
    half = np.int64(1) << (shift - 1)
    up = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + up


def _round_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Integer division ``num / den`` (den > 0) with the global rounding mode."""
    q = np.floor_divide(num, den)
    if _rounding == ROUND_TRUNCATE:
        return q
    r = num - q * den
    twice = 2 * r
    up = (twice > den) | ((twice == den) & ((q & 1) == 1))
    return q + up


def quantize_raw(x, fmt: QFormat) -> tuple[np.ndarray, np.ndarray]:
    """Quantise real values to raw integers. Returns ``(raw, saturated)``."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise DomainError("cannot quantise NaN")
    scaled = np.clip(x * (2.0 ** fmt.frac_bits), -(2.0 ** 62), 2.0 ** 62)
    return _saturate(_round_float(scaled).astype(np.int64), fmt)


def to_real(raw, fmt: QFormat) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) * fmt.lsb


def quantize_array(x, fmt: QFormat) -> np.ndarray:
    """Round real values onto the format grid and return them as floats."""
    return to_real(quantize_raw(x, fmt)[0], fmt)


def add_raw(a, b, fmt: QFormat) -> tuple[np.ndarray, np.ndarray]:
    return _saturate(np.asarray(a, np.int64) + np.asarray(b, np.int64), fmt)


def sub_raw(a, b, fmt: QFormat) -> tuple[np.ndarray, np.ndarray]:
    return _saturate(np.asarray(a, np.int64) - np.asarray(b, np.int64), fmt)


def mul_raw(a, b, fmt: QFormat) -> tuple[np.ndarray, np.ndarray]:
    # |raw| < 2**31, so the exact product fits in int64
    prod = np.asarray(a, np.int64) * np.asarray(b, np.int64)
    return _saturate(_round_shift(prod, fmt.frac_bits), fmt)


def div_raw(a, b, fmt: QFormat) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-point quotient; division by zero saturates toward the sign of ``a``."""
    a = np.asarray(a, np.int64)
    b = np.asarray(b, np.int64)
    a, b = np.broadcast_arrays(a, b)
    num = a << fmt.frac_bits
    zero = b == 0
    den = np.where(zero, 1, np.abs(b))
    num = np.where(b < 0, -num, num)
    q = _round_div(num, den)
    big = np.int64(1) << 40
    q = np.where(zero, np.where(a >= 0, big, -big), q)
    return _saturate(q, fmt)


def sqrt_raw(a, fmt: QFormat) -> tuple[np.ndarray, np.ndarray]:
    x = to_real(a, fmt)
    if (x < 0).any():
        raise DomainError("square root of a negative fixed-point value")
    return quantize_raw(np.sqrt(x), fmt)


def log_raw(a, fmt: QFormat) -> tuple[np.ndarray, np.ndarray]:
    x = to_real(a, fmt)
    if (x <= 0).any():
        raise DomainError("logarithm of a non-positive fixed-point value")
    return quantize_raw(np.log(x), fmt)


# ---------------------------------------------------------------------------
# scalar value type
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedValue:
    """A single fixed-point number.

    ``saturated`` records whether the operation that produced the value hit
    the format bounds.
    """

    raw: int
    fmt: QFormat
    saturated: bool = False

    def __post_init__(self) -> None:
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise ValueError(f"raw value {self.raw} does not fit in {self.fmt}")

    @classmethod
    def from_hex(cls, code: int, fmt: QFormat) -> "FixedValue":
        """Interpret an unsigned bit pattern (e.g. ``0xA57E``) as two's complement."""
        code &= (1 << fmt.total_bits) - 1
        if fmt.signed and code >> (fmt.total_bits - 1):
            code -= 1 << fmt.total_bits
        return cls(code, fmt)

    def to_hex(self) -> int:
        return self.raw & ((1 << self.fmt.total_bits) - 1)

    def to_real(self) -> float:
        return self.raw * self.fmt.lsb

    __float__ = to_real

    def __add__(self, other: "FixedValue") -> "FixedValue":
        return fx_add(self, other)

    def __sub__(self, other: "FixedValue") -> "FixedValue":
        return fx_sub(self, other)

    def __mul__(self, other: "FixedValue") -> "FixedValue":
        return fx_mul(self, other)

    def __truediv__(self, other: "FixedValue") -> "FixedValue":
        return fx_div(self, other)

    def __repr__(self) -> str:
        flag = ", saturated" if self.saturated else ""
        return f"FixedValue({self.to_real()!r} [{self.fmt}] raw=0x{self.to_hex():X}{flag})"


def _wrap(result: tuple[np.ndarray, np.ndarray], fmt: QFormat) -> FixedValue:
    raw, sat = result
    return FixedValue(int(raw), fmt, bool(sat))


def _check_same(a: FixedValue, b: FixedValue) -> QFormat:
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return a.fmt


def quantize(x: float, fmt: QFormat) -> FixedValue:
    """Nearest representable value (per the global rounding mode), saturating."""
    return _wrap(quantize_raw(x, fmt), fmt)


def fx_add(a: FixedValue, b: FixedValue) -> FixedValue:
    fmt = _check_same(a, b)
    return _wrap(add_raw(a.raw, b.raw, fmt), fmt)


def fx_sub(a: FixedValue, b: FixedValue) -> FixedValue:
    fmt = _check_same(a, b)
    return _wrap(sub_raw(a.raw, b.raw, fmt), fmt)


def fx_mul(a: FixedValue, b: FixedValue) -> FixedValue:
    fmt = _check_same(a, b)
    return _wrap(mul_raw(a.raw, b.raw, fmt), fmt)


def fx_div(a: FixedValue, b: FixedValue) -> FixedValue:
    fmt = _check_same(a, b)
    return _wrap(div_raw(a.raw, b.raw, fmt), fmt)


def fx_sqrt(a: FixedValue) -> FixedValue:
    return _wrap(sqrt_raw(a.raw, a.fmt), a.fmt)


def fx_log(a: FixedValue) -> FixedValue:
    return _wrap(log_raw(a.raw, a.fmt), a.fmt)


Q1_15 = QFormat(16, 15)

__all__ = [
    "DomainError",
    "FixedValue",
    "Q1_15",
    "QFormat",
    "ROUND_NEAREST_EVEN",
    "ROUND_TRUNCATE",
    "add_raw",
    "div_raw",
    "fx_add",
    "fx_div",
    "fx_log",
    "fx_mul",
    "fx_sqrt",
    "fx_sub",
    "get_rounding",
    "log_raw",
    "mul_raw",
    "quantize",
    "quantize_array",
    "quantize_raw",
    "rounding",
    "set_rounding",
    "sqrt_raw",
    "sub_raw",
    "to_real",
]
