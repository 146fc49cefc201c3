"""Extended-precision helpers and the signed-log number type.

All extended arithmetic goes through gmpy2 ``mpfr``.  The working precision is
taken from ``AMOLAB_PRECISION_BITS`` when set, else 128 bits.
"""

from __future__ import annotations

import contextlib
import math
import os
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
from gmpy2 import mpfr

DEFAULT_BITS = 128
MIN_BITS = 53


def default_bits() -> int:
    raw = os.environ.get("AMOLAB_PRECISION_BITS")
    if raw is None:
        return DEFAULT_BITS
    bits = int(raw)
    if bits < MIN_BITS:
        raise ValueError(f"AMOLAB_PRECISION_BITS={bits} is below {MIN_BITS}")
    return bits


@contextlib.contextmanager
def working(bits: int | None = None):
    """Run a block at ``bits`` of mantissa (defaults to :func:`default_bits`)."""
    with gmpy2.context(gmpy2.get_context(), precision=bits or default_bits()):
        yield


def to_x(value) -> mpfr:
    """Convert ints, floats, Fractions and mpfr to mpfr at the current precision."""
    if isinstance(value, Fraction):
        return mpfr(value.numerator) / value.denominator
    return mpfr(value)


def cos2pi_frac(r: Fraction) -> mpfr:
    """cos(2*pi*r) for an exact rational ``r``, reduced to [0, 1/4] first."""
    r = r - math.floor(r)
    if r > Fraction(1, 2):
        r = 1 - r
    sign = 1
    if r > Fraction(1, 4):
        r = Fraction(1, 2) - r
        sign = -1
    return sign * gmpy2.cos(2 * gmpy2.const_pi() * to_x(r))


def sin_pi_frac(r: Fraction) -> mpfr:
    """|sin(pi*r)| for an exact rational ``r``, reduced to [0, 1/2] first."""
    r = r - math.floor(r)
    if r > Fraction(1, 2):
        r = 1 - r
    return gmpy2.sin(gmpy2.const_pi() * to_x(r))


def xstr(value) -> str:
    """Decimal string that round-trips at the value's precision."""
    if isinstance(value, mpfr):
        return str(value)  # gmpy2 emits enough digits to round-trip
    return repr(float(value))


@dataclass(frozen=True)
class LogSigned:
    """A real number stored as ``sign * exp(logmag)``.

    ``sign`` is -1, 0 or +1 and ``logmag`` is ``-inf`` exactly when ``sign`` is 0.
    ``logmag`` may be a float or an mpfr.
    """

    sign: int
    logmag: object

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or 1, got {self.sign}")
        is_ninf = math.isinf(float(self.logmag)) and float(self.logmag) < 0
        if (self.sign == 0) != is_ninf:
            raise ValueError("sign == 0 must coincide with logmag == -inf")

    @classmethod
    def from_value(cls, x) -> "LogSigned":
        if x == 0:
            return cls(0, -math.inf)
        if isinstance(x, mpfr):
            return cls(1 if x > 0 else -1, gmpy2.log(abs(x)))
        return cls(1 if x > 0 else -1, math.log(abs(x)))

    @classmethod
    def one(cls) -> "LogSigned":
        return cls(1, 0.0)

    def __mul__(self, other: "LogSigned") -> "LogSigned":
        if self.sign == 0 or other.sign == 0:
            return LogSigned(0, -math.inf)
        return LogSigned(self.sign * other.sign, self.logmag + other.logmag)

    def __truediv__(self, other: "LogSigned") -> "LogSigned":
        if other.sign == 0:
            raise ZeroDivisionError("division by a zero LogSigned")
        if self.sign == 0:
            return self
        return LogSigned(self.sign * other.sign, self.logmag - other.logmag)

    def to_float(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(float(self.logmag))

    def to_x(self) -> mpfr:
        if self.sign == 0:
            return mpfr(0)
        return self.sign * gmpy2.exp(to_x(self.logmag))
