"""Continued-fraction frequencies, beta(alpha) estimates and resonance labels.

A frequency alpha in (0, 1) is held exactly as a finite continued fraction
``[0; a_1, ..., a_m]`` together with its big-integer convergents.  Every
reduction of ``k * alpha`` modulo 1 is done against the deepest convergent
``p_m / q_m`` in integer arithmetic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import gmpy2
from gmpy2 import mpfr

from amolab.xprec import to_x

DEFAULT_ETA = 0.01
DEFAULT_DIGIT_BUDGET = 10**6


class DigitBudgetExceeded(ValueError):
    """Raised when a constructed denominator would exceed the digit budget."""


class ShallowConvergent(ValueError):
    """Raised when the stored convergents cannot resolve the request."""


def _dec(n: int) -> str:
    # gmpy2 avoids the interpreter's int/str digit limit
    return gmpy2.mpz(n).digits(10)


def _int(text: str) -> int:
    return int(gmpy2.mpz(text, 10))


def _convergents(coeffs: Sequence[int]) -> tuple[tuple[int, int], ...]:
    # p_{-1} = 1, q_{-1} = 0, p_0 = 0, q_0 = 1 for alpha in (0, 1)
    p_prev, q_prev = 1, 0
    p, q = 0, 1
    out = [(p, q)]
    for a in coeffs:
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        out.append((p, q))
    return tuple(out)


@dataclass(frozen=True)
class Frequency:
    """Exact continued-fraction truncation of alpha in (0, 1)."""

    coeffs: tuple[int, ...]
    convergents: tuple[tuple[int, int], ...] = field(repr=False)

    @classmethod
    def from_coeffs(cls, coeffs: Sequence[int]) -> "Frequency":
        coeffs = tuple(int(a) for a in coeffs)
        if not coeffs:
            raise ValueError("need at least one partial quotient")
        if any(a < 1 for a in coeffs):
            raise ValueError("partial quotients must be positive")
        return cls(coeffs, _convergents(coeffs))

    @classmethod
    def golden(cls, depth: int) -> "Frequency":
        return cls.from_coeffs([1] * depth)

    @property
    def depth(self) -> int:
        return len(self.coeffs)

    def p(self, n: int) -> int:
        return self.convergents[n][0]

    def q(self, n: int) -> int:
        return self.convergents[n][1]

    @property
    def alpha(self) -> Fraction:
        p, q = self.convergents[-1]
        return Fraction(p, q)

    @property
    def q_deepest(self) -> int:
        return self.convergents[-1][1]

    def frac_multiple(self, k: int) -> Fraction:
        """``k * alpha mod 1`` as an exact fraction in [0, 1)."""
        p, q = self.convergents[-1]
        return Fraction((k * p) % q, q)

    def level_for(self, q_min: int) -> int:
        """Smallest level n with q_n >= q_min."""
        for n, (_, q) in enumerate(self.convergents):
            if q >= q_min:
                return n
        raise ShallowConvergent(f"no stored q_n >= {q_min}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "coeffs": [_dec(a) for a in self.coeffs],
                "convergents": [[_dec(p), _dec(q)] for p, q in self.convergents],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Frequency":
        doc = json.loads(text)
        f = cls.from_coeffs([_int(a) for a in doc["coeffs"]])
        stored = tuple((_int(p), _int(q)) for p, q in doc["convergents"])
        if stored != f.convergents:
            raise ValueError("convergents do not match the partial quotients")
        return f


def expand(x: Fraction, depth: int) -> Frequency:
    """Continued-fraction expansion of a rational ``x`` in (0, 1), up to ``depth`` terms."""
    x = Fraction(x)
    if depth <= 0:
        raise ValueError("depth must be positive")
    if not 0 < x < 1:
        raise ValueError(f"x must lie in (0, 1), got {x}")
    coeffs = []
    num, den = x.denominator, x.numerator  # 1/x
    while len(coeffs) < depth and den:
        a, r = divmod(num, den)
        coeffs.append(a)
        num, den = den, r
    return Frequency.from_coeffs(coeffs)


def build_liouville(
    beta_target: float,
    levels: int | None,
    seed_coeffs: Sequence[int] = (1, 1, 1),
    digit_budget: int = DEFAULT_DIGIT_BUDGET,
) -> Frequency:
    """Extend ``seed_coeffs`` by ``levels`` quotients chosen so ln(q_{n+1})/q_n ~ beta_target.

    Each new quotient is ``max(1, round(exp(beta_target * q_n) / q_n))``.  With
    ``levels=None`` construction continues until the next denominator would
    break the digit budget; an explicit ``levels`` raises instead.
    """
    if beta_target <= 0:
        raise ValueError("beta_target must be positive")
    if levels is not None and levels < 0:
        raise ValueError("levels must be non-negative")
    coeffs = list(seed_coeffs)
    f = Frequency.from_coeffs(coeffs)
    while levels is None or len(coeffs) - len(seed_coeffs) < levels:
        q_n = f.q_deepest
        digits = beta_target * q_n / math.log(10) if q_n.bit_length() < 1000 else math.inf
        if digits > digit_budget:
            if levels is None:
                break
            raise DigitBudgetExceeded(
                f"next denominator needs ~{digits:.3g} digits, budget is {digit_budget}"
            )
        with gmpy2.context(gmpy2.get_context(), precision=int(digits * 3.33) + 128):
            a = int(gmpy2.rint(gmpy2.exp(mpfr(beta_target) * q_n) / q_n))
        coeffs.append(max(1, a))
        f = Frequency.from_coeffs(coeffs)
    return f


@dataclass(frozen=True)
class BetaEstimate:
    per_level: tuple[tuple[int, mpfr], ...]
    running_max: mpfr

    @property
    def tail(self) -> mpfr:
        """Value at the deepest level, the finite proxy for the limsup."""
        return self.per_level[-1][1]

    def max_from(self, n_min: int) -> mpfr:
        return max(v for n, v in self.per_level if n >= n_min)


def beta_estimate(f: Frequency) -> BetaEstimate:
    if len(f.convergents) < 2:
        raise ValueError("need at least two convergents")
    vals = []
    for n in range(len(f.convergents) - 1):
        q_n, q_next = f.q(n), f.q(n + 1)
        vals.append((n, gmpy2.log(gmpy2.mpz(q_next)) / q_n))
    return BetaEstimate(tuple(vals), max(v for _, v in vals))


def norm_dist_exact(k: int, f: Frequency) -> Fraction:
    r = f.frac_multiple(k)
    return min(r, 1 - r)


def norm_dist(k: int, f: Frequency, level: int) -> mpfr:
    """||k alpha|| against the deepest convergent; needs 0 < |k| < q_level."""
    if k == 0:
        raise ValueError("k must be nonzero")
    if abs(k) >= f.q(level):
        raise ShallowConvergent(f"|k|={abs(k)} >= q_{level}={f.q(level)}: convergent too shallow")
    return to_x(norm_dist_exact(k, f))


def site_distance(y: int, q_n: int) -> Fraction:
    """Exact distance from ``y`` to the half-lattice {j q_n / 2 : j in Z}."""
    if q_n < 1:
        raise ValueError("q_n must be >= 1")
    r = (2 * y) % q_n
    return Fraction(min(r, q_n - r), 2)


@dataclass(frozen=True)
class ResonanceLabel:
    level: int
    distance: Fraction
    resonant: bool
    b_n: float


def classify(y: int, f: Frequency, n: int, eta: float = DEFAULT_ETA) -> ResonanceLabel:
    if y == 0:
        raise ValueError("y = 0 is the normalization site and is never classified")
    if not 0 < eta <= 1 / 20:
        raise ValueError(f"eta must lie in (0, 1/20], got {eta}")
    q_n = f.q(n)
    d = site_distance(y, q_n)
    b_n = eta * q_n
    return ResonanceLabel(n, d, d <= b_n, b_n)


@dataclass(frozen=True)
class RegularityScale:
    n0: int
    s: int
    k: int
    distance: Fraction


def regularity_scale(y: int, f: Frequency, n: int) -> RegularityScale | None:
    """Interval length 6 s q_{n-n0} - 1 attached to a nonresonant site.

    ``n0`` is the least positive integer with 4 q_{n-n0} <= dist(y) - 2 and ``s``
    the largest integer with 4 s q_{n-n0} <= dist(y) - 2.  Returns None when even
    q_0 = 1 is too large for the distance.
    """
    d = site_distance(y, f.q(n))
    room = d - 2
    for n0 in range(1, n + 1):
        q = f.q(n - n0)
        if 4 * q <= room:
            s = int(room // (4 * q))
            return RegularityScale(n0, s, 6 * s * q - 1, d)
    return None
