"""Green functions of interval truncations, regularity witnesses and block expansion.

``G_I = (R_I (H - E) R_I)^{-1}`` for ``I = [x1, x2]``.  Two independent routes
are provided: a pivoted tridiagonal solve (:func:`green_direct`) and ratios of
determinants (:func:`green_cramer`),

    G_I(x1, y) = (-1)^(y - x1) P_{x2-y}(theta + (y+1) alpha) / P_k(theta + x1 alpha)
    G_I(y, x2) = (-1)^(x2 - y) P_{y-x1}(theta + x1 alpha) / P_k(theta + x1 alpha)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import gmpy2
from gmpy2 import mpfr

from amolab.cfrac import regularity_scale
from amolab.detkernel import ModelParams, det_sequence, potential_values
from amolab.xprec import LogSigned, to_x, working

SINGULAR_LOG = 40.0  # pivots below e^-40 times the row scale mean E hits the interval spectrum


class ResonantInterval(ValueError):
    """E is (numerically) an eigenvalue of the interval restriction."""


@dataclass(frozen=True)
class IntervalSpec:
    x1: int
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("interval length must be >= 1")

    @classmethod
    def between(cls, x1: int, x2: int) -> "IntervalSpec":
        return cls(x1, x2 - x1 + 1)

    @property
    def x2(self) -> int:
        return self.x1 + self.k - 1

    def __contains__(self, y: int) -> bool:
        return self.x1 <= y <= self.x2


def _row_scale(params: ModelParams) -> mpfr:
    return 2 * to_x(params.lam) + abs(to_x(params.energy)) + 2


def _check_y(interval: IntervalSpec, y: int) -> None:
    if y not in interval:
        raise ValueError(f"y={y} outside [{interval.x1}, {interval.x2}]")


def green_columns(interval: IntervalSpec, params: ModelParams, bits: int | None = None):
    """Columns G_I(., x1) and G_I(., x2) by Gaussian elimination with partial pivoting."""
    with working(bits):
        n = interval.k
        diag = potential_values(params, 2 * interval.x1, n, bits)
        E = to_x(params.energy)
        thresh = gmpy2.exp(-mpfr(SINGULAR_LOG)) * _row_scale(params)
        d = [v - E for v in diag]
        du = [mpfr(1)] * (n - 1)
        dl = [mpfr(1)] * (n - 1)
        du2 = [mpfr(0)] * max(n - 2, 0)
        b1 = [mpfr(0)] * n
        b2 = [mpfr(0)] * n
        b1[0] = mpfr(1)
        b2[-1] = mpfr(1)
        # LAPACK gtsv-style elimination; du2 holds the fill-in from row swaps
        for i in range(n - 1):
            if abs(d[i]) >= abs(dl[i]):
                m = dl[i] / d[i]
                d[i + 1] -= m * du[i]
                b1[i + 1] -= m * b1[i]
                b2[i + 1] -= m * b2[i]
            else:
                m = d[i] / dl[i]
                d[i] = dl[i]
                tmp = d[i + 1]
                d[i + 1] = du[i] - m * tmp
                if i < n - 2:
                    du2[i] = du[i + 1]
                    du[i + 1] = -m * du[i + 1]
                du[i] = tmp
                b1[i], b1[i + 1] = b1[i + 1], b1[i] - m * b1[i + 1]
                b2[i], b2[i + 1] = b2[i + 1], b2[i] - m * b2[i + 1]
        for i in range(n):
            if abs(d[i]) < thresh:
                raise ResonantInterval(f"E resonant with interval [{interval.x1}, {interval.x2}]")
        for b in (b1, b2):
            b[n - 1] /= d[n - 1]
            if n > 1:
                b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2]
            for i in range(n - 3, -1, -1):
                b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i]
        return b1, b2


def green_direct(interval: IntervalSpec, params: ModelParams, y: int, bits: int | None = None):
    """(G_I(x1, y), G_I(y, x2)) as LogSigned, from the direct solve."""
    _check_y(interval, y)
    with working(bits):
        c1, c2 = green_columns(interval, params, bits)
        i = y - interval.x1
        return LogSigned.from_value(c1[i]), LogSigned.from_value(c2[i])


def _singular(seq_full, k, params) -> bool:
    """Last Sturm pivot P_k / P_{k-1} below the singularity threshold."""
    top, below = seq_full[k], seq_full[k - 1]
    if top.sign == 0:
        return True
    if below.sign == 0:
        return False
    return top.logmag - below.logmag < -SINGULAR_LOG + gmpy2.log(_row_scale(params))


def green_cramer(interval: IntervalSpec, params: ModelParams, y: int, bits: int | None = None):
    """(G_I(x1, y), G_I(y, x2)) as LogSigned, from determinant ratios."""
    _check_y(interval, y)
    x1, x2, k = interval.x1, interval.x2, interval.k
    with working(bits):
        full = det_sequence(params, x1, k, bits)
        if _singular(full, k, params):
            raise ResonantInterval(f"E resonant with interval [{x1}, {x2}]")
        Pk = full[k]
        right = det_sequence(params, y + 1, x2 - y, bits)[x2 - y] if y < x2 else LogSigned.one()
        left = full[y - x1]
        g1 = right / Pk
        g2 = left / Pk
        if (y - x1) % 2:
            g1 = LogSigned(-g1.sign, g1.logmag)
        if (x2 - y) % 2:
            g2 = LogSigned(-g2.sign, g2.logmag)
        return g1, g2


@dataclass(frozen=True)
class GreenTable:
    interval: IntervalSpec
    params: ModelParams
    entries: dict = field(repr=False)  # (y, side) -> LogSigned, side in {"x1", "x2"}

    def __getitem__(self, key) -> LogSigned:
        return self.entries[key]


def green_table(interval: IntervalSpec, params: ModelParams, bits: int | None = None) -> GreenTable:
    with working(bits):
        c1, c2 = green_columns(interval, params, bits)
        entries = {}
        for i in range(interval.k):
            y = interval.x1 + i
            entries[(y, "x1")] = LogSigned.from_value(c1[i])
            entries[(y, "x2")] = LogSigned.from_value(c2[i])
        return GreenTable(interval, params, entries)


# ---------------------------------------------------------------- regularity


@dataclass(frozen=True)
class RegularityWitness:
    y: int
    t: float
    k: int
    interval: IntervalSpec
    bound_margins: tuple[float, float]
    log_green: tuple[float, float]  # log|G_I(x1, y)|, log|G_I(y, x2)|

    @property
    def min_margin(self) -> float:
        return min(self.bound_margins)


def margin_span(k: int) -> int:
    """Least admissible |y - x_i| for a (t, k) regular point: ceil(k / 7)."""
    return -(-k // 7)


def is_regular(y: int, t: float, k: int, params: ModelParams, bits: int | None = None) -> RegularityWitness | None:
    """Best (t, k) regularity witness for ``y``, or None.

    Every x1 with ceil(k/7) <= y - x1 <= k - 1 - ceil(k/7) is scanned; intervals on
    which E is numerically an eigenvalue are skipped.  Among admissible intervals
    the one with the largest minimum log-slack is returned.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if k < 7:
        raise ValueError("k must be >= 7")
    m = margin_span(k)
    best = None
    with working(bits):
        # P_{x2-y}(theta + (y+1) alpha) for every x2 from one forward run
        right = det_sequence(params, y + 1, k - 1 - m, bits)
        for d1 in range(m, k - m):
            x1 = y - d1
            x2 = x1 + k - 1
            full = det_sequence(params, x1, k, bits)
            if _singular(full, k, params):
                continue
            Pk = full[k]
            g1 = right[x2 - y] / Pk
            g2 = full[y - x1] / Pk
            l1, l2 = float(g1.logmag), float(g2.logmag)
            margins = (-t * (y - x1) - l1, -t * (x2 - y) - l2)
            if min(margins) < 0:
                continue
            if best is None or min(margins) > best.min_margin:
                best = RegularityWitness(y, t, k, IntervalSpec(x1, k), margins, (l1, l2))
    return best


# ---------------------------------------------------------------- block expansion


def block_expand_residual(
    phi: Sequence, first_site: int, interval: IntervalSpec, params: ModelParams, bits: int | None = None
) -> mpfr:
    """max over x in I of |phi(x) + G(x1, x) phi(x1-1) + G(x, x2) phi(x2+1)| / max|phi|."""
    last_site = first_site + len(phi) - 1
    if interval.x1 - 1 < first_site or interval.x2 + 1 > last_site:
        raise ValueError("interval must lie strictly inside the domain of phi")
    with working(bits):
        c1, c2 = green_columns(interval, params, bits)
        at = lambda s: to_x(phi[s - first_site])
        left, right = at(interval.x1 - 1), at(interval.x2 + 1)
        worst = mpfr(0)
        for i in range(interval.k):
            x = interval.x1 + i
            worst = max(worst, abs(at(x) + c1[i] * left + c2[i] * right))
        return worst / max(abs(to_x(v)) for v in phi)


@dataclass(frozen=True)
class Hop:
    site: int
    interval: IntervalSpec
    exit_site: int
    log_green: float


@dataclass(frozen=True)
class ExpansionChain:
    start: int
    hops: tuple[Hop, ...]
    terminal: int
    path_log: float  # sum of the hop log|G| along the dominant path
    log_bound: float  # log of the summed bound over every branch of the expansion
    exit_sites: frozenset
    status: str  # "complete", "stuck" or "hop cap"
    rate: float

    @property
    def distance(self) -> int:
        return abs(self.terminal - self.start)

    @property
    def slack(self) -> float:
        """Realized s with log_bound = -rate (distance - s)."""
        return self.distance + self.log_bound / self.rate

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "site": h.site,
                    "interval": [h.interval.x1, h.interval.x2],
                    "exit": h.exit_site,
                    "log_bound_increment": h.log_green,
                }
            )
            for h in self.hops
        ]
        return "\n".join(lines) + ("\n" if lines else "")


def _logaddexp(a: float, b: float) -> float:
    if math.inf in (a, b):
        return math.inf
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = max(a, b), min(a, b)
    return hi + math.log1p(math.exp(lo - hi))


def expand_chain(
    start: int,
    params: ModelParams,
    region: tuple[int, int],
    n: int,
    max_hops: int | None = None,
    eta: float = 0.01,
    t: float | None = None,
    k: int | None = None,
    bits: int | None = None,
) -> ExpansionChain:
    """Iterate block expansion from ``start`` until every branch terminates.

    A branch terminates when it leaves ``region`` or reaches a site too close to
    the half-lattice of level ``n`` to carry a regularity scale.  At each site the regularity witness of :func:`is_regular` supplies the
    interval; the interval length comes from :func:`amolab.cfrac.regularity_scale`
    at level ``n`` unless ``k`` is given.  Both boundary branches are followed,
    so ``log_bound`` bounds |phi(start)| / max |phi(e)| over ``exit_sites``
    rigorously.  Branches still inside after ``max_hops`` hops count as exits.
    ``hops`` record the dominant branch.
    """
    f = params.freq
    lo, hi = region
    if not lo <= start <= hi:
        raise ValueError("start must lie in the region")
    if max_hops is None:
        sc = regularity_scale(start, f, n)
        if sc is None or sc.k < 7:
            raise ValueError("start is too close to the resonant lattice for a regularity scale")
        max_hops = (4 * f.q(n)) // f.q(n - sc.n0)
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    rate = params.log_lam - eta if t is None else t

    witnesses: dict[int, RegularityWitness | None] = {}

    def scale(z: int) -> int | None:
        if k is not None:
            return k
        sc = regularity_scale(z, f, n)
        return sc.k if sc is not None and sc.k >= 7 else None

    def witness(z: int):
        if z not in witnesses:
            witnesses[z] = is_regular(z, rate, scale(z), params, bits)
        return witnesses[z]

    memo: dict[tuple[int, int], tuple] = {}
    status = {"stuck": False, "cap": False}
    exits: set[int] = set()

    def bound(z: int, left: int):
        # returns (log U(z), choice) where choice is (witness, branch) for the dominant path
        if not lo <= z <= hi or scale(z) is None:
            exits.add(z)
            return 0.0, None
        key = (z, left)
        if key in memo:
            return memo[key]
        if left == 0:
            # depth-truncated branch: trivial bound against its own value
            status["cap"] = True
            exits.add(z)
            return 0.0, None
        w = witness(z)
        if w is None:
            status["stuck"] = True
            memo[key] = (math.inf, None)
            return memo[key]
        I = w.interval
        u1, _ = bound(I.x1 - 1, left - 1)
        u2, _ = bound(I.x2 + 1, left - 1)
        a, b = w.log_green[0] + u1, w.log_green[1] + u2
        choice = (w, 0 if a >= b else 1)
        memo[key] = (_logaddexp(a, b), choice)
        return memo[key]

    log_bound, _ = bound(start, max_hops)
    hops = []
    z, left = start, max_hops
    while True:
        entry = memo.get((z, left))
        if entry is None or entry[1] is None:
            break
        w, branch = entry[1]
        exit_site = w.interval.x1 - 1 if branch == 0 else w.interval.x2 + 1
        hops.append(Hop(z, w.interval, exit_site, w.log_green[branch]))
        z, left = exit_site, left - 1
    state = "stuck" if status["stuck"] else "hop cap" if status["cap"] else "complete"
    return ExpansionChain(
        start,
        tuple(hops),
        z,
        sum(h.log_green for h in hops),
        log_bound,
        frozenset(exits),
        state,
        rate,
    )
