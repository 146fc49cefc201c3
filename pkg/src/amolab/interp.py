"""Lagrange interpolation terms, the uniformity witness and the Herman and sine-product checks.

For nodes ``c_j = cos 2 pi theta_j``

    La_i = ln max_{x in [-1, 1]} prod_{j != i} |x - c_j| / |c_i - c_j|.

Node differences are evaluated as ``c_i - c_j = -2 sin pi(theta_i + theta_j)
sin pi(theta_i - theta_j)`` from exact rational phases, so nearly colliding
nodes keep full relative accuracy.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import gmpy2
import numpy as np

from amolab.cfrac import Frequency
from amolab.detkernel import ModelParams, det_at_phase, logdet_phases
from amolab.xprec import cos2pi_frac, sin_pi_frac, to_x, working

DISTINCT_TOL = 1e-30
REFINE_TOL = 1e-12
HERMAN_ALLOWANCE = 1e-3  # per unit of k
NEAR_ZERO = 1e-13  # |P_k| relative to lambda^k, below which a float sweep only sees rounding noise
_GOLD = (math.sqrt(5) - 1) / 2


class DuplicateNodes(ValueError):
    """Two phases give (numerically) the same cosine node."""


class UniformityViolation(ValueError):
    """No node satisfies the uniformity lower bound."""

    def __init__(self, message: str, margins: tuple[float, ...]):
        super().__init__(message)
        self.margins = margins


def _mod1(r: Fraction) -> Fraction:
    return r - math.floor(r)


@dataclass(frozen=True)
class ThetaSet:
    """Phases theta_j with optional lattice offsets m (theta_j = theta + m alpha)."""

    offsets: tuple
    residues: tuple[Fraction, ...]
    provenance: str = "custom"
    labels: tuple | None = None  # per-point block names for the constructed sets

    def __post_init__(self):
        if len(self.offsets) != len(self.residues):
            raise ValueError("offsets and residues differ in length")
        if self.labels is not None and len(self.labels) != len(self.offsets):
            raise ValueError("labels and offsets differ in length")
        if len(self.residues) < 2:
            raise ValueError("need at least two phases")
        object.__setattr__(self, "residues", tuple(_mod1(Fraction(r)) for r in self.residues))
        self._check_distinct()

    def __len__(self) -> int:
        return len(self.residues)

    @classmethod
    def custom(cls, phases: Sequence) -> "ThetaSet":
        return cls(tuple(None for _ in phases), tuple(Fraction(p) for p in phases), "custom")

    @classmethod
    def from_offsets(
        cls, params: ModelParams, offsets: Sequence[int], provenance: str = "custom", labels: Sequence[str] | None = None
    ) -> "ThetaSet":
        offsets = tuple(int(m) for m in offsets)
        return cls(
            offsets,
            tuple(params.phase(2 * m) for m in offsets),
            provenance,
            None if labels is None else tuple(labels),
        )

    def _check_distinct(self):
        # cos 2 pi a == cos 2 pi b exactly iff a = +-b mod 1
        seen = {}
        for i, r in enumerate(self.residues):
            key = min(r, _mod1(-r))
            if key in seen:
                raise DuplicateNodes(f"phases {seen[key]} and {i} give the same cosine node")
            seen[key] = i
        order = sorted(range(len(self)), key=lambda i: min(self.residues[i], _mod1(-self.residues[i])))
        with working():
            for a, b in zip(order, order[1:]):
                if abs(self.diff(a, b)) < DISTINCT_TOL:
                    raise DuplicateNodes(f"phases {a} and {b} collide: cosine nodes closer than {DISTINCT_TOL}")

    def diff(self, i: int, j: int):
        """c_i - c_j at working precision."""
        a, b = self.residues[i], self.residues[j]
        return -2 * sin_signed(a + b) * sin_signed(a - b)

    def nodes(self) -> np.ndarray:
        with working():
            return np.array([float(cos2pi_frac(r)) for r in self.residues])


def sin_signed(r: Fraction):
    """sin(pi r) with sign, r exact."""
    s = sin_pi_frac(r)
    return s if _mod1(r / 2) < Fraction(1, 2) else -s


# ---------------------------------------------------------------- resonant index sets


def desk_n0(f: Frequency, n: int, s: int, eta: float, fraction: float | None = None) -> int:
    """Least n0 >= 1 with s q_{n-n0} <= (1/6 - 2 eta) q_n (or ``fraction * q_n``)."""
    cap = (Fraction(1, 6) - 2 * Fraction(eta)) if fraction is None else Fraction(fraction)
    for n0 in range(1, n + 1):
        if s * f.q(n - n0) <= cap * f.q(n):
            return n0
    raise ValueError(f"no n0 fits s={s} at level {n}")


def theta_set_i12(params: ModelParams, n: int, j: int, s: int, n0: int, eta: float) -> ThetaSet:
    """Offsets I1 = [-2 s q', -1] and I2, the window of half-width (s + floor(eta s)) q' at j q_n + floor(q_n / 2).

    ``q' = q_{n-n0}``.  ``s`` and ``n0`` are explicit because the asymptotic
    choices would exceed any reachable box at desk scale.
    """
    f = params.freq
    qn, qp = f.q(n), f.q(n - n0)
    w = s + math.floor(eta * s)
    mid = j * qn + qn // 2
    i1 = list(range(-2 * s * qp, 0))
    i2 = list(range(mid - w * qp, mid + w * qp))
    return ThetaSet.from_offsets(params, i1 + i2, "I1+I2", ["I1"] * len(i1) + ["I2"] * len(i2))


def theta_set_j123(params: ModelParams, n: int, j: int, s: int, n0: int) -> ThetaSet:
    """Offsets J1 = [-2 s q', -1], J2 (the two flanks) and J3 = [j q_n - 2 s q', j q_n + 2 s q' - 1]."""
    f = params.freq
    qn, qp = f.q(n), f.q(n - n0)
    c = j * qn
    j1 = list(range(-2 * s * qp, 0))
    j2 = list(range(c - 3 * s * qp, c - 2 * s * qp)) + list(range(c + 2 * s * qp, c + 3 * s * qp))
    j3 = list(range(c - 2 * s * qp, c + 2 * s * qp))
    labels = ["J1"] * len(j1) + ["J2"] * len(j2) + ["J3"] * len(j3)
    return ThetaSet.from_offsets(params, j1 + j2 + j3, "J1+J2+J3", labels)


# ---------------------------------------------------------------- La_i


@dataclass(frozen=True)
class LaTerms:
    theta_set: ThetaSet
    values: np.ndarray
    x_star: np.ndarray
    grid_size: int

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("i,theta_residue,cos_value,La_i,x_star\n")
        nodes = self.theta_set.nodes()
        for i, r in enumerate(self.theta_set.residues):
            out.write(f"{i},{r.numerator}/{r.denominator},{nodes[i]!r},{self.values[i]!r},{self.x_star[i]!r}\n")
        return out.getvalue()

    def ratios(self, q_n: int) -> dict:
        """Largest La_m / q_n per label block."""
        labels = self.theta_set.labels or ("all",) * len(self.values)
        out: dict = {}
        for lab, v in zip(labels, self.values):
            out[lab] = max(out.get(lab, -math.inf), float(v) / q_n)
        return out


def log_denominators(ts: ThetaSet) -> np.ndarray:
    """sum_{j != i} ln|c_i - c_j| at working precision."""
    k1 = len(ts)
    logs = [[None] * k1 for _ in range(k1)]
    with working():
        for i in range(k1):
            for j in range(i + 1, k1):
                logs[i][j] = logs[j][i] = gmpy2.log(abs(ts.diff(i, j)))
        return np.array([float(sum(logs[i][j] for j in range(k1) if j != i)) for i in range(k1)])


def _row_logsum(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """sum_{j != i} ln|x_i - c_j| with one point x_i per node."""
    logs = np.log(np.abs(x[:, None] - nodes[None, :]))
    idx = np.arange(len(nodes))
    logs[idx, idx] = 0.0
    return logs.sum(axis=1)


def la_terms(ts: ThetaSet, oversample: int = 8, candidates: int = 3) -> LaTerms:
    """La_i from a Chebyshev grid of ``oversample * |ts|`` points plus both endpoints.

    The ``candidates`` best grid points of every node are refined by golden
    section over their two neighbouring cells down to 1e-12 in x.
    """
    nodes = ts.nodes()
    m = oversample * len(ts)
    cheb = np.cos((2 * np.arange(m) + 1) * np.pi / (2 * m))
    grid = np.unique(np.concatenate([[-1.0, 1.0], cheb]))
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(np.abs(grid[None, :] - nodes[:, None]))
        num = logs.sum(axis=0)[None, :] - logs
        num[~np.isfinite(num)] = -np.inf
        best_val = num.max(axis=1)
        best_x = grid[num.argmax(axis=1)]
        top = np.argsort(-num, axis=1)[:, :candidates]
        for g in top.T:
            a = grid[np.maximum(g - 1, 0)]
            b = grid[np.minimum(g + 1, len(grid) - 1)]
            x1 = b - _GOLD * (b - a)
            x2 = a + _GOLD * (b - a)
            f1, f2 = _row_logsum(nodes, x1), _row_logsum(nodes, x2)
            while np.max(b - a) > REFINE_TOL:
                left = f1 > f2
                b = np.where(left, x2, b)
                a = np.where(left, a, x1)
                new = np.where(left, b - _GOLD * (b - a), a + _GOLD * (b - a))
                f_new = _row_logsum(nodes, new)
                x1, x2 = np.where(left, new, x2), np.where(left, x1, new)
                f1, f2 = np.where(left, f_new, f2), np.where(left, f1, f_new)
            xm = (a + b) / 2
            fm = _row_logsum(nodes, xm)
            better = fm > best_val
            best_val = np.where(better, fm, best_val)
            best_x = np.where(better, xm, best_x)
    return LaTerms(ts, best_val - log_denominators(ts), best_x, len(grid))


def la_brute(ts: ThetaSet, points: int = 100_000) -> np.ndarray:
    """Dense uniform-grid oracle for La_i."""
    nodes = ts.nodes()
    x = np.linspace(-1.0, 1.0, points)
    out = np.empty(len(nodes))
    with np.errstate(divide="ignore"):
        for i in range(len(nodes)):
            others = np.delete(nodes, i)
            out[i] = np.log(np.abs(x[:, None] - others[None, :])).sum(axis=1).max()
    return out - log_denominators(ts)


# ---------------------------------------------------------------- uniformity


def shifted_phase(residue: Fraction, k: int, freq: Frequency) -> Fraction:
    """theta_i - (k - 1) alpha / 2 reduced exactly mod 1."""
    return _mod1(residue - Fraction(k - 1, 2) * freq.alpha)


@dataclass(frozen=True)
class UniformityWitness:
    index: int
    offset: object
    label: str | None
    margin: float
    margins: tuple[float, ...]
    log_pk: tuple[float, ...]


def uniformity_witness(
    ts: ThetaSet,
    params: ModelParams,
    k: int | None = None,
    slack: float = 1e-6,
    rate: float | None = None,
    la: LaTerms | None = None,
) -> UniformityWitness:
    """Node i maximizing ln|P_k(theta_i - (k-1) alpha / 2)| - (k rate - La_i - ln(k+1)).

    ``rate`` defaults to ln(lambda).  A node qualifies when its margin is at least
    ``-slack * k * rate``; otherwise :class:`UniformityViolation` carries every margin.
    """
    k = len(ts) - 1 if k is None else k
    if k < 1:
        raise ValueError("k must be >= 1")
    if k != len(ts) - 1:
        raise ValueError(f"k={k} needs {k + 1} phases, got {len(ts)}")
    rate = params.log_lam if rate is None else rate
    la = la_terms(ts) if la is None else la
    logp = []
    with working():
        for r in ts.residues:
            v = det_at_phase(params, shifted_phase(r, k, params.freq), k)
            logp.append(float(v.logmag))
    margins = tuple(lp - (k * rate - float(li) - math.log(k + 1)) for lp, li in zip(logp, la.values))
    i = max(range(len(margins)), key=lambda t: margins[t])
    if margins[i] < -slack * k * rate:
        raise UniformityViolation(f"uniformity violation: best margin {margins[i]:.6g}", margins)
    label = ts.labels[i] if ts.labels else None
    return UniformityWitness(i, ts.offsets[i], label, margins[i], margins, tuple(logp))


def lagrange_eval(nodes: Sequence[float], values: Sequence[float], x: float) -> float:
    """Evaluate the interpolating polynomial through (nodes, values) at ``x`` (barycentric form)."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    w = np.array([1.0 / np.prod(nodes[i] - np.delete(nodes, i)) for i in range(len(nodes))])
    d = x - nodes
    hit = np.flatnonzero(d == 0)
    if hit.size:
        return float(values[hit[0]])
    t = w / d
    return float(np.dot(t, values) / t.sum())


# ---------------------------------------------------------------- Herman


@dataclass(frozen=True)
class HermanResult:
    value: float
    passed: bool
    lower: float
    quad_points: int
    jittered: int


def herman_check(params: ModelParams, k: int, quad_points: int | None = None, allowance: float = HERMAN_ALLOWANCE) -> HermanResult:
    """Trapezoid value of the integral of ln|P_k(theta)| over [0, 1) against k ln(lambda) - k * allowance."""
    m = 16 * k if quad_points is None else quad_points
    if m < 16 * k:
        raise ValueError("quad_points must be >= 16 k")
    theta = np.arange(m) / m
    sign, logmag = logdet_phases(params.lam, float(params.energy), params.freq, k, theta)
    scale = k * params.log_lam
    near = (sign == 0) | (logmag - scale < math.log(NEAR_ZERO))
    jittered = int(near.sum())
    if jittered:
        _, fixed = logdet_phases(params.lam, float(params.energy), params.freq, k, theta[near] + 0.5 / m)
        logmag = logmag.copy()
        logmag[near] = fixed
    value = float(np.mean(logmag))
    lower = k * params.log_lam - k * allowance
    return HermanResult(value, value >= lower, lower, m, jittered)


# ---------------------------------------------------------------- sine products


@dataclass(frozen=True)
class SinProduct:
    total: float
    centered: float
    c_emp: float
    ell0: int


def sin_product_bound(x, f: Frequency, n: int) -> SinProduct:
    """sum over 0 <= l < q_n, l != l0 of ln|sin pi(x + l alpha)|, centered by (q_n - 1) ln 2.

    ``l0`` minimizes |sin pi(x + l alpha)|; ``c_emp = |centered| / ln q_n``.
    """
    qn = f.q(n)
    if qn < 2:
        raise ValueError("need q_n >= 2")
    exact = isinstance(x, (int, Fraction))
    with working():
        vals = []
        for ell in range(qn):
            if exact:
                vals.append(sin_pi_frac(Fraction(x) + f.frac_multiple(ell)))
            else:
                vals.append(abs(gmpy2.sin(gmpy2.const_pi() * (to_x(x) + to_x(f.frac_multiple(ell))))))
        ell0 = min(range(qn), key=lambda t: vals[t])
        total = sum(gmpy2.log(v) for t, v in enumerate(vals) if t != ell0)
        centered = total + (qn - 1) * gmpy2.log(gmpy2.mpfr(2))
        return SinProduct(float(total), float(centered), abs(float(centered)) / math.log(qn), ell0)
