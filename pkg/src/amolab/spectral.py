"""Finite-box eigenpairs, resonance-peak profiles and decay fits.

Eigenvalues come from extended-precision Sturm bisection, seeded by a float
bisection of the whole spectrum.  Vectors come from one inverse-iteration
solve through a twisted factorization, which keeps every entry accurate
relative to its own size, so exponentially small tails are resolved down to
e^-1000 and below instead of drowning at the working epsilon.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

from amolab.cfrac import Frequency, beta_estimate
from amolab.detkernel import (
    BoundaryCount,
    ModelParams,
    box_diag,
    eigvals_float,
    potential_float,
    sturm_count_diag,
)
from amolab.xprec import default_bits, to_x, working

EIG_TOL = 1e-25
RESIDUAL_TOL = 1e-20
CLUSTER_BITS = 32  # energies closer than 2^-(bits - 32) * bound share one shift
ORTHO_GAP = 1e-10
EDGE_TOL = 1e-6


class NotLocalized(ValueError):
    """The eigenvector is not localized well inside the box."""


class LevelTooDeep(ValueError):
    """q_n is too large for the box."""


class InverseIterationFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalue and eigenvector on [-N, N], scaled so max |phi| = 1 and that entry is positive."""

    energy: mpfr
    vector: tuple = field(repr=False)
    N: int
    residual: float

    @property
    def center(self) -> int:
        """Site of the largest |phi| (first one on ties)."""
        with working(self.vector[0].precision):
            mags = [abs(x) for x in self.vector]
        return mags.index(max(mags)) - self.N

    def at(self, site: int) -> mpfr:
        return self.vector[site + self.N]

    def log_abs(self) -> np.ndarray:
        return np.array([float(gmpy2.log(abs(x))) if x != 0 else -math.inf for x in self.vector])

    def normalized_at(self, site: int) -> tuple:
        """The vector rescaled so phi(site) = 1 (requires phi(site) != 0)."""
        s = self.at(site)
        if s == 0:
            raise ZeroDivisionError(f"phi({site}) = 0")
        return tuple(x / s for x in self.vector)


def _pivots(diag, sigma):
    """Forward and backward pivots of T - sigma (T = tridiag(1, diag, 1))."""
    n = len(diag)
    tiny = mpfr(2) ** (-4 * gmpy2.get_context().precision)
    fwd = [None] * n
    bwd = [None] * n
    piv = None
    for i in range(n):
        piv = (diag[i] - sigma) if piv is None else (diag[i] - sigma) - 1 / piv
        if piv == 0:
            piv = tiny
        fwd[i] = piv
    piv = None
    for i in range(n - 1, -1, -1):
        piv = (diag[i] - sigma) if piv is None else (diag[i] - sigma) - 1 / piv
        if piv == 0:
            piv = tiny
        bwd[i] = piv
    return fwd, bwd


def _twisted_vector(diag, sigma, fwd, bwd, r):
    n = len(diag)
    z = [mpfr(0)] * n
    z[r] = mpfr(1)
    for i in range(r - 1, -1, -1):
        z[i] = -z[i + 1] / fwd[i]
    for i in range(r + 1, n):
        z[i] = -z[i - 1] / bwd[i]
    return z


def _gammas(diag, sigma, fwd, bwd):
    return [fwd[r] + bwd[r] - (diag[r] - sigma) for r in range(len(diag))]


def residual_inf(diag, energy, vec) -> mpfr:
    """max_i |((T - E) v)_i| / max |v|."""
    n = len(diag)
    E = to_x(energy)
    worst = mpfr(0)
    for i in range(n):
        s = (diag[i] - E) * vec[i]
        if i > 0:
            s += vec[i - 1]
        if i < n - 1:
            s += vec[i + 1]
        worst = max(worst, abs(s))
    return worst / max(abs(x) for x in vec)


def _bisect_index(diag, i, lo, hi, tol):
    """Shrink [lo, hi] around the i-th eigenvalue (0-based) to width tol."""

    def count(E):
        try:
            return sturm_count_diag(diag, E)
        except BoundaryCount:
            return sturm_count_diag(diag, E + abs(E) * mpfr(2) ** (-gmpy2.get_context().precision + 4) + tol * 1e-6)

    while hi - lo > tol:
        mid = (lo + hi) / 2
        if mid == lo or mid == hi:
            break
        if count(mid) > i:
            hi = mid
        else:
            lo = mid
    return lo, hi


def _bracket(diag, i, seed: float, outer_lo, outer_hi):
    width = mpfr(1e-9) * (1 + abs(seed))
    for _ in range(12):
        lo = max(outer_lo, mpfr(seed) - width)
        hi = min(outer_hi, mpfr(seed) + width)
        if sturm_count_diag(diag, lo) <= i < sturm_count_diag(diag, hi):
            return lo, hi
        width *= 100
    return outer_lo, outer_hi


def _normalize(z):
    big = max(z, key=abs)
    return [x / big for x in z]


def _window(params: ModelParams, energy_window):
    bound = 2 + 2 * params.lam
    lo_w, hi_w = energy_window if energy_window is not None else (-bound, bound)
    if lo_w < -bound - 1e-12 or hi_w > bound + 1e-12 or lo_w > hi_w:
        raise ValueError(f"energy window must lie inside [{-bound}, {bound}]")
    return lo_w, hi_w, bound


def _sturm_energies(diag, lo_w, hi_w, tol):
    dfl = np.array([float(d) for d in diag])
    seeds = eigvals_float(dfl, 1e-13)
    W_lo, W_hi = mpfr(lo_w), mpfr(hi_w)
    energies = []
    for i in range(sturm_count_diag(diag, W_lo), sturm_count_diag(diag, W_hi)):
        lo, hi = _bracket(diag, i, float(seeds[i]), W_lo, W_hi)
        lo, hi = _bisect_index(diag, i, lo, hi, tol)
        energies.append((lo + hi) / 2)
    return energies


def sturm_eigenvalues(
    params: ModelParams,
    N: int,
    energy_window: tuple[float, float] | None = None,
    tol: float = EIG_TOL,
    bits: int | None = None,
) -> list[mpfr]:
    """Box eigenvalues inside ``energy_window`` by extended Sturm bisection to width ``tol``."""
    if N < 5:
        raise ValueError("N must be >= 5")
    lo_w, hi_w, _ = _window(params, energy_window)
    with working(bits):
        return _sturm_energies(box_diag(params, N, bits), lo_w, hi_w, mpfr(tol))


def eigen_solve(
    params: ModelParams,
    N: int,
    energy_window: tuple[float, float] | None = None,
    tol: float = EIG_TOL,
    bits: int | None = None,
) -> list[EigenPair]:
    """All eigenpairs of the box [-N, N] with eigenvalue inside ``energy_window``."""
    if N < 5:
        raise ValueError("N must be >= 5")
    lo_w, hi_w, bound = _window(params, energy_window)
    bits = bits or default_bits()
    with working(bits):
        diag = box_diag(params, N, bits)
        # bisect below the working epsilon so vectors and Green functions see
        # the eigenvalue to full precision; ``tol`` is only the contract
        inner_tol = min(mpfr(tol), mpfr(2) ** (-(bits - 12)) * bound)
        energies = _sturm_energies(diag, lo_w, hi_w, inner_tol)

        cluster_gap = mpfr(2) ** (-(bits - CLUSTER_BITS)) * bound
        pairs: list[EigenPair] = []
        g = 0
        while g < len(energies):
            h = g + 1
            while h < len(energies) and energies[h] - energies[h - 1] < cluster_gap:
                h += 1
            for pair in _cluster_vectors(diag, energies[g:h], N):
                pairs.append(_reorthogonalize(diag, pair, pairs))
            g = h
        return pairs


def _reorthogonalize(diag, pair: EigenPair, previous: list[EigenPair]) -> EigenPair:
    near = [p for p in previous if abs(p.energy - pair.energy) < ORTHO_GAP]
    if not near:
        return pair
    z = list(pair.vector)
    for p in near:
        a = p.vector
        dot = sum(x * y for x, y in zip(z, a)) / sum(y * y for y in a)
        z = [x - dot * y for x, y in zip(z, a)]
    z = _normalize(z)
    res = residual_inf(diag, pair.energy, z)
    if res > RESIDUAL_TOL:
        raise InverseIterationFailure(f"re-orthogonalization broke the residual at {float(pair.energy)!r}")
    return EigenPair(pair.energy, tuple(z), pair.N, float(res))


def _cluster_vectors(diag, energies, N) -> list[EigenPair]:
    sigma = sum(energies) / len(energies)
    fwd, bwd = _pivots(diag, sigma)
    gam = [abs(x) for x in _gammas(diag, sigma, fwd, bwd)]
    order = sorted(range(len(diag)), key=lambda r: gam[r])
    accepted: list[list] = []
    out = []
    for E in energies:
        if len(energies) == 1:
            z = _normalize(_twisted_vector(diag, sigma, fwd, bwd, order[0]))
            res = residual_inf(diag, E, z)
        else:
            z, res = None, None
            for r in order:
                if any(abs(a[r]) > 1e-3 for a in accepted):
                    continue
                cand = _twisted_vector(diag, sigma, fwd, bwd, r)
                cand = _normalize(cand)
                for a in accepted:
                    dot = sum(x * y for x, y in zip(cand, a)) / sum(y * y for y in a)
                    cand = [x - dot * y for x, y in zip(cand, a)]
                cand = _normalize(cand)
                rres = residual_inf(diag, E, cand)
                if rres <= RESIDUAL_TOL:
                    z, res = cand, rres
                    break
            if z is None:
                raise InverseIterationFailure(f"no acceptable vector for eigenvalue {float(E)!r}")
        accepted.append(z)
        if res > RESIDUAL_TOL:
            raise InverseIterationFailure(f"residual {float(res):.3e} at eigenvalue {float(E)!r}")
        out.append(EigenPair(E, tuple(z), N, float(res)))
    return out


def spectrum_sample(params: ModelParams, N: int, resolution: float = 1e-12) -> np.ndarray:
    """All 2N+1 eigenvalues of the box by float Sturm bisection."""
    d = potential_float(params, np.arange(-N, N + 1))
    return np.sort(eigvals_float(d, resolution))


def spectral_energies(params: ModelParams, count: int, N: int = 300, seed: int = 0) -> list[float]:
    """``count`` box eigenvalues spread over the spectrum, used as stand-ins for E in the spectrum."""
    ev = spectrum_sample(params, N)
    idx = np.linspace(0, ev.size - 1, count + 2)[1:-1].round().astype(int)
    if seed:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(ev.size, size=count, replace=False))
    return [float(ev[i]) for i in idx]


# ---------------------------------------------------------------- peaks


@dataclass(frozen=True)
class Peak:
    ell2: int  # 2 * ell
    site: int
    log_r: float
    clipped: bool


@dataclass(frozen=True)
class DecayProfile:
    level: int
    q_n: int
    eta: float
    origin: int
    radius: int
    peaks: dict[int, Peak]

    def log_r(self, ell2: int) -> float:
        return self.peaks[ell2].log_r


def _window_log_max(pair: EigenPair, center: int, radius: int) -> tuple[float, bool]:
    lo, hi = center - radius, center + radius
    clipped = lo < -pair.N or hi > pair.N
    lo, hi = max(lo, -pair.N), min(hi, pair.N)
    if lo > hi:
        return -math.inf, True
    m = max(abs(pair.at(s)) for s in range(lo, hi + 1))
    return (float(gmpy2.log(m)) if m != 0 else -math.inf), clipped


def decay_profile(
    pair: EigenPair,
    f: Frequency,
    n: int,
    eta: float = 0.01,
    origin: int | None = None,
    max_ell: int | None = None,
) -> DecayProfile:
    """Window maxima r_l and r_{l+1/2} around ``origin`` (default: site 0, the symmetry center).

    r_j is the max of |phi| over sites within 10 eta q_n of origin + j q_n, and
    r_{j+1/2} the same around origin + j q_n + floor(q_n / 2).
    """
    q = f.q(n)
    if q > 2 * pair.N:
        raise LevelTooDeep(f"q_{n}={q} exceeds the box width {2 * pair.N}")
    o = 0 if origin is None else origin
    radius = math.floor(10 * eta * q)
    reach = pair.N - abs(o)
    L = max_ell if max_ell is not None else max(1, reach // q)
    peaks = {}
    for j in range(-L, L + 1):
        for half in (0, 1):
            if half and j == L:
                continue
            c = o + j * q + (q // 2 if half else 0)
            lr, clipped = _window_log_max(pair, c, radius)
            peaks[2 * j + half] = Peak(2 * j + half, c, lr, clipped)
    return DecayProfile(n, q, eta, o, radius, peaks)


@dataclass(frozen=True)
class PeakReport:
    rows: list[dict]
    c_meas: float
    all_pass: bool


def half_peak_check(profile: DecayProfile, params: ModelParams, beta: float, c_max: float = 50.0) -> PeakReport:
    """r_{j+1/2} <= exp(-(ln lam - 2 beta - C eta) q_n / 2) max(r_j, r_{j+1}), C measured per j."""
    q, eta = profile.q_n, profile.eta
    target = -0.5 * (params.log_lam - 2 * beta)
    rows, c_meas = [], 0.0
    for ell2, pk in sorted(profile.peaks.items()):
        if ell2 % 2 == 0:
            continue
        a, b = profile.peaks.get(ell2 - 1), profile.peaks.get(ell2 + 1)
        if a is None or b is None or pk.clipped or a.clipped or b.clipped:
            continue
        ref = max(a.log_r, b.log_r)
        if pk.log_r == -math.inf:
            rows.append({"ell2": ell2, "ratio": -math.inf, "target": target, "C": 0.0, "status": "pass by underflow"})
            continue
        ratio = (pk.log_r - ref) / q
        C = max(0.0, 2 * (ratio - target) / eta)
        c_meas = max(c_meas, C)
        rows.append({"ell2": ell2, "ratio": ratio, "target": target, "C": C, "status": "pass" if C <= c_max else "fail"})
    return PeakReport(rows, c_meas, c_meas <= c_max)


def peak_bound_check(profile: DecayProfile, params: ModelParams, beta: float, c_max: float = 50.0) -> PeakReport:
    """ln r_l <= -(ln lam - 3 beta)|l| q_n + C eta q_n + ln((2|l| + 2) q_n) for l != 0, C measured."""
    q, eta = profile.q_n, profile.eta
    rate = params.log_lam - 3 * beta
    rows, c_meas = [], 0.0
    for ell2, pk in sorted(profile.peaks.items()):
        if ell2 == 0 or pk.clipped:
            continue
        ell = abs(ell2) / 2
        rhs = -rate * ell * q + math.log((2 * ell + 2) * q)
        C = max(0.0, (pk.log_r - rhs) / (eta * q)) if pk.log_r > -math.inf else 0.0
        c_meas = max(c_meas, C)
        rows.append({"ell2": ell2, "site": pk.site, "log_r": pk.log_r, "bound_rhs": rhs, "C": C})
    return PeakReport(rows, c_meas, c_meas <= c_max)


def profile_csv(profile: DecayProfile, params: ModelParams, beta: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ell_times_2", "site_center", "r_value", "log_r", "bound_rhs"])
    rate = params.log_lam - 3 * beta
    for ell2, pk in sorted(profile.peaks.items()):
        ell = abs(ell2) / 2
        rhs = -rate * ell * profile.q_n + math.log((2 * ell + 2) * profile.q_n)
        r = math.exp(pk.log_r) if pk.log_r > -745 else 0.0
        w.writerow([ell2, pk.site, repr(r), repr(pk.log_r), repr(rhs)])
    return buf.getvalue()


# ---------------------------------------------------------------- decay fit


@dataclass(frozen=True)
class DecayFit:
    center: int
    ks: np.ndarray
    exponents: np.ndarray  # e(k) = ln(phi(c+k)^2 + phi(c+k-1)^2) / (2|k|)
    windows: list[tuple[int, int]]
    envelope: list[float]
    tail: float
    beta_est: float
    target: float

    @property
    def within(self) -> bool:
        return self.tail <= self.target

    def to_json(self) -> str:
        return json.dumps(
            {
                "center": self.center,
                "windows": self.windows,
                "envelope": self.envelope,
                "tail": self.tail,
                "beta_est": self.beta_est,
                "target": self.target,
            },
            sort_keys=True,
        )


def is_localized(pair: EigenPair, central: float = 0.2, edge_tol: float = EDGE_TOL) -> bool:
    N = pair.N
    if abs(pair.center) > central * N:
        return False
    return abs(pair.vector[0]) <= edge_tol and abs(pair.vector[-1]) <= edge_tol


def decay_fit(pair: EigenPair, params: ModelParams, beta: float | None = None, origin: int = 0) -> DecayFit:
    """Upper envelope of e(k) = ln(phi(k)^2 + phi(k-1)^2) / (2|k|) over dyadic windows of |k|.

    ``k`` is measured from ``origin`` (the reflection center of the completely
    resonant phases).  The tail estimate is the envelope on the last dyadic
    window that fits in the box on both sides.  ``beta`` defaults to the
    deepest-level estimate of the frequency truncation.
    """
    if not is_localized(pair):
        raise NotLocalized("not localized; decay fit meaningless")
    if beta is None:
        beta = float(beta_estimate(params.freq).tail)
    N = pair.N
    reach = N - abs(origin)
    ks, es = [], []
    for k in range(1, reach + 1):
        for sgn in (1, -1):
            a, b = origin + sgn * k, origin + sgn * k - 1
            if not (-N <= a <= N and -N <= b <= N):
                continue
            s = pair.at(a) ** 2 + pair.at(b) ** 2
            e = float(gmpy2.log(s)) / (2 * k) if s != 0 else -math.inf
            ks.append(sgn * k)
            es.append(e)
    ks_a, es_a = np.array(ks), np.array(es)
    windows, env = [], []
    j = 0
    while 2 ** (j + 1) <= reach:
        lo, hi = 2**j, 2 ** (j + 1)
        sel = (np.abs(ks_a) >= lo) & (np.abs(ks_a) < hi)
        windows.append((lo, hi))
        env.append(float(np.max(es_a[sel])))
        j += 1
    if not env:
        raise ValueError("box too small for a dyadic tail window")
    return DecayFit(pair.center, ks_a, es_a, windows, env, env[-1], beta, -(params.log_lam - 3 * beta))


# ---------------------------------------------------------------- studies

PEAK_Q_MIN = 50


def peak_level(f: Frequency, center: int, N: int, eta: float = 0.01, q_min: int = PEAK_Q_MIN) -> int:
    """Smallest level whose r_0 window covers ``center``, with q_n >= q_min and 2 q_n <= N."""
    for n in range(f.depth + 1):
        q = f.q(n)
        if 2 * q > N:
            break
        if q >= q_min and math.floor(10 * eta * q) >= abs(center):
            return n
    raise LevelTooDeep(f"no level with q_n >= {q_min} covers center {center} inside N={N}")


def central_pairs(params: ModelParams, N: int, radius: int) -> list[EigenPair]:
    """Localized eigenpairs whose maximum sits within ``radius`` of site 0.

    A dense float solve picks the candidates; each is then resolved by
    :func:`eigen_solve` in a narrow window around its float eigenvalue.
    """
    d = potential_float(params, np.arange(-N, N + 1))
    w, V = np.linalg.eigh(np.diag(d) + np.eye(2 * N + 1, k=1) + np.eye(2 * N + 1, k=-1))
    centers = np.argmax(np.abs(V), axis=0) - N
    out: list[EigenPair] = []
    for i in np.flatnonzero(np.abs(centers) <= radius):
        if any(abs(float(p.energy) - w[i]) < 1e-9 for p in out):
            continue
        for p in eigen_solve(params, N, (w[i] - 1e-9, w[i] + 1e-9)):
            if abs(p.center) <= radius and is_localized(p) and all(p.energy != q.energy for q in out):
                out.append(p)
    return sorted(out, key=lambda p: p.energy)


@dataclass(frozen=True)
class DecayRecord:
    energy: float
    center: int
    tail: float
    target: float
    q_n: int
    half_c: float
    bound_c: float


def decay_study(
    params: ModelParams,
    N: int,
    radius: int,
    eta: float = 0.01,
    beta: float | None = None,
    c_max: float = 50.0,
) -> list[DecayRecord]:
    """Decay fit and both peak checks for every central localized eigenpair."""
    f = params.freq
    if beta is None:
        beta = float(beta_estimate(f).tail)
    out = []
    for pair in central_pairs(params, N, radius):
        fit = decay_fit(pair, params, beta=beta)
        n = peak_level(f, pair.center, N, eta)
        prof = decay_profile(pair, f, n, eta)
        h = half_peak_check(prof, params, beta, c_max)
        b = peak_bound_check(prof, params, beta, c_max)
        out.append(DecayRecord(float(pair.energy), pair.center, fit.tail, fit.target, f.q(n), h.c_meas, b.c_meas))
    return out
