"""Determinants P_k, Sturm counts and transfer-matrix growth for the almost Mathieu operator.

``P_k(theta)`` is the determinant of ``H - E`` restricted to ``[0, k-1]`` with
potential ``2 lam cos 2 pi (theta + n alpha)``.  Two numeric paths exist:

* extended precision (gmpy2 mpfr) for single sequences, used wherever
  identities are checked to 1e-20;
* vectorized float64 over phase grids, used for sweeps (sup over theta,
  quadrature), always renormalized so nothing overflows.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

from amolab.cfrac import Frequency
from amolab.xprec import LogSigned, cos2pi_frac, default_bits, to_x, working

# theta = base + shift * alpha for the four completely resonant phases
THETA_KINDS: dict[str, tuple[Fraction, Fraction]] = {
    "0": (Fraction(0), Fraction(0)),
    "1/2": (Fraction(1, 2), Fraction(0)),
    "a/2": (Fraction(0), Fraction(1, 2)),
    "a/2+1/2": (Fraction(1, 2), Fraction(1, 2)),
}

RENORM = 30.0  # rescale once |value| leaves [e^-30, e^30]
_HI = math.exp(RENORM)
_LO = math.exp(-RENORM)


class BoundaryCount(ValueError):
    """E sits on an eigenvalue of a leading block; the Sturm count is ambiguous."""


class Unresolvable(ValueError):
    """A site lies beyond what the stored convergent can resolve."""


@dataclass(frozen=True)
class ModelParams:
    lam: float
    freq: Frequency
    theta_kind: str = "0"
    energy: object = 0.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")
        if self.theta_kind not in THETA_KINDS:
            raise ValueError(f"theta_kind must be one of {sorted(THETA_KINDS)}")

    def with_energy(self, energy) -> "ModelParams":
        return replace(self, energy=energy)

    @property
    def log_lam(self) -> float:
        return math.log(self.lam)

    def phase(self, half_steps: int) -> Fraction:
        """theta + (half_steps / 2) * alpha, reduced exactly modulo 1."""
        base, shift = THETA_KINDS[self.theta_kind]
        p, q = self.freq.convergents[-1]
        # (half_steps / 2 + shift) * p / q with shift in {0, 1/2}
        num = (half_steps + int(2 * shift)) * p
        r = Fraction(num % (2 * q), 2 * q) + base
        return r - math.floor(r)

    def check_sites(self, lo: int, hi: int) -> None:
        qd = self.freq.q_deepest
        if max(abs(lo), abs(hi)) >= qd:
            raise Unresolvable(f"sites [{lo}, {hi}] exceed the deepest convergent q={qd}")


@functools.lru_cache(maxsize=256)
def _diag_cached(lam, freq, theta_kind, half_start, count, bits) -> tuple:
    params = ModelParams(lam, freq, theta_kind)
    with working(bits):
        two_lam = 2 * to_x(lam)
        return tuple(two_lam * cos2pi_frac(params.phase(half_start + 2 * j)) for j in range(count))


def potential_values(params: ModelParams, half_start: int, count: int, bits: int | None = None):
    """Extended potentials at phases theta + (half_start/2 + j) alpha, j < count."""
    lo, hi = half_start // 2, (half_start + 2 * count) // 2
    params.check_sites(lo, hi)
    return _diag_cached(params.lam, params.freq, params.theta_kind, half_start, count, bits or default_bits())


def potential(n: int, params: ModelParams, bits: int | None = None) -> mpfr:
    """v(n) = 2 lam cos 2 pi (theta + n alpha)."""
    return potential_values(params, 2 * n, 1, bits)[0]


def potential_float(params: ModelParams, sites: np.ndarray) -> np.ndarray:
    sites = np.asarray(sites)
    if sites.size:
        params.check_sites(int(sites.min()), int(sites.max()))
    fr = np.array([float(params.phase(2 * int(n))) for n in sites.ravel()]).reshape(sites.shape)
    return 2 * params.lam * np.cos(2 * np.pi * fr)


@dataclass(frozen=True)
class DetSequence:
    """P_0 .. P_K for the block starting at phase offset ``half_start / 2``."""

    params: ModelParams
    half_start: int
    values: tuple[LogSigned, ...] = field(repr=False)

    @property
    def x1(self) -> int:
        return self.half_start // 2

    def __getitem__(self, k: int) -> LogSigned:
        return self.values[k]

    def __len__(self) -> int:
        return len(self.values)


def _logsigned_run(diag, energy, scale_start=None) -> list[LogSigned]:
    """Signed-log values of the three-term recursion P_k = (d_k - E) P_{k-1} - P_{k-2}."""
    E = to_x(energy)
    prev, cur = mpfr(0), mpfr(1)
    scale = mpfr(0)
    out = [LogSigned(1, mpfr(0))]
    for d in diag:
        prev, cur = cur, (d - E) * cur - prev
        mag = abs(cur)
        if cur == 0:
            out.append(LogSigned(0, -math.inf))
            continue
        if mag > _HI or mag < _LO:
            prev /= mag
            cur /= mag
            scale += gmpy2.log(mag)
            mag = mpfr(1)
        out.append(LogSigned(1 if cur > 0 else -1, gmpy2.log(mag) + scale))
    return out


def det_sequence(params: ModelParams, x1: int, K: int, bits: int | None = None) -> DetSequence:
    """P_0..P_K of the blocks [x1, x1+k-1], i.e. P_k(theta + x1 alpha)."""
    return det_sequence_half(params, 2 * x1, K, bits)


def det_sequence_half(params: ModelParams, half_start: int, K: int, bits: int | None = None) -> DetSequence:
    if K < 1:
        raise ValueError("K must be >= 1")
    with working(bits):
        diag = potential_values(params, half_start, K, bits)
        return DetSequence(params, half_start, tuple(_logsigned_run(diag, params.energy)))


def det_at_phase(params: ModelParams, theta, k: int, bits: int | None = None) -> LogSigned:
    """P_k at an arbitrary extended phase ``theta`` (sites 0..k-1)."""
    with working(bits):
        th = to_x(theta)
        two_lam = 2 * to_x(params.lam)
        two_pi = 2 * gmpy2.const_pi()
        diag = [two_lam * gmpy2.cos(two_pi * (th + to_x(params.freq.frac_multiple(n)))) for n in range(k)]
        return _logsigned_run(diag, params.energy)[-1]


def window_check(seq: DetSequence, start: int, length: int = 30) -> tuple[bool, float]:
    """Recompute P_start..P_{start+length} in float64 from the stored anchors.

    Returns (signs agree, max |log|P|_float - log|P|_stored|).
    """
    K = len(seq) - 1
    if start < 1 or start + length > K:
        raise ValueError("window outside the stored sequence")
    diag = potential_values(seq.params, seq.half_start, K)
    E = float(seq.params.energy)
    ref = seq[start]
    # the window is carried in units of |P_start|
    a = seq[start - 1].to_x() / abs(ref.to_x()) if seq[start - 1].sign else 0.0
    prev, cur = float(a), float(ref.sign)
    logscale = float(ref.logmag)
    signs_ok, worst = True, 0.0
    for k in range(start + 1, start + length + 1):
        prev, cur = cur, (float(diag[k - 1]) - E) * cur - prev
        target = seq[k]
        s = int(np.sign(cur))
        if s != target.sign:
            signs_ok = False
            continue
        if s:
            worst = max(worst, abs(math.log(abs(cur)) + logscale - float(target.logmag)))
    return signs_ok, worst


def evenness_check(params: ModelParams, k: int, theta_samples: int, seed: int = 0, bits: int | None = None) -> float:
    """Max |log|P_k(theta)| - log|P_k(-theta-(k-1)alpha)|| over random rational theta.

    A sign disagreement yields ``inf``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    alpha = params.freq.alpha
    worst = 0.0
    with working(bits):
        for _ in range(theta_samples):
            th = Fraction(int(rng.integers(0, 2**40)), 2**40)
            mirror = -th - (k - 1) * alpha
            mirror -= math.floor(mirror)
            a = det_at_phase(params, to_x(th), k, bits)
            b = det_at_phase(params, to_x(mirror), k, bits)
            if a.sign != b.sign:
                return math.inf
            if a.sign:
                worst = max(worst, float(abs(a.logmag - b.logmag)))
    return worst


# ---------------------------------------------------------------- Sturm counts


def box_diag(params: ModelParams, N: int, bits: int | None = None):
    """Extended potentials on the box [-N, N]."""
    return potential_values(params, -2 * N, 2 * N + 1, bits)


def sturm_count_diag(diag: Sequence, energy) -> int:
    """Eigenvalues strictly below ``energy`` of tridiag(1, diag, 1), by negative pivots."""
    E = to_x(energy)
    count = 0
    piv = None
    for d in diag:
        piv = (d - E) if piv is None else (d - E) - 1 / piv
        if piv == 0:
            raise BoundaryCount("zero pivot: boundary count, perturb E")
        if piv < 0:
            count += 1
    return count


def sturm_count(params: ModelParams, N: int, E, bits: int | None = None) -> int:
    """Number of eigenvalues of the (2N+1)-site box [-N, N] strictly below E."""
    if N < 1:
        raise ValueError("N must be >= 1")
    with working(bits):
        return sturm_count_diag(box_diag(params, N, bits), E)


def sturm_counts_float(diag: np.ndarray, energies: np.ndarray) -> np.ndarray:
    """Vectorized float64 Sturm counts for many energies at once."""
    energies = np.asarray(energies, dtype=float)
    tiny = np.finfo(float).tiny
    count = np.zeros(energies.shape, dtype=np.int64)
    piv = None
    for d in diag:
        piv = (d - energies) if piv is None else (d - energies) - 1.0 / piv
        piv = np.where(piv == 0.0, -tiny, piv)
        count += piv < 0
    return count


def eigvals_float(diag: np.ndarray, resolution: float = 1e-13) -> np.ndarray:
    """All eigenvalues of tridiag(1, diag, 1) by simultaneous float bisection."""
    diag = np.asarray(diag, dtype=float)
    n = diag.size
    bound = np.max(np.abs(diag)) + 2.0
    lo = np.full(n, -bound - 1e-9)
    hi = np.full(n, bound + 1e-9)
    idx = np.arange(n)
    while np.max(hi - lo) > resolution:
        mid = 0.5 * (lo + hi)
        c = sturm_counts_float(diag, mid)
        below = c > idx  # the idx-th eigenvalue lies below mid
        hi = np.where(below, mid, hi)
        lo = np.where(below, lo, mid)
        if np.all((hi - lo) <= resolution) or np.all(mid == lo) or np.all(mid == hi):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- float sweeps


def logdet_phases(lam: float, energy: float, freq: Frequency, k: int, phases: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sign and log|P_k| at many float phases (sites 0..k-1), renormalized."""
    phases = np.asarray(phases, dtype=float)
    prev = np.zeros_like(phases)
    cur = np.ones_like(phases)
    scale = np.zeros_like(phases)
    E = float(energy)
    for n in range(k):
        shift = float(freq.frac_multiple(n))
        d = 2.0 * lam * np.cos(2.0 * np.pi * (phases + shift)) - E
        prev, cur = cur, d * cur - prev
        mag = np.abs(cur)
        big = (mag > _HI) | ((mag < _LO) & (mag > 0))
        if big.any():
            m = np.where(big, mag, 1.0)
            prev = prev / m
            cur = cur / m
            scale = scale + np.log(m)
    sign = np.sign(cur)
    with np.errstate(divide="ignore"):
        logmag = np.log(np.abs(cur)) + scale
    return sign, logmag


@dataclass(frozen=True)
class SupLogdet:
    value: float
    coarse: float
    grid_size: int

    @property
    def refinement_change(self) -> float:
        return abs(self.value - self.coarse)


def sup_logdet(params: ModelParams, k: int, grid_size: int | None = None) -> SupLogdet:
    """max over a uniform theta grid of (1/k) log|P_k(theta)|, with one doubling."""
    grid_size = grid_size or 4 * k
    if grid_size < 4 * k:
        raise ValueError("grid_size must be >= 4k")
    vals = []
    for g in (grid_size, 2 * grid_size):
        _, lm = logdet_phases(params.lam, float(params.energy), params.freq, k, np.arange(g) / g)
        vals.append(float(np.max(lm)) / k)
    return SupLogdet(vals[1], vals[0], 2 * grid_size)


# ---------------------------------------------------------------- Lyapunov


@dataclass(frozen=True)
class LyapunovResult:
    running: np.ndarray  # running estimate after each step, shape (N,) or (N, m)
    estimate: np.ndarray
    last_quarter: np.ndarray
    det_log_residual: float  # max |sum log r11 + sum log r22| over the run


def lyapunov(params: ModelParams, N: int, energies=None, start: int = 0) -> LyapunovResult:
    """Growth rate of the transfer product [[E - v(n), -1], [1, 0]] via QR re-orthonormalization.

    Accepts several energies at once (vectorized); the diagonal of R is
    accumulated in log form, so log|det| of the product is tracked exactly.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    E = np.atleast_1d(np.asarray(params.energy if energies is None else energies, dtype=float))
    v = potential_float(params, np.arange(start, start + N))
    m = E.size
    Q = np.broadcast_to(np.eye(2), (m, 2, 2)).copy()
    log_r11 = np.zeros(m)
    log_r22 = np.zeros(m)
    running = np.empty((N, m))
    det_res = 0.0
    for n in range(N):
        a = E - v[n]
        # A @ Q with A = [[a, -1], [1, 0]]
        M0 = a[:, None] * Q[:, 0, :] - Q[:, 1, :]
        M1 = Q[:, 0, :].copy()
        # Gram-Schmidt on the columns of M = [[M0], [M1]]
        c0 = np.stack([M0[:, 0], M1[:, 0]], axis=1)
        c1 = np.stack([M0[:, 1], M1[:, 1]], axis=1)
        r11 = np.linalg.norm(c0, axis=1)
        e0 = c0 / r11[:, None]
        r12 = np.sum(e0 * c1, axis=1)
        w = c1 - r12[:, None] * e0
        r22 = np.linalg.norm(w, axis=1)
        e1 = w / r22[:, None]
        Q = np.stack([np.stack([e0[:, 0], e1[:, 0]], axis=1), np.stack([e0[:, 1], e1[:, 1]], axis=1)], axis=1)
        log_r11 += np.log(r11)
        log_r22 += np.log(r22)
        running[n] = log_r11 / (n + 1)
        det_res = max(det_res, float(np.max(np.abs(log_r11 + log_r22))))
    q = max(1, N // 4)
    return LyapunovResult(running, running[-1], running[-q:].mean(axis=0), det_res)


# ---------------------------------------------------------------- outputs


def sweep_csv_rows(params: ModelParams, k: int, thetas: np.ndarray):
    sign, lm = logdet_phases(params.lam, float(params.energy), params.freq, k, thetas)
    for th, s, l in zip(thetas, sign, lm):
        yield {
            "k": k,
            "theta": repr(float(th)),
            "E": repr(float(params.energy)),
            "sign": int(s),
            "logmag": repr(float(l)),
            "normalized_logmag": repr(float(l) / k),
        }


CACHE_HEADER = b"AMODET1\n"


def save_det_sequence(seq: DetSequence, path: Path) -> None:
    doc = {
        "lam": seq.params.lam,
        "freq": json.loads(seq.params.freq.to_json()),
        "theta_kind": seq.params.theta_kind,
        "energy": str(seq.params.energy),
        "half_start": seq.half_start,
        "bits": max((v.logmag.precision for v in seq.values if isinstance(v.logmag, mpfr)), default=53),
        "values": [[v.sign, str(v.logmag)] for v in seq.values],
    }
    Path(path).write_bytes(CACHE_HEADER + json.dumps(doc).encode())


def load_det_sequence(path: Path) -> DetSequence:
    raw = Path(path).read_bytes()
    if not raw.startswith(CACHE_HEADER):
        raise ValueError("not an AMODET1 cache file")
    doc = json.loads(raw[len(CACHE_HEADER):])
    freq = Frequency.from_json(json.dumps(doc["freq"]))
    with working(doc["bits"]):
        params = ModelParams(doc["lam"], freq, doc["theta_kind"], mpfr(doc["energy"]))
        values = tuple(LogSigned(s, mpfr(l) if s else -math.inf) for s, l in doc["values"])
    return DetSequence(params, doc["half_start"], values)
