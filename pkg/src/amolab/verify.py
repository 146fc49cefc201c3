"""The invariant suite behind ``amolab verify`` and the acceptance tests.

Each check draws from its own random stream ``default_rng([seed, check_id])``,
so results do not depend on how jobs are scheduled.  Metrics hold no
timings, which keeps verdicts byte-identical across runs.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from amolab.cfrac import (
    DigitBudgetExceeded,
    Frequency,
    beta_estimate,
    build_liouville,
)
from amolab.detkernel import THETA_KINDS, ModelParams, lyapunov, potential_float, sturm_count, sup_logdet
from amolab.green import IntervalSpec, ResonantInterval, block_expand_residual, green_cramer, green_direct
from amolab.interp import ThetaSet, UniformityViolation, desk_n0, herman_check, theta_set_i12, uniformity_witness
from amolab.xprec import default_bits
from amolab.spectral import decay_study, eigen_solve, spectral_energies, sturm_eigenvalues

KINDS = tuple(THETA_KINDS)

FULL = {
    "cf_frequencies": 1000,
    "cf_depth": 25,
    "betas": (0.2, 0.5, 1.0),
    "green_instances": 1000,
    "green_kmax": 300,
    "block_vectors": 50,
    "block_intervals": 20,
    "sup_lams": (3.0, 10.0),
    "sup_ks": (100, 200, 500),
    "sup_energies": 30,
    "uniform_draws": 100,
    "uniform_kmax": 60,
    "lyap_energies": 10,
    "lyap_steps": 10_000,
    "decay_N": 400,
    "decay_radius": 8,
    "decay_min": (10, 5),
    "dense_draws": 100,
    "dense_Nmax": 60,
}

QUICK = {
    "cf_frequencies": 100,
    "cf_depth": 25,
    "betas": (0.2, 0.5),
    "green_instances": 60,
    "green_kmax": 120,
    "block_vectors": 8,
    "block_intervals": 5,
    "sup_lams": (3.0,),
    "sup_ks": (50, 100),
    "sup_energies": 4,
    "uniform_draws": 12,
    "uniform_kmax": 40,
    "lyap_energies": 3,
    "lyap_steps": 4000,
    "decay_N": 400,
    "decay_radius": 2,
    "decay_min": (3, 3),
    "dense_draws": 10,
    "dense_Nmax": 30,
}

SCALES = {"full": FULL, "quick": QUICK}


@dataclass(frozen=True)
class CheckResult:
    id: int
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "passed": self.passed, "metrics": self.metrics}


def _rng(seed: int, cid: int) -> np.random.Generator:
    return np.random.default_rng([seed, cid])


def _random_frequency(rng, depth_max: int, a_max: int = 50, depth_min: int = 1) -> Frequency:
    depth = int(rng.integers(depth_min, depth_max + 1))
    return Frequency.from_coeffs([int(a) for a in rng.integers(1, a_max + 1, depth)])


# ---------------------------------------------------------------- checks


def check_cf(sc: dict, seed: int) -> list[CheckResult]:
    rng = _rng(seed, 1)
    bad_det = bad_sandwich = 0
    for _ in range(sc["cf_frequencies"]):
        f = _random_frequency(rng, sc["cf_depth"])
        m = f.depth
        pm, qm = f.p(m), f.q(m)
        for n in range(1, m + 1):
            if f.p(n) * f.q(n - 1) - f.p(n - 1) * f.q(n) != (-1) ** (n - 1):
                bad_det += 1
        for n in range(m):
            gap = Fraction(abs(f.q(n) * pm - f.p(n) * qm), qm)
            if not Fraction(1, 2 * f.q(n + 1)) <= gap <= Fraction(1, f.q(n + 1)):
                bad_sandwich += 1
    ok = bad_det == 0 and bad_sandwich == 0
    return [CheckResult(1, "continued-fraction invariants", ok, {"det_failures": bad_det, "sandwich_failures": bad_sandwich})]


def check_liouville(sc: dict, seed: int) -> list[CheckResult]:
    rows = {}
    ok = True
    for beta in sc["betas"]:
        f = build_liouville(beta, None, seed_coeffs=(1,))
        levels = f.depth - 1
        est = float(beta_estimate(f).tail)
        good = levels >= 4 and abs(est - beta) <= 0.1 * beta
        row = {"levels": levels, "beta_hat": est, "passed": good}
        if levels < 4:
            try:
                build_liouville(beta, 4, seed_coeffs=(1,))
            except DigitBudgetExceeded as exc:
                row["reason"] = str(exc)
        rows[repr(beta)] = row
        ok = ok and good
    return [CheckResult(2, "Liouville construction", ok, rows)]


def check_green(sc: dict, seed: int) -> list[CheckResult]:
    rng = _rng(seed, 3)
    worst, sign_bad, done, singular = 0.0, 0, 0, 0
    while done < sc["green_instances"]:
        f = _random_frequency(rng, 25, 10, depth_min=20)
        lam = float(rng.uniform(0.5, 10.0))
        kind = KINDS[int(rng.integers(4))]
        E = float(rng.uniform(-2 - 2 * lam, 2 + 2 * lam))
        p = ModelParams(lam, f, kind, E)
        k = int(rng.integers(1, sc["green_kmax"] + 1))
        x1 = int(rng.integers(-300, 301))
        y = x1 + int(rng.integers(0, k))
        I = IntervalSpec(x1, k)
        try:
            a = green_direct(I, p, y)
            b = green_cramer(I, p, y)
        except ResonantInterval:
            singular += 1
            continue
        for u, v in zip(a, b):
            if u.sign != v.sign:
                sign_bad += 1
            elif u.sign:
                worst = max(worst, abs(float(u.logmag - v.logmag)))
        done += 1
    ok = worst <= 1e-8 and sign_bad == 0
    return [CheckResult(3, "Green oracle equivalence", ok, {"max_log_diff": worst, "sign_mismatches": sign_bad, "skipped_resonant": singular})]


BLOCK_GUARD_BITS = 64  # covers ||G_I|| up to the e^40 resonance threshold times k


def check_block(sc: dict, seed: int) -> list[CheckResult]:
    rng = _rng(seed, 4)
    N = 60
    bits = default_bits() + BLOCK_GUARD_BITS
    p = ModelParams(3.0, Frequency.golden(25), "0")
    pairs = eigen_solve(p, N, bits=bits)
    picks = np.sort(rng.choice(len(pairs), size=min(sc["block_vectors"], len(pairs)), replace=False))
    worst = 0.0
    for i in picks:
        pair = pairs[int(i)]
        pe = p.with_energy(pair.energy)
        got = 0
        while got < sc["block_intervals"]:
            k = int(rng.integers(1, 41))
            x1 = int(rng.integers(-N + 1, N - k + 1))
            try:
                r = block_expand_residual(pair.vector, -N, IntervalSpec(x1, k), pe, bits)
            except ResonantInterval:
                continue
            worst = max(worst, float(r))
            got += 1
    return [CheckResult(4, "block-expansion identity", worst <= 1e-20, {"max_residual": worst, "vectors": len(picks), "bits": bits})]


def _sweep_params(sc: dict, seed: int):
    f = Frequency.golden(30)
    for lam in sc["sup_lams"]:
        base = ModelParams(lam, f, "0")
        for E in spectral_energies(base, sc["sup_energies"], N=300, seed=seed + 1):
            yield base.with_energy(E)


def check_sup(sc: dict, seed: int) -> list[CheckResult]:
    worst = -math.inf
    for p in _sweep_params(sc, seed):
        for k in sc["sup_ks"]:
            worst = max(worst, sup_logdet(p, k).value - p.log_lam)
    return [CheckResult(5, "sup_logdet bound", worst <= 0.2, {"max_excess_over_log_lambda": worst})]


def check_herman(sc: dict, seed: int) -> list[CheckResult]:
    worst, fails = math.inf, 0
    for p in _sweep_params(sc, seed):
        for k in sc["sup_ks"]:
            h = herman_check(p, k)
            worst = min(worst, (h.value - k * p.log_lam) / k)
            fails += not h.passed
    return [CheckResult(6, "Herman bound", fails == 0, {"failures": fails, "min_per_site_excess": worst})]


def _uniform_draw(rng, sc, draw: int):
    f = Frequency.golden(25)
    kind = KINDS[draw % 4]
    base = ModelParams(3.0, f, kind)
    E = spectral_energies(base, 1, N=200, seed=int(rng.integers(1, 2**31)))[0]
    p = base.with_energy(E)
    if draw % 2:
        qn = (34, 55)[int(rng.integers(2))]
        n = f.level_for(qn)
        ts = theta_set_i12(p, n, 0, 1, desk_n0(f, n, 1, 0.01), 0.01)
    else:
        k = int(rng.integers(1, sc["uniform_kmax"] + 1))
        offsets = np.sort(rng.choice(200, size=k + 1, replace=False))
        ts = ThetaSet.from_offsets(p, offsets)
    return p, ts


def check_uniform(sc: dict, seed: int) -> list[CheckResult]:
    rng = _rng(seed, 7)
    violations, worst = 0, math.inf
    for d in range(sc["uniform_draws"]):
        p, ts = _uniform_draw(rng, sc, d)
        try:
            worst = min(worst, uniformity_witness(ts, p).margin)
        except UniformityViolation:
            violations += 1
    return [CheckResult(7, "uniformity witness", violations == 0, {"violations": violations, "min_best_margin": worst})]


def check_lyapunov(sc: dict, seed: int) -> list[CheckResult]:
    rows = {}
    ok = True
    for lam in sc["sup_lams"]:
        p = ModelParams(lam, Frequency.golden(30), "0")
        Es = spectral_energies(p, sc["lyap_energies"], N=300, seed=seed + 2)
        res = lyapunov(p, sc["lyap_steps"], Es)
        rel = float(np.max(np.abs(res.estimate - p.log_lam))) / p.log_lam
        rows[repr(lam)] = {"max_rel_error": rel, "det_log_residual": res.det_log_residual}
        ok = ok and rel <= 0.05
    return [CheckResult(8, "Lyapunov exponent", ok, rows)]


def check_decay(sc: dict, seed: int) -> list[CheckResult]:
    runs = {
        "golden": ModelParams(3.0, Frequency.golden(30), "0"),
        "beta=0.15": ModelParams(math.exp(0.6), build_liouville(0.15, None, seed_coeffs=(1,)), "0"),
    }
    m9, m10 = {}, {}
    ok9 = ok10 = True
    for (name, p), need in zip(runs.items(), sc["decay_min"]):
        recs = decay_study(p, sc["decay_N"], sc["decay_radius"])
        good = sum(r.tail <= r.target + 0.1 for r in recs)
        c = max([max(r.half_c, r.bound_c) for r in recs], default=0.0)
        m9[name] = {"localized": len(recs), "within_bound": good, "worst_tail_minus_target": max((r.tail - r.target for r in recs), default=None)}
        m10[name] = {"c_meas": c, "q_n": sorted({r.q_n for r in recs})}
        ok9 = ok9 and good >= need
        ok10 = ok10 and len(recs) > 0 and c <= 50.0
    return [CheckResult(9, "decay bound", ok9, m9), CheckResult(10, "peak inequalities", ok10, m10)]


def check_dense(sc: dict, seed: int) -> list[CheckResult]:
    rng = _rng(seed, 11)
    worst, count_bad = 0.0, 0
    for _ in range(sc["dense_draws"]):
        f = _random_frequency(rng, 25, 6, depth_min=20)
        lam = float(rng.uniform(0.5, 5.0))
        p = ModelParams(lam, f, KINDS[int(rng.integers(4))])
        N = int(rng.integers(5, sc["dense_Nmax"] + 1))
        d = potential_float(p, np.arange(-N, N + 1))
        dense = np.linalg.eigvalsh(np.diag(d) + np.eye(2 * N + 1, k=1) + np.eye(2 * N + 1, k=-1))
        ev = np.array([float(e) for e in sturm_eigenvalues(p, N, tol=1e-13)])
        if ev.size != dense.size:
            count_bad += 1
            continue
        worst = max(worst, float(np.max(np.abs(ev - dense))))
        for E in rng.uniform(-2 - 2 * lam, 2 + 2 * lam, 3):
            if sturm_count(p, N, float(E)) != int(np.sum(dense < E)):
                count_bad += 1
    ok = worst <= 1e-10 and count_bad == 0
    return [CheckResult(11, "Sturm vs dense oracle", ok, {"max_eigenvalue_diff": worst, "count_mismatches": count_bad})]


JOBS = (check_cf, check_liouville, check_green, check_block, check_sup, check_herman, check_uniform, check_lyapunov, check_decay, check_dense)


def _run_job(job, sc: dict, seed: int) -> tuple[list[CheckResult], float]:
    t0 = time.perf_counter()
    try:
        out = job(sc, seed)
    except Exception as exc:  # a crash is a failed check, recorded with its message
        out = [CheckResult(i, job.__name__, False, {"error": f"{type(exc).__name__}: {exc}"}) for i in _ids(job)]
    return out, time.perf_counter() - t0


def run_suite(scale: str = "quick", seed: int = 0, jobs: int = 1, only: tuple[int, ...] | None = None):
    """Run the checks; returns (results sorted by id, elapsed seconds per check id)."""
    sc = SCALES[scale]
    todo = [j for j in JOBS if only is None or any(i in only for i in _ids(j))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(_run_job, todo, [sc] * len(todo), [seed] * len(todo)))
    else:
        outs = [_run_job(j, sc, seed) for j in todo]
    results, elapsed = [], {}
    for res, dt in outs:
        for r in res:
            results.append(r)
            elapsed[r.id] = dt
    results.sort(key=lambda r: r.id)
    return results, elapsed


def _ids(job) -> tuple[int, ...]:
    if job is check_decay:
        return (9, 10)
    i = JOBS.index(job)
    return (i + 1,) if i < 8 else (11,)
