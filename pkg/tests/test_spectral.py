import math

import gmpy2
import numpy as np
import pytest

from amolab.cfrac import Frequency
from amolab.detkernel import ModelParams, potential_float, sturm_count
from amolab.spectral import (
    EigenPair,
    LevelTooDeep,
    NotLocalized,
    central_pairs,
    decay_fit,
    decay_profile,
    eigen_solve,
    half_peak_check,
    is_localized,
    peak_bound_check,
    peak_level,
    profile_csv,
    spectrum_sample,
    sturm_eigenvalues,
)
from amolab.xprec import working

GOLD = Frequency.golden(30)
P3 = ModelParams(3.0, GOLD, "0")


def dense_eigs(params, N):
    d = potential_float(params, np.arange(-N, N + 1))
    return np.linalg.eigvalsh(np.diag(d) + np.eye(2 * N + 1, k=1) + np.eye(2 * N + 1, k=-1))


@pytest.fixture(scope="module")
def golden_central():
    return central_pairs(P3, 200, 6)


def test_free_laplacian():
    N = 12
    pairs = eigen_solve(ModelParams(0.0, GOLD, "0"), N)
    exact = sorted(2 * math.cos(math.pi * m / (2 * N + 2)) for m in range(1, 2 * N + 2))
    assert np.max(np.abs(np.array([float(p.energy) for p in pairs]) - exact)) < 1e-12


@pytest.mark.parametrize("kind", ["0", "1/2", "a/2", "a/2+1/2"])
def test_eigen_solve_against_dense(kind):
    p = ModelParams(3.0, GOLD, kind)
    N = 30
    pairs = eigen_solve(p, N)
    assert len(pairs) == 2 * N + 1
    assert np.max(np.abs(np.array([float(q.energy) for q in pairs]) - dense_eigs(p, N))) < 1e-10
    assert max(q.residual for q in pairs) <= 1e-20
    V = np.array([[float(x) for x in q.vector] for q in pairs])
    V /= np.linalg.norm(V, axis=1)[:, None]
    G = V @ V.T
    assert np.max(np.abs(G - np.eye(len(pairs)))) < 1e-8


def test_window_count_matches_sturm():
    N = 25
    for lo, hi in [(-3.0, 1.5), (0.2, 0.9), (-7.9, -7.8)]:
        pairs = eigen_solve(P3, N, (lo, hi))
        assert len(pairs) == sturm_count(P3, N, hi) - sturm_count(P3, N, lo)
        assert all(lo <= p.energy <= hi for p in pairs)


def test_eigen_solve_preconditions():
    with pytest.raises(ValueError):
        eigen_solve(P3, 4)
    with pytest.raises(ValueError):
        eigen_solve(P3, 10, (-20.0, 0.0))


def test_sturm_eigenvalues_tolerance():
    N = 15
    ev = sturm_eigenvalues(P3, N, tol=1e-30)
    with working():
        for e in ev[::5]:
            assert sturm_count(P3, N, e - gmpy2.mpfr("1e-29")) + 1 == sturm_count(P3, N, e + gmpy2.mpfr("1e-29"))


def test_spectrum_sample_bounds_and_size():
    ev = spectrum_sample(P3, 40)
    assert ev.size == 81
    assert ev.min() >= -8 and ev.max() <= 8
    assert np.all(np.diff(ev) >= 0)


def test_nested_boxes():
    # localized eigenvalues of a box reappear, up to exponentially small shifts, in a larger box
    small, big = spectrum_sample(P3, 60), spectrum_sample(P3, 120)
    c = np.abs(small[:, None] - big[None, :]).min(axis=1)
    assert np.median(c) < 1e-12


def test_central_pairs_are_normalized(golden_central):
    assert len(golden_central) >= 5
    for p in golden_central:
        with working():
            assert max(abs(x) for x in p.vector) == 1
        assert p.at(p.center) == 1
        assert is_localized(p)


def test_profile_r0_and_decrease(golden_central):
    pair = golden_central[0]
    n = peak_level(GOLD, pair.center, pair.N)
    prof = decay_profile(pair, GOLD, n)
    assert prof.log_r(0) == pytest.approx(0.0, abs=1e-12)
    q = prof.q_n
    for ell in (1, 2, 3):
        if (2 * ell) in prof.peaks and not prof.peaks[2 * ell].clipped:
            # geometric decay at about ln(lambda) per site
            assert prof.log_r(2 * ell) < prof.log_r(2 * (ell - 1))
            assert prof.log_r(2 * ell) <= -(math.log(3) - 0.3) * ell * q


def test_profile_level_too_deep(golden_central):
    with pytest.raises(LevelTooDeep):
        decay_profile(golden_central[0], GOLD, GOLD.level_for(500))
    with pytest.raises(LevelTooDeep):
        peak_level(GOLD, 0, 60)


def test_peak_level_rule():
    n = peak_level(GOLD, 3, 400)
    q = GOLD.q(n)
    assert q >= 50 and math.floor(0.1 * q) >= 3
    assert 2 * q <= 400


def test_half_peak_golden_passes(golden_central):
    for pair in golden_central:
        n = peak_level(GOLD, pair.center, pair.N)
        prof = decay_profile(pair, GOLD, n)
        h = half_peak_check(prof, P3, 0.0)
        b = peak_bound_check(prof, P3, 0.0)
        assert h.all_pass and b.all_pass
        assert h.c_meas <= 50 and b.c_meas <= 50


def _fake_pair(values, N):
    with working():
        vec = tuple(gmpy2.mpfr(float(v)) for v in values)
    return EigenPair(gmpy2.mpfr(0), vec, N, 0.0)


def test_half_peak_negative_control():
    N = 200
    rng = np.random.default_rng(3)
    vals = rng.uniform(0.5, 1.0, 2 * N + 1)
    prof = decay_profile(_fake_pair(vals, N), GOLD, GOLD.level_for(55))
    assert not half_peak_check(prof, P3, 0.0).all_pass


def test_half_peak_underflow_row():
    N = 200
    vals = np.zeros(2 * N + 1)
    vals[N - 3 : N + 4] = 1.0  # support only around the origin
    vals[N + 55 - 3 : N + 55 + 4] = 1e-30
    vals[N - 55 - 3 : N - 55 + 4] = 1e-30
    prof = decay_profile(_fake_pair(vals, N), GOLD, GOLD.level_for(55))
    rows = half_peak_check(prof, P3, 0.0).rows
    assert any(r["status"] == "pass by underflow" for r in rows)


def test_profile_csv(golden_central):
    pair = golden_central[0]
    prof = decay_profile(pair, GOLD, peak_level(GOLD, pair.center, pair.N))
    lines = profile_csv(prof, P3, 0.0).splitlines()
    assert lines[0] == "ell_times_2,site_center,r_value,log_r,bound_rhs"
    assert len(lines) == len(prof.peaks) + 1


def test_decay_fit_golden(golden_central):
    for pair in golden_central:
        fit = decay_fit(pair, P3)
        assert fit.beta_est < 1e-3
        assert fit.tail <= -math.log(3) + 0.1
        assert fit.windows[-1][1] <= pair.N
        assert '"tail"' in fit.to_json()


def test_decay_fit_subcritical_not_localized():
    p = ModelParams(0.5, GOLD, "0")
    pairs = eigen_solve(p, 60, (-0.2, 0.2))
    assert pairs
    for pair in pairs:
        with pytest.raises(NotLocalized):
            decay_fit(pair, p)
