import math
from fractions import Fraction

import gmpy2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amolab.cfrac import Frequency
from amolab.detkernel import (
    THETA_KINDS,
    BoundaryCount,
    ModelParams,
    Unresolvable,
    box_diag,
    det_sequence,
    evenness_check,
    load_det_sequence,
    lyapunov,
    potential,
    potential_float,
    save_det_sequence,
    sturm_count,
    sup_logdet,
    sweep_csv_rows,
    window_check,
)
from amolab.spectral import spectral_energies
from amolab.xprec import LogSigned, working

GOLD = Frequency.golden(30)
KINDS = sorted(THETA_KINDS)


def dense(params, N):
    d = potential_float(params, np.arange(-N, N + 1))
    return np.diag(d) + np.diag(np.ones(2 * N), 1) + np.diag(np.ones(2 * N), -1)


def test_potential_theta_zero_and_half():
    assert potential(0, ModelParams(3.0, GOLD, "0")) == 6
    assert potential(0, ModelParams(3.0, GOLD, "1/2")) == -6


def test_potential_half_alpha_matches_256_bit_cosine():
    p = ModelParams(3.0, GOLD, "a/2")
    got = potential(-1, p)
    with working(256):
        a = gmpy2.mpfr(GOLD.alpha.numerator) / GOLD.alpha.denominator
        ref = 6 * gmpy2.cos(gmpy2.const_pi() * a)
    assert abs(got - ref) < 1e-35


def test_potential_beyond_deepest_convergent_raises():
    p = ModelParams(3.0, Frequency.golden(8), "0")
    with pytest.raises(Unresolvable):
        potential(40, p)


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(3.0, GOLD, "1/3")
    with pytest.raises(ValueError):
        ModelParams(-1.0, GOLD, "0")


def test_det_sequence_small_blocks():
    p = ModelParams(3.0, GOLD, "a/2", 0.37)
    seq = det_sequence(p, 4, 2)
    v4, v5 = float(potential(4, p)), float(potential(5, p))
    assert seq[0] == LogSigned(1, 0)
    assert seq[1].to_float() == pytest.approx(v4 - 0.37, rel=1e-14)
    assert seq[2].to_float() == pytest.approx((v5 - 0.37) * (v4 - 0.37) - 1, rel=1e-12)


def test_det_sequence_lemma_bound_k50():
    p = ModelParams(3.0, GOLD, "0")
    for E in spectral_energies(p, 5, N=200):
        seq = det_sequence(p.with_energy(E), -25, 50)
        assert float(seq[50].logmag) / 50 <= math.log(3) + 0.2


@pytest.mark.parametrize("kind", KINDS)
def test_det_sequence_matches_dense_minors(kind):
    rng = np.random.default_rng(1)
    p = ModelParams(2.5, GOLD, kind, float(rng.uniform(-4, 4)))
    x1 = -5
    seq = det_sequence(p, x1, 12)
    d = potential_float(p, np.arange(x1, x1 + 12)) - float(p.energy)
    for k in range(1, 13):
        M = np.diag(d[:k]) + np.diag(np.ones(k - 1), 1) + np.diag(np.ones(k - 1), -1)
        ref = np.linalg.det(M)
        assert seq[k].sign == int(np.sign(ref))
        assert float(seq[k].logmag) == pytest.approx(math.log(abs(ref)), abs=1e-9)


def test_det_sequence_no_overflow_at_large_k():
    p = ModelParams(3.0, GOLD, "0", 0.1)
    seq = det_sequence(p, 0, 2000)
    assert math.isfinite(float(seq[2000].logmag))
    assert float(seq[2000].logmag) > 700  # far beyond double range


def test_window_check_recursion_consistency():
    p = ModelParams(3.0, GOLD, "1/2", -0.4)
    seq = det_sequence(p, -100, 400)
    for start in (1, 50, 200, 369):
        ok, worst = window_check(seq, start)
        assert ok
        assert worst < 1e-6 * max(1.0, float(abs(seq[start + 30].logmag)))


def test_evenness_examples():
    p = ModelParams(3.0, GOLD, "0", 0.5)
    assert evenness_check(p, 1, 16) < 1e-30
    assert evenness_check(p, 5, 64) < 1e-20


@pytest.mark.parametrize("lam", [0.5, 3.0])
def test_sturm_bounds(lam):
    p = ModelParams(lam, GOLD, "0")
    N = 15
    assert sturm_count(p, N, -2 - 2 * lam - 1e-6) == 0
    assert sturm_count(p, N, 2 + 2 * lam + 1e-6) == 2 * N + 1


def test_sturm_example_against_dense():
    p = ModelParams(3.0, GOLD, "0")
    ev = np.linalg.eigvalsh(dense(p, 10))
    assert sturm_count(p, 10, 0.0) == int(np.sum(ev < 0))


@given(
    st.floats(0.1, 12),
    st.sampled_from(KINDS),
    st.integers(5, 60),
    st.floats(-1, 1),
)
@settings(max_examples=100, deadline=None)
def test_sturm_count_matches_dense(lam, kind, N, u):
    p = ModelParams(lam, GOLD, kind)
    E = u * (2 + 2 * lam)
    ev = np.linalg.eigvalsh(dense(p, N))
    if np.min(np.abs(ev - E)) < 1e-9:
        return
    assert sturm_count(p, N, E) == int(np.sum(ev < E))


@given(st.floats(-8, 8), st.floats(0, 2))
@settings(max_examples=50, deadline=None)
def test_sturm_count_monotone(E, dE):
    p = ModelParams(3.0, GOLD, "a/2+1/2")
    try:
        assert sturm_count(p, 20, E) <= sturm_count(p, 20, E + dE)
    except BoundaryCount:
        pass


def test_sturm_boundary_flag():
    # v(0) = 2 lam for theta = 0; a 1-site-wide pivot hits zero at E = v(-1)
    p = ModelParams(3.0, GOLD, "0")
    E = box_diag(p, 5)[0]
    with pytest.raises(BoundaryCount):
        sturm_count(p, 5, E)


@pytest.mark.parametrize("lam", [3.0, 10.0])
def test_lyapunov_is_log_lambda(lam):
    p = ModelParams(lam, GOLD, "0")
    energies = spectral_energies(p, 10, N=100)
    res = lyapunov(p, 10_000, energies)
    assert np.all(np.abs(res.estimate / math.log(lam) - 1) < 0.05)
    assert res.det_log_residual < 1e-10 * 10_000 * math.log(lam)


def test_lyapunov_far_outside_spectrum():
    p = ModelParams(3.0, GOLD, "0")
    small, big = lyapunov(p, 2000, [1e3, 1e4]).estimate
    assert small == pytest.approx(math.log(1e3), abs=0.01)
    assert big > small


def test_sup_logdet_examples():
    p = ModelParams(3.0, GOLD, "0")
    E = spectral_energies(p, 3, N=300)[1]
    r = sup_logdet(p.with_energy(E), 200)
    assert r.value <= math.log(3) + 0.1
    r100 = sup_logdet(p.with_energy(E), 100)
    assert r100.refinement_change < 1e-3
    one = sup_logdet(p.with_energy(E), 1)
    assert one.value == pytest.approx(math.log(6 + abs(E)), abs=1e-2)
    with pytest.raises(ValueError):
        sup_logdet(p, 10, grid_size=10)


def test_sweep_rows_columns():
    p = ModelParams(3.0, GOLD, "0", 0.2)
    rows = list(sweep_csv_rows(p, 10, np.array([0.0, 0.25])))
    assert list(rows[0]) == ["k", "theta", "E", "sign", "logmag", "normalized_logmag"]
    assert float(rows[1]["normalized_logmag"]) == pytest.approx(float(rows[1]["logmag"]) / 10)


def test_det_cache_roundtrip(tmp_path):
    p = ModelParams(3.0, GOLD, "a/2", gmpy2.mpfr("0.125"))
    seq = det_sequence(p, -7, 40)
    path = tmp_path / "seq.bin"
    save_det_sequence(seq, path)
    assert path.read_bytes().startswith(b"AMODET1\n")
    back = load_det_sequence(path)
    assert back.half_start == seq.half_start
    assert [(v.sign, v.logmag) for v in back.values] == [(v.sign, v.logmag) for v in seq.values]
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_det_sequence(bad)


def test_logsigned_invariant():
    with pytest.raises(ValueError):
        LogSigned(0, 1.0)
    with pytest.raises(ValueError):
        LogSigned(1, -math.inf)
    a, b = LogSigned.from_value(-3.0), LogSigned.from_value(2.0)
    assert (a * b).to_float() == pytest.approx(-6.0)
    assert (a / b).to_float() == pytest.approx(-1.5)
    assert (LogSigned.from_value(0) * a).sign == 0


@given(st.fractions(Fraction(-3), Fraction(3)).filter(lambda x: x != 0))
def test_logsigned_roundtrip(x):
    assert LogSigned.from_value(float(x)).to_float() == pytest.approx(float(x), rel=1e-14)
