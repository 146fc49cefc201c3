import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amolab.cfrac import Frequency
from amolab.detkernel import THETA_KINDS, ModelParams, det_at_phase
from amolab.interp import (
    DuplicateNodes,
    ThetaSet,
    UniformityViolation,
    desk_n0,
    herman_check,
    la_brute,
    la_terms,
    lagrange_eval,
    shifted_phase,
    sin_product_bound,
    theta_set_i12,
    theta_set_j123,
    uniformity_witness,
)
from amolab.spectral import central_pairs, spectral_energies
from amolab.xprec import working

GOLD = Frequency.golden(25)
P3 = ModelParams(3.0, GOLD, "0")


def brute(nodes, points=100_001):
    """Independent float oracle: dense uniform scan of every Lagrange basis polynomial."""
    x = np.linspace(-1, 1, points)
    out = []
    for i, c in enumerate(nodes):
        others = np.delete(nodes, i)
        num = np.log(np.abs(x[:, None] - others[None, :])).sum(axis=1).max()
        out.append(num - np.log(np.abs(c - others)).sum())
    return np.array(out)


def test_la_two_points():
    ts = ThetaSet.custom([Fraction(1, 4), Fraction(0)])  # nodes 0 and 1
    la = la_terms(ts)
    assert la.values[0] == pytest.approx(math.log(2), abs=1e-12)
    assert la.x_star[0] == pytest.approx(-1.0)
    assert la.values[1] == pytest.approx(0.0, abs=1e-12)


@given(st.fractions(Fraction(1, 100), Fraction(24, 100)))
def test_la_symmetric_pair(th):
    # cos 2 pi (1/2 - th) = -cos 2 pi th
    la = la_terms(ThetaSet.custom([th, Fraction(1, 2) - th]))
    assert la.values[0] == pytest.approx(la.values[1], abs=1e-12)


def test_la_random_twelve_against_brute():
    rng = np.random.default_rng(12)
    phases = [Fraction(int(v), 10**9) for v in rng.integers(1, 5 * 10**8, 12)]
    ts = ThetaSet.custom(phases)
    la = la_terms(ts)
    assert np.max(np.abs(la.values - brute(ts.nodes()))) < 1e-6
    assert np.max(np.abs(la.values - la_brute(ts))) < 1e-6


@pytest.mark.parametrize("k", range(1, 9))
def test_la_chebyshev_closed_form(k):
    m = k + 1
    ts = ThetaSet.custom([Fraction(2 * j + 1, 4 * m) for j in range(m)])
    la = la_terms(ts)
    nodes = ts.nodes()
    phi = np.arccos(nodes)
    # |l_i(+1)| = cot(phi_i / 2) / m and |l_i(-1)| = tan(phi_i / 2) / m
    ends = np.log(np.maximum(1 / np.tan(phi / 2), np.tan(phi / 2)) / m)
    assert np.all(la.values >= ends - 1e-12)
    outer = [int(np.argmax(nodes)), int(np.argmin(nodes))]
    closed = math.log(1 / math.tan(math.pi / (4 * m)) / m)
    for i in outer:
        assert la.values[i] == pytest.approx(closed, abs=1e-9)
        assert abs(la.x_star[i]) == pytest.approx(1.0)


def test_theta_set_rejects_duplicates():
    with pytest.raises(DuplicateNodes):
        ThetaSet.custom([Fraction(1, 5), Fraction(4, 5)])
    with pytest.raises(DuplicateNodes):
        ThetaSet.custom([Fraction(1, 5), Fraction(1, 5) + Fraction(1, 10**40)])
    with pytest.raises(DuplicateNodes):
        ThetaSet.from_offsets(P3, [3, -3])  # theta = 0 mirrors m and -m
    with pytest.raises(DuplicateNodes):
        ThetaSet.from_offsets(ModelParams(3.0, GOLD, "a/2"), [2, -3])  # mirror m and -m-1
    with pytest.raises(ValueError):
        ThetaSet.custom([Fraction(1, 7)])


def test_theta_set_diff_matches_cosines():
    ts = ThetaSet.custom([Fraction(1, 7), Fraction(2, 9), Fraction(5, 11)])
    nodes = ts.nodes()
    with working():
        assert float(ts.diff(0, 2)) == pytest.approx(nodes[0] - nodes[2], rel=1e-14)


def test_la_csv_and_ratios():
    f = GOLD
    n = f.level_for(34)
    ts = theta_set_i12(P3, n, 0, 1, desk_n0(f, n, 1, 0.01), 0.01)
    la = la_terms(ts)
    csv = la.to_csv().splitlines()
    assert csv[0] == "i,theta_residue,cos_value,La_i,x_star"
    assert len(csv) == len(ts) + 1
    assert set(la.ratios(f.q(n))) == {"I1", "I2"}


def test_index_set_shapes():
    f = GOLD
    n = f.level_for(55)
    n0 = desk_n0(f, n, 1, 0.01)
    qp = f.q(n - n0)
    assert qp <= (1 / 6 - 0.02) * f.q(n)
    ts = theta_set_i12(P3, n, 0, 1, n0, 0.01)
    assert ts.labels.count("I1") == 2 * qp and ts.labels.count("I2") == 2 * qp
    tj = theta_set_j123(ModelParams(3.0, f, "a/2"), n, 1, 1, n0)
    assert tj.labels.count("J3") == 4 * qp and tj.labels.count("J2") == 2 * qp


def test_uniformity_k1_by_hand():
    p = P3.with_energy(0.4)
    ts = ThetaSet.custom([Fraction(1, 10), Fraction(3, 10)])
    w = uniformity_witness(ts, p)
    c = ts.nodes()
    la = [math.log((1 + abs(c[1 - i])) / abs(c[i] - c[1 - i])) for i in range(2)]
    logp = [math.log(abs(6 * ci - 0.4)) for ci in c]  # k = 1: no shift
    expect = [lp - (math.log(3) - li - math.log(2)) for lp, li in zip(logp, la)]
    assert np.allclose(w.margins, expect, atol=1e-9)
    assert w.index == int(np.argmax(expect))


@pytest.mark.parametrize("kind", sorted(THETA_KINDS))
def test_uniformity_holds_for_spectral_energies(kind):
    base = ModelParams(3.0, GOLD, kind)
    rng = np.random.default_rng(7)
    for E in spectral_energies(base, 6, N=200, seed=3):
        p = base.with_energy(E)
        for _ in range(3):
            k = int(rng.integers(1, 61))
            offsets = np.sort(rng.choice(200, size=k + 1, replace=False))
            uniformity_witness(ThetaSet.from_offsets(p, offsets), p)


def test_i12_witness_in_second_block():
    # the dichotomy: the best node lies in I2 for central eigenfunction energies
    for kind in ("0", "a/2"):
        base = ModelParams(3.0, GOLD, kind)
        for pair in central_pairs(base, 120, 2):
            p = base.with_energy(pair.energy)
            for qn in (34, 55):
                n = GOLD.level_for(qn)
                ts = theta_set_i12(p, n, 0, 1, desk_n0(GOLD, n, 1, 0.01), 0.01)
                assert uniformity_witness(ts, p).label == "I2"


def test_far_energy_still_satisfies_inequality():
    # far outside the spectrum every |P_k| is huge, so the inequality holds trivially
    p = P3.with_energy(1e3)
    ts = ThetaSet.from_offsets(p, range(10))
    assert uniformity_witness(ts, p).margin > 0


def test_uniformity_violation_carries_margins():
    p = P3.with_energy(spectral_energies(P3, 1, N=200)[0])
    ts = ThetaSet.from_offsets(p, range(21))
    with pytest.raises(UniformityViolation) as err:
        uniformity_witness(ts, p, rate=5.0)  # demand growth far above ln(lambda)
    assert len(err.value.margins) == 21


def test_uniformity_k_mismatch():
    ts = ThetaSet.custom([Fraction(1, 10), Fraction(3, 10)])
    with pytest.raises(ValueError):
        uniformity_witness(ts, P3, k=3)


@pytest.mark.parametrize("k", [4, 11, 20])
def test_lagrange_reconstruction(k):
    # P_k(theta - (k-1) alpha / 2) is a degree-k polynomial in cos 2 pi theta
    p = P3.with_energy(spectral_energies(P3, 3, N=200)[1])
    m = k + 1
    nodes_th = [Fraction(2 * j + 1, 4 * m) for j in range(m)]
    rng = np.random.default_rng(k)
    held = [Fraction(int(v), 10**9) for v in rng.integers(0, 10**9, 50)]

    def value(th):
        with working():
            return det_at_phase(p, shifted_phase(th, k, GOLD), k).to_float()

    xs = [math.cos(2 * math.pi * float(t)) for t in nodes_th]
    ys = [value(t) for t in nodes_th]
    scale = max(abs(v) for v in ys)
    for th in held:
        got = lagrange_eval(xs, ys, math.cos(2 * math.pi * float(th)))
        assert abs(got - value(th)) <= 1e-6 * scale


def test_herman_k1_equality_case():
    h = herman_check(P3.with_energy(0.0), 1)
    assert h.passed
    assert h.jittered > 0  # theta = 1/4 is an exact zero of 6 cos 2 pi theta
    # the jittered log singularity costs O(log m / m); a dense rule recovers ln(lambda)
    dense = herman_check(P3.with_energy(0.0), 1, quad_points=2**16)
    assert dense.value == pytest.approx(math.log(3), abs=1e-3)


@pytest.mark.parametrize("lam", [3.0, 10.0])
def test_herman_spectral(lam):
    base = ModelParams(lam, Frequency.golden(30), "0")
    for E in spectral_energies(base, 3, N=300):
        for k in (20, 50, 100, 200):
            assert herman_check(base.with_energy(E), k).passed


def test_herman_refinement():
    p = P3.with_energy(spectral_energies(P3, 3, N=300)[2])
    a = herman_check(p, 100)
    b = herman_check(p, 100, quad_points=3200)
    assert abs(a.value - b.value) < 1e-3 * 100
    with pytest.raises(ValueError):
        herman_check(p, 100, quad_points=100)


def test_sin_product_two_terms():
    f = Frequency.golden(25)
    n = f.level_for(2)
    assert f.q(n) == 2
    r = sin_product_bound(Fraction(1, 4), f, n)
    a = abs(math.sin(math.pi / 4))
    b = abs(math.sin(math.pi * (0.25 + float(f.alpha))))
    assert r.ell0 == (0 if a < b else 1)
    assert r.total == pytest.approx(math.log(max(a, b)), abs=1e-14)
    assert r.centered == pytest.approx(math.log(max(a, b)) + math.log(2), abs=1e-14)


def test_sin_product_constant_bounded():
    f = Frequency.golden(25)
    rng = np.random.default_rng(15)
    worst = 0.0
    for n in range(f.level_for(3), f.level_for(610) + 1):
        for x in rng.uniform(0, 1, 70):
            worst = max(worst, sin_product_bound(float(x), f, n).c_emp)
    assert worst <= 10


def test_sin_product_exact_zero_excluded():
    f = Frequency.golden(25)
    n = f.level_for(89)
    x = 1 - f.frac_multiple(7)
    r = sin_product_bound(x, f, n)
    assert r.ell0 == 7
    assert math.isfinite(r.total)
