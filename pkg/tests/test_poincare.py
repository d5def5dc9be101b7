import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treepoincare.errors import InputError, ResourceCapError
from treepoincare.group_core import enumerate_ball, inverse, multiply
from treepoincare.poincare import (SlowGrowthTheta, critical_exponent, double_series, patterson_theta,
                                   poincare_series, slow_growth_audit, sphericity_ratio)
from treepoincare.posdef import make_oracle

DELTA = math.log(3)
ONE = make_oracle("trivial")
DIRAC = make_oracle("dirac")


def closed_form_trivial(sigma):
    # 1 + sum_m 4 * 3^{m-1} 3^{-sigma m}
    r = 3.0 ** (1 - sigma)
    return 1 + 4 * 3.0 ** -sigma / (1 - r)


# ---------------------------------------------------------------- single series

def test_trivial_series_closed_form():
    sv = poincare_series(ONE, 2.0, 40)
    assert sv.partial == pytest.approx(5 / 3, abs=1e-12)
    assert sv.tail_bound < 1e-9
    assert abs(sv.upper - 5 / 3) < 1e-9


@given(st.floats(1.1, 4.0))
def test_trivial_series_matches_geometric_sum(sigma):
    sv = poincare_series(ONE, sigma, 400)
    assert sv.partial <= closed_form_trivial(sigma) * (1 + 1e-12)
    assert sv.upper >= closed_form_trivial(sigma) * (1 - 1e-12)


def test_dirac_series_is_one():
    for sigma in (0.1, 1.0, 3.0):
        sv = poincare_series(DIRAC, sigma)
        assert sv.partial == 1.0 and not sv.diverged


def test_haagerup_threshold():
    h = make_oracle("haagerup", s=0.75)
    assert not poincare_series(h, 0.8).diverged
    assert poincare_series(h, 0.7).diverged
    assert poincare_series(h, 0.7).tail_bound == math.inf


def test_series_rejects_nonpositive_sigma():
    with pytest.raises(InputError):
        poincare_series(ONE, 0.0)


@given(st.floats(0.8, 3.0), st.floats(0.0, 1.0))
def test_series_decreases_in_sigma(sigma, gap):
    h = make_oracle("haagerup", s=0.75)
    a = poincare_series(h, sigma + gap, 60)
    b = poincare_series(h, sigma, 60)
    assert a.partial <= b.partial * (1 + 1e-12)


@given(st.integers(2, 60))
def test_partial_sums_increase_with_truncation(m):
    h = make_oracle("haagerup", s=0.6)
    assert poincare_series(h, 0.9, m).partial <= poincare_series(h, 0.9, m + 1).partial


# ---------------------------------------------------------------- exponents

@pytest.mark.parametrize("kind, kw, target, tol", [
    ("trivial", {}, 1.0, 1e-12),
    ("haagerup", {"s": 0.75}, 0.75, 1e-12),
    ("subgroup", {"generator": "a"}, 0.0, 0.02),
])
def test_critical_exponent_examples(kind, kw, target, tol):
    est = critical_exponent(make_oracle(kind, **kw), (2, 12))
    assert abs(est.s_hat - target) <= tol
    assert est.stderr < max(tol, 1e-12)


def test_dirac_exponent_is_exactly_zero():
    est = critical_exponent(DIRAC)
    assert est.s_hat == 0.0 and est.method == "finite support"


def test_kernel_subgroup_exponent_is_near_one():
    # an infinite-index normal subgroup with amenable quotient has full exponent
    est = critical_exponent(make_oracle("subgroup", modulus=3, weights=[1, 1]), (4, 12))
    assert abs(est.s_hat - 1.0) < 0.05


def test_exponent_window_validation():
    with pytest.raises(InputError):
        critical_exponent(ONE, (4, 5))


@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_product_exponent_inequality(t, u):
    # phi psi <= min(phi, psi) pointwise, so the product cannot grow faster
    a, b, ab = (make_oracle("haagerup", t=x) for x in (t, u, t + u))
    s_ab = critical_exponent(ab, (2, 10)).s_hat
    assert s_ab <= min(critical_exponent(a, (2, 10)).s_hat, critical_exponent(b, (2, 10)).s_hat) + 1e-9
    assert s_ab <= 1.0 + 1e-9


# ---------------------------------------------------------------- slow growth

def test_theta_validation_and_evaluation():
    th = SlowGrowthTheta([0.0, 2.0, 5.0], [0.5, 0.1], [0.0, 1.0, 1.3])
    assert th.log(1.0) == pytest.approx(0.5)
    assert th.log(10.0) == pytest.approx(1.3)
    assert th.slope_at(3.0) == 0.1 and th.slope_at(9.0) == 0.0
    with pytest.raises(InputError):
        SlowGrowthTheta([0.0, 1.0, 2.0], [0.1, 0.2], [0, 0.1, 0.3])
    with pytest.raises(InputError):
        SlowGrowthTheta([0.0, 0.0], [0.1], [0, 0])
    assert SlowGrowthTheta.constant()(7.0) == 1.0


def test_patterson_theta_certifies_trivial_schedule():
    sigmas = [1 + 1 / n for n in range(1, 9)]
    theta = patterson_theta([ONE] * 8, sigmas)
    assert slow_growth_audit(theta, 0.05)["violations"] == 0
    for n, st_ in enumerate(theta.stages, start=1):
        assert poincare_series(ONE, sigmas[n - 1], int(st_["t_end"]), theta).partial >= n


def test_theta_is_flat_when_series_already_diverges():
    h = make_oracle("haagerup", s=0.75)
    theta = patterson_theta([h] * 3, [0.75] * 3)
    assert len(theta.rates) == 0 and theta(100.0) == 1.0


def test_audit_starts_after_fast_segments():
    th = SlowGrowthTheta([0.0, 10.0, 400.0], [0.5, 0.02], [0.0, 5.0, 12.8])
    audit = slow_growth_audit(th, 0.05, t_span=50.0)
    assert audit["T"] == 10.0 and audit["violations"] == 0
    assert slow_growth_audit(th, 0.01)["T"] == 400.0


# ---------------------------------------------------------------- double series

def test_dirac_double_series_reduces_to_single():
    for sigma in (0.8, 1.0, 1.5):
        d = double_series(DIRAC, sigma)
        assert d.partial == pytest.approx(poincare_series(ONE, 2 * sigma, 60).partial, rel=1e-12)
    assert double_series(DIRAC, 1.0).partial == pytest.approx(5 / 3, abs=1e-9)


def test_trivial_double_series_diverges_below_one():
    assert double_series(ONE, 0.9).diverged


def test_trivial_double_series_is_square_of_single():
    d = double_series(ONE, 1.3)
    assert d.partial == pytest.approx(closed_form_trivial(1.3) ** 2, rel=1e-9)


def test_haagerup_double_series_roughly_radial():
    h = make_oracle("haagerup", s=0.75)
    d = double_series(h, 0.85)
    p = poincare_series(h, 0.85, 400)
    assert not d.diverged
    assert 0.1 <= p.partial ** 2 / d.partial <= 10


def _brute_double(phi, sigma, M):
    ball = list(enumerate_ball(M))
    w = {g: math.exp(-sigma * DELTA * len(g)) for g in ball}
    return sum(phi(multiply(inverse(g), h)) * w[g] * w[h] for g in ball for h in ball)


@pytest.mark.parametrize("kind, kw", [("haagerup", {"s": 0.6}), ("subgroup", {"generator": "a"}),
                                      ("subgroup", {"modulus": 2, "weights": [1, 1]})])
def test_double_partial_matches_enumeration(kind, kw):
    phi = make_oracle(kind, **kw)
    got = double_series(phi, 1.2, m_max=3).partial
    assert got == pytest.approx(_brute_double(phi, 1.2, 3), rel=1e-10)


def test_double_series_general_cap():
    table = make_oracle("subgroup", member=lambda w: w.count("a") % 2 == 0, label="even-a")
    with pytest.raises(ResourceCapError):
        double_series(table, 1.5, m_max=9)


# ---------------------------------------------------------------- sphericity

def test_sphericity_ratio_examples():
    h = make_oracle("haagerup", s=0.75)
    r = sphericity_ratio(h, [0.85, 0.8, 0.77])
    assert all(x >= 0.05 for x in r["ratios"]) and r["spherical"]
    r1 = sphericity_ratio(ONE, [1.1, 1.05])
    np.testing.assert_allclose(r1["ratios"], 1.0, atol=1e-12)
    rd = sphericity_ratio(DIRAC, [0.7, 0.6])
    assert all(x > 0 for x in rd["ratios"])
