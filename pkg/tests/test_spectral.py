import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treepoincare.errors import InputError
from treepoincare.gns import knapp_stein_matrix
from treepoincare.group_core import RadialFunction, SparseGroupFunction, convolve
from treepoincare.posdef import coefficient_sum, make_oracle
from treepoincare.spectral import (boundary_norm_bound, entropy_estimate, lp_transfer_check,
                                   radial_majorant_norm, random_positive_function, random_probes,
                                   regular_norm, rep_norm_lower, rrd_check, transfer_bound_check,
                                   xi_bottom)

DELTA = math.log(3)
KESTEN = 2 * math.sqrt(3)


# ---------------------------------------------------------------- regular norms

def test_kesten_values():
    est = regular_norm(RadialFunction.sphere(1), 2048)
    assert abs(est.value - KESTEN) / KESTEN < 0.01
    assert est.lower <= est.value <= est.upper
    assert est.upper == pytest.approx(KESTEN, rel=1e-12)
    cyc = regular_norm(SparseGroupFunction({"a": 1.0, "A": 1.0}), 2048)
    assert abs(cyc.value - 2.0) / 2.0 < 0.02


def test_identity_norm_is_exact():
    est = regular_norm(SparseGroupFunction.dirac(""))
    assert est.value == 1.0 and est.iterations == 1


def test_zero_function_has_zero_norm():
    assert regular_norm(RadialFunction([0.0])).value == 0.0


def test_sparse_and_radial_sequences_agree():
    f = RadialFunction([0.5, 1.0, 0.25])
    rad = dict(regular_norm(f, 2, path="radial").sequence)
    sp_ = dict(regular_norm(f.embed(), 2, path="sparse").sequence)
    for n in sp_:
        assert sp_[n] == pytest.approx(rad[n], rel=1e-10)
    g = SparseGroupFunction({"a": 1.0, "aa": 0.5, "A": 2.0})
    cyc = dict(regular_norm(g, 4, path="cyclic").sequence)
    sp2 = dict(regular_norm(g, 4, path="sparse").sequence)
    for n in sp2:
        assert sp2[n] == pytest.approx(cyc[n], rel=1e-10)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_regular_norm_between_l2_and_l1(seed):
    f = random_positive_function(np.random.default_rng(seed), radius=2)
    est = regular_norm(f, 8)
    assert f.l2_norm() * (1 - 1e-12) <= est.value <= f.l1_norm() * (1 + 1e-12)
    # positive f: the radial majorant dominates
    assert est.value <= radial_majorant_norm(f) * (1 + 1e-12)


def test_radial_majorant_exact_for_positive_radial():
    for r in range(1, 5):
        f = RadialFunction.ball(r)
        assert regular_norm(f, 1024).value == pytest.approx(radial_majorant_norm(f), rel=0.02)


def test_xi_bottom_values():
    np.testing.assert_allclose(xi_bottom([0, 1, 2]), [1.0, 1.5 / math.sqrt(3), 2.0 / 3.0])


# ---------------------------------------------------------------- representation norms

def test_trivial_representation_lower_is_one():
    est = rep_norm_lower(make_oracle("trivial"), RadialFunction.ball_average(1))
    assert est.lower == pytest.approx(1.0, abs=1e-12)


def test_dirac_lower_recovers_regular_norm():
    f = RadialFunction.sphere(1)
    low = rep_norm_lower(make_oracle("dirac"), f)
    assert abs(low.lower - regular_norm(f).value) / regular_norm(f).value < 0.03


def test_haagerup_lower_bound_slope():
    h = make_oracle("haagerup", s=0.75)
    rs = np.arange(2, 11)
    logs = [math.log(rep_norm_lower(h, RadialFunction.ball_average(int(r)), 64).lower) for r in rs]
    slope = -np.polyfit(rs, logs, 1)[0]
    assert abs(slope - 0.25 * DELTA) / (0.25 * DELTA) < 0.15


def test_lower_bound_dominates_first_coefficient():
    h = make_oracle("haagerup", s=0.6)
    f = SparseGroupFunction({"": 1.0, "ab": 2.0, "B": 0.5})
    low = rep_norm_lower(h, f, 16, probes=random_probes(count=1))
    assert low.lower >= abs(coefficient_sum(h, f)) * (1 - 1e-12)
    assert low.lower <= f.l1_norm() * (1 + 1e-12)


# ---------------------------------------------------------------- transfer inequalities

def test_transfer_examples():
    rng = np.random.default_rng(7)
    r = transfer_bound_check(make_oracle("dirac"), random_positive_function(rng, 3))
    assert r["margin"] >= -r["uncertainty"]
    r = transfer_bound_check(make_oracle("haagerup", s=0.75), RadialFunction.sphere(1))
    assert r["margin"] > 0
    r = transfer_bound_check(make_oracle("subgroup", generator="a"), RadialFunction.ball_average(5))
    assert r["holds"]


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.sampled_from([0.6, 0.75, 0.9]))
def test_transfer_inequality_random(seed, s):
    f = random_positive_function(np.random.default_rng(seed), 2)
    assert transfer_bound_check(make_oracle("haagerup", s=s), f, 32)["holds"]


def test_lp_transfer_examples():
    f = RadialFunction.ball(2)
    d = lp_transfer_check(make_oracle("dirac"), f, 2.0)
    assert d["factor"] == 1.0 and d["bound"] == pytest.approx(d["regular_upper"])
    assert d["margin"] >= -d["uncertainty"]
    h = lp_transfer_check(make_oracle("haagerup", s=0.75), f, 4.0)
    assert h["margin"] > 0 and h["tighter_than_general"]
    assert lp_transfer_check(make_oracle("haagerup", s=0.6), f, 2.5)["holds"]


def test_lp_transfer_preconditions():
    with pytest.raises(InputError):
        lp_transfer_check(make_oracle("haagerup", s=0.75), RadialFunction.ball(2), 3.0)
    with pytest.raises(InputError):
        lp_transfer_check(make_oracle("subgroup", generator="a"), RadialFunction.ball(2), 2.0)


# ---------------------------------------------------------------- entropy

def test_entropy_examples():
    triv = entropy_estimate(make_oracle("trivial"))
    assert triv["h_lower"] == triv["h_upper"] == 0.0
    d = entropy_estimate(make_oracle("dirac"))
    assert d["h_lower"] * 0.9 <= DELTA / 2 <= d["h_upper"] * 1.1
    h = entropy_estimate(make_oracle("haagerup", s=0.75))
    assert h["h_lower"] * 0.85 <= 0.25 * DELTA <= h["h_upper"] * 1.15
    assert h["predicted"] == pytest.approx(0.25 * DELTA)


# ---------------------------------------------------------------- boundary representation

def test_boundary_norm_ball_brackets():
    r75 = [boundary_norm_bound(0.75, RadialFunction.ball(L))["sup_norm"] * math.exp(-0.75 * DELTA * L)
           for L in range(4, 11)]
    assert max(r75) / min(r75) <= 4
    r50 = [boundary_norm_bound(0.5, RadialFunction.ball(L))["sup_norm"] / (math.exp(DELTA * L / 2) * (L + 1))
           for L in range(4, 11)]
    assert max(r50) / min(r50) <= 4


def test_boundary_norm_identity():
    ks = knapp_stein_matrix(0.75, 4)
    out = boundary_norm_bound(0.75, SparseGroupFunction.dirac(""), depth=4, form=ks.form)
    assert out["sup_norm"] == pytest.approx(1.0) and out["eigen_norm"] == pytest.approx(1.0)


def test_eigen_norm_below_sup_norm():
    ks = knapp_stein_matrix(0.75, 5)
    for f in [RadialFunction.ball(2), SparseGroupFunction({"a": 1.0, "bA": 0.5})]:
        out = boundary_norm_bound(0.75, f, depth=5, form=ks.form)
        assert out["eigen_le_sup"]
    with pytest.raises(InputError):
        boundary_norm_bound(0.75, RadialFunction.ball(1), depth=3, form=-np.eye(54))


def test_boundary_slope_of_averages():
    Ls = np.arange(4, 11)
    logs = [math.log(boundary_norm_bound(0.75, RadialFunction.ball_average(int(L)))["sup_norm"]) for L in Ls]
    slope = np.polyfit(Ls, logs, 1)[0]
    assert abs(slope + 0.25 * DELTA) / (0.25 * DELTA) < 0.05


# ---------------------------------------------------------------- rapid decay

def test_rrd_examples():
    r = rrd_check()
    assert r["m"] <= 1.5 and r["r_squared"] >= 0.98 and r["random_holds"]
    e = SparseGroupFunction.dirac("")
    assert radial_majorant_norm(e) / e.l2_norm() == 1.0


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_convolution_respects_operator_norm(seed):
    # ||f * g||_2 <= ||lambda(f)|| ||g||_2 with the certified upper edge
    rng = np.random.default_rng(seed)
    f = random_positive_function(rng, 2)
    g = random_positive_function(rng, 2)
    assert convolve(f, g).l2_norm() <= radial_majorant_norm(f) * g.l2_norm() * (1 + 1e-12)
