import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from treepoincare._pairs import RadialPairKernel, brute_pair_sum
from treepoincare.errors import DegenerateInputError, DivergenceError, InputError, PrecisionError
from treepoincare.gns import (boundary_form, conditional_expectation, conformal_check, fusion_check,
                              harish_chandra, knapp_stein_defect, knapp_stein_matrix, ks_diagonal_average,
                              mu_t_convergence, pair_measure, sigma_schedule, upper_shadow_audit,
                              upper_shadow_check)
from treepoincare.group_core import enumerate_ball
from treepoincare.posdef import make_oracle

DELTA = math.log(3)
ONE = make_oracle("trivial")
DIRAC = make_oracle("dirac")
HAAG = make_oracle("haagerup", s=0.75)


def cylinder_share(sigma, M, depth, expo=1.0):
    """Normalized mass of one depth-N cylinder under the truncated single series (phi = 1)."""
    a = np.arange(M + 1)
    lw = -sigma * DELTA * a
    lc = np.where(a == 0, 0.0, math.log(4) + (a - 1) * math.log(3))
    return math.exp(logsumexp((a[depth:] - depth) * math.log(3) + lw[depth:]) - logsumexp(lc + lw))


# ---------------------------------------------------------------- pair kernel

PAIR_CASES = [("", ""), ("a", "a"), ("a", "ab"), ("ab", "ab"), ("", "ab"), ("ab", "aB"), ("a", "b"),
              ("abA", "abb")]


@pytest.mark.parametrize("u, v", PAIR_CASES)
def test_radial_pair_kernel_matches_enumeration(u, v):
    M, t, sigma = 4, 0.4, 0.9
    phi_r = lambda n: math.exp(-t * n)
    w = lambda n: math.exp(-sigma * DELTA * n)
    ker = RadialPairKernel(-t * np.arange(2 * M + 1), -sigma * DELTA * np.arange(M + 1), 3)
    if len(u) > len(v):
        u, v = v, u
    p = _common(u, v)
    got = ker.nested(len(u), len(v)) if p == len(u) else ker.incomparable(len(u), len(v), p)
    assert got == pytest.approx(brute_pair_sum(phi_r, w, M, u, v), rel=1e-12)


def _common(u, v):
    n = 0
    while n < min(len(u), len(v)) and u[n] == v[n]:
        n += 1
    return n


def test_pair_kernel_rejects_bad_order():
    ker = RadialPairKernel(np.zeros(9), np.zeros(5), 3)
    with pytest.raises(ValueError):
        ker.nested(3, 1)


# ---------------------------------------------------------------- pair measures

def test_trivial_pair_measure_is_a_product():
    for sigma in sigma_schedule(1.0):
        pm = pair_measure(ONE, sigma, depth=4)
        share = cylinder_share(sigma, pm.truncation_m, 4)
        np.testing.assert_allclose(pm.block, share ** 2, rtol=1e-12)
        f = np.sin(np.arange(len(pm.grid)))
        assert boundary_form(pm, f) == pytest.approx((f.sum() * share) ** 2, rel=1e-10)


def test_interior_mass_and_conformality_improve_along_schedule():
    interior, conf = [], []
    for sigma in sigma_schedule(0.75):
        pm = pair_measure(HAAG, sigma, depth=4)
        interior.append(pm.interior_mass)
        conf.append(conformal_check(pm, "a"))
    assert all(b < a for a, b in zip(interior, interior[1:]))
    assert all(b < a for a, b in zip(conf, conf[1:]))
    assert conf[-1] <= 0.25


def test_trivial_conformality():
    conf = [conformal_check(pair_measure(ONE, s, depth=4), "a") for s in [1.1, 1.05, 1.02]]
    assert conf[-1] < 0.25 and conf[0] > conf[1] > conf[2]
    assert conformal_check(pair_measure(ONE, 1.1, depth=4), "") == 0.0
    with pytest.raises(PrecisionError):
        conformal_check(pair_measure(ONE, 1.1, depth=3), "abA")


def test_dirac_pair_measure_lives_on_the_diagonal():
    pm = pair_measure(DIRAC, 0.7, depth=3)
    off = pm.block - np.diag(np.diag(pm.block))
    assert np.all(off == 0.0)
    share = cylinder_share(1.4, pm.truncation_m, 3)
    np.testing.assert_allclose(np.diag(pm.block), share, rtol=1e-12)
    devs = [conformal_check(pair_measure(DIRAC, s, depth=4), "a") for s in sigma_schedule(0.5)]
    assert all(b < a for a, b in zip(devs, devs[1:]))


def test_pair_measure_preconditions():
    with pytest.raises(DivergenceError):
        pair_measure(HAAG, 0.7)
    with pytest.raises(DivergenceError):
        pair_measure(DIRAC, 0.45)
    with pytest.raises(InputError):
        pair_measure(make_oracle("subgroup", generator="a"), 0.8)
    with pytest.raises(PrecisionError):
        pair_measure(ONE, 1.2, truncation_m=2, depth=4)


def test_non_radial_pair_measure_matches_radial_path():
    sub = make_oracle("subgroup", generator="a")
    pm = pair_measure(sub, 0.8, truncation_m=5, depth=2)
    assert pm.block.shape == (12, 12)
    np.testing.assert_allclose(pm.block, pm.block.T)
    assert pm.block.min() >= 0 and pm.interior_mass > 0
    # same machinery on a radial oracle with a fixed truncation
    pr = pair_measure(HAAG, 0.9, truncation_m=5, depth=2)
    brute = pair_measure(make_oracle("table", values={w: HAAG(w) for w in enumerate_ball(10)}), 0.9,
                         truncation_m=5, depth=2)
    np.testing.assert_allclose(brute.block, pr.block, rtol=1e-10)


@settings(max_examples=10)
@given(st.floats(0.8, 1.5), st.integers(2, 4))
def test_pair_measure_mass_and_symmetry(sigma, depth):
    pm = pair_measure(HAAG, sigma, depth=depth)
    assert pm.block.sum() + pm.interior_mass == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(pm.block, pm.block.T, rtol=1e-12)
    assert np.linalg.eigvalsh(pm.block)[0] >= -1e-10 * pm.block.max()


# ---------------------------------------------------------------- conditional expectation

def test_conditional_expectation_examples():
    pm = pair_measure(ONE, 1.1, depth=3)
    E = conditional_expectation(pm)
    np.testing.assert_allclose(E.matrix, 1.0 / len(pm.grid), rtol=1e-12)
    for phi, sigma in [(HAAG, 0.8), (DIRAC, 0.6)]:
        E = conditional_expectation(pair_measure(phi, sigma, depth=3))
        np.testing.assert_allclose(E.matrix.sum(axis=1), 1.0, atol=1e-8)
    Ed = [np.trace(conditional_expectation(pair_measure(DIRAC, s, depth=3)).matrix) for s in (0.7, 0.55)]
    assert Ed[0] == pytest.approx(len(pair_measure(DIRAC, 0.7, depth=3).grid))


def test_conditional_expectation_rejects_zero_block():
    pm = pair_measure(ONE, 1.1, depth=2)
    pm.block = np.zeros_like(pm.block)
    with pytest.raises(DegenerateInputError):
        conditional_expectation(pm)


def test_knapp_stein_relation_defect():
    assert knapp_stein_defect(pair_measure(ONE, 1.05, depth=3), "a") < 1e-12
    assert knapp_stein_defect(pair_measure(DIRAC, 0.6, depth=3), "ab") < 1e-12
    defects = [knapp_stein_defect(pair_measure(HAAG, s, depth=4), "a") for s in sigma_schedule(0.75)]
    assert all(b < a for a, b in zip(defects, defects[1:])) and defects[-1] < 0.2


# ---------------------------------------------------------------- boundary form

def test_boundary_form_examples():
    pm = pair_measure(ONE, 1.05, depth=3)
    f = np.arange(len(pm.grid), dtype=float)
    target = float(f @ pm.grid.masses) ** 2
    assert boundary_form(pm, f, normalize=True) == pytest.approx(target, rel=1e-12)
    ones = np.ones(len(pm.grid))
    masses = [boundary_form(pair_measure(HAAG, s, depth=3), ones) for s in sigma_schedule(0.75)]
    assert all(b > a for a, b in zip(masses, masses[1:]))
    with pytest.raises(InputError):
        boundary_form(pm, np.ones(3))


# ---------------------------------------------------------------- Knapp-Stein and spherical functions

def test_knapp_stein_form_examples():
    ks1 = knapp_stein_matrix(1.0, 4)
    np.testing.assert_allclose(ks1.kernel, 1.0)
    ev = ks1.relative_eigenvalues()
    assert abs(ev[-2]) < 1e-10 * ev[-1]
    f = np.random.default_rng(1).standard_normal(len(ks1.masses))
    assert ks1.quad(f) == pytest.approx(float(f @ ks1.masses) ** 2)
    for s in (0.6, 0.75, 0.9):
        assert knapp_stein_matrix(s, 6).relative_eigenvalues()[0] >= -1e-8
    with pytest.raises(InputError):
        knapp_stein_matrix(0.5, 3)


def test_diagonal_cell_average_matches_refinement():
    # average of q^{2(1-s)(xi,eta)} over one cell, computed by refining one level at a time
    s, N = 0.8, 3
    q = 3
    total, share = 0.0, 1.0
    for j in range(N, 400):
        p_split = (q - 1) / q          # children of a depth-j cell pair that separate at level j
        total += share * p_split * q ** (2 * (1 - s) * j)
        share *= 1 / q
    assert ks_diagonal_average(s, N) == pytest.approx(total, rel=1e-10)
    with pytest.raises(InputError):
        ks_diagonal_average(0.5, 3)


def test_harish_chandra_examples():
    assert harish_chandra(0.75, "")["c_s"] == 1.0
    assert harish_chandra(0.75, "a")["c_s"] == pytest.approx(3 * 3 ** -0.75 / 4 + 3 ** 0.75 / 4, rel=1e-12)
    for g in ["a", "ab", "aab", "abab"]:
        r = harish_chandra(0.75, g, depth=6, method="dense")
        assert r["xi_s"] == pytest.approx(r["c_s"], rel=1e-10)
    with pytest.raises(PrecisionError):
        harish_chandra(0.75, "abab", depth=3)


def test_fusion_examples():
    assert fusion_check(1.0, 1.0, 1.0)["ratios"] == pytest.approx([1.0] * 13)
    assert fusion_check(0.8, 0.9, 0.7)["ratio"] <= 10
    with pytest.raises(InputError):
        fusion_check(0.75, 0.75, 0.5)
    with pytest.raises(InputError):
        fusion_check(0.8, 0.8, 0.7)


def test_mu_t_convergence():
    res = mu_t_convergence([DELTA + 0.2, DELTA + 0.05], depth=3)
    first, last = res["rows"]
    assert last["mu_t_tv"] < first["mu_t_tv"]
    for row in res["rows"]:
        assert row["pair_symmetry"] == 0.0
        assert row["pair_total"] == pytest.approx(1.0, abs=1e-10)
        assert row["mu_t_total"] == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(InputError):
        mu_t_convergence([1.0])


# ---------------------------------------------------------------- upper shadow lemma

def test_upper_shadow_examples():
    pm = pair_measure(ONE, 1.05, depth=4)
    share = cylinder_share(1.05, pm.truncation_m, 4)
    # shadow of a is the cylinder a, which holds 27 depth-4 cells
    assert upper_shadow_check(pm, "a") == pytest.approx(27 * share * 3.0, rel=1e-12)
    audit = upper_shadow_audit(pair_measure(HAAG, 0.8, depth=5))
    assert audit["ratio"] <= 20
    with pytest.raises(DegenerateInputError):
        upper_shadow_check(pm, "a", R0=-1.0)
