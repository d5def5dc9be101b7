import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treepoincare.errors import InputError, OracleValidationError, ResourceCapError
from treepoincare.group_core import (F2, RadialFunction, SparseGroupFunction, enumerate_ball, multiply,
                                     sphere_keys)
from treepoincare.posdef import (coefficient_sum, gram_matrix, load_table_oracle, make_oracle, psd_check,
                                 validate_table)

from strategies import words

DELTA = math.log(3)


def test_haagerup_values_and_parametrizations():
    h = make_oracle("haagerup", t=0.3)
    assert h("abA") == pytest.approx(math.exp(-0.9))
    hs = make_oracle("haagerup", s=0.75)
    assert hs("ab") == pytest.approx(math.exp(-0.5 * DELTA))
    assert hs.declared_exponent == pytest.approx(0.75)
    assert hs.lp_index == pytest.approx(4.0)
    with pytest.raises(InputError):
        make_oracle("haagerup")
    with pytest.raises(InputError):
        make_oracle("haagerup", t=-1)


@given(st.floats(0.01, 3), st.floats(0.01, 3), words)
def test_haagerup_products_add_parameters(t, u, w):
    a, b, c = (make_oracle("haagerup", t=x) for x in (t, u, t + u))
    assert a(w) * b(w) == pytest.approx(c(w), rel=1e-12)


def test_dirac_and_cyclic_subgroup():
    d = make_oracle("dirac")
    assert d("") == 1.0 and d("a") == 0.0
    sub = make_oracle("subgroup", generator="a")
    assert sub("aaa") == 1.0 and sub("AA") == 1.0 and sub("ab") == 0.0
    assert [sub.sphere_sum(m) for m in range(5)] == [1.0, 2.0, 2.0, 2.0, 2.0]
    # enumeration agrees with the closed-form sphere sums
    for m in range(1, 6):
        assert float(sub.eval_keys(sphere_keys(m)).sum()) == 2.0


def test_kernel_subgroup_sphere_sums_match_enumeration():
    ker = make_oracle("subgroup", modulus=3, weights=[1, 1])
    for m in range(0, 6):
        brute = 0
        for w in enumerate_ball(m):
            if len(w) == m:
                tot = sum(1 if c in "ab" else -1 for c in w)
                brute += tot % 3 == 0
        assert ker.sphere_sum(m) == brute


def test_harish_chandra_oracle():
    hc = make_oracle("harish_chandra", s=0.75)
    assert hc("") == pytest.approx(1.0)
    assert hc("a") == pytest.approx(3 * 3 ** -0.75 / 4 + 3 ** 0.75 / 4)
    with pytest.raises(InputError):
        make_oracle("harish_chandra", s=0.3)


def test_psd_examples():
    cert = psd_check(make_oracle("haagerup", t=0.3), 4)
    assert cert.verdict and cert.min_eigenvalue >= -1e-10 * cert.mean_diagonal
    d = psd_check(make_oracle("dirac"), 2)
    np.testing.assert_allclose(gram_matrix(make_oracle("dirac"), 2), np.eye(17))
    assert d.min_eigenvalue == pytest.approx(1.0)
    bad = make_oracle("table", values={"": 1.0, "a": -1.0, "A": -1.0})
    cert = psd_check(bad, 1)
    assert not cert.verdict and "precheck" in cert.reason
    with pytest.raises(ResourceCapError):
        psd_check(make_oracle("trivial"), 9)


@pytest.mark.parametrize("kind, kw", [("trivial", {}), ("subgroup", {"generator": "b"}),
                                      ("harish_chandra", {"s": 0.6}),
                                      ("subgroup", {"modulus": 2, "weights": [1, 0]})])
def test_shipped_oracles_are_positive_definite(kind, kw):
    assert psd_check(make_oracle(kind, **kw), 3).verdict


def test_non_psd_table_detected():
    # phi(a) = phi(A) = 0.9 and phi(a^2) = 0 cannot be positive definite
    vals = {"": 1.0, "a": 0.9, "A": 0.9, "aa": 0.0, "AA": 0.0}
    assert not psd_check(make_oracle("table", values=vals), 2).verdict


def test_coefficient_sum_examples():
    h = make_oracle("haagerup", t=0.25 * DELTA)
    assert coefficient_sum(h, SparseGroupFunction.dirac("")) == 1.0
    assert coefficient_sum(h, RadialFunction.sphere(1)) == pytest.approx(4 * 3 ** -0.25)
    assert coefficient_sum(make_oracle("subgroup", generator="a"), RadialFunction.sphere(2)) == 2.0
    assert coefficient_sum(h, RadialFunction.sphere(1).embed()) == pytest.approx(4 * 3 ** -0.25)


def _write(tmp_path, text, name="phi.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_table_loader_accepts_valid_file(tmp_path):
    # f * f^* for f = alpha Dir_e + beta Dir_a with alpha^2 + beta^2 = 1, alpha beta = 1/4
    phi = load_table_oracle(_write(tmp_path, "word,value\ne,1\na,0.25\nA,0.25\n"))
    assert phi("a") == 0.25 and phi("ab") == 0.0
    assert validate_table(phi) == []


@pytest.mark.parametrize("text, fragment", [
    ("e,1\na,0.5\n", "asymmetric"),
    ("e,1\na,x\nA,0.5\n", "bad value"),
    ("e,1\na,0.5\na,0.5\n", "duplicate"),
    ("e,1\nac,0.5\n", "unknown letter"),
    ("e,1,2\n", "expected"),
    ("e,0.5\n", r"phi\(e\)"),
    ("e,1\na,0.9\nA,0.9\naa,0\nAA,0\n", "PSD"),
])
def test_table_loader_rejects_bad_files(tmp_path, text, fragment):
    with pytest.raises(OracleValidationError, match=fragment):
        load_table_oracle(_write(tmp_path, text))


def test_table_loader_missing_file(tmp_path):
    with pytest.raises(OracleValidationError):
        load_table_oracle(tmp_path / "nope.csv")


@given(st.floats(0.05, 2.0), words, words)
def test_positive_definite_functions_are_symmetric_and_bounded(t, x, y):
    h = make_oracle("haagerup", t=t)
    g = multiply(x, y)
    assert h(g) == pytest.approx(h("".join(reversed(g.swapcase()))))
    assert abs(h(g)) <= h("")
    assert F2.q == 3
