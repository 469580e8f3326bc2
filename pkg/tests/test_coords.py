import math
import random
from fractions import Fraction

import pytest
import sympy
from hypothesis import given, strategies as st

from flowexp.coords import (bernoulli, bernoulli_table, cbhd_coeffs, cbhd_series,
                            coord_bound_audit, coord_first_kind, coord_pseudo_first_kind,
                            coord_second_kind, zeta_closed_form)
from flowexp.freealg import NCSeries, Truncation, nc_exp, nc_log
from flowexp.hall import X, ad, build_hall_basis
from flowexp.signals import Control, ControlTuple

from strategies import piecewise_linear

F = Fraction
X0, X1, X2 = X(0), X(1), X(2)


def test_bernoulli_values():
    assert bernoulli(0) == 1
    assert bernoulli(1) == F(-1, 2)
    assert bernoulli(2) == F(1, 6)
    assert bernoulli(3) == 0
    # independent oracle; sympy >= 1.12 uses B1 = +1/2, so skip n = 1
    for n in (4, 6, 10, 20, 40):
        b = sympy.bernoulli(n)
        assert bernoulli(n) == F(int(b.p), int(b.q))
    assert len(bernoulli_table(8)) == 9


def test_first_kind_drift_examples():
    basis = build_hall_basis(1, 4, drift=True)
    a = ControlTuple.affine([Control.polynomial([0, 1], 2)])
    t = F(3, 2)
    z = coord_first_kind(basis, a, t, 4)
    assert z[X0] == t
    assert z[X1] == t ** 2 / 2
    assert z[ad(X0, X1)] == t ** 3 / 12


def test_first_kind_requires_basis_length():
    basis = build_hall_basis(1, 3, drift=True)
    a = ControlTuple.affine([Control.constant(1, 1)])
    with pytest.raises(ValueError):
        coord_first_kind(basis, a, 1, 4)


def test_cbhd_two_arguments():
    tab = cbhd_coeffs(2, None, 4)
    assert tab[X1] == 1 and tab[X2] == 1
    assert tab[ad(X1, X2)] == F(1, 2)
    assert tab[ad(X1, X2, 2)] == F(1, 12)
    assert tab[ad(X2, ad(X1, X2))] == F(-1, 12)
    assert tab[ad(X2, ad(X1, X2, 2))] == F(-1, 24)
    assert tab[ad(X1, X2, 3)] == 0
    assert tab[ad(X2, ad(X1, X2), 2)] == 0


def test_cbhd_matches_free_log():
    tr = Truncation(5)
    a, b = NCSeries.letter(1, tr), NCSeries.letter(2, tr)
    assert cbhd_series([a, b], 5) == nc_log(nc_exp(a) @ nc_exp(b))


def test_bernoulli_adjoint_coefficients():
    basis = build_hall_basis(1, 7, drift=True)
    a = ControlTuple((1, 0), (Control.indicator(0, 1, 2), Control.indicator(1, 2, 2)))
    z = coord_first_kind(basis, a, 2, 7)
    for k in range(7):
        assert z[ad(X0, X1, k)] == bernoulli(k) / math.factorial(k)


def test_second_kind_examples():
    a = ControlTuple((1, 2), (Control.constant(1, 2), Control.constant(1, 2)))
    t = F(3, 2)
    xi = coord_second_kind([X1, X2, ad(X1, X2)], a, t)
    assert xi[X1] == t and xi[X2] == t
    assert xi[ad(X1, X2)] == t ** 2 / 2


def _alpha(b):
    # xi_b' = t^{|b|-1} / alpha_b for u = (1, 1)
    if b.is_leaf:
        return F(1)
    from flowexp.hall import standard_factorization
    m, b1, b2 = standard_factorization(b)
    return _alpha(b1) ** m * b1.length ** m * math.factorial(m) * _alpha(b2)


def test_second_kind_alpha_recursion():
    a = ControlTuple((1, 2), (Control.constant(1, 1), Control.constant(1, 1)))
    basis = build_hall_basis(2, 5)
    t = F(2, 3)
    xi = coord_second_kind(basis.elements, a, t)
    for b in basis.elements:
        assert xi[b] == t ** b.length / (b.length * _alpha(b))


def test_pseudo_first_kind_examples():
    basis = build_hall_basis(1, 4, drift=True)
    u = ControlTuple.affine([Control.constant(1, 1)])
    t = F(1, 2)
    eta = coord_pseudo_first_kind(basis, u, t, 2, 2)
    assert eta[X0] == 0
    assert eta[X1] == t
    assert eta[ad(X0, X1)] == -t ** 2 / 2


def test_pseudo_first_kind_matches_log_identity():
    # e^{tX0} e^{eta} = word series, checked in the free algebra
    rng = random.Random(5)
    from flowexp.signals import random_piecewise_linear, word_series
    u = ControlTuple.affine([random_piecewise_linear(rng)])
    t = F(3, 4)
    M, N0 = 2, 2
    basis = build_hall_basis(1, M + N0, drift=True, keep=lambda b: b.n <= M and b.n0 <= N0)
    eta = coord_pseudo_first_kind(basis, u, t, M, N0)
    tr = Truncation.capped(M + N0, {(1,): M, (0,): N0})
    from flowexp.hall import recombine
    Z = recombine(eta.values, tr)
    lhs = nc_exp(NCSeries.letter(0, tr, t)) @ nc_exp(Z)
    assert lhs == word_series(u, t, tr)


def test_bound_audit_examples():
    a = ControlTuple((1, 2), (Control.constant(1, 1), Control.constant(1, 1)))
    tab = coord_second_kind([ad(X1, X2)], a, 1)
    rep = coord_bound_audit(tab, a)
    assert rep["ok"] and rep["checked"] == 1
    with pytest.raises(ValueError):
        coord_bound_audit(coord_first_kind(build_hall_basis(2, 2), a, 1, 2), a)


def test_csv_has_exact_and_decimal():
    text = cbhd_coeffs(2, None, 2).to_csv()
    assert text.splitlines()[0] == "bracket,length,n,n0,value,decimal"
    assert '"[1,2]",2,2,0,1/2,0.5' in text


@given(piecewise_linear(), st.integers(0, 5))
def test_zeta_closed_form_property(u, k):
    a = ControlTuple.affine([u])
    basis = build_hall_basis(1, k + 1, drift=True)
    z = coord_first_kind(basis, a, 1, k + 1)
    assert z[ad(X0, X1, k)] == zeta_closed_form(k, a, 1)


@given(piecewise_linear(), st.sampled_from([F(1, 2), F(1, 3)]))
def test_homogeneity_under_time_rescale(u, lam):
    a = ControlTuple.affine([u])
    basis = build_hall_basis(1, 4, drift=True)
    z = coord_first_kind(basis, a, 1, 4)
    zl = coord_first_kind(basis, a.time_rescale(lam), lam, 4)
    for b in basis.elements:
        assert zl[b] == lam ** b.length * z[b]


@given(piecewise_linear(), piecewise_linear())
def test_second_kind_bound(u, v):
    a = ControlTuple((1, 2), (u, v))
    basis = build_hall_basis(2, 4)
    assert coord_bound_audit(coord_second_kind(basis.elements, a, 1), a)["ok"]
