import math
import random
from fractions import Fraction

import numpy as np
import pytest
from scipy.linalg import expm, logm

from flowexp.coords import cbhd_coeffs
from flowexp.expansions import (ErrorReport, cbh_divergence, cbhd_eval, cbhd_matrix,
                                chen_fliess_eval, formal_zm_cbh_identity, interaction_magnus_eval,
                                intrinsic_repr_eval, magnus_eval, magnus_field, matrix_divergence,
                                order_fit, order_sweep, scalar_refined_eval, sussmann_eval,
                                sussmann_matrix_eval, theta_partial, u_chen_fliess_eval,
                                usual_magnus_control_counterexample)
from flowexp.fields import Space, VField, linear_field, unit_field
from flowexp.fixtures import (FIELD_FIXTURES, MATRIX_FIXTURES, cross_products, load_fields,
                              normal_form_3d, optimal_pair, oscillatory_control)
from flowexp.hall import X, build_hall_basis
from flowexp.signals import Control, ControlTuple, random_piecewise_linear

F = Fraction
TOL = 1e-12


# order fitting -----------------------------------------------------------------

def test_order_fit_exact_power():
    pairs = [(2.0 ** -j, 3.0 * 2.0 ** (-2 * j)) for j in range(3, 9)]
    assert abs(order_fit(pairs, 0).slope - 2.0) < 1e-6


def test_order_fit_with_noise():
    rng = np.random.default_rng(0)
    pairs = [(2.0 ** -j, 2.0 ** (-3 * j) + 1e-12 * rng.uniform(-1, 1)) for j in range(3, 9)]
    assert abs(order_fit(pairs, 1e-10).slope - 3) < 0.3


def test_order_fit_floor():
    with pytest.raises(ValueError):
        order_fit([(2.0 ** -j, 1e-15) for j in range(3, 9)])


def test_error_report_contract():
    rep = ErrorReport("m", {"M": 2, "t": F(1, 3)}, "t")
    assert rep.to_csv() == "scale,error,slope_so_far\n"
    rep.add(0.5, [1.0, 2.0], [1.0, 2.5])
    with pytest.raises(ValueError):
        rep.add(0.5, [0, 0], [0, 0])
    with pytest.raises(ValueError):
        rep.add(0.25, [0], [0, 0])
    rep.add(0.25, [1.0, 2.0], [1.0, 2.125])
    back = ErrorReport.from_json(rep.to_json())
    assert back.errors == rep.errors and back.params["t"] == {"exact": "1/3", "decimal": 1 / 3}
    assert rep.to_csv().splitlines()[2].endswith("2.000000")


# Chen-Fliess and Magnus ----------------------------------------------------------

def test_cf_order_zero_is_identity():
    fields = load_fields("normal-form-3d")
    a = ControlTuple.affine([Control.constant(1, 1)])
    assert chen_fliess_eval(fields, a, [1, 2, 3], F(1, 2), 0).tolist() == [1, 2, 3]


def test_cf_linear_constant_control():
    A = [[0, 1, 0], [0, 0, 2], [F(1, 2), 0, 0]]
    f = linear_field(A)
    a = ControlTuple((1,), (Control.constant(1, 1),))
    p = np.array([1.0, -1.0, 2.0])
    t = F(1, 3)
    An = np.array(A, dtype=float)
    for M in (1, 2, 4):
        series = sum(np.linalg.matrix_power(An * float(t), k) @ p / math.factorial(k)
                     for k in range(M + 1))
        assert np.allclose(chen_fliess_eval({1: f}, a, p, t, M), series, atol=1e-14)


def test_magnus_first_order_single_field():
    f0, _ = normal_form_3d()
    a = ControlTuple((0,), (Control.constant(1, 1),))
    t = F(1, 4)
    Z, _ = magnus_field({0: f0}, a, t, 1)
    assert Z == f0.scale(t)
    res = magnus_eval({0: f0}, a, [0.1, 0.2, 0.3], t, 1)
    assert res.report.error < 1e-11


def test_magnus_multi_input_nilpotent():
    fields = load_fields("nilpotent-3d")
    rng = random.Random(9)
    a = ControlTuple.affine([random_piecewise_linear(rng), random_piecewise_linear(rng)])
    assert magnus_eval(fields, a, [1, 2, 3], 1, 2).report.error <= 100 * TOL


# CBHD -----------------------------------------------------------------------------

def test_cbhd_commuting_fields_exact():
    sp = Space(2)
    f1, f2 = unit_field(sp, 0), unit_field(sp, 1)
    for M in (1, 2, 3):
        assert cbhd_eval([f1, f2], F(1, 2), [0, 0], M).error < 1e-13


def test_cbhd_matrix_against_logm():
    rng = np.random.default_rng(4)
    A, B = (0.02 * rng.normal(size=(3, 3)) for _ in range(2))
    tab = cbhd_coeffs(2, None, 8)
    Z = cbhd_matrix([A, B], 8, tab)
    assert np.max(np.abs(Z - logm(expm(A) @ expm(B)))) < 1e-10


def test_cbhd_eval_small_order():
    f0, f1 = optimal_pair()
    e_small = cbhd_eval([f1, f0], F(1, 64), [0, 0], 2).error
    e_big = cbhd_eval([f1, f0], F(1, 16), [0, 0], 2).error
    assert e_small < e_big


# interaction picture and Sussmann ------------------------------------------------

def test_interaction_zero_control():
    f0, f1 = normal_form_3d()
    u = ControlTuple.affine([Control.constant(0, 1)])
    rep = interaction_magnus_eval(f0, {1: f1}, u, [0.2, 0.1, 0.3], F(1, 2), 2)
    assert rep.error < 1e-11


def test_interaction_routes_agree_first_order():
    f0, f1 = normal_form_3d()
    u = ControlTuple.affine([Control.piecewise_linear([0, F(1, 2), 1], [(1, 0), (F(-1, 2), 1)])
                             .scale(F(1, 10))])
    rep = interaction_magnus_eval(f0, {1: f1}, u, [0.2, 0.1, 0.3], F(1, 4), 1, numeric_route=True,
                                  nodes=5)
    assert rep.extras["route_gap"] < 1e-6


@pytest.mark.slow
def test_interaction_routes_agree_second_order():
    f0, f1 = normal_form_3d()
    u = ControlTuple.affine([Control.piecewise_linear([0, F(1, 2), 1], [(1, 0), (F(-1, 2), 1)])
                             .scale(F(1, 10))])
    rep = interaction_magnus_eval(f0, {1: f1}, u, [0.2, 0.1, 0.3], F(1, 4), 2, numeric_route=True,
                                  nodes=5)
    assert rep.extras["route_gap"] < 1e-6


def test_sussmann_single_letter():
    f0, f1 = normal_form_3d()
    a = ControlTuple((1,), (random_piecewise_linear(random.Random(2)),))
    basis = build_hall_basis(1, 1)
    assert sussmann_eval(basis, {1: f1}, a, [0.1, 0.2, 0.3], 1, ("length", 1)).error < 1e-12


def test_sussmann_tail_reported():
    fields = load_fields("optimal-pair")
    rep = order_sweep("sussmann", "optimal-pair", 1, fit=False)
    assert rep.errors[0] > rep.errors[-1]
    basis = build_hall_basis(1, 4, drift=True, keep=lambda b: b.n <= 1 and b.n0 <= 3)
    a = ControlTuple.affine([Control.constant(F(1, 10), 1)])
    r = sussmann_eval(basis, fields, a, [0.1, 0.0], F(1, 2), ("S", 1, 3))
    assert r.extras["tail"] > 0


def test_sussmann_matrix_commuting():
    A1, A2 = np.diag([0.1, -0.2, 0.3]), np.diag([0.5, 0.0, -0.1])
    rng = random.Random(6)
    a = ControlTuple((1, 2), (random_piecewise_linear(rng), random_piecewise_linear(rng)))
    rep = sussmann_matrix_eval(build_hall_basis(2, 2), {1: A1, 2: A2}, a, 1, 2)
    assert rep.error < 1e-12


def test_sussmann_matrix_small_norm():
    F1, F2, _ = cross_products()
    rng = random.Random(8)
    a = ControlTuple((1, 2), (random_piecewise_linear(rng).scale(F(1, 20)),
                              random_piecewise_linear(rng).scale(F(1, 20))))
    rep = sussmann_matrix_eval(build_hall_basis(2, 8), {1: F1, 2: F2}, a, 1, 8)
    assert rep.error <= 1e-6


def test_so3_pattern():
    pattern = matrix_divergence(4, 0)["pattern"]
    assert all(a and b for _, a, b in pattern)


# scalar-input refinement ----------------------------------------------------------

def test_refined_zero_control():
    f0, f1 = normal_form_3d()
    rep = scalar_refined_eval(f0, f1, Control.constant(0, 1), [0.2, 0.1, 0.3], F(1, 2), 2)
    assert rep.error < 1e-11


def test_u_chen_fliess_zero_drift_words():
    # f0 = 0: x(t) = e^{U(t) f1} p exactly
    _, f1 = normal_form_3d()
    f0 = VField.zero(f1.space)
    u = Control.polynomial([1, -3], 1)
    got = u_chen_fliess_eval(f0, f1, u, [F(1, 5), 0, 0], F(1, 2), 2)
    assert np.allclose(got, [0.2 + float(u.integral(F(1, 2))), 0, 0])


@pytest.mark.parametrize("M", [1, 2])
def test_refined_oscillatory_order(M):
    f0, f1 = normal_form_3d()
    base = oscillatory_control(4, 1, F(1, 2))
    pairs = []
    for j in range(1, 7):
        e = F(1, 2 ** j)
        rep = scalar_refined_eval(f0, f1, base.scale(e), [0.5, 0.2, -0.1], F(1, 2), M, cf=False)
        pairs.append((rep.scales[0], rep.errors[0]))
    fit = order_fit(pairs, 1e-10)
    assert abs(fit.slope - (M + 1)) <= 0.3


# formal identity ------------------------------------------------------------------

def test_formal_identity_low_orders():
    u_lin = Control.polynomial([0, 1], 1)
    assert formal_zm_cbh_identity(Control.constant(3, 1), 1, 1, 0)
    ok, Zc, Cc = formal_zm_cbh_identity(u_lin, 1, 1, 0, detail=True)
    assert ok and Zc.coeffs == {(1,): F(1, 2)}
    assert formal_zm_cbh_identity(u_lin, 1, 1, 1)
    u = random_piecewise_linear(random.Random(1))
    assert formal_zm_cbh_identity(u, 1, 2, 2)
    with pytest.raises(ValueError):
        formal_zm_cbh_identity(u, 1, 0, 1)


# counter-examples -----------------------------------------------------------------

def test_theta_leading_terms():
    eps = F(1, 10)
    assert theta_partial(eps, 0) == 1 - eps / 2
    assert cbh_divergence(eps, 3).theta(0) == 1 - eps / 2
    assert theta_partial(eps, 1) == 1 - eps / 2 + eps ** 2 / 6


def test_magnus_control_summands():
    t = F(1)
    rows = usual_magnus_control_counterexample(F(1, 10), t, 6)
    assert rows[0][1] == t ** 2 / 2 / (1 - F(1, 10))
    zero_line = usual_magnus_control_counterexample(0, t, 6, x2=0)
    assert all(v == 0 for k, v in zero_line if k >= 1)


def test_intrinsic_zero_control():
    fields = load_fields("normal-form-3d")
    a = ControlTuple.affine([Control.constant(0, 1)])
    rep = intrinsic_repr_eval(fields, a, [F(1, 2), F(1, 4)], 2)
    assert max(rep.errors) == 0.0


def test_intrinsic_ratio_bounded():
    fields = load_fields("normal-form-3d")
    a = ControlTuple.affine([Control.piecewise_linear([0, F(1, 2), 1], [(1, 2), (-1, 0)])])
    rep = intrinsic_repr_eval(fields, a, [F(1, 2 ** j) for j in range(3, 9)], 2)
    ratios = rep.extras["ratios"]
    assert max(ratios) < 10 * ratios[0] + 1


# fixtures --------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(FIELD_FIXTURES))
def test_field_fixtures_load(name):
    fields = load_fields(name)
    assert all(isinstance(f, VField) for f in fields.values())


def test_optimal_pair_fixture_is_rational():
    fields = load_fields("optimal-pair")
    assert fields[1].space.pole == 0 and fields[1].dim == 2


@pytest.mark.parametrize("name", sorted(MATRIX_FIXTURES))
def test_matrix_fixtures_load(name):
    mats = MATRIX_FIXTURES[name]()
    assert all(M.shape == (3, 3) for M in mats.values())


def test_unknown_fixture():
    with pytest.raises(KeyError):
        load_fields("nope")


def test_optimal_pair_brackets_use_f1_once():
    # why the amplitude sweeps on this pair swap drift and input
    from flowexp.fields import BracketEvaluator
    ev = BracketEvaluator(load_fields("optimal-pair"))
    pt = (F(1, 5), F(-1, 10))
    for b in build_hall_basis(1, 5, drift=True).elements:
        if b.n >= 2:
            assert ev(b)(pt) == [0, 0]
        if b.n == 1:
            assert ev(b)(pt) != [0, 0]


def test_optimal_pair_u_sweep_roles():
    rep = order_sweep("interaction", "optimal-pair", 1)
    assert rep.fit.within(2)
