import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from flowexp import _kernels
from flowexp.expansions import order_fit
from flowexp.fields import (BracketEvaluator, VField, constant_field, lie_bracket, linear_field,
                            poly_field, unit_field)
from flowexp.fixtures import normal_form_3d, optimal_pair
from flowexp.flows import (FlowResult, MatrixControl, OdeProblem, PoleError, SolverError,
                           autonomous_flow, flow_with_jacobian, fundamental_solution,
                           matrix_ad_bound, matrix_ad_series, matrix_exp, matrix_magnus,
                           pushforward_eval, solve_reference)
from flowexp.signals import Control, random_piecewise_linear

from strategies import piecewise_linear

F = Fraction
TOL = 1e-12


def test_zero_field_returns_start():
    sp = normal_form_3d()[0].space
    res = autonomous_flow(VField.zero(sp), [1, 2, 3])
    assert res.endpoint.tolist() == [1, 2, 3]
    res = flow_with_jacobian(VField.zero(sp), [1, 2, 3], 1)
    assert np.array_equal(res.jacobian, np.eye(3))


def test_constant_field_translation():
    sp = normal_form_3d()[0].space
    res = autonomous_flow(constant_field(sp, [1, -2, F(1, 2)]), [0, 0, 0], TOL, 3)
    assert np.allclose(res.endpoint, [3, -6, 1.5], atol=1e-13)


def test_equilibrium():
    f0, f1 = normal_form_3d()
    prob = OdeProblem(f0, ((Control.constant(0, 1), f1),), [0, 0, 0], 1.0, TOL)
    assert np.all(solve_reference(prob).endpoint == 0)


def test_linear_matches_expm():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 3)) / 2
    f = linear_field([[F(x) for x in row] for row in A])
    p = np.array([1.0, -0.5, 0.25])
    res = solve_reference(OdeProblem(f, (), p, 1.0, TOL))
    assert np.max(np.abs(res.endpoint - expm(A) @ p)) <= 10 * TOL
    jac = flow_with_jacobian(f, p, 0.7, TOL).jacobian
    assert np.max(np.abs(jac - expm(0.7 * A))) < 1e-11


def _scipy_oracle(fields, ctrls, p, t):
    def rhs(s, x):
        out = np.zeros(len(x))
        for c, f in zip(ctrls, fields):
            out += c.evaluate(min(s, float(c.T))) * np.array(f.__call__(list(x)), dtype=float)
        return out
    br = sorted({0.0, float(t)} | {float(b) for c in ctrls for b in c.breaks if b < t})
    x = np.array(p, dtype=float)
    for a, b in zip(br, br[1:]):
        x = solve_ivp(rhs, (a, b), x, method="DOP853", rtol=1e-13, atol=1e-13).y[:, -1]
    return x


@given(piecewise_linear(), st.sampled_from([F(1, 2), F(1, 1)]))
def test_reference_against_scipy(u, t):
    f0, f1 = normal_form_3d()
    p = [0.3, -0.2, 0.1]
    res = solve_reference(OdeProblem(f0, ((u, f1),), p, float(t), TOL))
    ref = _scipy_oracle([f0, f1], [Control.constant(1, 1), u], p, float(t))
    assert np.max(np.abs(res.endpoint - ref)) < 1e-9


@pytest.mark.skipif(not _kernels.COMPILED, reason="compiled kernel not built")
def test_backends_agree():
    rng = random.Random(7)
    f0, f1 = normal_form_3d()
    u = random_piecewise_linear(rng)
    prob = OdeProblem(f0, ((u, f1),), [0.1, 0.2, 0.3], 1.0, TOL)
    a = solve_reference(prob, backend="cython")
    b = solve_reference(prob, backend="python")
    assert a.backend != b.backend
    assert np.max(np.abs(a.endpoint - b.endpoint)) < 1e-13
    assert a.steps == b.steps


def test_pole_detected():
    f0, f1 = optimal_pair()
    # x1 = t reaches the pole of f1 at t = 1
    prob = OdeProblem(f0, ((Control.constant(1, 2), f1),), [0.0, 0.0], 2.0, TOL)
    with pytest.raises(PoleError):
        solve_reference(prob)
    with pytest.raises(PoleError):
        solve_reference(prob, backend="python")


def test_flow_result_json():
    f0, _ = normal_form_3d()
    r = flow_with_jacobian(f0, [0.1, 0.2, 0.3], 0.5)
    r2 = FlowResult.from_json(r.to_json())
    assert np.array_equal(r.endpoint, r2.endpoint)
    assert np.array_equal(r.jacobian, r2.jacobian)


def test_taylor_order_of_autonomous_flow():
    # |e^{tg}(p) - sum_{k<=M} t^k (g.grad)^k Id (p) / k!| = O(t^{M+1})
    g = poly_field(2, [{(0, 1): 1, (2, 0): 1}, {(1, 0): -1, (1, 1): F(1, 2)}])
    p = [F(1, 2), F(-1, 3)]
    M = 2
    derivs = []
    comps = [c for c in VField.from_terms(g.space, [{(1, 0, 0): 1}, {(0, 1, 0): 1}]).comps]
    for k in range(M + 1):
        derivs.append([float(c(p)) for c in comps])
        comps = [g.derive(c) for c in comps]
    pairs = []
    for j in range(3, 9):
        t = 2.0 ** -j
        approx = sum(np.array(d) * t ** k / math.factorial(k) for k, d in enumerate(derivs))
        exact = autonomous_flow(g, [float(x) for x in p], TOL, t).endpoint
        pairs.append((t, float(np.max(np.abs(exact - approx)))))
    assert abs(order_fit(pairs).slope - (M + 1)) < 0.3


@given(st.lists(st.integers(-2, 2), min_size=6, max_size=6))
def test_jacobian_against_finite_differences(cs):
    g = poly_field(2, [{(0, 1): cs[0], (2, 0): F(cs[1], 4), (0, 0): cs[2]},
                       {(1, 0): cs[3], (1, 1): F(cs[4], 4), (0, 2): F(cs[5], 4)}])
    p = np.array([0.1, -0.2])
    t = 0.3
    J = flow_with_jacobian(g, p, t, TOL).jacobian
    h = 1e-5
    fd = np.zeros((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd[:, k] = (autonomous_flow(g, p + e, TOL, t).endpoint
                    - autonomous_flow(g, p - e, TOL, t).endpoint) / (2 * h)
    assert np.max(np.abs(J - fd)) < 1e-6


def test_pushforward_trivial_cases():
    f0, f1 = normal_form_3d()
    y = [0.2, 0.1, -0.3]
    zero = VField.zero(f0.space)
    assert np.allclose(pushforward_eval(zero, f1, 1, F(1, 2), y), f1(y))
    assert np.allclose(pushforward_eval(f0, f1, F(1, 2), F(1, 2), y), f1(y))


def test_pushforward_series():
    f0, f1 = normal_form_3d()
    y = [F(1, 5), F(1, 10), F(-3, 10)]
    ev = BracketEvaluator({0: f0, 1: f1})
    from flowexp.hall import X, ad
    t, tau = F(1, 2), F(1, 2) + F(1, 50)
    s = float(tau - t)
    series = sum(np.array([float(v) for v in ev(ad(X(0), X(1), k))(y)]) * s ** k / math.factorial(k)
                 for k in range(8))
    got = pushforward_eval(f0, f1, t, tau, [float(v) for v in y])
    assert np.max(np.abs(got - series)) < 10 * 1e-10


def test_matrix_exp_basics():
    assert np.array_equal(matrix_exp(np.zeros((3, 3))), np.eye(3))
    N = np.array([[0, 2, 0], [0, 0, 0], [0, 0, 0]], dtype=float)
    assert np.array_equal(matrix_exp(N), np.eye(3) + N)


@pytest.mark.parametrize("K", [1, 2, 4, 8])
def test_ad_series_bound(K):
    rng = np.random.default_rng(K)
    H0 = rng.normal(size=(3, 3)) / 3
    H1 = rng.normal(size=(3, 3))
    exact = expm(H0) @ H1 @ expm(-H0)
    err = np.linalg.norm(exact - matrix_ad_series(H0, H1, K), 2)
    assert err <= matrix_ad_bound(H0, H1, K)


def test_magnus_constant_matrix():
    A = np.array([[0.1, 0.2, 0], [0, -0.1, 0.3], [0.05, 0, 0]])
    mc = MatrixControl.constant(A, 1)
    for R in (1, 2, 4):
        assert np.allclose(matrix_magnus(mc, F(1, 2), R), 0.5 * A, atol=1e-15)


def _random_matrix_control(seed, target_l1):
    rng = random.Random(seed)
    ctrls = [[random_piecewise_linear(rng) for _ in range(3)] for _ in range(3)]
    mc = MatrixControl.entrywise(ctrls)
    return mc.scale(target_l1 / mc.l1_norm())


def test_magnus_converges_small_norm():
    mc = _random_matrix_control(11, 0.19)
    ref = fundamental_solution(mc, 1)
    errs = [np.linalg.norm(expm(matrix_magnus(mc, 1, R)) - ref, 2) for R in (2, 6, 12)]
    assert errs[2] <= 1e-8
    assert errs[0] > errs[1] > 1e-3 * errs[1] and errs[1] >= errs[2] - 1e-14


def test_magnus_interaction_mode():
    rng = np.random.default_rng(3)
    H0 = rng.normal(size=(3, 3))
    H1 = _random_matrix_control(12, 0.1)
    t = 1
    Z = matrix_magnus(H1, t, 8, mode="interaction", H0=H0)
    full = MatrixControl(((Control.constant(1, 1), H0),) + H1.terms)
    ref = fundamental_solution(full, t)
    assert np.linalg.norm(expm(Z) @ expm(H0) - ref, 2) < 1e-8


def test_fundamental_solution_complex():
    A = 1j * np.array([[0, 1], [1, 0]]) * 0.3
    Y = fundamental_solution(MatrixControl.constant(A, 1), 1)
    assert np.max(np.abs(Y - expm(A))) < 1e-12


def test_bad_problem():
    f0, _ = normal_form_3d()
    with pytest.raises(ValueError):
        OdeProblem(f0, (), [0, 0], 1.0)
    with pytest.raises(ValueError):
        OdeProblem(None, (), [0, 0, 0], 1.0)
    with pytest.raises(ValueError):
        OdeProblem(f0, (), [0, 0, 0], 1.0, tol=0)
