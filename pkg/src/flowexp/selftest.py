"""Invariant suites shared by the ``selftest`` command and the tests."""
from __future__ import annotations

import math
import random
import time
from fractions import Fraction
from typing import Callable, List, Tuple

import numpy as np

from .coords import bernoulli, cbhd_coeffs, coord_first_kind, zeta_closed_form
from .fields import BracketEvaluator, lie_bracket, linear_field
from .fixtures import nilpotent_trio, normal_form_3d
from .flows import OdeProblem, matrix_exp, solve_reference
from .freealg import (NCSeries, Truncation, dynkin_beta, grouplike_check, is_lie_element, nc_exp,
                      nc_log, shuffle, word_enumerate)
from .hall import (X, ad, build_hall_basis, expand_to_words, hall_audit, hall_decompose,
                   recombine, witt_dimension)
from .signals import Control, ControlTuple, random_piecewise_linear, word_series

DEFAULT_SEED = 20240611


def _random_lie(rng: random.Random, basis, trunc: Truncation) -> NCSeries:
    out = NCSeries.zero(trunc)
    for b in basis.elements:
        if b.length <= trunc.degree:
            c = Fraction(rng.randint(-3, 3), rng.randint(1, 3))
            if c:
                out = out + expand_to_words(b, trunc).scale(c)
    return out


def suite_freealg(rng: random.Random) -> List[str]:
    fails = []
    trunc = Truncation(5)
    basis = build_hall_basis(2, 5)
    L = _random_lie(rng, basis, trunc)
    for n in L.degrees():
        Ln = L.homogeneous(n)
        if dynkin_beta(Ln) != Ln.scale(n):
            fails.append(f"Dynkin idempotence fails in degree {n}")
    if not is_lie_element(L, friedrichs=True):
        fails.append("random Lie element rejected")
    non_lie = NCSeries.word((1, 2), trunc)
    if is_lie_element(non_lie, friedrichs=True):
        fails.append("X1 X2 accepted as a Lie element")
    a = ControlTuple((1, 2), (random_piecewise_linear(rng), random_piecewise_linear(rng)))
    S = word_series(a, 1, 4)
    if not grouplike_check(S):
        fails.append("word series is not group-like")
    words = [w for n in range(1, 3) for w in word_enumerate(2, n)]
    for u in words:
        for v in words:
            lhs = S[u] * S[v]
            rhs = sum(k * S[w] for w, k in shuffle(u, v).items())
            if lhs != rhs:
                fails.append(f"shuffle identity fails for {u}, {v}")
    if nc_exp(nc_log(S)) != S:
        fails.append("exp(log S) != S")
    return fails


def suite_hall(rng: random.Random) -> List[str]:
    fails = []
    basis = build_hall_basis(2, 6)
    for n in range(1, 7):
        if len(basis.of_length(n)) != witt_dimension(2, n):
            fails.append(f"Witt dimension mismatch at n={n}")
    fails += hall_audit(basis)
    fails += hall_audit(build_hall_basis(1, 6, drift=True))
    trunc = Truncation(6)
    els = [b for b in basis.elements if b.length <= 2]
    for _ in range(10):
        a, b, c = (rng.choice(els) for _ in range(3))
        ea, eb, ec = (expand_to_words(x, trunc) for x in (a, b, c))

        def br(p, q):
            return p @ q - q @ p
        if not (br(ea, br(eb, ec)) + br(eb, br(ec, ea)) + br(ec, br(ea, eb))).is_zero():
            fails.append("Jacobi identity fails")
        if br(ea, eb) != -br(eb, ea):
            fails.append("antisymmetry fails")
    L = _random_lie(rng, basis, trunc)
    if recombine(hall_decompose(L, basis), trunc) != L:
        fails.append("decompose/recombine round trip fails")
    return fails


def suite_coords(rng: random.Random) -> List[str]:
    fails = []
    tab = cbhd_coeffs(2, None, 4)
    X1, X2 = X(1), X(2)
    expect = {
        X1: 1, X2: 1, ad(X1, X2): Fraction(1, 2), ad(X1, X2, 2): Fraction(1, 12),
        ad(X2, ad(X1, X2)): Fraction(-1, 12), ad(X2, ad(X1, X2, 2)): Fraction(-1, 24),
        ad(X1, X2, 3): 0,
    }
    for b, v in expect.items():
        if tab[b] != v:
            fails.append(f"CBHD coefficient of {b}: {tab[b]} != {v}")
    # log(e^{X1} e^{X0}) on ad^k_{X0}(X1): B_k / k!
    basis = build_hall_basis(1, 7, drift=True)
    a = ControlTuple((1, 0), (Control.indicator(0, 1, 2), Control.indicator(1, 2, 2)))
    z = coord_first_kind(basis, a, 2, 7)
    for k in range(7):
        if z[ad(X(0), X(1), k)] != bernoulli(k) / math.factorial(k):
            fails.append(f"ad^{k} coefficient differs from B_k/k!")
    u = random_piecewise_linear(rng)
    a = ControlTuple.affine([u])
    basis = build_hall_basis(1, 5, drift=True)
    z = coord_first_kind(basis, a, 1, 5)
    for k in range(4):
        if z[ad(X(0), X(1), k)] != zeta_closed_form(k, a, 1):
            fails.append(f"closed form fails at k={k}")
    return fails


def suite_fields(rng: random.Random) -> List[str]:
    fails = []
    f0, f1 = normal_form_3d()
    ev = BracketEvaluator({0: f0, 1: f1})
    b01 = ad(X(0), X(1))
    v = ev(b01)
    pt = (Fraction(1, 3), Fraction(2, 5), Fraction(-1, 7))
    if v(pt) != [0, -(1 + 2 * pt[0]), -pt[1]]:
        fails.append("[f0, f1] differs from the expected field")
    if ev(ad(X(0), X(1), 2))(pt) != [0, 0, pt[0] ** 2]:
        fails.append("ad^2 f0 f1 differs")
    if ev(ad(X(1), b01))(pt) != [0, -2, 0]:
        fails.append("[f1, [f0, f1]] differs")
    g = [f0, f1, ev(b01)]
    j = (lie_bracket(g[0], lie_bracket(g[1], g[2])) + lie_bracket(g[1], lie_bracket(g[2], g[0]))
         + lie_bracket(g[2], lie_bracket(g[0], g[1])))
    if not j.is_zero():
        fails.append("Jacobi identity fails on fields")
    return fails


def suite_flows(rng: random.Random) -> List[str]:
    fails = []
    nrng = np.random.default_rng(rng.randint(0, 2 ** 31))
    A = nrng.normal(size=(3, 3)) / 2
    f = linear_field([[Fraction(x) for x in row] for row in A])
    p = [1.0, -0.5, 0.25]
    tol = 1e-12
    res = solve_reference(OdeProblem(f, (), p, 1.0, tol))
    if np.max(np.abs(res.endpoint - matrix_exp(A) @ p)) > 10 * tol:
        fails.append("linear flow differs from the matrix exponential")
    from ._kernels import COMPILED
    if COMPILED:
        r2 = solve_reference(OdeProblem(f, (), p, 1.0, tol), backend="python")
        if np.max(np.abs(r2.endpoint - res.endpoint)) > 1e-12:
            fails.append("compiled and python kernels disagree")
    return fails


def suite_expansions(rng: random.Random) -> List[str]:
    from .expansions import formal_zm_cbh_identity, magnus_eval, sussmann_eval
    fails = []
    g0, g1, g2 = nilpotent_trio()
    fields = {0: g0, 1: g1, 2: g2}
    a = ControlTuple.affine([random_piecewise_linear(rng), random_piecewise_linear(rng)])
    p = [Fraction(1), Fraction(-2), Fraction(3)]
    if magnus_eval(fields, a, p, 1, 2).report.error > 1e-10:
        fails.append("Magnus not exact on nilpotent fields")
    basis = build_hall_basis(2, 2, drift=True)
    if sussmann_eval(basis, fields, a, p, 1, ("length", 2)).error > 1e-10:
        fails.append("Sussmann product not exact on nilpotent fields")
    u = random_piecewise_linear(rng)
    for r, nu in ((1, 0), (1, 1), (2, 2)):
        if not formal_zm_cbh_identity(u, 1, r, nu):
            fails.append(f"formal identity fails at ({r}, {nu})")
    return fails


SUITES: List[Tuple[str, Callable[[random.Random], List[str]]]] = [
    ("freealg", suite_freealg),
    ("hall", suite_hall),
    ("coords", suite_coords),
    ("fields", suite_fields),
    ("flows", suite_flows),
    ("expansions", suite_expansions),
]


def run_suites(seed: int = DEFAULT_SEED):
    """[(index, name, failures, seconds)], suites numbered from 1."""
    out = []
    for i, (name, fn) in enumerate(SUITES, 1):
        rng = random.Random(seed * 100 + i)
        t0 = time.perf_counter()
        try:
            fails = fn(rng)
        except Exception as exc:  # a crash counts as a violation
            fails = [f"{type(exc).__name__}: {exc}"]
        out.append((i, name, fails, time.perf_counter() - t0))
    return out
