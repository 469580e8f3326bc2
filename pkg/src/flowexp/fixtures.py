"""Named fields, matrices and controls used by the CLI and the tests."""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Dict, List, Tuple

import numpy as np

from .fields import RPoly, Space, VField, cross_product_matrices, linear_field, poly_field
from .signals import Control, callable_control


def optimal_pair() -> Tuple[VField, VField]:
    """f0 = e1, f1 = e2 / (1 - x1) on R^2."""
    sp = Space(2, 0)
    f0 = VField(sp, [RPoly.const(sp, 1), RPoly(sp)])
    f1 = VField(sp, [RPoly(sp), RPoly.w(sp)])
    return f0, f1


def magnus_control_pair() -> Tuple[VField, VField]:
    """f0 = x2 e1, f1 = e2 / (1 - x1)."""
    sp = Space(2, 0)
    f0 = VField(sp, [RPoly.var(sp, 1), RPoly(sp)])
    f1 = VField(sp, [RPoly(sp), RPoly.w(sp)])
    return f0, f1


def normal_form_3d() -> Tuple[VField, VField]:
    """f0 = (0, x1 + x1^2, x1 x2), f1 = e1."""
    f0 = poly_field(3, [{}, {(1, 0, 0): 1, (2, 0, 0): 1}, {(1, 1, 0): 1}])
    f1 = poly_field(3, [{(0, 0, 0): 1}, {}, {}])
    return f0, f1


def nilpotent_trio() -> Tuple[VField, VField, VField]:
    """Strictly upper-triangular linear fields on R^3; brackets of length
    three and more vanish."""
    A0 = [[0, 1, 0], [0, 0, 0], [0, 0, 0]]
    A1 = [[0, 0, 0], [0, 0, 1], [0, 0, 0]]
    A2 = [[0, 1, 2], [0, 0, -1], [0, 0, 0]]
    return linear_field(A0), linear_field(A1), linear_field(A2)


def so3_complex() -> Dict[int, np.ndarray]:
    """A_j = e^{i pi/6} F_j, j = 1, 2."""
    F = cross_product_matrices()
    z = np.exp(1j * math.pi / 6)
    return {1: z * F[0], 2: z * F[1]}


def cross_products() -> List[np.ndarray]:
    return cross_product_matrices()


def oscillatory_control(n: int, amplitude=1, T=1, per_period: int = 16,
                        denom: int = 10 ** 9) -> Control:
    """Piecewise-linear u whose primitive interpolates amplitude * sin(n^2 t) / n
    on a grid of per_period points per period (rational samples)."""
    T = Fraction(T)
    period = 2 * math.pi / n ** 2
    pieces = max(1, math.ceil(float(T) / period * per_period))
    # primitive is piecewise quadratic: use the derivative samples directly
    br = [T * Fraction(k, pieces) for k in range(pieces + 1)]
    vals = []
    for a, b in zip(br, br[1:]):
        va = Fraction(round(n * math.cos(n * n * float(a)) * denom), denom) * Fraction(amplitude)
        vb = Fraction(round(n * math.cos(n * n * float(b)) * denom), denom) * Fraction(amplitude)
        vals.append((va, vb))
    return Control.piecewise_linear(br, vals, f"osc[{n}]")


def multi_input_fields() -> Tuple[VField, VField]:
    """x1' = u, x2' = v x1."""
    f1 = poly_field(2, [{(0, 0): 1}, {}])
    f2 = poly_field(2, [{}, {(1, 0): 1}])
    return f1, f2


def multi_input_controls(n: int, T: float = 1.0):
    u = callable_control(lambda t: n * math.cos(n * n * t), T, f"u[{n}]")
    v = callable_control(lambda t: n * math.sin(n * n * t), T, f"v[{n}]")
    return u, v


def multi_input_primitive_sups(n: int, T: float = 1.0, samples: int = 200001) -> Tuple[float, float]:
    """sup |U| and sup |V| on [0, T] for the primitives of the two inputs,
    by cumulative trapezoid quadrature."""
    from scipy.integrate import cumulative_trapezoid
    u, v = multi_input_controls(n, T)
    ts = np.linspace(0.0, T, samples)
    U = cumulative_trapezoid([u.evaluate(s) for s in ts], ts, initial=0.0)
    V = cumulative_trapezoid([v.evaluate(s) for s in ts], ts, initial=0.0)
    return float(np.max(np.abs(U))), float(np.max(np.abs(V)))


def multi_input_x2(n: int, T: float) -> float:
    """Closed form of x2(T) from the origin."""
    return T / 2 - math.sin(2 * n * n * T) / (4 * n * n)


FIELD_FIXTURES = {
    "optimal-pair": lambda: dict(enumerate(optimal_pair())),
    "magnus-control-pair": lambda: dict(enumerate(magnus_control_pair())),
    "normal-form-3d": lambda: dict(enumerate(normal_form_3d())),
    "nilpotent-3d": lambda: dict(enumerate(nilpotent_trio())),
    "multi-input": lambda: {i + 1: f for i, f in enumerate(multi_input_fields())},
}

MATRIX_FIXTURES = {
    "so3-complex": so3_complex,
    "cross-products": lambda: {i + 1: F for i, F in enumerate(cross_product_matrices())},
}


def load_fields(name: str) -> Dict[int, VField]:
    if name not in FIELD_FIXTURES:
        raise KeyError(f"unknown field fixture {name!r}; known: {sorted(FIELD_FIXTURES)}")
    return FIELD_FIXTURES[name]()
