"""Expansion evaluators checked against the reference solver, order fits
and the divergence fixtures."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .coords import (CoordTable, SecondKindSignals, bernoulli, cbhd_coeffs, cbhd_series,
                     coord_first_kind, coord_pseudo_first_kind, coord_second_kind,
                     interaction_log)
from .fields import (BracketEvaluator, RPoly, Space, VField, cross_product_matrices,
                     lie_bracket, substitute_bracket_matrix)
from .flows import (DEFAULT_TOL, MatrixControl, OdeProblem, autonomous_flow,
                    fundamental_solution, matrix_exp, pushforward_eval, solve_reference)
from .freealg import NCSeries, Truncation, nc_log
from .hall import (Bracket, HallBasis, X, ad, build_hall_basis, expand_to_words,
                   hall_decompose)
from .signals import Control, ControlTuple, ordered_exponential, word_series

Fields = Mapping[int, VField]


class ClosureError(ValueError):
    """A bracket needed by an expansion has no field attached."""


@dataclass
class OrderFit:
    slope: float
    intercept: float
    residual: float
    scale_range: Tuple[float, float]
    used: int

    def within(self, target: float, half_width: float = 0.3) -> bool:
        return abs(self.slope - target) <= half_width


def order_fit(pairs: Sequence[Tuple[float, float]], floor: float = 100 * DEFAULT_TOL) -> OrderFit:
    """Least-squares slope of log(error) against log(scale); errors below
    ``floor`` are dropped."""
    pts = [(float(s), float(e)) for s, e in pairs if s > 0 and e > floor]
    if len(pts) < 4:
        raise ValueError(f"only {len(pts)} usable points above the floor {floor:g}")
    x = np.log([s for s, _ in pts])
    y = np.log([e for _, e in pts])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ [slope, icpt] - y) ** 2)))
    return OrderFit(float(slope), float(icpt), resid, (min(s for s, _ in pts), max(s for s, _ in pts)),
                    len(pts))


@dataclass
class ErrorReport:
    method: str
    params: Dict[str, object]
    scale_name: str
    scales: List[float] = field(default_factory=list)
    errors: List[float] = field(default_factory=list)
    approx: List[List[float]] = field(default_factory=list)
    oracle: List[List[float]] = field(default_factory=list)
    fit: Optional[OrderFit] = None
    extras: Dict[str, object] = field(default_factory=dict)

    def add(self, scale: float, approx, oracle) -> float:
        a = np.asarray(approx, dtype=float)
        o = np.asarray(oracle, dtype=float)
        if a.shape != o.shape:
            raise ValueError("approximation and oracle differ in dimension")
        if self.scales and not scale < self.scales[-1]:
            raise ValueError("scales must be strictly decreasing")
        err = float(np.max(np.abs(a - o)))
        self.scales.append(float(scale))
        self.errors.append(err)
        self.approx.append(a.tolist())
        self.oracle.append(o.tolist())
        return err

    @property
    def error(self) -> float:
        return self.errors[-1] if self.errors else float("nan")

    def fit_order(self, floor: float = 100 * DEFAULT_TOL) -> OrderFit:
        self.fit = order_fit(list(zip(self.scales, self.errors)), floor)
        return self.fit

    def to_dict(self) -> dict:
        d = {"method": self.method, "params": {k: _jsonable(v) for k, v in self.params.items()},
             "scale_name": self.scale_name, "scales": self.scales, "errors": self.errors,
             "approx": self.approx, "oracle": self.oracle,
             "fit": None if self.fit is None else asdict(self.fit),
             "extras": {k: _jsonable(v) for k, v in self.extras.items()}}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ErrorReport":
        d = json.loads(text)
        fit = None
        if d.get("fit"):
            f = d["fit"]
            fit = OrderFit(f["slope"], f["intercept"], f["residual"], tuple(f["scale_range"]), f["used"])
        return cls(d["method"], d["params"], d["scale_name"], d["scales"], d["errors"],
                   d["approx"], d["oracle"], fit, d.get("extras", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale", "error", "slope_so_far"])
        for i, (s, e) in enumerate(zip(self.scales, self.errors)):
            slope = ""
            if i >= 1 and e > 0 and self.errors[i - 1] > 0:
                slope = f"{math.log(e / self.errors[i - 1]) / math.log(s / self.scales[i - 1]):.6f}"
            w.writerow([repr(s), repr(e), slope])
        return buf.getvalue()


def _jsonable(v):
    if isinstance(v, Fraction):
        return {"exact": str(v), "decimal": float(v)}
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


# helpers -------------------------------------------------------------------

def _space(fields: Fields) -> Space:
    sps = {f.space for f in fields.values()}
    if len(sps) != 1:
        raise ValueError("fields must share the ambient space")
    return sps.pop()


def combine(coeffs: Mapping[Bracket, Fraction], ev: BracketEvaluator, space: Space) -> VField:
    """sum_b c_b f_b as an exact field."""
    out = VField.zero(space)
    for b, c in coeffs.items():
        if not c:
            continue
        try:
            fb = ev(b)
        except KeyError as exc:
            raise ClosureError(str(exc)) from None
        out = out + fb.scale(c)
    return out


def oracle_endpoint(fields: Fields, a: ControlTuple, p, t, tol: float = DEFAULT_TOL) -> np.ndarray:
    drift = fields.get(0) if 0 in a.letters else None
    chans = tuple((a[l], fields[l]) for l in a.letters if l != 0)
    if drift is None and not chans:
        return np.array(p, dtype=float)
    if drift is not None and a[0] != Control.constant(1, a.T):
        chans = ((a[0], drift),) + chans
        drift = None
    return solve_reference(OdeProblem(drift, chans, p, float(t), tol)).endpoint


def _point(p):
    return [v if isinstance(v, (int, Fraction)) else float(v) for v in p]


# Chen-Fliess ---------------------------------------------------------------

def cf_truncation(letters: Sequence[int], M: int, mode: str = "length", N0: int = 8) -> Truncation:
    """``length``: |sigma| <= M.  ``inputs``: at most M non-drift letters and
    at most N0 drift letters."""
    if mode == "length":
        return Truncation(M)
    if mode == "inputs":
        inputs = frozenset(l for l in letters if l != 0)
        return Truncation(M + N0, ((inputs, M), (frozenset([0]), N0)))
    raise ValueError(f"unknown truncation mode {mode!r}")


def chen_fliess_eval(fields: Fields, a: ControlTuple, p, t, M: int, mode: str = "length",
                     N0: int = 8) -> np.ndarray:
    """p + sum_sigma (int a_sigma) (f_sigma1 . grad) ... (f_sigman . grad) Id (p),
    with the operators applied exactly."""
    for l in a.letters:
        if l not in fields:
            raise ClosureError(f"no field for letter {l}")
    pt = _point(p)
    if M == 0:
        return np.array(pt, dtype=float)
    trunc = cf_truncation(a.letters, M, mode, N0)
    S = word_series(a, t, trunc)
    # V[w] = (f_w1 . grad) ... (f_wn . grad) Id, built by prepending letters
    memo: Dict[Tuple[int, ...], List[RPoly]] = {}

    def V(w):
        if w in memo:
            return memo[w]
        if len(w) == 1:
            r = list(fields[w[0]].comps)
        else:
            inner = V(w[1:])
            f = fields[w[0]]
            r = [f.derive(c) for c in inner]
        memo[w] = r
        return r

    exact = all(isinstance(v, (int, Fraction)) for v in pt)
    acc = [Fraction(v) if exact else float(v) for v in pt]
    for w, c in S:
        if not w:
            continue
        vals = [comp(pt) for comp in V(w)]
        for i, v in enumerate(vals):
            acc[i] += (c if exact else float(c)) * v
    return np.array([float(v) for v in acc])


# Magnus ----------------------------------------------------------------------

@dataclass
class MagnusResult:
    Z: VField
    endpoint: np.ndarray
    report: ErrorReport
    table: CoordTable


def magnus_field(fields: Fields, a: ControlTuple, t, M: int,
                 basis: Optional[HallBasis] = None) -> Tuple[VField, CoordTable]:
    basis = basis or _basis_for(a, M)
    tab = coord_first_kind(basis, a, t, M)
    ev = BracketEvaluator(fields)
    return combine(tab.values, ev, _space(fields)), tab


def _basis_for(a: ControlTuple, M: int) -> HallBasis:
    drift = 0 in a.letters
    q = len([l for l in a.letters if l != 0])
    return build_hall_basis(q, M, drift=drift)


def magnus_eval(fields: Fields, a: ControlTuple, p, t, M: int, basis: Optional[HallBasis] = None,
                tol: float = DEFAULT_TOL, with_oracle: bool = True) -> MagnusResult:
    """Z_M = sum_{|b|<=M} zeta_b f_b and its time-one flow from p."""
    Z, tab = magnus_field(fields, a, t, M, basis)
    end = autonomous_flow(Z, p, tol).endpoint
    rep = ErrorReport("magnus", {"M": M, "t": Fraction(t)}, "t")
    if with_oracle:
        rep.add(float(t), end, oracle_endpoint(fields, a, p, t, tol))
    return MagnusResult(Z, end, rep, tab)


# CBHD ---------------------------------------------------------------------------

def cbhd_field(fields: Sequence[VField], M: int, table: Optional[CoordTable] = None) -> VField:
    n = len(fields)
    table = table or cbhd_coeffs(n, None, M)
    ev = BracketEvaluator({i + 1: f for i, f in enumerate(fields)})
    coeffs = {b: c for b, c in table.values.items() if b.length <= M}
    return combine(coeffs, ev, fields[0].space)


def cbhd_eval(fields: Sequence[VField], eps, p, M: int, tol: float = DEFAULT_TOL,
              table: Optional[CoordTable] = None) -> ErrorReport:
    """e^{f_n} ... e^{f_1} p (f_1 first) against e^{CBHD_M(f_1..f_n)} p,
    all fields scaled by eps."""
    eps = Fraction(eps)
    scaled = [f.scale(eps) for f in fields]
    x = np.array(p, dtype=float)
    for f in scaled:
        x = autonomous_flow(f, x, tol).endpoint
    approx = autonomous_flow(cbhd_field(scaled, M, table), p, tol).endpoint
    rep = ErrorReport("cbhd", {"M": M, "eps": eps, "n_args": len(fields)}, "eps")
    rep.add(float(eps), approx, x)
    return rep


def cbhd_matrix(mats: Sequence[np.ndarray], M: int, table: Optional[CoordTable] = None) -> np.ndarray:
    """CBHD_M(A_1, ..., A_n) with the commutator AB - BA."""
    n = len(mats)
    table = table or cbhd_coeffs(n, None, M)
    gens = {i + 1: np.asarray(A) for i, A in enumerate(mats)}
    cache: Dict[Bracket, np.ndarray] = {}
    out = np.zeros_like(np.asarray(mats[0]), dtype=np.result_type(*mats, float))
    for b, c in table.values.items():
        if b.length <= M:
            out = out + float(c) * substitute_bracket_matrix(b, gens, cache)
    return out


# interaction picture ----------------------------------------------------------

def _pseudo_basis(q: int, M: int, N0: int) -> HallBasis:
    return build_hall_basis(q, M + N0, drift=True, keep=lambda b: b.n <= M and b.n0 <= N0)


def interaction_field(fields: Fields, u: ControlTuple, t, M: int, N0: int = 8,
                      basis: Optional[HallBasis] = None) -> Tuple[VField, CoordTable]:
    q = len(u.inputs())
    basis = basis or _pseudo_basis(q, M, N0)
    tab = coord_pseudo_first_kind(basis, u, t, M, N0)
    ev = BracketEvaluator(fields)
    return combine(tab.values, ev, _space(fields)), tab


def interaction_endpoint(f0: VField, Z: VField, p, t, tol: float = DEFAULT_TOL) -> np.ndarray:
    """e^{Z}(e^{t f0} p): the drift flow acts first."""
    y = autonomous_flow(f0, p, tol, time=t).endpoint
    return autonomous_flow(Z, y, tol).endpoint


def _gauss_pieces(breaks: Sequence[float], nodes: int):
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    out = []
    for a, b in zip(breaks, breaks[1:]):
        for x, w in zip(xg, wg):
            out.append(((a + b) / 2 + (b - a) / 2 * x, (b - a) / 2 * w))
    return out


class NumericInteractionLog:
    """Z(y) from quadrature of pushforward samples g_t(tau, y).

    First order: int_0^t g.  Second order adds
    1/2 int int_{s1<s2} [g(s1), g(s2)] with the Jacobians of g taken by
    central differences."""

    def __init__(self, f0: VField, fields: Fields, u: ControlTuple, t, M: int,
                 nodes: int = 8, tol: float = 1e-12, fd_step: float = 1e-5):
        if M not in (1, 2):
            raise ValueError("numeric route implemented for M = 1, 2")
        self.f0, self.fields, self.u, self.t = f0, fields, u, float(t)
        self.M, self.tol, self.h = M, tol, fd_step
        br = [float(b) for b in u.breaks if b < t] + [float(t)]
        self.quad = _gauss_pieces(br, nodes)
        self.nodes = nodes

    def g(self, tau: float, y) -> np.ndarray:
        out = np.zeros(len(y))
        for l, c in self.u.inputs():
            ct = c.evaluate(tau)
            if ct:
                out += ct * pushforward_eval(self.f0, self.fields[l], self.t, tau, y, self.tol)
        return out

    def Dg(self, tau: float, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        d = len(y)
        J = np.zeros((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = self.h
            J[:, k] = (self.g(tau, y + e) - self.g(tau, y - e)) / (2 * self.h)
        return J

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        Z = np.zeros(len(y))
        for tau, w in self.quad:
            Z += w * self.g(tau, y)
        if self.M >= 2:
            # triangle s1 < s2 mapped from the square by s1 = s2 * v
            xg, wg = np.polynomial.legendre.leggauss(self.nodes)
            for s2, w2 in self.quad:
                g2, D2 = self.g(s2, y), self.Dg(s2, y)
                for x, wv in zip(xg, wg):
                    s1 = s2 * (x + 1) / 2
                    w1 = s2 * wv / 2
                    g1, D1 = self.g(s1, y), self.Dg(s1, y)
                    # [g1, g2] = Dg2 g1 - Dg1 g2
                    Z += 0.5 * w2 * w1 * (D2 @ g1 - D1 @ g2)
        return Z

    def endpoint(self, p, tol: float = 1e-10) -> np.ndarray:
        y = autonomous_flow(self.f0, p, self.tol, time=self.t).endpoint
        return _integrate_callable(lambda s, x: self(x), y, 1.0, tol)


def _integrate_callable(rhs, y0, T: float, tol: float) -> np.ndarray:
    from ._kernels import dopri_py
    x = np.array(y0, dtype=float)
    st, *_ = dopri_py.integrate(rhs, x, 0.0, T, tol, math.inf, 100000, 0.0)
    if st:
        raise RuntimeError("numeric interaction flow failed")
    return x


def interaction_magnus_eval(f0: VField, fields: Fields, u: ControlTuple, p, t, M: int,
                            N0: int = 8, tol: float = DEFAULT_TOL, numeric_route: bool = False,
                            nodes: int = 8) -> ErrorReport:
    """Endpoint e^{Z~} e^{t f0} p with Z~ = sum eta_b f_b over n(b) <= M,
    n0(b) <= N0, against the oracle; optionally also through the
    quadrature route."""
    allf = dict(fields)
    allf[0] = f0
    Z, tab = interaction_field(allf, u, t, M, N0)
    end = interaction_endpoint(f0, Z, p, t, tol)
    rep = ErrorReport("interaction", {"M": M, "N0": N0, "t": Fraction(t)}, "u_l1")
    rep.add(u.input_l1(t), end, oracle_endpoint(allf, u, p, t, tol))
    if numeric_route:
        num = NumericInteractionLog(f0, fields, u, t, M, nodes, tol)
        e2 = num.endpoint(p)
        rep.extras["numeric_endpoint"] = e2.tolist()
        rep.extras["route_gap"] = float(np.max(np.abs(e2 - end)))
    return rep


# Sussmann -------------------------------------------------------------------

def sussmann_brackets(basis: HallBasis, filt: Tuple) -> List[Bracket]:
    """``("length", M)`` or ``("S", M, n0_cap)``."""
    if filt[0] == "length":
        return [b for b in basis.elements if b.length <= filt[1]]
    if filt[0] == "S":
        _, M, cap = filt
        return [b for b in basis.elements if b.n <= M and b.n0 <= cap]
    raise ValueError(f"unknown filter {filt!r}")


def sussmann_product(brackets: Sequence[Bracket], basis: HallBasis, xi: Mapping[Bracket, Fraction],
                     ev: BracketEvaluator, p, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Apply e^{xi_b f_b} to p, largest basis element first."""
    x = np.array(p, dtype=float)
    for b in sorted(brackets, key=basis.index, reverse=True):
        c = xi.get(b, 0)
        if c:
            fb = ev(b)
            if not fb.is_zero():
                x = autonomous_flow(fb.scale(c), x, tol).endpoint
    return x


def sussmann_eval(basis: HallBasis, fields: Fields, a: ControlTuple, p, t, filt: Tuple,
                  tol: float = DEFAULT_TOL, xi: Optional[Mapping[Bracket, Fraction]] = None
                  ) -> ErrorReport:
    brs = sussmann_brackets(basis, filt)
    if xi is None:
        xi = coord_second_kind(brs, a, t).values
    ev = BracketEvaluator(fields)
    end = sussmann_product(brs, basis, xi, ev, p, tol)
    scale = a.input_l1(t) if 0 in a.letters else float(a.total_l1(t))
    rep = ErrorReport("sussmann", {"filter": list(filt), "t": Fraction(t)},
                      "u_l1" if 0 in a.letters else "a_l1")
    rep.add(scale, end, oracle_endpoint(fields, a, p, t, tol))
    if filt[0] == "S":
        rep.extras["tail"] = _sussmann_tail(basis, filt, a, t, ev, p)
    return rep


def _sussmann_tail(basis, filt, a, t, ev, p) -> float:
    """sum |xi_b| |f_b(p)| over the first shell beyond the n0 cap."""
    _, M, cap = filt
    shell = build_hall_basis(len(basis.letters) - 1, M + cap + 1, drift=True,
                             keep=lambda b: b.n <= M and b.n0 <= cap + 1)
    brs = [b for b in shell.elements if b.n0 == cap + 1]
    sig = SecondKindSignals(a.restrict(t) if t < a.T else a)
    tot = 0.0
    for b in brs:
        v = sig.xi(b)(Fraction(t))
        if v:
            tot += abs(float(v)) * float(np.max(np.abs(ev(b)([float(x) for x in p]))))
    return tot


def sussmann_matrix_eval(basis: HallBasis, mats: Mapping[int, np.ndarray], a: ControlTuple, t,
                         prefix_length: int, tol: float = 1e-13) -> ErrorReport:
    """Ordered product of e^{xi_b A_b} against the fundamental solution of
    Y' = sum_i a_i(t) A_i Y.

    The word series maps to matrices through the anti-morphism X_i -> A_i,
    so a bracket b goes to (-1)^{|b|-1} A_b and the product order is
    reversed with respect to the vector-field case."""
    brs = [b for b in basis.elements if b.length <= prefix_length]
    xi = coord_second_kind(brs, a, t).values
    cache: Dict[Bracket, np.ndarray] = {}
    n = next(iter(mats.values())).shape[0]
    dtype = np.result_type(*mats.values(), float)
    Y = np.eye(n, dtype=dtype)
    tail = 0.0
    for b in sorted(brs, key=basis.index):
        c = xi.get(b, 0)
        if not c:
            continue
        Ab = substitute_bracket_matrix(b, mats, cache) * (-1) ** (b.length - 1)
        Y = Y @ matrix_exp(float(c) * Ab)
        if b.length == prefix_length:
            tail += abs(float(c)) * np.linalg.norm(Ab, 2)
    MC = MatrixControl(tuple((a[l], mats[l]) for l in a.letters))
    ref = fundamental_solution(MC, t, tol)
    rep = ErrorReport("sussmann_matrix", {"prefix_length": prefix_length, "t": Fraction(t)}, "a_l1")
    rep.add(float(a.total_l1(t)), np.concatenate([Y.real.ravel(), np.imag(Y).ravel()]),
            np.concatenate([ref.real.ravel(), np.imag(ref).ravel()]))
    rep.extras["last_shell_sum"] = tail
    return rep


# scalar-input refinement ------------------------------------------------------

def _refined_letters(u: Control, t: Fraction, trunc: Truncation, K: int, L: int):
    U = u.primitive()
    from .coords import shifted_power
    out = []
    for l in range(L + 1):
        for k in range(1, K + 1):
            b = ad(X(0), ad(X(1), X(0), k), l)
            if b.length > trunc.degree:
                continue
            img = expand_to_words(b, trunc)
            if img.is_zero():
                continue
            ctl = (U ** k).scale(Fraction(1, math.factorial(k))).mul_poly(shifted_power(t, l))
            out.append(((l, k), img, ctl))
    return out


def refined_log(u: Control, t, trunc: Truncation, K: int, L: int) -> NCSeries:
    """Y with e^{t X0} e^{Y} e^{U(t) X1} = x(t), from the extended letters
    ad^l_{X0} ad^k_{X1}(X0) driven by (s - t)^l / l! U(s)^k / k!."""
    t = Fraction(t)
    letters = _refined_letters(u, t, trunc, K, L)
    S = ordered_exponential([(img, c) for _, img, c in letters], t, trunc)
    return nc_log(S)


def scalar_refined_eval(f0: VField, f1: VField, u: Control, p, t, M: int, L: int = 8,
                        tol: float = DEFAULT_TOL, cf: bool = True) -> ErrorReport:
    """e^{U(t) f1} e^{Y_M} e^{t f0} p against the oracle, with Y_M keeping
    at most M input letters and L + 1 drift letters per bracket.  The
    U-based Chen-Fliess value is stored in ``extras``."""
    t = Fraction(t)
    trunc = Truncation(M + L + 1, ((frozenset([1]), M), (frozenset([0]), L + 1)))
    Y = refined_log(u, t, trunc, M, L)
    basis = build_hall_basis(1, M + L + 1, drift=True, keep=lambda b: b.n <= M and b.n0 <= L + 1)
    coeffs = hall_decompose(Y, basis, check_lie=False)
    fields = {0: f0, 1: f1}
    Yf = combine(coeffs, BracketEvaluator(fields), f0.space)
    U_t = u.primitive()(t)
    y = autonomous_flow(f0, p, tol, time=t).endpoint
    y = autonomous_flow(Yf, y, tol).endpoint
    end = autonomous_flow(f1.scale(U_t), y, tol).endpoint
    a = ControlTuple.affine([u.restrict(t) if t < u.T else u])
    rep = ErrorReport("scalar_refined", {"M": M, "L": L, "t": t}, "U_sup")
    rep.add(u.primitive().sup_norm(t), end, oracle_endpoint(fields, a, p, t, tol))
    if cf:
        rep.extras["u_chen_fliess"] = u_chen_fliess_eval(f0, f1, u, p, t, M).tolist()
    return rep


def u_chen_fliess_eval(f0: VField, f1: VField, u: Control, p, t, M: int) -> np.ndarray:
    """x(t) = y(t) then the f1-flow for time U(t), where y is driven by the
    letters Y_k -> ad^k_{X1}(X0) / k! with weights U(s)^k.  Words
    (k_1..k_l) followed by X1^j are kept when l + |k| + j <= M."""
    t = Fraction(t)
    U = u.primitive()
    Ut = U(t)
    pt = _point(p)
    fields = {0: f0, 1: f1}
    ev = BracketEvaluator(fields)
    D = {k: ev(ad(X(1), X(0), k)).scale(Fraction(1, math.factorial(k))) for k in range(M)}
    sp = f0.space
    ident = [RPoly.var(sp, i) for i in range(sp.dim)]
    # phi_j = (f1 . grad)^j Id * Ut^j / j!
    base = []
    cur = ident
    for j in range(M + 1):
        base.append([c.scale(Ut ** j / math.factorial(j)) for c in cur])
        cur = [f1.derive(c) for c in cur]
    Tt = Control.constant(1, U.T)
    # iterated integrals of U^{k_1} ... U^{k_l}
    total = [Fraction(0)] * sp.dim if all(isinstance(v, (int, Fraction)) for v in pt) else [0.0] * sp.dim

    def walk(word, integ, remaining):
        # word applied as D_{k1} ... D_{kl} on the phi_j
        val = integ(t) if word else Fraction(1)
        if val:
            for j in range(remaining + 1):
                comps = base[j]
                for k in reversed(word):
                    comps = [D[k].derive(c) for c in comps]
                for i, c in enumerate(comps):
                    total[i] += val * c(pt)
        for k in range(0, remaining):
            cost = 1 + k
            if cost > remaining:
                break
            w = U ** k if k else Tt
            walk(word + (k,), (integ * w).primitive(), remaining - cost)

    walk((), Tt, M)
    return np.array([float(v) for v in total])


# formal identity -------------------------------------------------------------

def formal_zm_cbh_identity(u: Control, t, r: int, nu: int, detail: bool = False):
    """Compare the (r, nu) components (r input letters, nu drift letters) of
    Z_inf and CBHD(Y_inf, U(t) X1) in the free algebra over {X0, X1}."""
    if r < 1 or nu < 0:
        raise ValueError("need r >= 1 and nu >= 0")
    t = Fraction(t)
    trunc = Truncation(r + nu, ((frozenset([1]), r), (frozenset([0]), nu)))
    a = ControlTuple.affine([u])
    Z = interaction_log(a, t, trunc, nu)
    Zc = _bihomogeneous(Z, r, nu)
    Y = refined_log(u, t, trunc, r, max(nu - 1, 0)) if nu >= 1 else NCSeries.zero(trunc)
    UX1 = NCSeries.letter(1, trunc, u.primitive()(t))
    C = cbhd_series([Y, UX1], r + nu)
    Cc = _bihomogeneous(C, r, nu)
    ok = Zc == Cc
    if detail:
        return ok, Zc, Cc
    return ok


def _bihomogeneous(s: NCSeries, r: int, nu: int) -> NCSeries:
    return s.filter(lambda w: w.count(1) == r and w.count(0) == nu)


# counter-examples ---------------------------------------------------------------

def theta_partial(eps: Fraction, Mp: int) -> Fraction:
    """1 - eps/2 + sum_{k=1..Mp} B_{2k} eps^{2k}."""
    eps = Fraction(eps)
    return 1 - eps / 2 + sum((bernoulli(2 * k) * eps ** (2 * k) for k in range(1, Mp + 1)), Fraction(0))


def cbh_flow_value(eps: Fraction, M: int) -> float:
    """Second coordinate of e^{CBHD_M(eps f1, eps f0)}(0) for the optimal
    pair, in closed form."""
    e = float(eps)
    total = -math.log1p(-e)
    for k in range(1, M):
        Bk = bernoulli(k)
        if Bk:
            total += float(Bk * Fraction(eps) ** k) * ((1 - e) ** (-k) - 1) / k
    return total


@dataclass
class DivergenceScan:
    eps: Fraction
    rows: List[Tuple[int, Fraction, float]]
    k_star: Optional[int]
    ratio_limit: int

    def theta(self, Mp: int) -> Fraction:
        for m, th, _ in self.rows:
            if m == Mp:
                return th
        raise KeyError(Mp)


def cbh_divergence(eps, M_max: int, ratio_scan: Optional[int] = None) -> DivergenceScan:
    """Partial sums Theta_{2M'+1}(0) for M' <= M_max with the matching flow
    values, and k_star: the first k with |B_{2k+2} eps^2 / B_{2k}| > 1 from
    there on (up to the scan limit)."""
    eps = Fraction(eps)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    rows = []
    th = 1 - eps / 2
    for Mp in range(M_max + 1):
        if Mp:
            th += bernoulli(2 * Mp) * eps ** (2 * Mp)
        rows.append((Mp, th, cbh_flow_value(eps, 2 * Mp + 1) if Mp <= 80 else float("nan")))
    K = ratio_scan or max(M_max, 2 * int(math.pi / float(eps)) + 20)
    ratios = [abs(bernoulli(2 * k + 2) * eps ** 2 / bernoulli(2 * k)) > 1 for k in range(1, K + 1)]
    k_star = None
    for k in range(K, 0, -1):
        if not ratios[k - 1]:
            break
        k_star = k
    return DivergenceScan(eps, rows, k_star, K)


def cbh_small_order_check(eps, M: int, tol: float = DEFAULT_TOL) -> float:
    """|e^{eps f0} e^{eps f1}(0) - e^{CBHD_M}(0)| with the flow of the
    truncated CBHD field computed numerically."""
    from .fixtures import optimal_pair
    f0, f1 = optimal_pair()
    rep = cbhd_eval([f1, f0], eps, [0, 0], M, tol)
    return rep.error


def usual_magnus_control_counterexample(eps, t, n_max: int, x2=Fraction(1, 2),
                                        grid: int = 4) -> List[Tuple[int, float]]:
    """Norms of the summands zeta_k ad^k_{f0}(f1), f0 = x2 e1, f1 = e2/(1-x1),
    u(s) = s, on the ball of radius eps around (0, x2)."""
    from .fixtures import magnus_control_pair
    t, eps, x2 = Fraction(t), Fraction(eps), Fraction(x2)
    f0, f1 = magnus_control_pair()
    out = []
    g = f1
    pts = []
    for i in range(-grid, grid + 1):
        for j in range(-grid, grid + 1):
            dx, dy = eps * Fraction(i, grid), eps * Fraction(j, grid)
            if dx * dx + dy * dy <= eps * eps:
                pts.append((dx, x2 + dy))
    for k in range(n_max + 1):
        z = (-1) ** (k + 1) * t ** (k + 2) * bernoulli(k + 1) / math.factorial(k + 1)
        best = Fraction(0)
        if z:
            for pnt in pts:
                v = g.comps[1](pnt)
                best = max(best, abs(z * v))
        out.append((k, best))
        g = lie_bracket(f0, g)
    return out


def so3_sequence(k_max: int) -> List[Tuple[Bracket, Bracket]]:
    """b_0 = (X1, X2), b_{k+1}^1 = [b_k^2, [b_k^1, b_k^2]],
    b_{k+1}^2 = [b_k^1, [b_k^1, b_k^2]]."""
    seq = [(X(1), X(2))]
    for _ in range(k_max):
        b1, b2 = seq[-1]
        inner = Bracket.of(b1, b2)
        seq.append((Bracket.of(b2, inner), Bracket.of(b1, inner)))
    return seq


def so3_basis(k_max: int) -> HallBasis:
    """Hall set up to length 3^k_max in which every b_k^1 < b_k^2."""
    seq = so3_sequence(k_max)
    prio = []
    for b1, b2 in seq[1:]:
        prio += [b1, b2]
    return build_hall_basis(2, 3 ** k_max, "custom", priority=prio)


def so3_xi(k_max: int, a: Optional[ControlTuple] = None):
    """Exact xi_{b_k^1} (as polynomials in t) for u = (1, 1)."""
    T = Fraction(1)
    if a is None:
        a = ControlTuple((1, 2), (Control.constant(1, T), Control.constant(1, T)))
    sig = SecondKindSignals(a)
    return [(b1, sig.xi(b1)) for b1, _ in so3_sequence(k_max)]


def matrix_divergence(k_max: int = 4, k_norm: int = 2) -> dict:
    """Growth of xi_{b_k} for the complex cross-product fixture and the
    norms ||exp(xi_{b_k} A_{b_k}) - I|| at t = 2 gamma."""
    from .fixtures import so3_complex
    mats = so3_complex()
    xis = so3_xi(k_max)
    consts = []
    for k, (b, xi) in enumerate(xis):
        # xi_{b_k}(t) = c_k t^{3^k}
        n = 3 ** k
        c = xi.pieces[0][n] if len(xi.pieces[0]) > n else Fraction(0)
        if any(xi.pieces[0][:n]):
            raise ArithmeticError("unexpected lower-order terms")
        consts.append((k, n, c))
    gamma = max(float(c) ** (-1.0 / n) for _, n, c in consts)
    cache: Dict[Bracket, np.ndarray] = {}
    seq = so3_sequence(k_max)
    pattern = []
    for k, (b1, b2) in enumerate(seq):
        A1 = substitute_bracket_matrix(b1, mats, cache)
        A2 = substitute_bracket_matrix(b2, mats, cache)
        F = cross_product_matrices()
        pattern.append((k, bool(np.allclose(A1, (-1) ** (k + 1) * 1j * F[0])) if k else True,
                        bool(np.allclose(A2, -1j * F[1])) if k else True))
    t = 2 * gamma
    norms = []
    for k, n, c in consts[:k_norm + 1]:
        xi_val = float(c) * t ** n
        A = substitute_bracket_matrix(seq[k][0], mats, cache)
        # ||e^{xi A} - I|| >= |e^{xi lam} - 1| for every eigenvalue lam;
        # the exponent is reported so huge values do not overflow
        growth = max(float((xi_val * lam).real) for lam in np.linalg.eigvals(A))
        if growth < 600:
            val = float(np.linalg.norm(matrix_exp(xi_val * A) - np.eye(3), 2))
        else:
            val = math.inf
        norms.append((k, xi_val, val, growth))
    return {"coefficients": consts, "gamma": gamma, "pattern": pattern, "norms": norms, "t": t}


# intrinsic representation ----------------------------------------------------

def intrinsic_repr_eval(fields: Fields, a: ControlTuple, t_sweep: Sequence, M: int,
                        tol: float = DEFAULT_TOL) -> ErrorReport:
    """Oracle x(t) from 0 against the value Z_M(t)(0) (no flow)."""
    sp = _space(fields)
    zero = [0] * sp.dim
    rep = ErrorReport("intrinsic", {"M": M}, "t")
    ratios = []
    for t in sorted((Fraction(s) for s in t_sweep), reverse=True):
        Z, _ = magnus_field(fields, a, t, M)
        val = np.array([float(v) for v in Z(zero)])
        x = oracle_endpoint(fields, a, zero, t, tol)
        err = rep.add(float(t), val, x)
        ratios.append(err / (float(t) ** (M + 1) + float(t) * float(np.max(np.abs(x)))))
    rep.extras["ratios"] = ratios
    return rep


# order sweeps ---------------------------------------------------------------

SWEEP_SCALES = tuple(Fraction(1, 2 ** j) for j in range(3, 9))


def _shape_control(amplitude) -> Control:
    """Fixed-shape piecewise-linear control with jumps on [0, 1]."""
    return Control.piecewise_linear([0, Fraction(1, 3), Fraction(2, 3), 1],
                                    [(2, -1), (1, 3), (-2, 0)]).scale(amplitude)


SWEEP_SYSTEMS = {
    # name: (fixture, point, amplitude for t-sweeps, amplitude for u-sweeps)
    "normal-form-3d": ("normal-form-3d", (2, 1, -1), 3, 16),
    "optimal-pair": ("optimal-pair", (Fraction(1, 5), Fraction(-1, 10)), 1, 4),
}
# Drift and input for the amplitude sweeps.  With f0 as drift every bracket
# of the optimal pair with two inputs vanishes, the truncation in M is then
# exact and only the n0 cap is left, so its roles are exchanged.
U_SWEEP_ROLES = {"normal-form-3d": (0, 1), "optimal-pair": (1, 0)}
CBHD_POINTS = {
    "normal-form-3d": (Fraction(1, 2), Fraction(1, 3), Fraction(-1, 4)),
    "optimal-pair": (Fraction(1, 5), Fraction(-1, 10)),
}
U_SWEEP_T = Fraction(1, 4)


def order_sweep(method: str, system: str, M: int, scales: Sequence = SWEEP_SCALES,
                tol: float = DEFAULT_TOL, N0: int = 8, fit: bool = True) -> ErrorReport:
    """Error against the oracle over a geometric range of scales.

    ``cf`` and ``magnus`` sweep t with the control shape rescaled to [0, t]
    (a control restricted from a fixed smooth signal hides the bracket
    terms at small t).  ``cbhd`` sweeps the field scale eps.
    ``interaction`` and ``sussmann`` sweep the input amplitude at
    t = 1/4; their coordinates are homogeneous of degree n(b) in the
    amplitude, so one exact table is rescaled.  See ``U_SWEEP_ROLES`` for
    which field drives."""
    from .fixtures import load_fields
    fix, p, amp_t, amp_u = SWEEP_SYSTEMS[system]
    fields = load_fields(fix)
    scales = sorted((Fraction(s) for s in scales), reverse=True)
    rep = ErrorReport(method, {"M": M, "system": system}, "t")
    if method in ("cf", "magnus"):
        shape = _shape_control(amp_t)
        for t in scales:
            a = ControlTuple.affine([shape.time_rescale(t).restrict(t)])
            o = oracle_endpoint(fields, a, p, t, tol)
            if method == "cf":
                ap = chen_fliess_eval(fields, a, p, t, M)
            else:
                ap = magnus_eval(fields, a, p, t, M, tol=tol, with_oracle=False).endpoint
            rep.add(float(t), ap, o)
    elif method == "cbhd":
        rep.scale_name = "eps"
        pair = [fields[1], fields[0]]
        tab = cbhd_coeffs(2, None, M)
        for e in scales:
            r = cbhd_eval(pair, e, CBHD_POINTS[system], M, tol, tab)
            rep.add(float(e), r.approx[0], r.oracle[0])
    elif method in ("interaction", "sussmann"):
        rep.scale_name = "u_l1"
        rep.params.update({"N0": N0, "t": U_SWEEP_T})
        t = U_SWEEP_T
        drift, inp = U_SWEEP_ROLES.get(system, (0, 1))
        fields = {0: fields[drift], 1: fields[inp]}
        base = ControlTuple.affine([_shape_control(amp_u).time_rescale(t)])
        ev = BracketEvaluator(fields)
        sp = _space(fields)
        if method == "interaction":
            basis = _pseudo_basis(1, M, N0)
            tab = coord_pseudo_first_kind(basis, base, t, M, N0).values
        else:
            basis = build_hall_basis(1, M + N0, drift=True, keep=lambda b: b.n <= M and b.n0 <= N0)
            brs = sussmann_brackets(basis, ("S", M, N0))
            tab = coord_second_kind(brs, base, t).values
        for e in scales:
            ue = base.scale_inputs(e)
            vals = {b: c * e ** b.n for b, c in tab.items()}
            o = oracle_endpoint(fields, ue, p, t, tol)
            if method == "interaction":
                ap = interaction_endpoint(fields[0], combine(vals, ev, sp), p, t, tol)
            else:
                ap = sussmann_product(brs, basis, vals, ev, p, tol)
            rep.add(ue.input_l1(t), ap, o)
    else:
        raise ValueError(f"unknown method {method!r}")
    if fit:
        rep.fit_order(100 * tol)
    return rep
