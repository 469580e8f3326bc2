"""Numerical reference solutions, autonomous flows, Jacobians,
pushforwards and matrix operators."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm, logm

from . import _kernels
from ._kernels import dopri_py
from .fields import RPoly, Space, VField
from .signals import Control

DEFAULT_TOL = float(os.environ.get("FLOWEXP_TOL", "1e-12"))
MAX_STEPS = 2_000_000


class SolverError(RuntimeError):
    """Integration failed (step underflow, pole, step budget)."""


class PoleError(SolverError):
    pass


_STATUS = {1: "step size underflow", 2: "pole encountered", 3: "step budget exhausted"}


@dataclass(frozen=True)
class OdeProblem:
    """x' = drift(x) + sum_c u_c(t) f_c(x), x(0) = p, integrated to t.

    Channel signals are either ``Control`` instances (piecewise polynomial,
    handled by the compiled kernel) or objects with ``evaluate(t)``.
    """

    drift: Optional[VField]
    channels: Tuple[Tuple[object, VField], ...]
    p: Tuple[float, ...]
    t: float
    tol: float = DEFAULT_TOL
    max_step: float = math.inf

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        fs = ([self.drift] if self.drift is not None else []) + [f for _, f in self.channels]
        if not fs:
            raise ValueError("problem has no vector field")
        sp = fs[0].space
        if any(f.space != sp for f in fs):
            raise ValueError("fields must share the ambient space")
        if len(self.p) != sp.dim:
            raise ValueError("initial point has the wrong dimension")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))

    @property
    def space(self) -> Space:
        return (self.drift or self.channels[0][1]).space


@dataclass
class FlowResult:
    endpoint: np.ndarray
    jacobian: Optional[np.ndarray] = None
    steps: int = 0
    rejected: int = 0
    error_estimate: float = 0.0
    backend: str = ""

    def to_json(self) -> str:
        d = {"endpoint": [float(v) for v in self.endpoint],
             "jacobian": None if self.jacobian is None else self.jacobian.tolist(),
             "steps": self.steps, "rejected": self.rejected,
             "error_estimate": self.error_estimate, "backend": self.backend}
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "FlowResult":
        d = json.loads(text)
        jac = None if d["jacobian"] is None else np.array(d["jacobian"])
        return cls(np.array(d["endpoint"]), jac, d["steps"], d["rejected"],
                   d["error_estimate"], d.get("backend", ""))


# compiled polynomial systems ----------------------------------------------

@dataclass
class PolySystem:
    """Flattened monomial tables for x' = sum_c s_c(t) F_c(x)."""

    dim: int
    pole: int
    exps: np.ndarray
    coefs: np.ndarray
    chan: np.ndarray
    signals: List[object]

    @classmethod
    def build(cls, dim: int, pole: Optional[int],
              channels: Sequence[Tuple[object, Tuple[np.ndarray, np.ndarray]]]) -> "PolySystem":
        ex, co, ch = [], [], []
        for c, (e, k) in enumerate(t for _, t in channels):
            if len(e):
                ex.append(e)
                co.append(k)
                ch.append(np.full(len(e), c, dtype=np.int64))
        if ex:
            exps = np.ascontiguousarray(np.vstack(ex), dtype=np.int64)
            coefs = np.ascontiguousarray(np.vstack(co), dtype=float)
            chan = np.ascontiguousarray(np.concatenate(ch))
        else:
            exps = np.zeros((0, dim + 1), dtype=np.int64)
            coefs = np.zeros((0, dim))
            chan = np.zeros(0, dtype=np.int64)
        return cls(dim, -1 if pole is None else pole, exps, coefs, chan, [s for s, _ in channels])

    @property
    def polynomial_signals(self) -> bool:
        return all(isinstance(s, Control) for s in self.signals)

    def breakpoints(self, t: float) -> List[float]:
        pts = {0.0, float(t)}
        for s in self.signals:
            if isinstance(s, Control):
                pts.update(float(b) for b in s.breaks if 0 < b < t)
        return sorted(pts)

    def piece_table(self, t_mid: float) -> np.ndarray:
        tabs = []
        for s in self.signals:
            k = s._piece_index(Fraction(t_mid))
            tabs.append([float(c) for c in s.pieces[k]])
        P = max(1, max(len(r) for r in tabs))
        out = np.zeros((len(tabs), P))
        for i, r in enumerate(tabs):
            out[i, :len(r)] = r
        return out

    def callable_rhs(self):
        sig = self.signals
        d = self.dim
        xe = self.exps[:, :d]
        we = self.exps[:, d]
        coefs, chan, pole = self.coefs, self.chan, self.pole

        def f(t, x):
            cval = np.array([s.evaluate(t) for s in sig])
            mono = cval[chan]
            if pole >= 0:
                base = 1.0 - x[pole]
                if abs(base) < 1e-12:
                    raise dopri_py.PoleHit
                mono = mono * (1.0 / base) ** we
            mono = mono * np.prod(x ** xe, axis=1)
            return mono @ coefs

        return f


def _signal_horizon(s) -> float:
    return float(s.T)


def integrate_system(sys: PolySystem, p: Sequence[float], t: float, tol: float,
                     max_step: float = math.inf, backend: str = "auto") -> FlowResult:
    x = np.array(p, dtype=float)
    t = float(t)
    for s in sys.signals:
        if t > _signal_horizon(s) * (1 + 1e-15):
            raise ValueError("integration horizon exceeds the control horizon")
    steps = rejected = 0
    worst = 0.0
    h = 0.0
    if sys.polynomial_signals:
        kern = _kernels.get_backend(backend)
        name = "cython" if kern is not dopri_py else "python"
        pts = sys.breakpoints(t)
        for a, b in zip(pts, pts[1:]):
            ctl = np.ascontiguousarray(sys.piece_table((a + b) / 2))
            st, n, r, w, h = kern.integrate_piece(x, a, b, sys.exps, sys.coefs, sys.chan, ctl,
                                                  sys.pole, tol, max_step, MAX_STEPS, 0.0)
            steps += n
            rejected += r
            worst = max(worst, w)
            if st == 1 and sys.pole >= 0 and abs(1 - x[sys.pole]) < 1e-3:
                st = 2  # steps collapsed while approaching the pole
            if st:
                raise (PoleError if st == 2 else SolverError)(f"{_STATUS[st]} on [{a}, {b}]")
    else:
        name = "python"
        f = sys.callable_rhs()
        with np.errstate(over="raise", invalid="raise"):
            st, steps, rejected, worst, h = dopri_py.integrate(f, x, 0.0, t, tol, max_step, MAX_STEPS, 0.0)
        if st:
            raise (PoleError if st == 2 else SolverError)(_STATUS[st])
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite endpoint")
    return FlowResult(x, None, steps, rejected, worst * tol, name)


def problem_system(prob: OdeProblem) -> PolySystem:
    chans = []
    if prob.drift is not None:
        horizon = max([Fraction(prob.t).limit_denominator(10 ** 12)] +
                      [Fraction(s.T).limit_denominator(10 ** 12) for s, _ in prob.channels])
        chans.append((Control.constant(1, horizon), prob.drift.compiled()))
    for s, f in prob.channels:
        chans.append((s, f.compiled()))
    sp = prob.space
    return PolySystem.build(sp.dim, sp.pole, chans)


def solve_reference(prob: OdeProblem, backend: str = "auto") -> FlowResult:
    """Adaptive Dormand-Prince 5(4) with control breakpoints as step
    boundaries."""
    return integrate_system(problem_system(prob), prob.p, prob.t, prob.tol, prob.max_step, backend)


def autonomous_flow(g: VField, p: Sequence, tol: float = DEFAULT_TOL, time=1,
                    backend: str = "auto") -> FlowResult:
    """e^{time g} p.  Negative times integrate -g."""
    time = float(time)
    if time == 0 or g.is_zero():
        return FlowResult(np.array(p, dtype=float), None, 0, 0, 0.0, "none")
    if time < 0:
        g, time = g.scale(-1), -time
    sys = PolySystem.build(g.dim, g.space.pole, [(Control.constant(1, 1), g.compiled())])
    # integrate x' = time * g on [0, 1]: rescale the coefficients
    sys.coefs = sys.coefs * time
    return integrate_system(sys, p, 1.0, tol, backend=backend)


def augment_with_jacobian(f: VField) -> VField:
    """Field on K^{d+d^2}: (x, R) -> (f(x), Df(x) R), R stored row-major."""
    d = f.dim
    sp = Space(d + d * d, f.space.pole)

    def lift(p: RPoly) -> RPoly:
        return RPoly(sp, {m[:-1] + (0,) * (d * d) + m[-1:]: c for m, c in p.terms.items()})

    comps = [lift(c) for c in f.comps]
    J = f.jacobian()
    for i in range(d):
        for k in range(d):
            acc = RPoly(sp)
            for j in range(d):
                if not J[i][j].is_zero():
                    acc = acc + lift(J[i][j]) * RPoly.var(sp, d + j * d + k)
            comps.append(acc)
    return VField(sp, comps)


def flow_with_jacobian(f: Union[VField, OdeProblem], p: Optional[Sequence] = None, t=1,
                       tol: float = DEFAULT_TOL, backend: str = "auto") -> FlowResult:
    """Endpoint and d/dp of the flow, through the variational system."""
    if isinstance(f, OdeProblem):
        prob = f
        d = prob.space.dim
        drift = augment_with_jacobian(prob.drift) if prob.drift is not None else None
        chans = tuple((s, augment_with_jacobian(g)) for s, g in prob.channels)
        p0 = list(prob.p) + list(np.eye(d).ravel())
        res = solve_reference(OdeProblem(drift, chans, p0, prob.t, prob.tol, prob.max_step), backend)
    else:
        d = f.dim
        p0 = [float(v) for v in p] + list(np.eye(d).ravel())
        t = float(t)
        if t < 0:
            f, t = f.scale(-1), -t
        res = autonomous_flow(augment_with_jacobian(f), p0, tol, t, backend)
    y = res.endpoint
    return FlowResult(y[:d].copy(), y[d:].reshape(d, d), res.steps, res.rejected,
                      res.error_estimate, res.backend)


def pushforward_eval(f0: VField, f1: VField, t, tau, y: Sequence, tol: float = DEFAULT_TOL) -> np.ndarray:
    """g_t(tau, y) = (D Phi_0(tau - t, y))^{-1} f1(Phi_0(tau - t, y))."""
    s = float(tau) - float(t)
    res = flow_with_jacobian(f0, y, s, tol)
    J = res.jacobian
    if not np.all(np.isfinite(J)) or abs(np.linalg.det(J)) < 1e-300:
        raise SolverError("singular flow Jacobian")
    return np.linalg.solve(J, np.array(f1(res.endpoint), dtype=float))


# linear and matrix problems ------------------------------------------------

def linear_system(terms: Sequence[Tuple[object, np.ndarray]]) -> PolySystem:
    """y' = sum_c s_c(t) M_c y as a polynomial system."""
    N = terms[0][1].shape[0]
    exps = np.zeros((N, N + 1), dtype=np.int64)
    exps[:, :N] = np.eye(N, dtype=np.int64)
    chans = [(s, (exps.copy(), np.ascontiguousarray(np.asarray(M, dtype=float).T))) for s, M in terms]
    return PolySystem.build(N, None, chans)


def realify(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    if not np.iscomplexobj(M):
        return M.astype(float)
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


@dataclass(frozen=True)
class MatrixControl:
    """A(t) = sum_i s_i(t) M_i with piecewise-polynomial scalar channels."""

    terms: Tuple[Tuple[Control, np.ndarray], ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((s, np.asarray(M)) for s, M in self.terms))

    @property
    def n(self) -> int:
        return self.terms[0][1].shape[0]

    @property
    def T(self) -> Fraction:
        return self.terms[0][0].T

    @property
    def is_complex(self) -> bool:
        return any(np.iscomplexobj(M) for _, M in self.terms)

    @classmethod
    def constant(cls, A: np.ndarray, T) -> "MatrixControl":
        return cls(((Control.constant(1, T), np.asarray(A)),))

    @classmethod
    def entrywise(cls, controls: Sequence[Sequence[Control]]) -> "MatrixControl":
        n = len(controls)
        out = []
        for i in range(n):
            for j in range(n):
                E = np.zeros((n, n))
                E[i, j] = 1
                out.append((controls[i][j], E))
        return cls(tuple(out))

    def __call__(self, t: float) -> np.ndarray:
        return sum(s.evaluate(t) * M for s, M in self.terms)

    def scale(self, k: float) -> "MatrixControl":
        return MatrixControl(tuple((s, k * M) for s, M in self.terms))

    def breaks(self) -> List[Fraction]:
        return sorted(set().union(*(s.breaks for s, _ in self.terms)))

    def local_pieces(self, t) -> List[Tuple[float, np.ndarray]]:
        """[(length, coeff array (deg+1, n, n) in the local variable)] over [0, t]."""
        t = Fraction(t)
        br = [b for b in self.breaks() if b < t] + [t]
        dtype = complex if self.is_complex else float
        out = []
        for a, b in zip(br, br[1:]):
            mid = (a + b) / 2
            polys = []
            for s, M in self.terms:
                p = s.pieces[s._piece_index(mid)]
                # shift to the local variable sigma = time - a
                q = [Fraction(0)] * len(p)
                for k, c in enumerate(p):
                    for j in range(k + 1):
                        q[j] += c * math.comb(k, j) * a ** (k - j)
                polys.append(([float(c) for c in q], M))
            deg = max([len(q) for q, _ in polys] + [1])
            arr = np.zeros((deg, self.n, self.n), dtype=dtype)
            for q, M in polys:
                for j, c in enumerate(q):
                    arr[j] += c * M
            out.append((float(b - a), arr))
        return out

    def l1_norm(self, t=None, nodes: int = 64) -> float:
        """Integral of the spectral norm, by Gauss-Legendre on each piece."""
        t = self.T if t is None else Fraction(t)
        xg, wg = np.polynomial.legendre.leggauss(nodes)
        total = 0.0
        for L, arr in self.local_pieces(t):
            s = (xg + 1) * L / 2
            for sv, wv in zip(s, wg):
                A = sum(arr[j] * sv ** j for j in range(arr.shape[0]))
                total += wv * L / 2 * np.linalg.norm(A, 2)
        return float(total)


def matrix_exp(A: np.ndarray) -> np.ndarray:
    """Scaling-and-squaring exponential (scipy)."""
    return expm(np.asarray(A))


def matrix_ad_series(H0: np.ndarray, H1: np.ndarray, K: int) -> np.ndarray:
    """sum_{k<K} ad_{H0}^k(H1) / k!."""
    if K < 0:
        raise ValueError("K must be non-negative")
    out = np.zeros_like(np.asarray(H1), dtype=np.result_type(H0, H1, float))
    term = np.asarray(H1, dtype=out.dtype)
    for k in range(K):
        out = out + term
        term = (H0 @ term - term @ H0) / (k + 1)
    return out


def matrix_ad_bound(H0: np.ndarray, H1: np.ndarray, K: int) -> float:
    a = 2 * np.linalg.norm(H0, 2)
    return a ** K * np.linalg.norm(H1, 2) * math.exp(a) / math.factorial(K)


def fundamental_solution(A: MatrixControl, t, tol: float = 1e-13, Y0: Optional[np.ndarray] = None,
                         backend: str = "auto") -> np.ndarray:
    """Y(t) with Y' = A(t) Y and Y(0) = Y0 (identity by default), by the
    reference solver on the vectorized, realified if needed, system."""
    n = A.n
    cplx = A.is_complex or (Y0 is not None and np.iscomplexobj(Y0))
    Y0 = np.eye(n) if Y0 is None else np.asarray(Y0)
    if cplx:
        Y0 = np.vstack([Y0.real, Y0.imag]).astype(float)
    k = Y0.shape[1]
    terms = []
    for s, M in A.terms:
        Rm = realify(M.astype(complex)) if cplx else np.asarray(M, dtype=float)
        terms.append((s, np.kron(Rm, np.eye(k))))  # row-major vec(Y)
    res = integrate_system(linear_system(terms), Y0.ravel(), float(t), tol, backend=backend)
    Y = res.endpoint.reshape(Y0.shape)
    if cplx:
        return Y[:n] + 1j * Y[n:]
    return Y


def _poly_mul(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    out = np.zeros((P.shape[0] + Q.shape[0] - 1,) + P.shape[1:], dtype=np.result_type(P, Q))
    for i in range(P.shape[0]):
        for j in range(Q.shape[0]):
            out[i + j] += P[i] @ Q[j]
    return out


def _poly_int(P: np.ndarray) -> np.ndarray:
    out = np.zeros((P.shape[0] + 1,) + P.shape[1:], dtype=P.dtype)
    for j in range(P.shape[0]):
        out[j + 1] = P[j] / (j + 1)
    return out


def _poly_at(P: np.ndarray, s: float) -> np.ndarray:
    acc = np.zeros(P.shape[1:], dtype=P.dtype)
    for j in range(P.shape[0] - 1, -1, -1):
        acc = acc * s + P[j]
    return acc


def ordered_series_terms(A: MatrixControl, t, R: int) -> List[np.ndarray]:
    """[Phi_0, ..., Phi_R] at time t, Phi_r = int_0^t A(s) Phi_{r-1}(s) ds,
    so that sum_r Phi_r is the fundamental solution."""
    pieces = A.local_pieces(t)
    n = A.n
    dtype = complex if A.is_complex else float
    start = [np.eye(n, dtype=dtype)] + [np.zeros((n, n), dtype=dtype) for _ in range(R)]
    for L, Ak in pieces:
        cur = [start[0][None].copy()]
        for r in range(1, R + 1):
            P = _poly_int(_poly_mul(Ak, cur[r - 1]))
            P[0] += start[r]
            cur.append(P)
        start = [_poly_at(P, L) for P in cur]
    return start


def graded_log(terms: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Homogeneous components of log(sum_r W_r) with W_0 = I."""
    R = len(terms) - 1
    W = list(terms)
    n = W[0].shape[0]
    Z = [np.zeros((n, n), dtype=W[0].dtype) for _ in range(R + 1)]
    power = [np.zeros_like(Z[0])] + [W[r] for r in range(1, R + 1)]  # (S - I)^1
    for k in range(1, R + 1):
        for r in range(k, R + 1):
            Z[r] = Z[r] + ((-1) ** (k + 1) / k) * power[r]
        nxt = [np.zeros_like(Z[0]) for _ in range(R + 1)]
        for r in range(k + 1, R + 1):
            for j in range(1, r - k + 1):
                nxt[r] = nxt[r] + W[j] @ power[r - j]
        power = nxt
    return Z


def matrix_magnus(A: MatrixControl, t, R: int, mode: str = "plain",
                  H0: Optional[np.ndarray] = None, tol: float = 1e-13,
                  components: bool = False):
    """Z_R with exp(Z_R) approximating the fundamental solution of Y' = A Y.

    ``mode="interaction"``: A is the perturbation H1 and the result Z_R
    satisfies exp(Z_R) e^{t H0} ~ fundamental solution of Y' = (H0 + H1) Y.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    if mode == "plain":
        Z = graded_log(ordered_series_terms(A, t, R))
    elif mode == "interaction":
        if H0 is None:
            raise ValueError("interaction mode needs H0")
        Z = _interaction_terms(A, np.asarray(H0), t, R, tol)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if components:
        return Z
    return sum(Z[1:])


def _interaction_terms(H1: MatrixControl, H0: np.ndarray, t, R: int, tol: float) -> List[np.ndarray]:
    # block system Y_0' = H0 Y_0, Y_r' = H0 Y_r + H1 Y_{r-1}; then
    # G_r = e^{-t H0} Y_r is the graded ordered exponential of the
    # conjugated perturbation and Z = e^{t H0} log(G) e^{-t H0}
    n = H0.shape[0]
    cplx = H1.is_complex or np.iscomplexobj(H0)
    N = (R + 1) * n
    big0 = np.zeros((N, N), dtype=complex if cplx else float)
    for r in range(R + 1):
        big0[r * n:(r + 1) * n, r * n:(r + 1) * n] = H0
    terms = []
    for s, M in H1.terms:
        B = np.zeros_like(big0)
        for r in range(1, R + 1):
            B[r * n:(r + 1) * n, (r - 1) * n:r * n] = M
        terms.append((s, B))
    horizon = H1.T
    big = MatrixControl(((Control.constant(1, horizon), big0),) + tuple(terms))
    start = np.zeros((N, n), dtype=big0.dtype)
    start[:n] = np.eye(n)
    Y = fundamental_solution(big, t, tol, start)
    E = matrix_exp(float(t) * H0)
    Einv = matrix_exp(-float(t) * H0)
    G = [Einv @ Y[r * n:(r + 1) * n, 0:n] for r in range(R + 1)]
    Zg = graded_log(G)
    return [E @ z @ Einv for z in Zg]


def matrix_log(Y: np.ndarray) -> np.ndarray:
    """Principal logarithm (scipy), used as a cross-check."""
    return logm(Y)
