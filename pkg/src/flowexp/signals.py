"""Piecewise-polynomial control signals with exact iterated integrals."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .freealg import NCSeries, Truncation, Word

Rat = Union[int, Fraction]
Poly = Tuple[Fraction, ...]


# univariate polynomials in t, coefficients low -> high -----------------

def _trim(p) -> Poly:
    p = list(p)
    while p and p[-1] == 0:
        p.pop()
    return tuple(p)


def padd(p: Poly, q: Poly) -> Poly:
    n = max(len(p), len(q))
    return _trim((p[i] if i < len(p) else 0) + (q[i] if i < len(q) else 0) for i in range(n))


def pscale(p: Poly, k) -> Poly:
    return _trim(k * c for c in p)


def pmul(p: Poly, q: Poly) -> Poly:
    if not p or not q:
        return ()
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a:
            for j, b in enumerate(q):
                out[i + j] += a * b
    return _trim(out)


def peval(p: Poly, t) -> Fraction:
    acc = Fraction(0) if not isinstance(t, float) else 0.0
    for c in reversed(p):
        acc = acc * t + c
    return acc


def pint(p: Poly) -> Poly:
    """Antiderivative vanishing at zero."""
    return _trim([Fraction(0)] + [c / (i + 1) for i, c in enumerate(p)])


def pderiv(p: Poly) -> Poly:
    return _trim([c * i for i, c in enumerate(p)][1:])


def ppow(p: Poly, k: int) -> Poly:
    out: Poly = (Fraction(1),)
    for _ in range(k):
        out = pmul(out, p)
    return out


def pcompose_affine(p: Poly, a, b) -> Poly:
    """p(a*t + b)."""
    out: Poly = ()
    lin: Poly = _trim((Fraction(b), Fraction(a)))
    power: Poly = (Fraction(1),)
    for c in p:
        out = padd(out, pscale(power, c))
        power = pmul(power, lin)
    return out


@dataclass(frozen=True)
class Control:
    """Scalar piecewise polynomial on [0, T].

    ``breaks`` holds 0 = t0 < t1 < ... < tK = T, and ``pieces[k]`` is the
    polynomial (in absolute time t) on [t_k, t_{k+1}].
    """

    breaks: Tuple[Fraction, ...]
    pieces: Tuple[Poly, ...]
    label: str = ""

    def __post_init__(self):
        br = tuple(Fraction(b) for b in self.breaks)
        pcs = tuple(_trim(Fraction(c) for c in p) for p in self.pieces)
        if len(br) < 2 or br[0] != 0:
            raise ValueError("breakpoints must start at 0 and contain at least two points")
        if any(b1 >= b2 for b1, b2 in zip(br, br[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(pcs) != len(br) - 1:
            raise ValueError("need exactly one polynomial per interval")
        object.__setattr__(self, "breaks", br)
        object.__setattr__(self, "pieces", pcs)

    # constructors
    @classmethod
    def constant(cls, c: Rat, T: Rat, label: str = "") -> "Control":
        return cls((0, T), ((c,),), label)

    @classmethod
    def polynomial(cls, coeffs: Sequence[Rat], T: Rat, label: str = "") -> "Control":
        return cls((0, T), (tuple(coeffs),), label)

    @classmethod
    def indicator(cls, a: Rat, b: Rat, T: Rat, label: str = "") -> "Control":
        pts = sorted({Fraction(0), Fraction(a), Fraction(b), Fraction(T)})
        pcs = []
        for lo, hi in zip(pts, pts[1:]):
            pcs.append((1,) if a <= lo and hi <= b else ())
        return cls(tuple(pts), tuple(pcs), label)

    @classmethod
    def piecewise_linear(cls, breaks: Sequence[Rat], values: Sequence[Tuple[Rat, Rat]],
                         label: str = "") -> "Control":
        """``values[k] = (start, end)`` on [t_k, t_{k+1}] (may jump)."""
        pcs = []
        for (lo, hi), (va, vb) in zip(zip(breaks, breaks[1:]), values):
            lo, hi, va, vb = map(Fraction, (lo, hi, va, vb))
            slope = (vb - va) / (hi - lo)
            pcs.append((va - slope * lo, slope))
        return cls(tuple(breaks), tuple(pcs), label)

    @property
    def T(self) -> Fraction:
        return self.breaks[-1]

    @property
    def degree(self) -> int:
        return max((len(p) - 1 for p in self.pieces), default=0)

    def _piece_index(self, t) -> int:
        if t < 0 or t > self.T:
            raise ValueError(f"time {t} outside [0, {self.T}]")
        for k in range(len(self.pieces)):
            if t < self.breaks[k + 1]:
                return k
        return len(self.pieces) - 1

    def __call__(self, t) -> Fraction:
        return peval(self.pieces[self._piece_index(t)], t)

    def evaluate(self, t: float) -> float:
        k = self._piece_index(t)
        return float(peval(tuple(float(c) for c in self.pieces[k]), float(t)))

    # grid manipulation
    def refine(self, breaks: Sequence[Fraction]) -> "Control":
        br = tuple(Fraction(b) for b in breaks)
        if br[-1] != self.T or not set(self.breaks) <= set(br):
            raise ValueError("refinement must contain the original breakpoints")
        pcs = []
        k = 0
        for lo in br[:-1]:
            while self.breaks[k + 1] <= lo:
                k += 1
            pcs.append(self.pieces[k])
        return Control(br, tuple(pcs), self.label)

    def restrict(self, t: Rat) -> "Control":
        """Same signal on [0, t]."""
        t = Fraction(t)
        if t <= 0 or t > self.T:
            raise ValueError("restriction time must lie in (0, T]")
        br = [b for b in self.breaks if b < t] + [t]
        return Control(tuple(br), self.pieces[:len(br) - 1], self.label)

    def extend(self, T: Rat, value: Poly = ()) -> "Control":
        T = Fraction(T)
        if T < self.T:
            raise ValueError("cannot extend to a shorter horizon")
        if T == self.T:
            return self
        return Control(self.breaks + (T,), self.pieces + (tuple(value),), self.label)

    def _aligned(self, other: "Control") -> Tuple["Control", "Control"]:
        if other.T != self.T:
            raise ValueError("controls live on different horizons")
        if other.breaks == self.breaks:
            return self, other
        br = tuple(sorted(set(self.breaks) | set(other.breaks)))
        return self.refine(br), other.refine(br)

    # algebra
    def __add__(self, other: Union["Control", Rat]) -> "Control":
        if not isinstance(other, Control):
            return Control(self.breaks, tuple(padd(p, (Fraction(other),)) for p in self.pieces), self.label)
        a, b = self._aligned(other)
        return Control(a.breaks, tuple(padd(p, q) for p, q in zip(a.pieces, b.pieces)))

    def __neg__(self) -> "Control":
        return self.scale(-1)

    def __sub__(self, other) -> "Control":
        return self + (-other if isinstance(other, Control) else -Fraction(other))

    def scale(self, k: Rat) -> "Control":
        k = Fraction(k)
        return Control(self.breaks, tuple(pscale(p, k) for p in self.pieces), self.label)

    def __mul__(self, other: Union["Control", Rat]) -> "Control":
        if not isinstance(other, Control):
            return self.scale(other)
        a, b = self._aligned(other)
        return Control(a.breaks, tuple(pmul(p, q) for p, q in zip(a.pieces, b.pieces)))

    __rmul__ = __mul__

    def mul_poly(self, p: Poly) -> "Control":
        return Control(self.breaks, tuple(pmul(q, tuple(Fraction(c) for c in p)) for q in self.pieces), self.label)

    def __pow__(self, k: int) -> "Control":
        return Control(self.breaks, tuple(ppow(p, k) for p in self.pieces), self.label)

    def primitive(self) -> "Control":
        """U(t) = int_0^t u, continuous across breakpoints."""
        pcs = []
        acc = Fraction(0)
        for k, p in enumerate(self.pieces):
            P = pint(p)
            lo = self.breaks[k]
            shift = acc - peval(P, lo)
            pcs.append(padd(P, (shift,)))
            acc = peval(pcs[-1], self.breaks[k + 1])
        return Control(self.breaks, tuple(pcs), self.label and f"int({self.label})")

    def derivative(self) -> "Control":
        return Control(self.breaks, tuple(pderiv(p) for p in self.pieces))

    def integral(self, t: Optional[Rat] = None) -> Fraction:
        t = self.T if t is None else Fraction(t)
        return self.primitive()(t)

    def abs_integral(self, t: Optional[Rat] = None) -> Tuple[float, bool]:
        """(int_0^t |u|, exact flag).  Exact when every sign change inside a
        piece happens at a rational point."""
        t = self.T if t is None else Fraction(t)
        c = self.restrict(t) if t < self.T else self
        total = Fraction(0)
        exact = True
        fl = 0.0
        for k, p in enumerate(c.pieces):
            lo, hi = c.breaks[k], c.breaks[k + 1]
            roots = _rational_roots_in(p, lo, hi)
            if roots is None:
                exact = False
                fl += _float_abs_integral(p, float(lo), float(hi))
                continue
            pts = [lo] + roots + [hi]
            P = pint(p)
            for a, b in zip(pts, pts[1:]):
                total += abs(peval(P, b) - peval(P, a))
        if exact:
            return total, True
        return float(total) + fl, False

    def l1_norm(self, t: Optional[Rat] = None):
        return self.abs_integral(t)[0]

    def sup_norm(self, t: Optional[Rat] = None, samples: int = 2001) -> float:
        """Max of |u| over [0, t]: endpoints plus interior critical points."""
        t = self.T if t is None else Fraction(t)
        c = self.restrict(t) if t < self.T else self
        best = 0.0
        for k, p in enumerate(c.pieces):
            lo, hi = float(c.breaks[k]), float(c.breaks[k + 1])
            fp = [float(x) for x in p]
            if not fp:
                continue
            cands = [lo, hi]
            if len(fp) > 2:
                der = np.polynomial.polynomial.polyder(fp)
                for r in np.polynomial.polynomial.polyroots(der):
                    if abs(r.imag) < 1e-12 and lo <= r.real <= hi:
                        cands.append(r.real)
            for x in cands:
                best = max(best, abs(np.polynomial.polynomial.polyval(x, fp)))
        return best

    def time_rescale(self, lam: Rat) -> "Control":
        """u^lam(s) = u(s/lam) on [0, lam*T], zero on (lam*T, T]."""
        lam = Fraction(lam)
        if not 0 < lam <= 1:
            raise ValueError("rescaling factor must lie in (0, 1]")
        if lam == 1:
            return self
        br = tuple(b * lam for b in self.breaks)
        pcs = tuple(pcompose_affine(p, 1 / lam, 0) for p in self.pieces)
        return Control(br, pcs, self.label).extend(self.T)

    # serialization
    def to_dict(self) -> dict:
        return {"label": self.label,
                "breakpoints": [str(b) for b in self.breaks],
                "pieces": [[str(c) for c in p] for p in self.pieces]}

    @classmethod
    def from_dict(cls, d: dict) -> "Control":
        return cls(tuple(Fraction(b) for b in d["breakpoints"]),
                   tuple(tuple(Fraction(c) for c in p) for p in d["pieces"]),
                   d.get("label", ""))

    def float_tables(self) -> Tuple[np.ndarray, np.ndarray]:
        """(breaks, coeffs) with coeffs[k, j] the t^j coefficient of piece k."""
        deg = self.degree + 1
        co = np.zeros((len(self.pieces), max(deg, 1)))
        for k, p in enumerate(self.pieces):
            for j, c in enumerate(p):
                co[k, j] = float(c)
        return np.array([float(b) for b in self.breaks]), co


def _rational_roots_in(p: Poly, lo: Fraction, hi: Fraction) -> Optional[List[Fraction]]:
    """Sorted sign-change points of p strictly inside (lo, hi), or None if
    some root there is irrational."""
    if len(p) <= 1:
        return []
    if len(p) == 2:
        r = -p[0] / p[1]
        return [r] if lo < r < hi else []
    import sympy
    t = sympy.Symbol("t")
    expr = sum(sympy.Rational(c.numerator, c.denominator) * t ** i for i, c in enumerate(p))
    out = []
    for r, mult in sympy.roots(sympy.Poly(expr, t), filter="R").items():
        if not r.is_rational:
            if lo < float(r) < hi:
                return None
            continue
        rr = Fraction(int(r.p), int(r.q))
        if lo < rr < hi and mult % 2 == 1:
            out.append(rr)
    if sympy.Poly(expr, t).degree() != sum(sympy.roots(sympy.Poly(expr, t)).values()):
        # roots sympy could not produce in closed form: fall back
        return None
    return sorted(out)


def _float_abs_integral(p: Poly, lo: float, hi: float) -> float:
    x, w = np.polynomial.legendre.leggauss(64)
    fp = [float(c) for c in p]
    sub = np.linspace(lo, hi, 33)
    total = 0.0
    for a, b in zip(sub, sub[1:]):
        xs = 0.5 * (b - a) * x + 0.5 * (a + b)
        total += 0.5 * (b - a) * float(np.dot(w, np.abs(np.polynomial.polynomial.polyval(xs, fp))))
    return total


@dataclass(frozen=True)
class ControlTuple:
    """Channels indexed by letters on a shared grid.  Letter 0, when present,
    is the drift channel (identically one for affine systems)."""

    letters: Tuple[int, ...]
    controls: Tuple[Control, ...]

    def __post_init__(self):
        if len(self.letters) != len(self.controls):
            raise ValueError("one control per letter")
        if len(set(self.letters)) != len(self.letters):
            raise ValueError("duplicate letters")
        if not self.controls:
            raise ValueError("empty control tuple")
        T = self.controls[0].T
        if any(c.T != T for c in self.controls):
            raise ValueError("channels must share the horizon")
        br = tuple(sorted(set().union(*(c.breaks for c in self.controls))))
        object.__setattr__(self, "letters", tuple(self.letters))
        object.__setattr__(self, "controls", tuple(c.refine(br) for c in self.controls))

    @classmethod
    def affine(cls, inputs: Sequence[Control], drift: bool = True) -> "ControlTuple":
        T = inputs[0].T
        letters = list(range(1, len(inputs) + 1))
        ctrls = list(inputs)
        if drift:
            letters = [0] + letters
            ctrls = [Control.constant(1, T, "1")] + ctrls
        return cls(tuple(letters), tuple(ctrls))

    @property
    def T(self) -> Fraction:
        return self.controls[0].T

    @property
    def breaks(self) -> Tuple[Fraction, ...]:
        return self.controls[0].breaks

    def __getitem__(self, letter: int) -> Control:
        return self.controls[self.letters.index(letter)]

    def inputs(self) -> List[Tuple[int, Control]]:
        return [(l, c) for l, c in zip(self.letters, self.controls) if l != 0]

    def restrict(self, t: Rat) -> "ControlTuple":
        return ControlTuple(self.letters, tuple(c.restrict(t) for c in self.controls))

    def scale_inputs(self, k: Rat) -> "ControlTuple":
        return ControlTuple(self.letters, tuple(c if l == 0 else c.scale(k)
                                                for l, c in zip(self.letters, self.controls)))

    def time_rescale(self, lam: Rat) -> "ControlTuple":
        out = []
        for l, c in zip(self.letters, self.controls):
            if l == 0:
                out.append(Control.constant(1, c.T, c.label))
            else:
                out.append(c.time_rescale(lam))
        return ControlTuple(self.letters, tuple(out))

    def input_l1(self, t: Optional[Rat] = None) -> float:
        return sum(float(c.l1_norm(t)) for l, c in self.inputs())

    def total_l1(self, t: Optional[Rat] = None):
        return sum(c.l1_norm(t) for c in self.controls)

    def to_json(self) -> str:
        return json.dumps({"letters": list(self.letters),
                           "channels": [c.to_dict() for c in self.controls]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ControlTuple":
        d = json.loads(text)
        return cls(tuple(d["letters"]), tuple(Control.from_dict(c) for c in d["channels"]))


# iterated integrals ------------------------------------------------------

def primitive(u: Control) -> Control:
    return u.primitive()


def iterated_integral(seq: Sequence[Control], t: Rat) -> Fraction:
    """int_{0<tau1<...<taun<t} seq[0](tau1) ... seq[n-1](taun) dtau."""
    t = Fraction(t)
    if not seq:
        return Fraction(1)
    cs = [c.restrict(t) if t < c.T else c for c in seq]
    acc = Control.constant(1, cs[0].T)
    for c in cs:
        acc = (acc * c).primitive()
    return acc(t)


def iterated_word_integral(sigma: Sequence[int], a: ControlTuple, t: Rat) -> Fraction:
    for x in sigma:
        if x not in a.letters:
            raise ValueError(f"letter {x} has no channel")
    return iterated_integral([a[x] for x in sigma], t)


def iterated_U_integral(k: Sequence[int], u: Control, t: Rat) -> Fraction:
    """int over 0<tau1<...<taun<t of U(tau_n)^k_n ... U(tau_1)^k_1."""
    U = u.primitive()
    return iterated_integral([U ** kj for kj in k], t)


def time_rescale(u: Control, lam: Rat) -> Control:
    return u.time_rescale(lam)


def word_series(a: ControlTuple, t: Rat, N: Union[int, Truncation]) -> NCSeries:
    """Chen-Fliess word series <S, X_sigma> = int a_sigma for admitted words."""
    trunc = N if isinstance(N, Truncation) else Truncation(N)
    return ordered_exponential([(NCSeries.letter(l, trunc), c) for l, c in zip(a.letters, a.controls)],
                               t, trunc)


def ordered_exponential(letters: Sequence[Tuple[NCSeries, Control]], t: Rat,
                        trunc: Truncation) -> NCSeries:
    """Solution at time t of x' = x * sum_j c_j(s) E_j, x(0)=1, truncated.

    Each image E_j must be homogeneous for the truncation profile (its
    words share one profile); that profile bounds which products of
    images are kept.  Coefficients are exact iterated integrals.
    """
    t = Fraction(t)
    if t == 0:
        return NCSeries.one(trunc)
    items = []
    for img, c in letters:
        if img.trunc != trunc:
            raise ValueError("image truncation mismatch")
        if img.is_zero():
            continue
        profs = {trunc.profile(w) for w in img.coeffs}
        if len(profs) != 1:
            raise ValueError("letter images must be homogeneous")
        cc = c.restrict(t) if t < c.T else c
        items.append((img, cc, profs.pop()))
    if not items:
        return NCSeries.one(trunc)
    T = items[0][1].T
    lim = trunc.limits
    one = NCSeries.one(trunc)
    total: Dict[Word, Fraction] = {(): Fraction(1)}
    # frontier: (profile, running integral, running image)
    frontier = [(tuple(0 for _ in lim), Control.constant(1, T), one)]
    while frontier:
        nxt = []
        for prof, integ, img in frontier:
            for e, c, p in items:
                q = tuple(x + y for x, y in zip(prof, p))
                if any(x > m for x, m in zip(q, lim)):
                    continue
                new_int = (integ * c).primitive()
                val = new_int(t)
                new_img = img @ e
                if val:
                    for w, k in new_img.coeffs.items():
                        total[w] = total.get(w, 0) + val * k
                nxt.append((q, new_int, new_img))
        frontier = nxt
    return NCSeries(trunc, total)


# random fixtures --------------------------------------------------------

def random_piecewise_linear(rng: random.Random, pieces: int = 3, T: Rat = 1,
                            amplitude: int = 2, denom: int = 4, label: str = "") -> Control:
    """Piecewise-linear control with small rational breakpoints and values."""
    T = Fraction(T)
    cuts = sorted(rng.sample(range(1, 4 * pieces), pieces - 1))
    br = [Fraction(0)] + [T * Fraction(c, 4 * pieces) for c in cuts] + [T]
    vals = []
    for _ in range(pieces):
        a = Fraction(rng.randint(-amplitude * denom, amplitude * denom), denom)
        b = Fraction(rng.randint(-amplitude * denom, amplitude * denom), denom)
        vals.append((a, b))
    return Control.piecewise_linear(br, vals, label)


def callable_control(fn, T: float, label: str = ""):
    """Marker for non-polynomial signals used only by the numerical oracle."""
    return _CallableSignal(fn, float(T), label)


@dataclass(frozen=True)
class _CallableSignal:
    fn: object
    T: float
    label: str = ""

    def evaluate(self, t: float) -> float:
        return float(self.fn(t))
