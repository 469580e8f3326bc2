"""Concrete vector fields with exact Lie brackets.

Components live in the ring Q[x_1, ..., x_d, w] with w = 1/(1 - x_j) for
an optional pole coordinate j.  That ring is closed under partial
derivatives (dw/dx_j = w^2), so brackets of polynomial fields and of the
rational counter-example family stay exact.  Elements are kept in the
normal form where no monomial contains both x_j and w, using
x_j w = w - 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .hall import Bracket

Mono = Tuple[int, ...]


@dataclass(frozen=True)
class Space:
    """Ambient dimension and optional pole coordinate (0-based)."""

    dim: int
    pole: Optional[int] = None

    @property
    def nvars(self) -> int:
        return self.dim + 1


def _normalize(space: Space, terms: Mapping[Mono, Fraction]) -> Dict[Mono, Fraction]:
    out: Dict[Mono, Fraction] = {}
    stack = [(m, c) for m, c in terms.items() if c]
    j = space.pole
    while stack:
        m, c = stack.pop()
        if j is not None and m[j] > 0 and m[-1] > 0:
            # x_j^a w^b = x_j^(a-1) (w^b - w^(b-1))
            a = list(m)
            a[j] -= 1
            m1 = tuple(a)
            a[-1] -= 1
            m2 = tuple(a)
            stack.append((m1, c))
            stack.append((m2, -c))
            continue
        v = out.get(m, 0) + c
        if v:
            out[m] = v
        else:
            out.pop(m, None)
    return out


class RPoly:
    """Exact element of Q[x, w] in normal form."""

    __slots__ = ("space", "terms")

    def __init__(self, space: Space, terms: Mapping[Mono, object] = None, _normal=False):
        self.space = space
        t = {tuple(m): Fraction(c) for m, c in (terms or {}).items()}
        for m in t:
            if len(m) != space.nvars:
                raise ValueError("monomial arity mismatch")
            if space.pole is None and m[-1]:
                raise ValueError("w used without a pole coordinate")
        self.terms = t if _normal else _normalize(space, t)

    @classmethod
    def const(cls, space: Space, c) -> "RPoly":
        return cls(space, {(0,) * space.nvars: c})

    @classmethod
    def var(cls, space: Space, i: int) -> "RPoly":
        m = [0] * space.nvars
        m[i] = 1
        return cls(space, {tuple(m): 1})

    @classmethod
    def w(cls, space: Space, power: int = 1) -> "RPoly":
        if space.pole is None:
            raise ValueError("no pole coordinate")
        m = [0] * space.nvars
        m[-1] = power
        return cls(space, {tuple(m): 1})

    def is_zero(self) -> bool:
        return not self.terms

    def _chk(self, o: "RPoly"):
        if o.space != self.space:
            raise ValueError("mixed ambient spaces")

    def __add__(self, o: "RPoly") -> "RPoly":
        self._chk(o)
        out = dict(self.terms)
        for m, c in o.terms.items():
            v = out.get(m, 0) + c
            if v:
                out[m] = v
            else:
                out.pop(m, None)
        return RPoly(self.space, out, _normal=True)

    def __neg__(self) -> "RPoly":
        return RPoly(self.space, {m: -c for m, c in self.terms.items()}, _normal=True)

    def __sub__(self, o: "RPoly") -> "RPoly":
        return self + (-o)

    def scale(self, k) -> "RPoly":
        k = Fraction(k)
        if k == 0:
            return RPoly(self.space, {}, _normal=True)
        return RPoly(self.space, {m: k * c for m, c in self.terms.items()}, _normal=True)

    def __mul__(self, o) -> "RPoly":
        if not isinstance(o, RPoly):
            return self.scale(o)
        self._chk(o)
        out: Dict[Mono, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in o.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0) + c1 * c2
        return RPoly(self.space, out)

    __rmul__ = __mul__

    def diff(self, i: int) -> "RPoly":
        """Partial derivative in x_i (0-based)."""
        out: Dict[Mono, Fraction] = {}
        j = self.space.pole
        for m, c in self.terms.items():
            if m[i]:
                a = list(m)
                a[i] -= 1
                k = tuple(a)
                out[k] = out.get(k, 0) + c * m[i]
            if i == j and m[-1]:
                a = list(m)
                a[-1] += 1
                k = tuple(a)
                out[k] = out.get(k, 0) + c * m[-1]
        return RPoly(self.space, out)

    def __eq__(self, o) -> bool:
        return isinstance(o, RPoly) and o.space == self.space and o.terms == self.terms

    def __hash__(self):
        return hash((self.space, frozenset(self.terms.items())))

    def __call__(self, p: Sequence) -> Union[Fraction, float]:
        exact = all(isinstance(x, (int, Fraction)) for x in p)
        j = self.space.pole
        if j is not None:
            den = 1 - (Fraction(p[j]) if exact else float(p[j]))
            if den == 0:
                raise ZeroDivisionError("evaluation at the pole")
            wv = 1 / den
        else:
            wv = 0
        vals = [Fraction(x) if exact else float(x) for x in p] + [wv]
        acc = Fraction(0) if exact else 0.0
        for m, c in self.terms.items():
            term = c if exact else float(c)
            for v, e in zip(vals, m):
                if e:
                    term = term * v ** e
            acc += term
        return acc

    def degree(self) -> int:
        return max((sum(m[:-1]) for m in self.terms), default=0)

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for m, c in sorted(self.terms.items()):
            f = [f"x{i + 1}^{e}" if e > 1 else f"x{i + 1}" for i, e in enumerate(m[:-1]) if e]
            if m[-1]:
                f.append(f"w^{m[-1]}" if m[-1] > 1 else "w")
            parts.append(f"{c}" + ("*" + "*".join(f) if f else ""))
        return " + ".join(parts)


class VField:
    """Vector field on K^d with components in the ring above."""

    __slots__ = ("space", "comps", "_compiled")

    def __init__(self, space: Space, comps: Sequence[RPoly]):
        if len(comps) != space.dim:
            raise ValueError("need one component per coordinate")
        for c in comps:
            if c.space != space:
                raise ValueError("component in a different space")
        self.space = space
        self.comps = tuple(comps)
        self._compiled = None

    @property
    def dim(self) -> int:
        return self.space.dim

    @classmethod
    def zero(cls, space: Space) -> "VField":
        return cls(space, [RPoly(space)] * space.dim)

    @classmethod
    def from_terms(cls, space: Space, comps: Sequence[Mapping[Mono, object]]) -> "VField":
        return cls(space, [RPoly(space, c) for c in comps])

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.comps)

    def __add__(self, o: "VField") -> "VField":
        return VField(self.space, [a + b for a, b in zip(self.comps, o.comps)])

    def __sub__(self, o: "VField") -> "VField":
        return VField(self.space, [a - b for a, b in zip(self.comps, o.comps)])

    def __neg__(self) -> "VField":
        return self.scale(-1)

    def scale(self, k) -> "VField":
        return VField(self.space, [c.scale(k) for c in self.comps])

    def __rmul__(self, k) -> "VField":
        return self.scale(k)

    def __eq__(self, o) -> bool:
        return isinstance(o, VField) and o.space == self.space and o.comps == self.comps

    def __hash__(self):
        return hash(self.comps)

    def derive(self, phi: RPoly) -> RPoly:
        """(f . grad) phi."""
        acc = RPoly(self.space)
        for i, fi in enumerate(self.comps):
            if not fi.is_zero():
                acc = acc + fi * phi.diff(i)
        return acc

    def apply_to(self, g: "VField") -> "VField":
        """(self . grad) g, componentwise."""
        return VField(self.space, [self.derive(gi) for gi in g.comps])

    def jacobian(self) -> List[List[RPoly]]:
        return [[fi.diff(k) for k in range(self.dim)] for fi in self.comps]

    def __call__(self, p: Sequence):
        return [c(p) for c in self.comps]

    def __repr__(self) -> str:
        return "VField(" + ", ".join(repr(c) for c in self.comps) + ")"

    # numerics
    def compiled(self) -> Tuple[np.ndarray, np.ndarray]:
        """(exps[T, d+1], coefs[T, d]) over the union of monomials."""
        if self._compiled is None:
            monos = sorted({m for c in self.comps for m in c.terms})
            exps = np.array(monos, dtype=np.int64).reshape(len(monos), self.space.nvars)
            coefs = np.zeros((len(monos), self.dim))
            idx = {m: k for k, m in enumerate(monos)}
            for i, c in enumerate(self.comps):
                for m, v in c.terms.items():
                    coefs[idx[m], i] = float(v)
            self._compiled = (exps, coefs)
        return self._compiled

    def to_dict(self) -> dict:
        return {"dim": self.dim, "pole": self.space.pole,
                "components": [[{"exp": list(m), "coeff": str(c)} for m, c in sorted(comp.terms.items())]
                               for comp in self.comps]}

    @classmethod
    def from_dict(cls, d: dict) -> "VField":
        sp = Space(int(d["dim"]), d.get("pole"))
        comps = []
        for comp in d["components"]:
            comps.append(RPoly(sp, {tuple(t["exp"]): Fraction(t["coeff"]) for t in comp}))
        return cls(sp, comps)


def lie_bracket(f: VField, g: VField) -> VField:
    """[f, g] = (f . grad) g - (g . grad) f."""
    if f.space != g.space:
        raise ValueError("fields live in different spaces")
    return f.apply_to(g) - g.apply_to(f)


def substitute_bracket(b: Bracket, generators: Mapping[int, VField],
                       _cache: Optional[Dict] = None) -> VField:
    """f_b obtained by replacing each letter with its field."""
    cache = {} if _cache is None else _cache
    if b in cache:
        return cache[b]
    if b.is_leaf:
        if b.key not in generators:
            raise KeyError(f"no field for letter {b.key}")
        r = generators[b.key]
    else:
        r = lie_bracket(substitute_bracket(b.left, generators, cache),
                        substitute_bracket(b.right, generators, cache))
    cache[b] = r
    return r


class BracketEvaluator:
    """Memoized substitution for one set of generators."""

    def __init__(self, generators: Mapping[int, VField]):
        self.generators = dict(generators)
        self.cache: Dict[Bracket, VField] = {}

    def __call__(self, b: Bracket) -> VField:
        return substitute_bracket(b, self.generators, self.cache)


def eval_field(f: VField, p: Sequence):
    return f(p)


# constructors -----------------------------------------------------------

def poly_field(dim: int, comps: Sequence[Mapping[Tuple[int, ...], object]], pole=None) -> VField:
    """Components given as {exponent tuple (length dim): coeff}."""
    sp = Space(dim, pole)
    out = []
    for c in comps:
        out.append(RPoly(sp, {tuple(m) + (0,): v for m, v in c.items()}))
    return VField(sp, out)


def constant_field(space: Space, vec: Sequence) -> VField:
    return VField(space, [RPoly.const(space, v) for v in vec])


def unit_field(space: Space, i: int) -> VField:
    vec = [0] * space.dim
    vec[i] = 1
    return constant_field(space, vec)


def linear_field(A: Sequence[Sequence], space: Optional[Space] = None) -> VField:
    """f(x) = A x."""
    d = len(A)
    sp = space or Space(d)
    comps = []
    for i in range(d):
        acc = RPoly(sp)
        for j in range(d):
            if A[i][j]:
                acc = acc + RPoly.var(sp, j).scale(Fraction(A[i][j]))
        comps.append(acc)
    return VField(sp, comps)


def rational_family(kind: str, space: Optional[Space] = None, R: Optional[RPoly] = None) -> VField:
    """Members of the rational counter-example family on K^2 (pole at x1):
    ``e1``, ``x2e1`` and ``Re2`` with R an element of Q[x1, 1/(1-x1)]."""
    sp = space or Space(2, 0)
    if kind == "e1":
        return unit_field(sp, 0)
    if kind == "x2e1":
        return VField(sp, [RPoly.var(sp, 1), RPoly(sp)])
    if kind == "Re2":
        R = R if R is not None else RPoly.w(sp)
        if any(m[1] for m in R.terms):
            raise ValueError("R must depend on x1 only")
        return VField(sp, [RPoly(sp), R])
    raise ValueError(f"unknown family member {kind!r}")


# norms --------------------------------------------------------------------

def _multi_indices(d: int, k: int):
    if d == 0:
        if k == 0:
            yield ()
        return
    for a in range(k + 1):
        for rest in _multi_indices(d - 1, k - a):
            yield (a,) + rest


def _majorant_at(p: RPoly, delta: Fraction) -> Fraction:
    return sum((abs(c) * delta ** sum(m[:-1]) for m, c in p.terms.items()), Fraction(0))


def majorant_norms(f: VField, k: int, delta, r) -> Tuple[Fraction, Fraction]:
    """Certified upper bounds for the C^k norm and the analytic norm of a
    polynomial field on the ball of radius delta."""
    if f.space.pole is not None:
        raise ValueError("majorant norms are implemented for polynomial fields")
    delta, r = Fraction(delta), Fraction(r)
    d = f.dim
    ck = Fraction(0)
    an = Fraction(0)
    deg = max(c.degree() for c in f.comps)
    for comp in f.comps:
        for total in range(deg + 1):
            for alpha in _multi_indices(d, total):
                g = comp
                for i, a in enumerate(alpha):
                    for _ in range(a):
                        g = g.diff(i)
                if g.is_zero():
                    continue
                fact = math.prod(math.factorial(a) for a in alpha)
                val = _majorant_at(g, delta) / fact
                if total <= k:
                    ck += val
                an += val * r ** total
    return ck, an


# matrices -----------------------------------------------------------------

def matrix_commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def substitute_bracket_matrix(b: Bracket, mats: Mapping[int, np.ndarray], cache=None) -> np.ndarray:
    """Lie morphism X_i -> A_i with the commutator AB - BA."""
    cache = {} if cache is None else cache
    if b in cache:
        return cache[b]
    if b.is_leaf:
        r = np.asarray(mats[b.key])
    else:
        r = matrix_commutator(substitute_bracket_matrix(b.left, mats, cache),
                              substitute_bracket_matrix(b.right, mats, cache))
    cache[b] = r
    return r


def cross_product_matrices() -> List[np.ndarray]:
    """F_j x = e_j cross x."""
    out = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1
        F = np.array([np.cross(e, col) for col in np.eye(3)]).T
        out.append(F)
    return out
