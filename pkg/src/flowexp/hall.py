"""Formal brackets, generalized Hall bases and decomposition of Lie
polynomials on them."""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .freealg import NCSeries, Truncation, Word, is_lie_element


class Bracket:
    """Binary bracket tree over integer letters.

    Equality and hashing follow the tree shape.  ``key`` is the nested
    tuple form, e.g. ``(0, (0, 1))`` for [X0,[X0,X1]].
    """

    __slots__ = ("key", "left", "right", "length", "_counts", "_hash")

    def __init__(self, key, left: Optional["Bracket"] = None, right: Optional["Bracket"] = None):
        self.key = key
        self.left = left
        self.right = right
        if left is None:
            self.length = 1
            self._counts = ((key, 1),)
        else:
            self.length = left.length + right.length
            c: Dict[int, int] = dict(left._counts)
            for k, v in right._counts:
                c[k] = c.get(k, 0) + v
            self._counts = tuple(sorted(c.items()))
        self._hash = hash(key)

    @classmethod
    def leaf(cls, letter: int) -> "Bracket":
        return cls(int(letter))

    @classmethod
    def of(cls, a: "Bracket", b: "Bracket") -> "Bracket":
        return cls((a.key, b.key), a, b)

    @classmethod
    def from_key(cls, key) -> "Bracket":
        if isinstance(key, int):
            return cls.leaf(key)
        a, b = key
        return cls.of(cls.from_key(a), cls.from_key(b))

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def counts(self) -> Dict[int, int]:
        return dict(self._counts)

    def count(self, letter: int) -> int:
        return self.counts.get(letter, 0)

    @property
    def n0(self) -> int:
        """Occurrences of the drift letter 0."""
        return self.count(0)

    @property
    def n(self) -> int:
        """Occurrences of non-drift letters."""
        return self.length - self.n0

    def multidegree(self, letters: Sequence[int]) -> Tuple[int, ...]:
        c = self.counts
        return tuple(c.get(x, 0) for x in letters)

    def __eq__(self, other) -> bool:
        return isinstance(other, Bracket) and self.key == other.key

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        if self.is_leaf:
            return f"X{self.key}"
        return f"[{self.left!r},{self.right!r}]"

    def to_nested(self):
        if self.is_leaf:
            return self.key
        return [self.left.to_nested(), self.right.to_nested()]

    def words(self) -> Dict[Word, int]:
        return dict(_expand_key(self.key))


def ad(a: Bracket, b: Bracket, times: int = 1) -> Bracket:
    """ad_a^times (b)."""
    for _ in range(times):
        b = Bracket.of(a, b)
    return b


def X(i: int) -> Bracket:
    return Bracket.leaf(i)


@lru_cache(maxsize=None)
def _expand_key(key) -> Tuple[Tuple[Word, int], ...]:
    if isinstance(key, int):
        return (((key,), 1),)
    a = dict(_expand_key(key[0]))
    b = dict(_expand_key(key[1]))
    out: Dict[Word, int] = {}
    for u, cu in a.items():
        for v, cv in b.items():
            out[u + v] = out.get(u + v, 0) + cu * cv
            out[v + u] = out.get(v + u, 0) - cu * cv
    return tuple((w, c) for w, c in out.items() if c)


def expand_to_words(b: Bracket, N: int | Truncation) -> NCSeries:
    """Word expansion of the Lie element represented by ``b``."""
    trunc = N if isinstance(N, Truncation) else Truncation(N)
    if b.length > trunc.degree:
        raise ValueError("bracket longer than the truncation degree")
    return NCSeries(trunc, dict(_expand_key(b.key)))


@dataclass
class HallBasis:
    """Ordered generalized Hall set, complete up to ``max_length``
    (intersected with the downward-closed filter ``keep`` if given)."""

    letters: Tuple[int, ...]
    max_length: int
    elements: List[Bracket]
    rank: Dict[Bracket, int]
    drift: Optional[int] = None

    def __iter__(self):
        return iter(self.elements)

    def __len__(self):
        return len(self.elements)

    def __contains__(self, b) -> bool:
        return b in self.rank

    def less(self, a: Bracket, b: Bracket) -> bool:
        return self.rank[a] < self.rank[b]

    def of_length(self, n: int) -> List[Bracket]:
        return [b for b in self.elements if b.length == n]

    def filtered(self, pred: Callable[[Bracket], bool]) -> List[Bracket]:
        return [b for b in self.elements if pred(b)]

    def index(self, b: Bracket) -> int:
        return self.rank[b]

    def to_json(self) -> str:
        rows = []
        for i, b in enumerate(self.elements):
            rows.append({
                "index": i,
                "bracket": b.to_nested(),
                "text": repr(b),
                "length": b.length,
                "counts": {str(k): v for k, v in sorted(b.counts.items())},
                "rank": self.rank[b],
            })
        return json.dumps({"letters": list(self.letters), "max_length": self.max_length,
                           "elements": rows}, indent=1)

    # decomposition machinery, cached per multidegree
    def _solver(self, md: Tuple[int, ...]):
        cache = self.__dict__.setdefault("_solvers", {})
        if md not in cache:
            cache[md] = _DegreeSolver([b for b in self.elements
                                       if b.multidegree(self.letters) == md])
        return cache[md]


def build_hall_basis(alphabet_size: int, max_length: int,
                     order_policy: str = "length_then_lex", *,
                     drift: bool = False,
                     letter_order: Optional[Sequence[int]] = None,
                     priority: Sequence[Bracket] = (),
                     keep: Optional[Callable[[Bracket], bool]] = None) -> HallBasis:
    """Build a Hall set by induction on the length.

    Letters are ``1..alphabet_size``, plus the drift letter 0 when
    ``drift`` is set.  The default order is length-compatible with ties
    broken lexicographically on the ranks of (left, right).  The
    ``custom`` policy accepts ``letter_order`` (smallest first) and
    ``priority``: brackets placed first among those of their length,
    in the given order.  ``keep`` must be stable under taking factors.
    """
    if alphabet_size < (0 if drift else 1) or max_length < 1:
        raise ValueError("need at least one letter and max_length >= 1")
    letters = tuple(([0] if drift else []) + list(range(1, alphabet_size + 1)))
    if order_policy not in ("length_then_lex", "custom"):
        raise ValueError(f"unknown order policy {order_policy!r}")
    if order_policy == "length_then_lex" and (letter_order is not None or priority):
        raise ValueError("letter_order/priority need order_policy='custom'")
    order = tuple(letter_order) if letter_order is not None else letters
    if sorted(order) != sorted(letters):
        raise ValueError("letter_order must be a permutation of the alphabet")
    keep = keep or (lambda b: True)
    pinned = {b: i for i, b in enumerate(priority)}

    rank: Dict[Bracket, int] = {}
    elements: List[Bracket] = []
    by_len: Dict[int, List[Bracket]] = {}
    leaves = [X(i) for i in order if keep(X(i))]
    for b in leaves:
        rank[b] = len(rank)
        elements.append(b)
    by_len[1] = leaves

    for n in range(2, max_length + 1):
        cands = []
        for l1 in range(1, n):
            for b1 in by_len.get(l1, []):
                for b2 in by_len.get(n - l1, []):
                    if not rank[b1] < rank[b2]:
                        continue
                    if not (b2.is_leaf or rank[b2.left] <= rank[b1]):
                        continue
                    b = Bracket.of(b1, b2)
                    if keep(b):
                        cands.append(b)
        cands.sort(key=lambda b: (0, pinned[b]) if b in pinned
                   else (1, rank[b.left], rank[b.right]))
        for b in cands:
            rank[b] = len(rank)
            elements.append(b)
        by_len[n] = cands
    return HallBasis(letters, max_length, elements, rank, 0 if drift else None)


def hall_audit(basis: HallBasis) -> List[str]:
    """Check the Hall-set conditions verbatim; returns violations."""
    problems = []
    r = basis.rank
    for b in basis.elements:
        if b.is_leaf:
            if b.key not in basis.letters:
                problems.append(f"{b}: unknown letter")
            continue
        b1, b2 = b.left, b.right
        if b1 not in r or b2 not in r:
            problems.append(f"{b}: factor outside the basis")
            continue
        if not r[b1] < r[b2]:
            problems.append(f"{b}: left factor not smaller than right")
        if not (b2.is_leaf or r[b2.left] <= r[b1]):
            problems.append(f"{b}: lambda(right) > left")
        if not r[b1] < r[b]:
            problems.append(f"{b}: left factor not smaller than the bracket")
    for i in range(len(basis.elements) - 1):
        if basis.elements[i].length > basis.elements[i + 1].length:
            problems.append("order is not length-compatible")
            break
    return problems


# exact linear algebra -------------------------------------------------

class _DegreeSolver:
    """Inverts the word-expansion map of the basis elements sharing one
    multidegree, through a square invertible minor."""

    def __init__(self, elems: List[Bracket]):
        self.elems = elems
        cols = [dict(b.words()) for b in elems]
        words = sorted({w for c in cols for w in c})
        self.words = words
        # Gaussian elimination on the transpose to pick pivot words.
        rows = [[Fraction(c.get(w, 0)) for w in words] for c in cols]
        pivots: List[int] = []
        reduced: List[List[Fraction]] = []
        for row in rows:
            r = row[:]
            for p, red in zip(pivots, reduced):
                f = r[p]
                if f:
                    r = [x - f * y for x, y in zip(r, red)]
            piv = next((k for k, x in enumerate(r) if x != 0), None)
            if piv is None:
                continue
            inv = 1 / r[piv]
            r = [x * inv for x in r]
            for j in range(len(reduced)):
                f = reduced[j][piv]
                if f:
                    reduced[j] = [x - f * y for x, y in zip(reduced[j], r)]
            pivots.append(piv)
            reduced.append(r)
        self.rank = len(pivots)
        self.independent = self.rank == len(elems)
        self.pivot_words = [words[p] for p in pivots]
        # square system E c = a restricted to pivot words
        k = len(elems)
        sq = [[Fraction(cols[j].get(self.pivot_words[i], 0)) for j in range(k)] for i in range(k)] \
            if self.independent else []
        self.inverse = _invert(sq) if self.independent else None
        self.cols = cols

    def solve(self, a: Dict[Word, Fraction]) -> Dict[Bracket, Fraction]:
        if not self.independent:
            raise ArithmeticError("basis elements are linearly dependent")
        rhs = [a.get(w, Fraction(0)) for w in self.pivot_words]
        coef = [sum((row[j] * rhs[j] for j in range(len(rhs))), Fraction(0)) for row in self.inverse]
        # residual check on all words
        recon: Dict[Word, Fraction] = {}
        for c, col in zip(coef, self.cols):
            if c:
                for w, v in col.items():
                    recon[w] = recon.get(w, 0) + c * v
        for w in set(recon) | set(a):
            if recon.get(w, 0) != a.get(w, 0):
                raise ValueError("element is not in the span of the basis for this multidegree")
        return {b: c for b, c in zip(self.elems, coef) if c}


def _invert(m: List[List[Fraction]]) -> List[List[Fraction]]:
    n = len(m)
    a = [row[:] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(m)]
    for col in range(n):
        piv = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        inv = 1 / a[col][col]
        a[col] = [x * inv for x in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    return [row[n:] for row in a]


def hall_decompose(a: NCSeries, basis: HallBasis, check_lie: bool = True) -> Dict[Bracket, Fraction]:
    """Coefficients c_b with sum c_b expand(b) == a (per multidegree)."""
    if a.constant != 0:
        raise ValueError("Lie polynomials have no constant term")
    if a.degrees() and a.degrees()[-1] > basis.max_length:
        raise ValueError("degree exceeds the basis length")
    if check_lie and not is_lie_element(a):
        raise ValueError("series is not a Lie element")
    groups: Dict[Tuple[int, ...], Dict[Word, Fraction]] = {}
    for w, c in a.coeffs.items():
        if any(x not in basis.letters for x in w):
            raise ValueError(f"word {w} uses letters outside the basis alphabet")
        md = tuple(w.count(x) for x in basis.letters)
        groups.setdefault(md, {})[w] = c
    out: Dict[Bracket, Fraction] = {}
    for md, part in groups.items():
        out.update(basis._solver(md).solve(part))
    return out


def recombine(coeffs: Dict[Bracket, Fraction], trunc: Truncation) -> NCSeries:
    acc: Dict[Word, Fraction] = {}
    for b, c in coeffs.items():
        for w, v in b.words().items():
            acc[w] = acc.get(w, 0) + c * v
    return NCSeries.from_words(acc, trunc)


def expansion_rank(brackets: Iterable[Bracket]) -> int:
    """Rank of the word expansions (brute-force exact elimination)."""
    bs = list(brackets)
    by_md: Dict[Tuple, List[Bracket]] = {}
    for b in bs:
        by_md.setdefault(tuple(sorted(b.counts.items())), []).append(b)
    return sum(_DegreeSolver(g).rank for g in by_md.values())


def witt_dimension(q: int, n: int) -> int:
    """(1/n) sum_{d|n} mu(d) q^(n/d)."""
    total = 0
    for d in range(1, n + 1):
        if n % d == 0:
            total += _mobius(d) * q ** (n // d)
    return total // n


def _mobius(n: int) -> int:
    res, p, m = 1, 2, n
    while p * p <= m:
        if m % p == 0:
            m //= p
            if m % p == 0:
                return 0
            res = -res
        p += 1
    if m > 1:
        res = -res
    return res


def malabar_factorize(b: Bracket, basis: HallBasis) -> Tuple[int, int, Bracket]:
    """Write b = ad_{X0}^m adbar_{X0}^mbar (b*) where adbar_{X0}(c) = [c, X0]
    and b* is a letter or has both factors different from X0."""
    if basis.drift is None:
        raise ValueError("basis has no distinguished drift letter")
    if b not in basis:
        raise ValueError(f"{b} is not in the basis")
    x0 = X(basis.drift)
    m = mbar = 0
    while not b.is_leaf and b.left == x0:
        m += 1
        b = b.right
    while not b.is_leaf and b.right == x0:
        mbar += 1
        b = b.left
    return m, mbar, b


def standard_factorization(b: Bracket) -> Tuple[int, Bracket, Bracket]:
    """b = ad_{b1}^m (b2) with m maximal; returns (m, b1, b2)."""
    if b.is_leaf:
        raise ValueError("letters have no factorization")
    b1 = b.left
    m = 0
    cur = b
    while not cur.is_leaf and cur.left == b1:
        m += 1
        cur = cur.right
    return m, b1, cur


def structure_constants(basis: HallBasis, max_degree: int) -> Dict[int, Fraction]:
    """Sum of |gamma^c_{b1,b2}| over pairs with |b1|+|b2| = n, per n."""
    trunc = Truncation(max_degree)
    els = [b for b in basis.elements if b.length < max_degree]
    out: Dict[int, Fraction] = {}
    for i, b1 in enumerate(els):
        for b2 in els[i + 1:]:
            n = b1.length + b2.length
            if n > max_degree or n > basis.max_length:
                continue
            br = expand_to_words(Bracket.of(b1, b2), trunc)
            dec = hall_decompose(br, basis, check_lie=False)
            out[n] = out.get(n, Fraction(0)) + sum(abs(c) for c in dec.values())
    return out
