"""Truncated noncommutative series with exact rational coefficients.

Words are tuples of non-negative letter indices.  A series stores the
coefficient of each word up to a truncation, and every binary operation
checks that both operands carry the same truncation.

A truncation is a total-degree bound, optionally refined by caps on how
many letters from a given subset a word may contain.  Words violating a
cap span an ideal, so products, exponentials and logarithms remain
well defined in the quotient.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Iterator, Mapping, Sequence, Tuple

Word = Tuple[int, ...]
EMPTY: Word = ()


def word_enumerate(alphabet_size: int, degree: int, first: int = 1) -> list[Word]:
    """All words of exactly ``degree`` letters over
    ``first..first+alphabet_size-1``, in lexicographic order."""
    if alphabet_size < 1 or degree < 0:
        raise ValueError("alphabet_size must be >= 1 and degree >= 0")
    return list(itertools.product(range(first, first + alphabet_size), repeat=degree))


@dataclass(frozen=True)
class Truncation:
    """Total degree bound plus optional ``(letters, cap)`` constraints."""

    degree: int
    caps: Tuple[Tuple[frozenset, int], ...] = ()

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("truncation degree must be non-negative")
        caps = tuple((frozenset(s), int(c)) for s, c in self.caps)
        object.__setattr__(self, "caps", caps)

    @classmethod
    def capped(cls, degree: int, caps: Mapping[Iterable[int], int]) -> "Truncation":
        """``Truncation.capped(6, {(0,): 4, (1, 2): 2})``"""
        return cls(degree, tuple((frozenset(k), v) for k, v in caps.items()))

    def profile(self, word: Sequence[int]) -> Tuple[int, ...]:
        counts = [len(word)]
        for letters, _ in self.caps:
            counts.append(sum(1 for x in word if x in letters))
        return tuple(counts)

    @property
    def limits(self) -> Tuple[int, ...]:
        return (self.degree,) + tuple(c for _, c in self.caps)

    def admits(self, word: Sequence[int]) -> bool:
        return all(p <= lim for p, lim in zip(self.profile(word), self.limits))


def _coerce(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, float):
        raise TypeError("floating point coefficients are not allowed in formal series")
    return Fraction(c)


@dataclass(frozen=True)
class NCSeries:
    """Element of the truncated free associative algebra."""

    trunc: Truncation
    coeffs: Mapping[Word, Fraction] = field(default_factory=dict)

    def __post_init__(self):
        clean: Dict[Word, Fraction] = {}
        for w, c in self.coeffs.items():
            w = tuple(w)
            c = _coerce(c)
            if c == 0:
                continue
            if not self.trunc.admits(w):
                raise ValueError(f"word {w} exceeds the truncation {self.trunc}")
            clean[w] = c
        object.__setattr__(self, "coeffs", clean)

    # construction helpers
    @classmethod
    def zero(cls, trunc: Truncation) -> "NCSeries":
        return cls(trunc, {})

    @classmethod
    def one(cls, trunc: Truncation) -> "NCSeries":
        return cls(trunc, {EMPTY: Fraction(1)})

    @classmethod
    def letter(cls, i: int, trunc: Truncation, coeff=1) -> "NCSeries":
        return cls(trunc, {(i,): coeff})

    @classmethod
    def word(cls, w: Sequence[int], trunc: Truncation, coeff=1) -> "NCSeries":
        return cls(trunc, {tuple(w): coeff})

    @classmethod
    def from_words(cls, items: Mapping[Word, object], trunc: Truncation) -> "NCSeries":
        """Like the constructor but silently drops words outside the truncation."""
        return cls(trunc, {w: c for w, c in items.items() if trunc.admits(w)})

    # basic queries
    def __getitem__(self, w: Sequence[int]) -> Fraction:
        return self.coeffs.get(tuple(w), Fraction(0))

    def __iter__(self) -> Iterator[Tuple[Word, Fraction]]:
        return iter(sorted(self.coeffs.items(), key=lambda kv: (len(kv[0]), kv[0])))

    def __len__(self) -> int:
        return len(self.coeffs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NCSeries):
            return NotImplemented
        return self.trunc == other.trunc and self.coeffs == other.coeffs

    def __hash__(self):
        return hash((self.trunc, frozenset(self.coeffs.items())))

    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def constant(self) -> Fraction:
        return self[EMPTY]

    def homogeneous(self, n: int) -> "NCSeries":
        return NCSeries(self.trunc, {w: c for w, c in self.coeffs.items() if len(w) == n})

    def degrees(self) -> list[int]:
        return sorted({len(w) for w in self.coeffs})

    def filter(self, keep) -> "NCSeries":
        return NCSeries(self.trunc, {w: c for w, c in self.coeffs.items() if keep(w)})

    def retruncate(self, trunc: Truncation) -> "NCSeries":
        """Explicit projection onto a (smaller or equal) truncation."""
        return NCSeries.from_words(self.coeffs, trunc)

    # linear structure
    def _check(self, other: "NCSeries"):
        if not isinstance(other, NCSeries):
            raise TypeError("expected an NCSeries")
        if other.trunc != self.trunc:
            raise ValueError(f"mismatched truncations {self.trunc} vs {other.trunc}")

    def __add__(self, other: "NCSeries") -> "NCSeries":
        self._check(other)
        out = dict(self.coeffs)
        for w, c in other.coeffs.items():
            out[w] = out.get(w, 0) + c
        return NCSeries(self.trunc, out)

    def __sub__(self, other: "NCSeries") -> "NCSeries":
        return self + (-other)

    def __neg__(self) -> "NCSeries":
        return NCSeries(self.trunc, {w: -c for w, c in self.coeffs.items()})

    def scale(self, k) -> "NCSeries":
        k = _coerce(k)
        return NCSeries(self.trunc, {w: k * c for w, c in self.coeffs.items()})

    def __rmul__(self, k) -> "NCSeries":
        return self.scale(k)

    def __mul__(self, other) -> "NCSeries":
        if isinstance(other, NCSeries):
            return nc_mul(self, other)
        return self.scale(other)

    def __matmul__(self, other: "NCSeries") -> "NCSeries":
        return nc_mul(self, other)

    def __pow__(self, m: int) -> "NCSeries":
        out = NCSeries.one(self.trunc)
        for _ in range(m):
            out = nc_mul(out, self)
        return out

    # text form
    def to_text(self) -> str:
        lines = []
        for w, c in self:
            if any(x > 9 for x in w):
                raise ValueError("text form supports letters 0..9 only")
            lines.append("".join(str(x) for x in w) + "=" + str(c))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, trunc: Truncation) -> "NCSeries":
        out: Dict[Word, Fraction] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            w, _, c = line.partition("=")
            out[tuple(int(ch) for ch in w.strip())] = Fraction(c.strip())
        return cls(trunc, out)

    def __repr__(self) -> str:
        if not self.coeffs:
            return "NCSeries(0)"
        parts = []
        for w, c in itertools.islice(iter(self), 12):
            name = "".join(f"X{x}" for x in w) or "1"
            parts.append(f"{c}*{name}")
        more = " + ..." if len(self.coeffs) > 12 else ""
        return "NCSeries(" + " + ".join(parts) + more + ")"


def nc_mul(a: NCSeries, b: NCSeries) -> NCSeries:
    """Concatenation product, truncated."""
    a._check(b)
    tr = a.trunc
    lim = tr.limits
    prof_b = [(w, c, tr.profile(w)) for w, c in b.coeffs.items()]
    prof_b.sort(key=lambda t: len(t[0]))
    out: Dict[Word, Fraction] = {}
    for w1, c1 in a.coeffs.items():
        p1 = tr.profile(w1)
        room = tr.degree - len(w1)
        for w2, c2, p2 in prof_b:
            if len(w2) > room:
                break
            if any(x + y > m for x, y, m in zip(p1, p2, lim)):
                continue
            w = w1 + w2
            out[w] = out.get(w, 0) + c1 * c2
    return NCSeries(tr, out)


def nc_exp(a: NCSeries) -> NCSeries:
    """Truncated exponential; requires a zero constant term."""
    if a.constant != 0:
        raise ValueError("exp needs a series without constant term")
    out = NCSeries.one(a.trunc)
    term = NCSeries.one(a.trunc)
    for m in range(1, a.trunc.degree + 1):
        term = nc_mul(term, a).scale(Fraction(1, m))
        if term.is_zero():
            break
        out = out + term
    return out


def nc_log(s: NCSeries) -> NCSeries:
    """Truncated logarithm; requires constant term one."""
    if s.constant != 1:
        raise ValueError("log needs a series with constant term 1")
    x = s - NCSeries.one(s.trunc)
    out = NCSeries.zero(s.trunc)
    power = NCSeries.one(s.trunc)
    for m in range(1, s.trunc.degree + 1):
        power = nc_mul(power, x)
        if power.is_zero():
            break
        sign = 1 if m % 2 else -1
        out = out + power.scale(Fraction(sign, m))
    return out


def left_normed(word: Sequence[int], trunc: Truncation) -> NCSeries:
    """Word expansion of [...[X_w1, X_w2], ..., X_wn]."""
    return NCSeries(trunc, _left_normed_words(tuple(word)))


_LN_CACHE: Dict[Word, Dict[Word, int]] = {}


def _left_normed_words(word: Word) -> Dict[Word, int]:
    hit = _LN_CACHE.get(word)
    if hit is not None:
        return hit
    if len(word) <= 1:
        res = {word: 1} if word else {}
    else:
        prev = _left_normed_words(word[:-1])
        x = word[-1]
        res = {}
        for w, c in prev.items():
            res[w + (x,)] = res.get(w + (x,), 0) + c
            res[(x,) + w] = res.get((x,) + w, 0) - c
        res = {w: c for w, c in res.items() if c}
    if len(_LN_CACHE) < 500_000:
        _LN_CACHE[word] = res
    return res


def dynkin_beta(a: NCSeries) -> NCSeries:
    """Apply left-normed bracketing word by word."""
    if a.constant != 0:
        raise ValueError("Dynkin map expects a series without constant term")
    out: Dict[Word, Fraction] = {}
    for w, c in a.coeffs.items():
        for v, k in _left_normed_words(w).items():
            out[v] = out.get(v, 0) + c * k
    return NCSeries(a.trunc, out)


def coproduct(a: NCSeries) -> Dict[Tuple[Word, Word], Fraction]:
    """Shuffle coproduct, X_i -> X_i (x) 1 + 1 (x) X_i, extended multiplicatively."""
    out: Dict[Tuple[Word, Word], Fraction] = {}
    for w, c in a.coeffs.items():
        n = len(w)
        for mask in range(1 << n):
            left = tuple(w[i] for i in range(n) if mask >> i & 1)
            right = tuple(w[i] for i in range(n) if not mask >> i & 1)
            key = (left, right)
            out[key] = out.get(key, 0) + c
    return {k: v for k, v in out.items() if v}


def _is_lie_dynkin(a: NCSeries) -> bool:
    for n in a.degrees():
        an = a.homogeneous(n)
        if dynkin_beta(an) != an.scale(n):
            return False
    return True


def _is_primitive(a: NCSeries) -> bool:
    for (u, v), c in coproduct(a).items():
        if u and v and c:
            return False
    return True


def is_lie_element(a: NCSeries, friedrichs: bool = False) -> bool:
    """Dynkin criterion per homogeneous degree, optionally cross-checked
    against primitivity for the shuffle coproduct."""
    if a.constant != 0:
        raise ValueError("Lie test expects a series without constant term")
    verdict = _is_lie_dynkin(a)
    if friedrichs:
        other = _is_primitive(a)
        if other != verdict:
            raise AssertionError("Dynkin and Friedrichs verdicts disagree")
    return verdict


def grouplike_check(s: NCSeries) -> bool:
    """Delta(s) == s (x) s on the truncated tensor algebra."""
    if s.constant != 1:
        raise ValueError("group-like test expects constant term 1")
    tr = s.trunc
    lhs = coproduct(s)
    rhs: Dict[Tuple[Word, Word], Fraction] = {}
    for u, cu in s.coeffs.items():
        for v, cv in s.coeffs.items():
            if not tr.admits(u + v):
                continue
            rhs[(u, v)] = rhs.get((u, v), 0) + cu * cv
    rhs = {k: c for k, c in rhs.items() if c}
    return lhs == rhs


def series_sum(items: Iterable[NCSeries], trunc: Truncation) -> NCSeries:
    out: Dict[Word, Fraction] = {}
    for s in items:
        if s.trunc != trunc:
            raise ValueError("mismatched truncations in sum")
        for w, c in s.coeffs.items():
            out[w] = out.get(w, 0) + c
    return NCSeries(trunc, out)


def commutator(a: NCSeries, b: NCSeries) -> NCSeries:
    return nc_mul(a, b) - nc_mul(b, a)


LiePoly = NCSeries


def shuffle(u: Sequence[int], v: Sequence[int]) -> Dict[Word, int]:
    """Shuffle product of two words, with multiplicities."""
    u, v = tuple(u), tuple(v)
    if not u:
        return {v: 1}
    if not v:
        return {u: 1}
    out: Dict[Word, int] = {}
    for w, k in shuffle(u[:-1], v).items():
        key = w + u[-1:]
        out[key] = out.get(key, 0) + k
    for w, k in shuffle(u, v[:-1]).items():
        key = w + v[-1:]
        out[key] = out.get(key, 0) + k
    return out
