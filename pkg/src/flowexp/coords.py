"""Bernoulli numbers and exact coordinate tables (first, second and
pseudo-first kind, plus CBHD coefficients)."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .freealg import NCSeries, Truncation, is_lie_element, nc_log
from .hall import (Bracket, HallBasis, X, ad, build_hall_basis, expand_to_words,
                   hall_decompose, standard_factorization)
from .signals import Control, ControlTuple, ordered_exponential, word_series


_BERNOULLI: List[Fraction] = [Fraction(1)]


def _bernoulli_table(n: int) -> List[Fraction]:
    B = _BERNOULLI
    for m in range(len(B), n + 1):
        # sum_{k<=m} C(m+1, k) B_k = 0
        s = sum(math.comb(m + 1, k) * B[k] for k in range(m) if k < 2 or k % 2 == 0)
        B.append(-s / (m + 1) if m == 1 or m % 2 == 0 else Fraction(0))
    return B


def bernoulli(n: int) -> Fraction:
    """B_n with B_1 = -1/2."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return _bernoulli_table(n)[n]


def bernoulli_table(n: int) -> List[Fraction]:
    return list(_bernoulli_table(n)[:n + 1])


@dataclass
class CoordTable:
    kind: str
    values: Dict[Bracket, Fraction]
    t: Fraction
    control_id: str = ""
    params: Dict[str, object] = field(default_factory=dict)

    def __getitem__(self, b: Bracket) -> Fraction:
        return self.values.get(b, Fraction(0))

    def __iter__(self):
        return iter(self.values.items())

    def items_sorted(self, basis: Optional[HallBasis] = None):
        if basis is not None:
            return [(b, self[b]) for b in basis.elements if self._admitted(b)]
        return sorted(self.values.items(), key=lambda kv: (kv[0].length, repr(kv[0])))

    def _admitted(self, b: Bracket) -> bool:
        M = self.params.get("M")
        N0 = self.params.get("N0")
        if self.kind == "pseudo_first":
            return b.n <= M and b.n0 <= N0
        if M is not None:
            return b.length <= M
        return b in self.values

    def to_csv(self, basis: Optional[HallBasis] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bracket", "length", "n", "n0", "value", "decimal"])
        rows = self.items_sorted(basis)
        for b, v in rows:
            w.writerow([str(b.to_nested()).replace(" ", ""), b.length, b.n, b.n0, str(v), f"{float(v):.17g}"])
        return buf.getvalue()


def _letters_trunc(M: int) -> Truncation:
    return Truncation(M)


def coord_first_kind(basis: HallBasis, a: ControlTuple, t, M: int,
                     control_id: str = "") -> CoordTable:
    """zeta_b for |b| <= M: decompose log of the word series on the basis."""
    if M > basis.max_length:
        raise ValueError("M exceeds the basis length")
    S = word_series(a, t, M)
    L = nc_log(S)
    if not is_lie_element(L):
        raise ArithmeticError("logarithm of the word series is not a Lie element")
    vals = hall_decompose(L, basis, check_lie=False)
    return CoordTable("first", vals, Fraction(t), control_id, {"M": M})


def cbhd_coeffs(n_args: int, basis: Optional[HallBasis] = None, M: int = 4) -> CoordTable:
    """alpha_b with e^{y1} ... e^{yn} = exp(sum alpha_b b), letters 1..n."""
    if n_args < 2:
        raise ValueError("CBHD needs at least two arguments")
    if basis is None:
        basis = build_hall_basis(n_args, M)
    if set(basis.letters) != set(range(1, n_args + 1)):
        raise ValueError("basis alphabet must be 1..n_args")
    T = n_args
    ctrls = tuple(Control.indicator(j - 1, j, T) for j in range(1, n_args + 1))
    a = ControlTuple(tuple(range(1, n_args + 1)), ctrls)
    tab = coord_first_kind(basis, a, T, M, control_id=f"indicators[{n_args}]")
    tab.kind = "cbhd"
    tab.params["n_args"] = n_args
    return tab


def cbhd_series(args: Sequence[NCSeries], M: int, table: Optional[CoordTable] = None) -> NCSeries:
    """CBHD_M(y1, ..., yn) with the yi given as Lie series; brackets of
    length <= M are substituted and evaluated in the free algebra."""
    n = len(args)
    if table is None:
        table = cbhd_coeffs(n, None, M)
    trunc = args[0].trunc
    gens = {i + 1: y for i, y in enumerate(args)}
    cache: Dict[Bracket, NCSeries] = {}

    def sub(b: Bracket) -> NCSeries:
        if b in cache:
            return cache[b]
        if b.is_leaf:
            r = gens[b.key]
        else:
            l, rr = sub(b.left), sub(b.right)
            r = l @ rr - rr @ l
        cache[b] = r
        return r

    out = NCSeries.zero(trunc)
    for b, c in table.values.items():
        if b.length <= M:
            out = out + sub(b).scale(c)
    return out


def coord_second_kind(brackets: Iterable[Bracket], a: ControlTuple, t,
                      control_id: str = "") -> CoordTable:
    """xi_b by the integral recursion xi_b = 1/m! int xi_{b1}^m d(xi_{b2}),
    b = ad_{b1}^m(b2) with m maximal; letters give xi = int a_i."""
    t = Fraction(t)
    a_t = a.restrict(t) if t < a.T else a
    sig = SecondKindSignals(a_t)
    vals = {}
    for b in brackets:
        v = sig.xi(b)(t)
        if v:
            vals[b] = v
    return CoordTable("second", vals, t, control_id, {})


class SecondKindSignals:
    """Memoized xi_b and its derivative as exact piecewise polynomials."""

    def __init__(self, a: ControlTuple):
        self.a = a
        self._xi: Dict[Bracket, Control] = {}
        self._dxi: Dict[Bracket, Control] = {}

    def dxi(self, b: Bracket) -> Control:
        if b in self._dxi:
            return self._dxi[b]
        if b.is_leaf:
            if b.key not in self.a.letters:
                r = Control.constant(0, self.a.T)
            else:
                r = self.a[b.key]
        else:
            m, b1, b2 = standard_factorization(b)
            r = (self.xi(b1) ** m * self.dxi(b2)).scale(Fraction(1, math.factorial(m)))
        self._dxi[b] = r
        return r

    def xi(self, b: Bracket) -> Control:
        if b not in self._xi:
            self._xi[b] = self.dxi(b).primitive()
        return self._xi[b]


def coord_pseudo_first_kind(basis: HallBasis, u: ControlTuple, t, M: int, N0: int,
                            control_id: str = "") -> CoordTable:
    """eta_b for n(b) <= M and n0(b) <= N0, through the extended letters
    Y_{k,i} -> ad^k_{X0}(X_i) driven by (-1)^k (t-s)^k u_i(s) / k!."""
    t = Fraction(t)
    trunc = pseudo_trunc(M, N0, [l for l, _ in u.inputs()])
    L = interaction_log(u, t, trunc, N0)
    vals = hall_decompose(L, basis, check_lie=False)
    vals = {b: c for b, c in vals.items() if b.n <= M and b.n0 <= N0}
    return CoordTable("pseudo_first", vals, t, control_id, {"M": M, "N0": N0})


def pseudo_trunc(M: int, N0: int, inputs: Sequence[int]) -> Truncation:
    return Truncation(M + N0, ((frozenset(inputs), M), (frozenset([0]), N0)))


def shifted_power(t: Fraction, k: int) -> Tuple[Fraction, ...]:
    """Coefficients (in s) of (-1)^k (t - s)^k / k! = (s - t)^k / k!."""
    coeffs = [Fraction(math.comb(k, j)) * (-t) ** (k - j) for j in range(k + 1)]
    return tuple(c / math.factorial(k) for c in coeffs)


def interaction_letters(u: ControlTuple, t: Fraction, trunc: Truncation, N0: int):
    out = []
    for i, ui in u.inputs():
        for k in range(N0 + 1):
            img = expand_to_words(ad(X(0), X(i), k), trunc) if k + 1 <= trunc.degree else None
            if img is None or img.is_zero():
                continue
            out.append(((k, i), img, ui.mul_poly(shifted_power(t, k))))
    return out


def interaction_log(u: ControlTuple, t: Fraction, trunc: Truncation, N0: int) -> NCSeries:
    """Z with x(t) = e^{t X0} exp(Z), filtered by the truncation."""
    letters = interaction_letters(u, t, trunc, N0)
    S = ordered_exponential([(img, c) for _, img, c in letters], t, trunc)
    return nc_log(S)


def coord_bound_audit(table: CoordTable, a: ControlTuple, *,
                      scalar_x1_minimal: bool = False) -> dict:
    """Check |xi_b| <= ||a||_{L1}^{|b|} and report fitted constants for the
    drift-aware factorizations."""
    if table.kind != "second":
        raise ValueError("bound audit applies to second-kind tables")
    t = table.t
    norm = a.total_l1(t) if t > 0 else 0
    report = {"violations": [], "checked": 0, "drift_constant": 0.0, "per_k": {}}
    for b, v in table.values.items():
        report["checked"] += 1
        bound = norm ** b.length
        if abs(v) > bound * (1 + 1e-12 if isinstance(bound, float) else 1):
            report["violations"].append((repr(b), float(v), float(bound)))
    if 0 in a.letters and t > 0:
        unorm = a.input_l1(t)
        worst = 0.0
        for b, v in table.values.items():
            if b.n == 0 or b.length == 1:
                continue
            ref = unorm ** b.n / math.factorial(b.n) * float(t) ** b.n0 / math.factorial(b.n0)
            if ref > 0:
                worst = max(worst, abs(float(v)) / ref)
        report["drift_constant"] = worst
        if scalar_x1_minimal:
            U = a[1].primitive()
            for b, v in table.values.items():
                if b.is_leaf or b.n0 < 1:
                    continue
                k = b.n
                lk = float((U ** k).l1_norm(t))
                ref = lk * float(t) ** (b.n0 - 1) / math.factorial(b.n0 - 1)
                if ref > 0:
                    c = abs(float(v)) / ref
                    report["per_k"][k] = max(report["per_k"].get(k, 0.0), c)
    if report["violations"]:
        report["ok"] = False
    else:
        report["ok"] = True
    return report


def zeta_closed_form(k: int, a: ControlTuple, t) -> Fraction:
    """Bernoulli closed form for zeta of ad^k_{X0}(X1) (drift letter 0,
    input letter 1)."""
    t = Fraction(t)
    A0 = a[0].integral(t)
    A1 = a[1].integral(t)
    total = (-1) ** k * A0 ** k * bernoulli(k) / math.factorial(k) * A1
    from .signals import iterated_integral
    for l in range(1, k + 1):
        integ = iterated_integral([a[1]] + [a[0]] * l, t)
        total += (-1) ** k * A0 ** (k - l) * bernoulli(k - l) / math.factorial(k - l) * integ
    return total
