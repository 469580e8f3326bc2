"""Shared hypothesis strategies."""
from fractions import Fraction

from hypothesis import strategies as st

from flowexp.signals import Control

small_rationals = st.builds(Fraction, st.integers(-6, 6), st.integers(1, 4))


@st.composite
def piecewise_linear(draw, max_pieces=3, T=1):
    n = draw(st.integers(1, max_pieces))
    cuts = sorted(draw(st.sets(st.integers(1, 11), min_size=n - 1, max_size=n - 1)))
    T = Fraction(T)
    br = [Fraction(0)] + [T * Fraction(c, 12) for c in cuts] + [T]
    vals = [(draw(small_rationals), draw(small_rationals)) for _ in range(n)]
    return Control.piecewise_linear(br, vals)


def words(q, max_len):
    return st.lists(st.integers(1, q), min_size=0, max_size=max_len).map(tuple)
