import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from flowexp.freealg import NCSeries, Truncation, is_lie_element
from flowexp.hall import (Bracket, X, ad, build_hall_basis, expand_to_words, expansion_rank,
                          hall_audit, hall_decompose, malabar_factorize, recombine,
                          standard_factorization, witt_dimension)

X1, X2 = X(1), X(2)


def test_basis_q2_len4():
    b = build_hall_basis(2, 4)
    expected = [X1, X2, ad(X1, X2), ad(X1, X2, 2), ad(X2, ad(X1, X2)), ad(X1, X2, 3),
                ad(X2, ad(X1, X2, 2)), ad(X2, ad(X1, X2), 2)]
    assert b.elements == expected
    assert [len(b.of_length(n)) for n in range(1, 5)] == [2, 1, 2, 3]


def test_single_letter_basis():
    assert build_hall_basis(1, 7).elements == [X1]


@pytest.mark.parametrize("q,n", [(2, n) for n in range(1, 8)] + [(3, n) for n in range(1, 6)])
def test_witt_dimensions(q, n):
    basis = build_hall_basis(q, n)
    assert len(basis.of_length(n)) == witt_dimension(q, n)


def test_witt_values():
    # necklace counts
    assert [witt_dimension(2, n) for n in range(1, 9)] == [2, 1, 2, 3, 6, 9, 18, 30]


@pytest.mark.parametrize("kw", [dict(alphabet_size=2, max_length=6),
                                dict(alphabet_size=1, max_length=6, drift=True),
                                dict(alphabet_size=2, max_length=5, drift=True),
                                dict(alphabet_size=1, max_length=6, drift=True,
                                     order_policy="custom", letter_order=(1, 0))])
def test_hall_audit_clean(kw):
    assert hall_audit(build_hall_basis(**kw)) == []


def test_expand_to_words():
    assert expand_to_words(ad(X1, X2), 3).coeffs == {(1, 2): 1, (2, 1): -1}
    assert expand_to_words(Bracket.of(X1, X1), 3).is_zero()
    assert expand_to_words(ad(X1, X2, 2), 3).coeffs == {(1, 1, 2): 1, (1, 2, 1): -2, (2, 1, 1): 1}


def test_decompose_worked_example():
    basis = build_hall_basis(2, 4)
    target = Bracket.of(X1, ad(X2, ad(X1, X2)))
    coeffs = hall_decompose(expand_to_words(target, 4), basis)
    assert coeffs == {ad(X2, ad(X1, X2, 2)): 1}


def test_decompose_basis_indicator():
    basis = build_hall_basis(2, 5)
    for b in basis.elements:
        assert hall_decompose(expand_to_words(b, 5), basis) == {b: 1}


def test_decompose_rejects_non_lie():
    basis = build_hall_basis(2, 3)
    with pytest.raises(ValueError):
        hall_decompose(NCSeries.word((1, 2), Truncation(3)), basis)


def test_degree4_rank():
    brs = [ad(X1, X2, 3), ad(X2, ad(X1, X2, 2)), ad(X2, ad(X1, X2), 2),
           Bracket.of(X1, ad(X2, ad(X1, X2))), Bracket.of(X2, ad(X1, X2, 2))]
    assert expansion_rank(brs) == 3


def test_malabar():
    basis = build_hall_basis(1, 6, drift=True)
    X0 = X(0)
    assert malabar_factorize(ad(X0, X1, 2), basis) == (2, 0, X1)
    assert malabar_factorize(X1, basis) == (0, 0, X1)


def test_malabar_x1_minimal():
    basis = build_hall_basis(1, 6, "custom", drift=True, letter_order=(1, 0))
    for b in basis.elements:
        if b.n == 1 and b != X1:
            assert malabar_factorize(b, basis)[1] >= 1


def test_standard_factorization():
    assert standard_factorization(ad(X1, X2, 3)) == (3, X1, X2)


def test_custom_priority():
    pri = [ad(X2, ad(X1, X2))]
    b = build_hall_basis(2, 3, "custom", priority=pri)
    assert b.of_length(3)[0] == pri[0]
    assert hall_audit(b) == []


def test_json_export():
    d = json.loads(build_hall_basis(2, 3).to_json())
    assert len(d["elements"]) == 5


def test_bad_arguments():
    with pytest.raises(ValueError):
        build_hall_basis(0, 3)
    with pytest.raises(ValueError):
        build_hall_basis(2, 3, "weird")


BASIS5 = build_hall_basis(2, 5)


@given(st.lists(st.tuples(st.integers(0, len(BASIS5.elements) - 1),
                          st.builds(Fraction, st.integers(-5, 5), st.integers(1, 3))),
                max_size=6))
def test_decompose_recombine_round_trip(items):
    coeffs = {}
    for i, c in items:
        b = BASIS5.elements[i]
        coeffs[b] = coeffs.get(b, 0) + c
    coeffs = {b: c for b, c in coeffs.items() if c}
    L = recombine(coeffs, Truncation(5))
    assert is_lie_element(L)
    assert hall_decompose(L, BASIS5) == coeffs


ELS2 = [b for b in BASIS5.elements if b.length <= 2]


@given(st.sampled_from(ELS2), st.sampled_from(ELS2), st.sampled_from(ELS2))
def test_jacobi_and_antisymmetry(a, b, c):
    tr = Truncation(6)
    ea, eb, ec = (expand_to_words(x, tr) for x in (a, b, c))

    def br(p, q):
        return p @ q - q @ p
    assert (br(ea, br(eb, ec)) + br(eb, br(ec, ea)) + br(ec, br(ea, eb))).is_zero()
    assert br(ea, eb) == -br(eb, ea)
