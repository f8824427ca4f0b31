import itertools
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multiplierless.dyadic import (
    BUILTIN_SET_NAMES,
    CsdCode,
    DyadicRational,
    DyadicSet,
    builtin_set,
    csd_cost,
    csd_encode,
    naf_digits,
    nearest_in_set,
    nearest_indices,
)


def min_signed_digits(n: int, width: int = 11) -> int:
    """Fewest nonzero digits over every {-1, 0, 1} string of ``width`` positions."""
    best = None
    for digits in itertools.product((-1, 0, 1), repeat=width):
        if sum(d << i for i, d in enumerate(digits)) == n:
            count = sum(1 for d in digits if d)
            best = count if best is None else min(best, count)
    return best


_MIN_DIGITS = None


def min_digit_table():
    global _MIN_DIGITS
    if _MIN_DIGITS is None:
        table = {}
        for digits in itertools.product((-1, 0, 1), repeat=10):
            v = sum(d << i for i, d in enumerate(digits))
            c = sum(1 for d in digits if d)
            if -255 <= v <= 255 and c < table.get(v, 99):
                table[v] = c
        _MIN_DIGITS = table
    return _MIN_DIGITS


class TestDyadicRational:
    def test_canonical_form(self):
        r = DyadicRational(12, 3)
        assert (r.numerator, r.log2_denominator) == (3, 1)
        assert DyadicRational(0, 5) == DyadicRational(0, 0)

    def test_negative_exponent_folds_into_numerator(self):
        assert DyadicRational(3, -2) == DyadicRational(12, 0)

    @given(st.integers(-10**6, 10**6), st.integers(0, 40))
    def test_value_round_trip(self, m, n):
        r = DyadicRational(m, n)
        assert r.fraction == Fraction(m, 2**n)
        assert DyadicRational.from_value(r.fraction) == r
        assert DyadicRational.parse(str(r)) == r

    def test_rejects_non_dyadic(self):
        with pytest.raises(ValueError):
            DyadicRational.from_value(Fraction(1, 3))

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            DyadicRational.parse("3/4")


class TestSets:
    def test_listings(self):
        assert builtin_set("D1").values == (-1, 0, 1)
        assert builtin_set(2).values == (-2, -1, 0, 1, 2)
        assert builtin_set("3").values == (-4, -3, -2, -1, 0, 1, 2, 3, 4)
        assert builtin_set("D4").values == (-4, -3, -2, -1, -0.75, -0.5, -0.25, 0, 0.25, 0.5, 0.75, 1, 2, 3, 4)
        assert builtin_set("D5").values[-4:] == (4, 5, 6, 7)
        assert len(builtin_set("D5")) == 21
        assert builtin_set("D9").values == (-2, -1, -0.5, -0.125, 0, 0.125, 0.5, 1, 2)
        assert builtin_set("D10").values == (-2, -1, -0.5, -0.25, -0.125, 0, 0.125, 0.25, 0.5, 1, 2)

    @pytest.mark.parametrize("name,limit", [("D6", 4), ("D7", 5), ("D8", 7)])
    def test_quarter_grids(self, name, limit):
        s = builtin_set(name)
        assert s.values == tuple(k / 4 for k in range(-4 * limit, 4 * limit + 1))
        assert s.max_log2_denominator == 2

    @pytest.mark.parametrize("name", BUILTIN_SET_NAMES)
    def test_invariants(self, name):
        s = builtin_set(name)
        vals = s.values
        assert 0 in vals
        assert list(vals) == sorted(set(vals))
        assert all(-v in vals for v in vals)
        assert DyadicSet.from_json(name, s.to_json()) == s

    def test_unknown_set(self):
        with pytest.raises(KeyError, match="D11"):
            builtin_set("D11")

    @pytest.mark.parametrize(
        "values",
        [[], [1, 2], [-1, 1], [-1, 0, 2]],
        ids=["empty", "no-zero", "no-zero-symmetric", "asymmetric"],
    )
    def test_custom_set_validation(self, values):
        with pytest.raises(ValueError):
            DyadicSet.from_values("X", values)

    def test_unsorted_elements_rejected(self):
        els = tuple(DyadicRational.from_value(v) for v in (0, -1, 1))
        with pytest.raises(ValueError):
            DyadicSet("X", els)

    def test_membership(self):
        s = builtin_set("D4")
        assert 0.75 in s and Fraction(-1, 4) in s and 1.5 not in s


class TestCsd:
    def test_golden_factor(self):
        assert str(csd_encode(0.30859375, 8)) == "+2^-2 +2^-4 -2^-8"

    def test_examples(self):
        assert str(csd_encode(22, 0)) == "+2^5 -2^3 -2^1"
        assert csd_encode(7, 0).digits == ((1, 3), (-1, 0))
        assert str(csd_encode(0)) == "0"
        assert csd_cost(csd_encode(0)) == (0, 0)
        assert csd_cost(csd_encode(1, 0)) == (0, 0)
        assert csd_cost(csd_encode(7, 0)) == (1, 1)
        assert csd_cost(csd_encode(0.30859375, 8)) == (2, 3)

    def test_rounding_half_even(self):
        assert csd_encode(Fraction(1, 256), 7).fraction == 0
        assert csd_encode(Fraction(3, 256), 7).fraction == Fraction(2, 128)

    def test_minimal_digit_count_against_search(self):
        table = min_digit_table()
        for n in range(-255, 256):
            assert csd_encode(n, 0).nonzero_count == table[n], n

    def test_small_values_against_full_enumeration(self):
        for n in (0, 1, 3, 11, 45, -93, 171):
            assert len(naf_digits(n)) == min_signed_digits(n)

    def test_adjacency_on_random_fractions(self):
        rng = random.Random(7)
        for _ in range(10_000):
            v = Fraction(rng.randrange(-(2**16), 2**16), 2**8)
            code = csd_encode(v, 8)
            exps = [e for _, e in code.digits]
            assert all(a - b >= 2 for a, b in zip(exps, exps[1:]))
            assert code.fraction == v

    def test_parse_round_trip(self):
        code = csd_encode(-0.7109375, 7)
        assert CsdCode.parse(str(code)) == code
        with pytest.raises(ValueError):
            CsdCode.parse("+2^1 +2^0")
        with pytest.raises(ValueError):
            CsdCode.parse("three")

    def test_shifted(self):
        code = csd_encode(5, 0)
        assert code.shifted(-3).fraction == Fraction(5, 8)

    def test_invalid_digits(self):
        with pytest.raises(ValueError):
            CsdCode(((2, 0),))
        with pytest.raises(ValueError):
            csd_encode(float("nan"))
        with pytest.raises(ValueError):
            csd_encode(1.0, -1)

    @given(st.integers(-(2**40), 2**40), st.integers(0, 12))
    def test_exact_value_property(self, k, bits):
        v = Fraction(k, 2**bits)
        code = csd_encode(v, bits)
        assert code.fraction == v
        adds, shifts = csd_cost(code)
        assert adds == max(0, code.nonzero_count - 1)
        assert shifts <= code.nonzero_count


class TestNearest:
    @staticmethod
    def scan(value, dset):
        best = None
        for e in dset.elements:
            d = abs(value - e.value)
            key = (d, abs(e.value), e.value)
            if best is None or key < best[0]:
                best = (key, e)
        return best[1]

    @pytest.mark.parametrize("name", ["D1", "D3", "D4", "D8", "D10"])
    def test_matches_linear_scan(self, name):
        dset = builtin_set(name)
        rng = np.random.default_rng(1)
        xs = np.concatenate([rng.uniform(-10, 10, 500), np.arange(-40, 41) / 8])
        idx = nearest_indices(xs, dset)
        for x, i in zip(xs, idx):
            want = self.scan(float(x), dset)
            assert nearest_in_set(float(x), dset) == want
            assert dset.elements[i] == want

    def test_ties(self):
        d3 = builtin_set("D3")
        assert nearest_in_set(0.5, d3).value == 0
        assert nearest_in_set(-1.5, d3).value == -1
        assert nearest_in_set(2.5, d3).value == 2

    def test_out_of_range_clamps(self):
        d1 = builtin_set("D1")
        assert nearest_in_set(100.0, d1).value == 1
        assert nearest_in_set(-100.0, d1).value == -1
