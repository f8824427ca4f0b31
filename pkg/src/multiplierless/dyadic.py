"""Dyadic rationals, the built-in search alphabets and canonical signed digit codes.

A dyadic rational is a number ``m / 2**n``. Multiplying by one only needs
shifts and additions, and the number of additions is set by the count of
nonzero digits in its canonical signed digit (CSD) form.
"""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DyadicRational",
    "DyadicSet",
    "CsdCode",
    "BUILTIN_SET_NAMES",
    "builtin_set",
    "csd_encode",
    "csd_cost",
    "naf_digits",
    "nearest_in_set",
    "nearest_indices",
    "DEFAULT_FRACTION_BITS",
]

DEFAULT_FRACTION_BITS = 7


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {value!r}")
    return Fraction(value)


@dataclass(frozen=True, order=False)
class DyadicRational:
    """Exact value ``numerator / 2**log2_denominator`` kept in canonical form."""

    numerator: int
    log2_denominator: int = 0

    def __post_init__(self):
        m, n = int(self.numerator), int(self.log2_denominator)
        if n < 0:
            m, n = m << -n, 0
        if m == 0:
            n = 0
        else:
            while n > 0 and m % 2 == 0:
                m //= 2
                n -= 1
        object.__setattr__(self, "numerator", m)
        object.__setattr__(self, "log2_denominator", n)

    @classmethod
    def from_value(cls, value) -> "DyadicRational":
        """Build from an int, float or Fraction whose denominator is a power of two."""
        frac = _as_fraction(value)
        den = frac.denominator
        if den & (den - 1):
            raise ValueError(f"{value!r} is not a dyadic rational")
        return cls(frac.numerator, den.bit_length() - 1)

    @classmethod
    def parse(cls, text: str) -> "DyadicRational":
        text = text.strip()
        m = re.fullmatch(r"([+-]?\d+)(?:/2\^(\d+))?", text)
        if m is None:
            raise ValueError(f"bad dyadic literal {text!r}")
        return cls(int(m.group(1)), int(m.group(2) or 0))

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.numerator, 1 << self.log2_denominator)

    @property
    def value(self) -> float:
        return math.ldexp(self.numerator, -self.log2_denominator)

    def __float__(self) -> float:
        return self.value

    def __lt__(self, other: "DyadicRational") -> bool:
        return self.fraction < other.fraction

    def __neg__(self) -> "DyadicRational":
        return DyadicRational(-self.numerator, self.log2_denominator)

    def __str__(self) -> str:
        if self.log2_denominator == 0:
            return str(self.numerator)
        return f"{self.numerator}/2^{self.log2_denominator}"


@dataclass(frozen=True)
class DyadicSet:
    """A finite, sorted, symmetric alphabet of dyadic rationals containing zero."""

    name: str
    elements: tuple[DyadicRational, ...]

    def __post_init__(self):
        elems = tuple(self.elements)
        if not elems:
            raise ValueError("dyadic set must not be empty")
        fracs = [e.fraction for e in elems]
        if any(a >= b for a, b in zip(fracs, fracs[1:])):
            raise ValueError(f"set {self.name} is not strictly ascending")
        present = set(fracs)
        if 0 not in present:
            raise ValueError(f"set {self.name} must contain 0")
        if any(-f not in present for f in fracs):
            raise ValueError(f"set {self.name} is not symmetric")
        object.__setattr__(self, "elements", elems)
        object.__setattr__(self, "_values", tuple(e.value for e in elems))

    @classmethod
    def from_values(cls, name: str, values: Iterable) -> "DyadicSet":
        elems = sorted({DyadicRational.from_value(v) for v in values})
        return cls(name, tuple(elems))

    @property
    def values(self) -> tuple[float, ...]:
        return self._values  # type: ignore[attr-defined]

    @property
    def max_log2_denominator(self) -> int:
        return max(e.log2_denominator for e in self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, item) -> bool:
        try:
            frac = _as_fraction(item.fraction if isinstance(item, DyadicRational) else item)
        except ValueError:
            return False
        return frac in {e.fraction for e in self.elements}

    def to_json(self) -> list[str]:
        return [str(e) for e in self.elements]

    @classmethod
    def from_json(cls, name: str, items: Sequence[str]) -> "DyadicSet":
        return cls(name, tuple(DyadicRational.parse(s) for s in items))


def _quarter_range(limit: int) -> list[Fraction]:
    return [Fraction(k, 4) for k in range(-4 * limit, 4 * limit + 1)]


def _symmetric(positive: Iterable) -> list[Fraction]:
    pos = [Fraction(p) for p in positive]
    return sorted({0, *pos, *(-p for p in pos)})


_BUILTIN_VALUES: dict[str, list[Fraction]] = {
    "D1": _symmetric([1]),
    "D2": _symmetric([1, 2]),
    "D3": _symmetric([1, 2, 3, 4]),
    "D4": _symmetric([Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), 1, 2, 3, 4]),
    "D5": _symmetric([Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), 1, 2, 3, 4, 5, 6, 7]),
    "D6": _quarter_range(4),
    "D7": _quarter_range(5),
    "D8": _quarter_range(7),
    "D9": _symmetric([Fraction(1, 8), Fraction(1, 2), 1, 2]),
    "D10": _symmetric([Fraction(1, 8), Fraction(1, 4), Fraction(1, 2), 1, 2]),
}

BUILTIN_SET_NAMES = tuple(_BUILTIN_VALUES)


def builtin_set(name: str | int) -> DyadicSet:
    """Return one of the predefined alphabets ``D1`` to ``D10``.

    Integers are accepted as shorthand, so ``builtin_set(7)`` is ``D7``.
    """
    key = f"D{name}" if isinstance(name, int) or str(name).isdigit() else str(name).upper()
    try:
        values = _BUILTIN_VALUES[key]
    except KeyError:
        raise KeyError(f"unknown dyadic set {name!r}; expected one of {', '.join(BUILTIN_SET_NAMES)}") from None
    return DyadicSet.from_values(key, values)


# --------------------------------------------------------------------------
# Canonical signed digit
# --------------------------------------------------------------------------

_TERM = re.compile(r"([+-])\s*2\^(-?\d+)")


@dataclass(frozen=True)
class CsdCode:
    """Signed power-of-two digits ``(sign, exponent)``, highest exponent first."""

    digits: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        digits = tuple(sorted(((int(s), int(e)) for s, e in self.digits), key=lambda d: -d[1]))
        exps = [e for _, e in digits]
        if any(s not in (1, -1) for s, _ in digits):
            raise ValueError("CSD digit signs must be +1 or -1")
        if any(a - b < 2 for a, b in zip(exps, exps[1:])):
            raise ValueError(f"digits {digits} violate the non-adjacency property")
        object.__setattr__(self, "digits", digits)

    @property
    def fraction(self) -> Fraction:
        total = Fraction(0)
        for sign, exp in self.digits:
            total += sign * (Fraction(2) ** exp)
        return total

    @property
    def value(self) -> float:
        return math.fsum(math.ldexp(s, e) for s, e in self.digits)

    @property
    def dyadic(self) -> DyadicRational:
        return DyadicRational.from_value(self.fraction)

    @property
    def nonzero_count(self) -> int:
        return len(self.digits)

    def shifted(self, by: int) -> "CsdCode":
        """Code of ``value * 2**by``."""
        return CsdCode(tuple((s, e + by) for s, e in self.digits))

    def __str__(self) -> str:
        if not self.digits:
            return "0"
        return " ".join(f"{'+' if s > 0 else '-'}2^{e}" for s, e in self.digits)

    @classmethod
    def parse(cls, text: str) -> "CsdCode":
        text = text.strip()
        if text == "0":
            return cls(())
        terms = _TERM.findall(text)
        if not terms or _TERM.sub("", text).strip():
            raise ValueError(f"bad CSD expression {text!r}")
        return cls(tuple((1 if s == "+" else -1, int(e)) for s, e in terms))


def naf_digits(k: int) -> list[tuple[int, int]]:
    """Non-adjacent form of an integer as ``(sign, exponent)`` pairs, low exponent first."""
    out = []
    exp = 0
    while k != 0:
        if k & 1:
            d = 2 - (k % 4)  # +1 if k = 1 (mod 4), -1 if k = 3 (mod 4)
            out.append((d, exp))
            k -= d
        k >>= 1
        exp += 1
    return out


def csd_encode(value, max_fraction_bits: int = DEFAULT_FRACTION_BITS) -> CsdCode:
    """CSD code of ``value`` rounded to the nearest multiple of ``2**-max_fraction_bits``.

    Ties round half to even.

    >>> str(csd_encode(0.30859375, 8))
    '+2^-2 +2^-4 -2^-8'
    """
    if max_fraction_bits < 0:
        raise ValueError("max_fraction_bits must be non-negative")
    frac = _as_fraction(value)
    if abs(frac) >= 2**64:
        raise ValueError(f"{value!r} is out of range")
    k = round(frac * (1 << max_fraction_bits))
    return CsdCode(tuple((s, e - max_fraction_bits) for s, e in naf_digits(k)))


def csd_cost(code: CsdCode) -> tuple[int, int]:
    """``(additions, shifts)`` needed to multiply by ``code``.

    Subtractions count as additions; a digit at exponent 0 needs no shift.
    """
    n = code.nonzero_count
    return max(0, n - 1), sum(1 for _, e in code.digits if e != 0)


# --------------------------------------------------------------------------
# Nearest neighbour search
# --------------------------------------------------------------------------


def _pick(value: float, a: float, b: float) -> float:
    da, db = abs(value - a), abs(value - b)
    if da != db:
        return a if da < db else b
    if abs(a) != abs(b):
        return a if abs(a) < abs(b) else b
    return min(a, b)


def nearest_in_set(value: float, dset: DyadicSet) -> DyadicRational:
    """Element of ``dset`` closest to ``value`` (binary search).

    Ties go to the smaller magnitude, then to the negative candidate.
    """
    vals = dset.values
    i = bisect.bisect_left(vals, value)
    if i == 0:
        return dset.elements[0]
    if i == len(vals):
        return dset.elements[-1]
    best = _pick(value, vals[i - 1], vals[i])
    return dset.elements[i - 1] if best == vals[i - 1] else dset.elements[i]


def nearest_indices(values: np.ndarray, dset: DyadicSet) -> np.ndarray:
    """Vectorised :func:`nearest_in_set` returning indices into ``dset.elements``."""
    vals = np.asarray(dset.values)
    x = np.asarray(values, dtype=float)
    hi = np.clip(np.searchsorted(vals, x, side="left"), 1, len(vals) - 1)
    lo = hi - 1
    if len(vals) == 1:
        return np.zeros(x.shape, dtype=np.intp)
    a, b = vals[lo], vals[hi]
    da, db = np.abs(x - a), np.abs(x - b)
    take_lo = (da < db) | ((da == db) & ((np.abs(a) < np.abs(b)) | ((np.abs(a) == np.abs(b)) & (a <= b))))
    return np.where(take_lo, lo, hi)
