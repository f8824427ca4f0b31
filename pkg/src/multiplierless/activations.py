"""Tanh-sigmoid and its low-complexity stand-ins.

Every approximation is scaled by ``A_HAT = 7/4`` (the 8-bit value of
``A = 1.7159``) and is odd. Branch intervals are closed on the left.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "ActivationKind",
    "A",
    "B",
    "A_HAT",
    "activate",
    "max_deviation",
    "breakpoints",
    "PiecewiseLinear",
    "PIECEWISE_LINEAR",
    "parse_kind",
]

A = 1.7159
B = 2.0 / 3.0
A_HAT = Fraction(7, 4)


class ActivationKind(str, enum.Enum):
    EXACT = "Exact"
    ASG = "ASG"
    PLAN = "PLAN"
    LINEAR_I = "LinearI"
    LINEAR_II = "LinearII"
    QUADRATIC_I = "QuadraticI"
    QUADRATIC_II = "QuadraticII"
    RELU = "ReLU"
    IDENTITY = "Identity"

    def __str__(self) -> str:
        return self.value


_ALIASES = {
    "exact": ActivationKind.EXACT,
    "tanh": ActivationKind.EXACT,
    "asg": ActivationKind.ASG,
    "plan": ActivationKind.PLAN,
    "lineari": ActivationKind.LINEAR_I,
    "linear1": ActivationKind.LINEAR_I,
    "linearii": ActivationKind.LINEAR_II,
    "linear2": ActivationKind.LINEAR_II,
    "quadratici": ActivationKind.QUADRATIC_I,
    "quadratic1": ActivationKind.QUADRATIC_I,
    "quadraticii": ActivationKind.QUADRATIC_II,
    "quadratic2": ActivationKind.QUADRATIC_II,
    "relu": ActivationKind.RELU,
    "identity": ActivationKind.IDENTITY,
    "linear": ActivationKind.IDENTITY,
}


def parse_kind(tag) -> ActivationKind:
    if isinstance(tag, ActivationKind):
        return tag
    key = str(tag).replace("_", "").replace("-", "").replace(" ", "").lower()
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown activation {tag!r}") from None


@dataclass(frozen=True)
class PiecewiseLinear:
    """Odd piecewise-linear function given on ``x >= 0``.

    ``pieces`` holds ``(lower_bound, slope, intercept)`` with ascending bounds,
    the first bound being 0. Values on the negative axis follow by oddness.
    """

    pieces: tuple[tuple[Fraction, Fraction, Fraction], ...]

    def scaled(self, k: Fraction) -> "PiecewiseLinear":
        return PiecewiseLinear(tuple((lo, k * s, k * c) for lo, s, c in self.pieces))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        out = np.zeros_like(ax)
        for lo, slope, icpt in self.pieces:
            sel = ax >= float(lo)
            out = np.where(sel, float(slope) * ax + float(icpt), out)
        return np.sign(x) * out


_F = Fraction
# positive half-line pieces before the A_HAT scaling
_PLAN = PiecewiseLinear(
    (
        (_F(0), _F(1, 2), _F(0)),
        (_F(1), _F(1, 4), _F(1, 4)),
        (_F(19, 8), _F(1, 16), _F(11, 16)),
        (_F(5), _F(0), _F(1)),
    )
)
_LINEAR_I = PiecewiseLinear(((_F(0), _F(1, 4), _F(0)), (_F(4), _F(0), _F(1))))
_LINEAR_II = PiecewiseLinear(((_F(0), _F(1, 2), _F(0)), (_F(2), _F(0), _F(1))))

PIECEWISE_LINEAR: dict[ActivationKind, PiecewiseLinear] = {
    ActivationKind.PLAN: _PLAN.scaled(A_HAT),
    ActivationKind.LINEAR_I: _LINEAR_I.scaled(A_HAT),
    ActivationKind.LINEAR_II: _LINEAR_II.scaled(A_HAT),
    ActivationKind.IDENTITY: PiecewiseLinear(((_F(0), _F(1), _F(0)),)),
}

# saturation point of the quadratic approximations
QUADRATIC_SPAN = {ActivationKind.QUADRATIC_I: 4, ActivationKind.QUADRATIC_II: 2}


def _asg(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    whole = np.floor(ax)
    # the shift amount is the integer part of |x|, so 2**whole is exact
    body = 1.0 - (1.0 + (whole - ax) / 2.0) / np.exp2(np.minimum(whole, 1074))
    return np.sign(x) * float(A_HAT) * body


def _quadratic(x: np.ndarray, span: int) -> np.ndarray:
    ax = np.minimum(np.abs(x), span)
    body = 1.0 - (1.0 - ax / span) ** 2
    return np.sign(x) * float(A_HAT) * body


def activate(kind, x):
    """Apply activation ``kind`` elementwise; scalars in, scalars out."""
    kind = parse_kind(kind)
    scalar = np.ndim(x) == 0
    arr = np.asarray(x, dtype=float)
    if kind is ActivationKind.EXACT:
        out = A * np.tanh(B * arr)
    elif kind is ActivationKind.RELU:
        out = np.maximum(arr, 0.0)
    elif kind is ActivationKind.ASG:
        out = _asg(arr)
    elif kind in QUADRATIC_SPAN:
        out = _quadratic(arr, QUADRATIC_SPAN[kind])
    else:
        out = PIECEWISE_LINEAR[kind](arr)
    return float(out) if scalar else out


def breakpoints(kind, limit: float = 8.0) -> list[float]:
    """Interval boundaries of the piecewise definition within ``[-limit, limit]``."""
    kind = parse_kind(kind)
    if kind in (ActivationKind.EXACT, ActivationKind.IDENTITY):
        return []
    if kind is ActivationKind.RELU:
        return [0.0]
    if kind is ActivationKind.ASG:
        pos = [float(k) for k in range(0, int(limit) + 1)]
    elif kind in QUADRATIC_SPAN:
        pos = [0.0, float(QUADRATIC_SPAN[kind])]
    else:
        pos = [float(lo) for lo, _, _ in PIECEWISE_LINEAR[kind].pieces]
    pts = sorted({p for p in pos} | {-p for p in pos})
    return [p for p in pts if -limit <= p <= limit]


def max_deviation(kind, domain: tuple[float, float] = (-8.0, 8.0), samples: int = 10_000) -> float:
    """Largest ``|activate(kind, x) - activate(Exact, x)|`` over evenly spaced samples."""
    if samples < 2:
        raise ValueError("need at least two samples")
    x = np.linspace(domain[0], domain[1], samples)
    return float(np.max(np.abs(activate(kind, x) - activate(ActivationKind.EXACT, x))))

