"""Recompute the committed activation regression constants.

Written directly from the piecewise definitions, independent of the package,
and sampled at 10**5 evenly spaced points of [-8, 8].
"""

import numpy as np

AH = 7 / 4


def tanh_sigmoid(x):
    return 1.7159 * np.tanh(2 / 3 * x)


def asg(x):
    ax = np.abs(x)
    k = np.floor(ax)
    return np.sign(x) * AH * (1 - (1 + (k - ax) / 2) / 2.0**k)


def plan(x):
    ax = np.abs(x)
    pos = np.select(
        [ax < 1, ax < 19 / 8, ax < 5],
        [ax / 2, ax / 4 + 1 / 4, ax / 16 + 11 / 16],
        1.0,
    )
    return np.sign(x) * AH * pos


def linear(span):
    return lambda x: AH * np.clip(x / span, -1, 1)


def quadratic(span):
    def f(x):
        ax = np.minimum(np.abs(x), span)
        return np.sign(x) * AH * (1 - (1 - ax / span) ** 2)

    return f


KINDS = {
    "ASG": asg,
    "PLAN": plan,
    "LinearI": linear(4),
    "LinearII": linear(2),
    "QuadraticI": quadratic(4),
    "QuadraticII": quadratic(2),
}

if __name__ == "__main__":
    x = np.linspace(-8, 8, 100_000)
    ref = tanh_sigmoid(x)
    for name, f in KINDS.items():
        print(f"    {name!r}: {float(np.max(np.abs(f(x) - ref)))!r},")
