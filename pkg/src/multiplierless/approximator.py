"""Expansion-factor search for low-complexity matrices.

For a real matrix ``M`` and an alphabet ``D`` of dyadic rationals we look for
``alpha > 0`` and ``T`` with entries in ``D`` minimising ``||M - alpha*T||_F^2``.
For a fixed ``alpha`` the zero-one program that picks one alphabet symbol per
entry separates into independent per-entry choices, so it is solved exactly by
nearest-neighbour search of ``m_ij / alpha`` in ``D``. The outer problem is a
one-dimensional sweep over ``alpha``.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .activations import ActivationKind, parse_kind
from .dyadic import (
    DEFAULT_FRACTION_BITS,
    CsdCode,
    DyadicRational,
    DyadicSet,
    builtin_set,
    csd_encode,
    nearest_indices,
)
from .model import ApproximateWeight, LayerKind, NetworkModel

__all__ = [
    "SweepConfig",
    "ApproximationResult",
    "solve_fixed_alpha",
    "brute_force_oracle",
    "error_curve",
    "sweep",
    "approximate_matrix",
    "approximate_network",
    "parse_scheme",
    "ALPHA_FRACTION_BITS",
    "NETWORK_SWEEP",
]

# alpha is encoded with one more fractional bit than pooling/bias constants
ALPHA_FRACTION_BITS = 8
ORACLE_LIMIT = 10**6


@dataclass(frozen=True)
class SweepConfig:
    """Grid of expansion factors.

    With ``relative`` set, the bounds are in units of ``max|M| / max(D)``,
    the factor that maps the largest entry onto the largest set element.
    """

    alpha_min: float = 0.25
    alpha_max: float = 1.0
    alpha_step: float = 1e-3
    refine: bool = True
    relative: bool = False

    def __post_init__(self):
        if not (0 < self.alpha_min <= self.alpha_max):
            raise ValueError("need 0 < alpha_min <= alpha_max")
        if not self.alpha_step > 0:
            raise ValueError("alpha_step must be positive")

    def grid(self, m=None, dset: DyadicSet | None = None) -> np.ndarray:
        count = int(math.floor((self.alpha_max - self.alpha_min) / self.alpha_step + 1e-9)) + 1
        points = self.alpha_min + self.alpha_step * np.arange(count)
        if self.relative and m is not None and dset is not None:
            top = float(np.max(np.abs(m)))
            if top > 0:
                points = points * (top / max(dset.values))
        return points


# default for whole networks: trained layers have very different weight scales
NETWORK_SWEEP = SweepConfig(alpha_min=0.02, alpha_max=1.5, alpha_step=1e-3, refine=True, relative=True)


@dataclass(frozen=True)
class ApproximationResult:
    alpha_star: float
    t_star: np.ndarray  # float entries, each a member of the alphabet
    error_star: float
    curve: tuple[tuple[float, float], ...]
    set_name: str
    grid_alpha: float = float("nan")
    grid_error: float = float("nan")

    @property
    def m_hat(self) -> np.ndarray:
        return self.alpha_star * self.t_star

    def t_dyadic(self) -> list[list[DyadicRational]]:
        return [[DyadicRational.from_value(v) for v in row] for row in np.atleast_2d(self.t_star)]

    def curve_csv(self) -> str:
        lines = ["alpha,error"]
        lines += [f"{a!r},{e!r}" for a, e in self.curve]
        return "\n".join(lines) + "\n"


def _as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("expected a non-empty 2-D matrix")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def _frobenius_sq(m: np.ndarray, alpha: float, t: np.ndarray) -> float:
    return float(np.sum((m - alpha * t) ** 2))


def solve_fixed_alpha(m, dset: DyadicSet, alpha: float) -> tuple[np.ndarray, float]:
    """Optimal ``T`` over ``dset`` for a fixed expansion factor and its squared error."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    arr = _as_matrix(m)
    t = np.asarray(dset.values)[nearest_indices(arr / alpha, dset)]
    return t, _frobenius_sq(arr, alpha, t)


def brute_force_oracle(m, dset: DyadicSet, alpha: float) -> tuple[np.ndarray, float]:
    """Exhaustive search over every matrix in ``dset**(rows*cols)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    arr = _as_matrix(m)
    if len(dset) ** arr.size > ORACLE_LIMIT:
        raise ValueError(f"search space {len(dset)}^{arr.size} exceeds {ORACLE_LIMIT}")
    flat = arr.ravel()
    best_t, best_err = None, math.inf
    for combo in itertools.product(dset.values, repeat=arr.size):
        err = math.fsum((mi - alpha * ti) ** 2 for mi, ti in zip(flat, combo))
        if err < best_err:
            best_t, best_err = combo, err
    return np.array(best_t, dtype=float).reshape(arr.shape), best_err


def error_curve(m, dset: DyadicSet, alphas: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Error(alpha) on a grid; also returns the winning alphabet indices per alpha."""
    arr = _as_matrix(m)
    alphas = np.asarray(alphas, dtype=float)
    vals = np.asarray(dset.values)
    idx = nearest_indices(arr.ravel()[None, :] / alphas[:, None], dset)
    t = vals[idx]
    errs = np.sum((arr.ravel()[None, :] - alphas[:, None] * t) ** 2, axis=1)
    return errs, idx


def sweep(m, dset: DyadicSet, cfg: SweepConfig | None = None, solver: Callable | None = None) -> ApproximationResult:
    """Grid search for the best expansion factor, optionally refined in closed form.

    For a fixed ``T`` the error is a parabola in ``alpha`` with vertex
    ``<M, T> / ||T||^2``. Refinement jumps to that vertex and re-solves once;
    the refined point is kept only when it does not increase the error, and
    is then merged into the returned curve so that its minimum is the optimum.

    ``solver(m, dset, alpha) -> (t, error)`` replaces the per-entry
    nearest-neighbour step, e.g. with a constrained zero-one program.
    """
    cfg = cfg or SweepConfig()
    arr = _as_matrix(m)
    grid = cfg.grid(arr, dset)
    if grid.size == 0:
        raise ValueError("empty alpha grid")
    if solver is None:
        solve = solve_fixed_alpha
        errs, idx = error_curve(arr, dset, grid)
        vals = np.asarray(dset.values)
        ts = [vals[i].reshape(arr.shape) for i in idx]
    else:
        solve = solver
        solved = [solver(arr, dset, float(a)) for a in grid]
        ts = [np.asarray(t, dtype=float).reshape(arr.shape) for t, _ in solved]
        errs = np.array([e for _, e in solved], dtype=float)
    best = int(np.argmin(errs))
    alpha = float(grid[best])
    t = ts[best]
    err = float(errs[best])
    grid_alpha, grid_err = alpha, err
    if cfg.refine:
        norm = float(np.sum(t * t))
        cand = float(np.sum(arr * t)) / norm if norm > 0 else 0.0
        if cand > 0:
            t2, err2 = solve(arr, dset, cand)
            cand_t, cand_err = t, _frobenius_sq(arr, cand, t)
            if err2 < cand_err:
                cand_t, cand_err = t2, err2
            if cand_err <= err:
                alpha, t, err = cand, cand_t, cand_err
    points = [(float(a), float(e)) for a, e in zip(grid, errs)]
    if alpha != grid_alpha:
        points.append((alpha, err))
        points.sort()
    curve = tuple(points)
    return ApproximationResult(alpha, t, err, curve, dset.name, grid_alpha, grid_err)


# --------------------------------------------------------------------------
# Whole-network approximation
# --------------------------------------------------------------------------


def parse_scheme(scheme, weight_layers: int) -> list[DyadicSet]:
    """Turn ``"7"``, ``"7,3,3,3"`` or ``"A7,3,3,3"`` (or a list of ints/sets) into one set per weight layer."""
    if isinstance(scheme, DyadicSet):
        items = [scheme]
    elif isinstance(scheme, str):
        scheme = scheme.strip()
        if scheme[:1] in ("A", "a"):
            scheme = scheme[1:]
        parts = [p.strip() for p in scheme.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty scheme")
        items = [builtin_set(p) for p in parts]
    else:
        items = [s if isinstance(s, DyadicSet) else builtin_set(s) for s in scheme]
    if len(items) == 1:
        return items * weight_layers
    if len(items) != weight_layers:
        raise ValueError(f"scheme lists {len(items)} sets but the model has {weight_layers} weight layers")
    return items


def scheme_label(sets: Sequence[DyadicSet]) -> str:
    ids = [s.name[1:] if s.name.startswith("D") else s.name for s in sets]
    if len(set(ids)) == 1:
        return f"A{ids[0]}"
    return "A" + ",".join(ids)


def approximate_matrix(m, dset: DyadicSet, cfg: SweepConfig | None = None) -> ApproximateWeight:
    arr = _as_matrix(m)
    res = sweep(arr, dset, cfg or NETWORK_SWEEP)
    shift = dset.max_log2_denominator
    nums = np.rint(res.t_star * (1 << shift)).astype(np.int64)
    return ApproximateWeight(
        alpha=res.alpha_star,
        alpha_code=csd_encode(res.alpha_star, ALPHA_FRACTION_BITS),
        numerators=nums,
        log2_denominator=shift,
        error=res.error_star,
        set_name=dset.name,
    )


def _quantize_scalar(value, bits: int) -> CsdCode:
    if isinstance(value, CsdCode):
        return value
    return csd_encode(float(value), bits)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MULTIPLIERLESS_THREADS", "1")))
    except ValueError:
        return 1


def approximate_network(
    model: NetworkModel,
    scheme,
    activation=None,
    cfg: SweepConfig | None = None,
    scalar_bits: int = DEFAULT_FRACTION_BITS,
    map_fn: Callable | None = None,
) -> NetworkModel:
    """Approximate every weight matrix, scalar and activation of ``model``.

    ``scheme`` assigns a dyadic set to each weight-bearing layer (a single set
    is broadcast). Pooling coefficients and biases become their nearest CSD
    values with ``scalar_bits`` fractional bits. A tanh-sigmoid activation is
    swapped for ``activation`` when given; ReLU and identity are kept.
    """
    if model.precision == "approximate":
        raise ValueError("model is already approximate")
    weight_layers = [i for i, layer in enumerate(model.layers) if layer.kind is not LayerKind.AVERAGE_POOLING]
    sets = parse_scheme(scheme, len(weight_layers))
    layer_set = dict(zip(weight_layers, sets))
    act = parse_kind(activation) if activation is not None else None

    jobs = [(i, j, w) for i in weight_layers for j, w in enumerate(model.layers[i].weights)]
    work = lambda job: approximate_matrix(job[2], layer_set[job[0]], cfg)  # noqa: E731
    if map_fn is None:
        nthreads = _threads()
        if nthreads > 1:
            with ThreadPoolExecutor(nthreads) as pool:
                results = list(pool.map(work, jobs))
        else:
            results = [work(job) for job in jobs]
    else:
        results = list(map_fn(work, jobs))
    by_layer: dict[int, list[ApproximateWeight]] = {i: [] for i in weight_layers}
    for (i, _, _), res in zip(jobs, results):
        by_layer[i].append(res)

    layers = []
    for i, layer in enumerate(model.layers):
        new_act = layer.activation
        if act is not None and layer.activation is ActivationKind.EXACT:
            new_act = act
        layers.append(
            layer.replace(
                weights=tuple(by_layer[i]) if i in by_layer else layer.weights,
                biases=tuple(_quantize_scalar(b, scalar_bits) for b in layer.biases),
                pool_coefficients=tuple(_quantize_scalar(c, scalar_bits) for c in layer.pool_coefficients),
                activation=new_act,
            )
        )
    meta = dict(model.meta)
    meta.update(
        scheme=scheme_label(sets),
        sets=[s.name for s in sets],
        activation=str(act) if act is not None else None,
        source=model.name,
    )
    return NetworkModel(
        name=f"{model.name}-{scheme_label(sets)}",
        input_shape=model.input_shape,
        layers=tuple(layers),
        precision="approximate",
        meta=meta,
    )

