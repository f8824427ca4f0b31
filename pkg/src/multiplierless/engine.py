"""Inference engines.

``infer_reference`` evaluates a model in float64. For approximate models it
uses the effective dyadic weights ``alpha_code * T``.

``infer_multiplierless`` evaluates an approximate model on scaled integers.
Every product with a constant is expanded into the constant's signed digits,
so the only arithmetic is shift, add, subtract and negate. Each convolution
kernel is applied as an integer matrix, which needs only left shifts and is
therefore exact. The combined factor ``alpha / 2**s`` is applied once per
kernel output. Intermediate sums carry ``guard_bits`` extra fractional bits
and are rounded back to the storage format once per layer, after the bias and
the activation. Operation counts are gathered in a :class:`Trace`.

Conventions shared by both engines: valid-mode correlation with stride 1,
non-overlapping average pooling, and fully-connected layers acting on the
map-major flattening of their input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .activations import A_HAT, PIECEWISE_LINEAR, QUADRATIC_SPAN, ActivationKind, activate
from .dyadic import CsdCode, csd_encode, naf_digits
from .model import ApproximateWeight, Layer, LayerKind, NetworkModel, scalar_value, weight_values

__all__ = [
    "EngineError",
    "FixedPointFormat",
    "Trace",
    "infer_reference",
    "infer_reference_batch",
    "infer_multiplierless",
    "infer_multiplierless_batch",
]


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class FixedPointFormat:
    total_bits: int = 32
    fraction_bits: int = 16
    overflow_policy: str = "saturate"
    guard_bits: int = 16

    def __post_init__(self):
        if not 0 < self.fraction_bits < self.total_bits:
            raise ValueError("need 0 < fraction_bits < total_bits")
        if self.total_bits > 48:
            raise ValueError("total_bits above 48 leaves no headroom in 64-bit intermediates")
        if self.overflow_policy not in ("saturate", "error"):
            raise ValueError("overflow_policy must be 'saturate' or 'error'")
        if self.guard_bits < 0:
            raise ValueError("guard_bits must be non-negative")
        if self.fraction_bits > 30:
            raise ValueError("fraction_bits above 30 overflows 64-bit squaring")

    @property
    def work_bits(self) -> int:
        return self.fraction_bits + self.guard_bits

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.fraction_bits


@dataclass
class Trace:
    multiplications: int = 0
    accumulation_adds: int = 0
    merge_adds: int = 0
    bias_adds: int = 0
    csd_adds: int = 0
    activation_adds: int = 0
    rounding_adds: int = 0
    shifts: int = 0
    per_layer: list = field(default_factory=list)

    _COUNTERS = (
        "multiplications",
        "accumulation_adds",
        "merge_adds",
        "bias_adds",
        "csd_adds",
        "activation_adds",
        "rounding_adds",
        "shifts",
    )

    @property
    def additions(self) -> int:
        return (
            self.accumulation_adds
            + self.merge_adds
            + self.bias_adds
            + self.csd_adds
            + self.activation_adds
            + self.rounding_adds
        )

    def counts(self) -> dict:
        out = {k: getattr(self, k) for k in self._COUNTERS}
        out["additions"] = self.additions
        return out

    def add(self, other: "Trace") -> None:
        for k in self._COUNTERS:
            setattr(self, k, getattr(self, k) + getattr(other, k))

    def to_json(self) -> str:
        doc = self.counts()
        doc["per_layer"] = self.per_layer
        return json.dumps(doc, indent=1)


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------


def _to_batch(model: NetworkModel, x) -> np.ndarray:
    maps, h, w = model.map_shape
    arr = np.asarray(x, dtype=float)
    if arr.shape == (h, w) and maps == 1:
        arr = arr[None, None]
    elif arr.shape == (h, w, maps):
        arr = np.moveaxis(arr, -1, 0)[None]
    elif arr.shape == (maps, h, w):
        arr = arr[None]
    elif arr.ndim == 3 and arr.shape[1:] == (h, w) and maps == 1:
        arr = arr[:, None]
    elif arr.ndim == 4 and arr.shape[1:] == (maps, h, w):
        pass
    else:
        raise EngineError(f"input shape {np.shape(x)} does not match model input {model.input_shape}")
    if not np.all(np.isfinite(arr)):
        raise EngineError("input has non-finite values")
    return arr


# --------------------------------------------------------------------------
# reference engine
# --------------------------------------------------------------------------


def _ref_layer(layer: Layer, x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    out_maps, oh, ow = layer.output_shape
    y = np.zeros((n, out_maps, oh, ow))
    if layer.kind is LayerKind.CONVOLUTION:
        for (i, o), w in zip(layer.connections, layer.weights):
            k = weight_values(w)
            win = sliding_window_view(x[:, i], k.shape, axis=(-2, -1))
            y[:, o] += np.einsum("nhwij,ij->nhw", win, k)
    elif layer.kind is LayerKind.AVERAGE_POOLING:
        wh, ww = layer.window
        blocks = x.reshape(n, out_maps, oh, wh, ow, ww).mean(axis=(3, 5))
        coef = np.array([scalar_value(c) for c in layer.pool_coefficients])
        y = blocks * coef[None, :, None, None]
    else:
        flat = x.reshape(n, -1)
        mat = np.concatenate([weight_values(w) for w in layer.weights], axis=0)
        y = (flat @ mat.T).reshape(n, out_maps, 1, 1)
    bias = np.array([scalar_value(b) for b in layer.biases])
    y = y + bias[None, :, None, None]
    return activate(layer.activation, y)


def infer_reference_batch(model: NetworkModel, batch) -> np.ndarray:
    x = _to_batch(model, batch)
    for layer in model.layers:
        x = _ref_layer(layer, x)
    return x.reshape(x.shape[0], -1)


def infer_reference(model: NetworkModel, image) -> np.ndarray:
    """Output vector of one input in float64."""
    return infer_reference_batch(model, _to_batch(model, image)[:1])[0]


# --------------------------------------------------------------------------
# fixed-point, multiplierless engine
# --------------------------------------------------------------------------


def _digit_table(values) -> tuple[np.ndarray, np.ndarray]:
    """Signed-digit tables ``(signs, exponents)`` of integers, padded with sign 0."""
    digits = [naf_digits(int(v)) for v in values]
    width = max([len(d) for d in digits] + [1])
    signs = np.zeros((len(digits), width), dtype=np.int64)
    exps = np.zeros((len(digits), width), dtype=np.int64)
    for r, d in enumerate(digits):
        for c, (s, e) in enumerate(d):
            signs[r, c] = s
            exps[r, c] = e
    return signs, exps


def _shift(x: np.ndarray, amount: int) -> np.ndarray:
    if amount >= 0:
        return np.left_shift(x, amount)
    return np.right_shift(x, -amount)


def _signed(x: np.ndarray, sign) -> np.ndarray:
    return np.where(sign > 0, x, np.where(sign < 0, -x, 0))


def _int_products(x: np.ndarray, signs: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """``x[..., k] * n_k`` for integer constants given by digit tables, via left shifts."""
    shifted = np.left_shift(x[..., None], exps)
    return np.sum(_signed(shifted, signs), axis=-1)


def _const_product(x: np.ndarray, code: CsdCode, offset: int) -> np.ndarray:
    """``x * value(code) * 2**offset`` as a signed sum of shifts."""
    top = max([e + offset for _, e in code.digits] + [0])
    if x.size and int(np.max(np.abs(x))) >= 1 << max(0, 61 - top):
        raise OverflowError("64-bit intermediate overflow in constant expansion")
    total = np.zeros_like(x)
    for sign, exp in code.digits:
        term = _shift(x, exp + offset)
        total = total + term if sign > 0 else total - term
    return total


def _code_cost(code: CsdCode, offset: int = 0) -> tuple[int, int]:
    n = len(code.digits)
    return max(0, n - 1), sum(1 for _, e in code.digits if e + offset != 0)


def _dyadic_int(value: Fraction, bits: int) -> int:
    scaled = value * (1 << bits)
    if scaled.denominator != 1:
        raise EngineError(f"constant {value} is not representable with {bits} fractional bits")
    return int(scaled)


class _FixedRunner:
    def __init__(self, model: NetworkModel, fmt: FixedPointFormat):
        if model.precision != "approximate":
            raise EngineError("the multiplierless engine needs an approximate model")
        self.model = model
        self.fmt = fmt
        self.F = fmt.fraction_bits
        self.G = fmt.guard_bits
        self.W = fmt.work_bits
        self.hi = (1 << (fmt.total_bits - 1)) - 1
        self.lo = -(1 << (fmt.total_bits - 1))
        self.trace = Trace()
        for pos, layer in enumerate(model.layers):
            if layer.activation is ActivationKind.EXACT:
                raise EngineError(f"layer {pos}: the exact tanh-sigmoid has no shift-add form; approximate it first")

    # storage format handling

    def quantize_input(self, x: np.ndarray) -> np.ndarray:
        q = np.rint(np.ldexp(x, self.F)).astype(np.int64)
        return self._fit(q, "input")

    def _fit(self, q: np.ndarray, where: str) -> np.ndarray:
        bad = (q > self.hi) | (q < self.lo)
        if np.any(bad):
            if self.fmt.overflow_policy == "error":
                pos = tuple(int(v) for v in np.argwhere(bad)[0])
                raise OverflowError(f"{where}: value out of {self.fmt.total_bits}-bit range at index {pos}")
            q = np.clip(q, self.lo, self.hi)
        return q

    def _round_to_storage(self, y: np.ndarray, where: str, tr: Trace) -> np.ndarray:
        if self.G > 0:
            y = np.right_shift(y + (1 << (self.G - 1)), self.G)
            tr.rounding_adds += y[0].size
            tr.shifts += y[0].size
        return self._fit(y, where)

    # layers

    def conv(self, layer: Layer, x: np.ndarray, tr: Trace) -> np.ndarray:
        n = x.shape[0]
        out_maps, oh, ow = layer.output_shape
        pix = oh * ow
        y = np.zeros((n, out_maps, oh, ow), dtype=np.int64)
        contributed = np.zeros(out_maps, dtype=np.int64)
        for (i, o), w in zip(layer.connections, layer.weights):
            assert isinstance(w, ApproximateWeight)
            flat = w.numerators.ravel()
            nz = np.flatnonzero(flat)
            if nz.size == 0:
                continue
            signs, exps = _digit_table(flat[nz])
            win = sliding_window_view(x[:, i], w.shape, axis=(-2, -1)).reshape(n, oh, ow, -1)[..., nz]
            acc = np.sum(_int_products(win, signs, exps), axis=-1)
            ndig = np.count_nonzero(signs, axis=1)
            tr.csd_adds += int(np.sum(ndig - 1)) * pix
            tr.shifts += int(np.count_nonzero((signs != 0) & (exps != 0))) * pix
            tr.accumulation_adds += (nz.size - 1) * pix
            factor = w.factor_code
            y[:, o] += _const_product(acc, factor, self.G)
            adds, shifts = _code_cost(factor, self.G)
            tr.csd_adds += adds * pix
            tr.shifts += shifts * pix
            contributed[o] += 1
        tr.merge_adds += int(np.sum(np.maximum(contributed - 1, 0))) * pix
        return y

    def pool(self, layer: Layer, x: np.ndarray, tr: Trace) -> np.ndarray:
        n = x.shape[0]
        maps, oh, ow = layer.output_shape
        wh, ww = layer.window
        area = wh * ww
        if area & (area - 1):
            raise EngineError(f"pool window {wh}x{ww}: area must be a power of two for shift-only averaging")
        log_area = area.bit_length() - 1
        sums = x.reshape(n, maps, oh, wh, ow, ww).sum(axis=(3, 5))
        pix = oh * ow
        tr.accumulation_adds += (area - 1) * pix * maps
        y = np.zeros_like(sums)
        for m, coef in enumerate(layer.pool_coefficients):
            y[:, m] = _const_product(sums[:, m], coef, self.G - log_area)
            adds, shifts = _code_cost(coef, self.G - log_area)
            tr.csd_adds += adds * pix
            tr.shifts += shifts * pix
        return y

    def dense(self, layer: Layer, x: np.ndarray, tr: Trace) -> np.ndarray:
        n = x.shape[0]
        flat = x.reshape(n, -1)
        y = np.zeros((n, layer.output_shape[0], 1, 1), dtype=np.int64)
        for o, w in enumerate(layer.weights):
            assert isinstance(w, ApproximateWeight)
            row = w.numerators.ravel()
            nz = np.flatnonzero(row)
            if nz.size == 0:
                continue
            signs, exps = _digit_table(row[nz])
            acc = np.sum(_int_products(flat[:, nz], signs, exps), axis=-1)
            ndig = np.count_nonzero(signs, axis=1)
            tr.csd_adds += int(np.sum(ndig - 1))
            tr.shifts += int(np.count_nonzero((signs != 0) & (exps != 0)))
            tr.accumulation_adds += nz.size - 1
            y[:, o, 0, 0] = _const_product(acc, w.factor_code, self.G)
            adds, shifts = _code_cost(w.factor_code, self.G)
            tr.csd_adds += adds
            tr.shifts += shifts
        return y

    def bias(self, layer: Layer, y: np.ndarray, tr: Trace) -> np.ndarray:
        pix = y.shape[2] * y.shape[3]
        for o, b in enumerate(layer.biases):
            if b.digits:
                y[:, o] += _dyadic_int(b.fraction, self.W)
                tr.bias_adds += pix
        return y

    def activation(self, kind: ActivationKind, y: np.ndarray, tr: Trace) -> np.ndarray:
        per_image = y[0].size
        one = 1 << self.W
        if kind is ActivationKind.IDENTITY:
            return y
        if kind is ActivationKind.RELU:
            return np.maximum(y, 0)
        neg = y < 0
        ax = np.abs(y)
        if kind in PIECEWISE_LINEAR:
            out = np.zeros_like(ax)
            worst_adds = worst_shifts = 0
            for lo, slope, icpt in PIECEWISE_LINEAR[kind].pieces:
                sel = ax >= _dyadic_int(lo, self.W)
                code = csd_encode(slope, 16)
                out = np.where(sel, _const_product(ax, code, 0) + _dyadic_int(icpt, self.W), out)
                a, s = _code_cost(code)
                worst_adds = max(worst_adds, a + (1 if icpt else 0))
                worst_shifts = max(worst_shifts, s)
            # counted at the costliest branch so the trace does not depend on the data
            tr.activation_adds += worst_adds * per_image
            tr.shifts += worst_shifts * per_image
        elif kind is ActivationKind.ASG:
            whole = np.minimum(np.right_shift(ax, self.W), 62)
            frac = np.bitwise_and(ax, one - 1)
            body = one - np.right_shift(one - np.right_shift(frac, 1), whole)
            out = _const_product(body, csd_encode(A_HAT, 2), 0)
            tr.activation_adds += 3 * per_image
            tr.shifts += 4 * per_image
        elif kind in QUADRATIC_SPAN:
            span = QUADRATIC_SPAN[kind]
            log_span = span.bit_length() - 1
            ax = np.minimum(ax, span * one)
            u = one - np.right_shift(ax, log_span)  # 1 - |x|/span in Q-W
            u_s = np.right_shift(u, self.G)  # storage precision keeps u*u inside 64 bits
            sq = _shift(u_s * u_s, self.W - 2 * self.F)
            tr.multiplications += per_image
            out = _const_product(one - sq, csd_encode(A_HAT, 2), 0)
            tr.activation_adds += 3 * per_image
            tr.shifts += 3 * per_image
        else:  # pragma: no cover - EXACT rejected at construction
            raise EngineError(f"no fixed-point form for {kind}")
        return np.where(neg, -out, out)

    def run(self, x: np.ndarray) -> np.ndarray:
        q = self.quantize_input(x)
        n = q.shape[0]
        for pos, layer in enumerate(self.model.layers):
            tr = Trace()
            if layer.kind is LayerKind.CONVOLUTION:
                y = self.conv(layer, q, tr)
            elif layer.kind is LayerKind.AVERAGE_POOLING:
                y = self.pool(layer, q, tr)
            else:
                y = self.dense(layer, q, tr)
            y = self.bias(layer, y, tr)
            y = self.activation(layer.activation, y, tr)
            q = self._round_to_storage(y, f"layer {pos} ({layer.kind})", tr)
            tr.per_layer = []
            entry = {"layer": pos, "kind": str(layer.kind)}
            entry.update(tr.counts())
            self.trace.per_layer.append(entry)
            self.trace.add(tr)
        return np.ldexp(q.reshape(n, -1).astype(float), -self.F)


def infer_multiplierless_batch(model: NetworkModel, batch, fmt: FixedPointFormat | None = None):
    """Outputs for a batch and the operation trace of a single inference."""
    runner = _FixedRunner(model, fmt or FixedPointFormat())
    out = runner.run(_to_batch(model, batch))
    return out, runner.trace


def infer_multiplierless(model: NetworkModel, image, fmt: FixedPointFormat | None = None):
    """Output vector of one input and its operation trace."""
    out, trace = infer_multiplierless_batch(model, _to_batch(model, image)[:1], fmt)
    return out[0], trace

