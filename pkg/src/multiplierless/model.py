"""Network description and its JSON persistence.

Feature-map shapes are ``(maps, height, width)``. A convolution layer holds
one kernel per connection-table pair. A fully-connected layer flattens all
input maps and holds one weight row per output neuron. Each output neuron is
a ``1x1`` map. Average pooling has one coefficient and one bias per map and
a non-overlapping window.

Model file layout (``version`` 1)::

    {
      "format": "multiplierless-model", "version": 1,
      "name": str, "precision": "exact" | "approximate",
      "input_shape": [height, width, channels],
      "meta": {...},
      "layers": [
        {"kind": "Convolution" | "AveragePooling" | "FullyConnected",
         "input_shape": [maps, h, w], "output_shape": [maps, h, w],
         "activation": tag, "connections": [[in, out], ...],
         "window": [h, w],                      # AveragePooling only
         "weights": [weight, ...],              # not for AveragePooling
         "biases": [scalar, ...],
         "pool_coefficients": [scalar, ...]}    # AveragePooling only
      ]
    }

An exact weight is ``{"shape": [r, c], "values": [decimal strings]}``. An
approximate weight is ``{"shape", "set", "alpha", "alpha_csd",
"log2_denominator", "numerators", "csd", "error"}``, where ``csd`` maps each
distinct numerator to its signed-digit form. An exact scalar is a decimal
string. An approximate scalar is ``{"value": "m/2^n", "csd": "+2^-1 ..."}``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence, Union

import numpy as np

from .activations import ActivationKind, parse_kind
from .dyadic import CsdCode, DyadicRational, csd_encode

__all__ = [
    "ModelError",
    "LayerKind",
    "ApproximateWeight",
    "Layer",
    "NetworkModel",
    "Census",
    "load_model",
    "save_model",
    "model_to_dict",
    "model_from_dict",
    "parameter_census",
    "cff_skeleton",
    "mnist_skeleton",
    "lenet_like",
    "FORMAT_NAME",
    "FORMAT_VERSION",
]

FORMAT_NAME = "multiplierless-model"
FORMAT_VERSION = 1


class ModelError(ValueError):
    """Malformed or inconsistent model description."""


class LayerKind(str, enum.Enum):
    CONVOLUTION = "Convolution"
    AVERAGE_POOLING = "AveragePooling"
    FULLY_CONNECTED = "FullyConnected"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, eq=False)
class ApproximateWeight:
    """``alpha_code * numerators / 2**log2_denominator`` standing in for a real matrix."""

    alpha: float
    alpha_code: CsdCode
    numerators: np.ndarray
    log2_denominator: int
    error: float
    set_name: str = ""

    def __post_init__(self):
        nums = np.array(self.numerators, dtype=np.int64)
        if nums.ndim != 2:
            raise ModelError("approximate weight must be 2-D")
        nums.setflags(write=False)
        object.__setattr__(self, "numerators", nums)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.numerators.shape)  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return int(self.numerators.size)

    @property
    def t(self) -> np.ndarray:
        return np.ldexp(self.numerators.astype(float), -self.log2_denominator)

    @property
    def factor_code(self) -> CsdCode:
        """Single constant applied after the integer kernel: ``alpha / 2**log2_denominator``."""
        return self.alpha_code.shifted(-self.log2_denominator)

    @property
    def values(self) -> np.ndarray:
        """Effective weights ``alpha_code * T`` (exact in binary floating point)."""
        return self.alpha_code.value * self.t

    def entry_codes(self) -> dict[int, CsdCode]:
        return {int(v): csd_encode(int(v), 0) for v in np.unique(self.numerators)}

    def exact_values(self) -> list[list[Fraction]]:
        a = self.alpha_code.fraction
        den = 1 << self.log2_denominator
        return [[a * Fraction(int(v), den) for v in row] for row in self.numerators]


Weight = Union[np.ndarray, ApproximateWeight]
Scalar = Union[float, CsdCode]


def scalar_value(s: Scalar) -> float:
    return s.value if isinstance(s, CsdCode) else float(s)


def _as_scalar(s) -> Scalar:
    return s if isinstance(s, CsdCode) else float(s)


def weight_values(w: Weight) -> np.ndarray:
    return w.values if isinstance(w, ApproximateWeight) else np.asarray(w, dtype=float)


def weight_shape(w: Weight) -> tuple[int, int]:
    return w.shape if isinstance(w, ApproximateWeight) else tuple(np.shape(w))  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class Layer:
    kind: LayerKind
    input_shape: tuple[int, int, int]
    output_shape: tuple[int, int, int]
    connections: tuple[tuple[int, int], ...]
    biases: tuple[Scalar, ...]
    activation: ActivationKind = ActivationKind.EXACT
    weights: tuple[Weight, ...] = ()
    pool_coefficients: tuple[Scalar, ...] = ()
    window: tuple[int, int] | None = None

    def replace(self, **changes) -> "Layer":
        return replace(self, **changes)

    @property
    def weight_count(self) -> int:
        return sum(int(np.prod(weight_shape(w))) for w in self.weights)

    # -- builders ---------------------------------------------------------

    @classmethod
    def convolution(cls, input_shape, kernels, connections, biases, activation=ActivationKind.EXACT) -> "Layer":
        kernels = tuple(np.asarray(k, dtype=float) for k in kernels)
        maps, h, w = input_shape
        kh, kw = kernels[0].shape
        out_maps = len(biases)
        return cls(
            LayerKind.CONVOLUTION,
            (maps, h, w),
            (out_maps, h - kh + 1, w - kw + 1),
            tuple((int(i), int(o)) for i, o in connections),
            tuple(_as_scalar(b) for b in biases),
            parse_kind(activation),
            weights=kernels,
        )

    @classmethod
    def pooling(cls, input_shape, window, coefficients, biases, activation=ActivationKind.EXACT) -> "Layer":
        maps, h, w = input_shape
        wh, ww = window
        return cls(
            LayerKind.AVERAGE_POOLING,
            (maps, h, w),
            (maps, h // wh, w // ww),
            tuple((i, i) for i in range(maps)),
            tuple(_as_scalar(b) for b in biases),
            parse_kind(activation),
            pool_coefficients=tuple(_as_scalar(c) for c in coefficients),
            window=(int(wh), int(ww)),
        )

    @classmethod
    def fully_connected(cls, input_shape, matrix, biases, activation=ActivationKind.EXACT) -> "Layer":
        matrix = np.asarray(matrix, dtype=float)
        maps = input_shape[0]
        out = matrix.shape[0]
        return cls(
            LayerKind.FULLY_CONNECTED,
            tuple(input_shape),
            (out, 1, 1),
            tuple((i, o) for o in range(out) for i in range(maps)),
            tuple(_as_scalar(b) for b in biases),
            parse_kind(activation),
            weights=tuple(matrix[o : o + 1, :].copy() for o in range(out)),
        )


@dataclass(frozen=True, eq=False)
class NetworkModel:
    name: str
    input_shape: tuple[int, int, int]  # height, width, channels
    layers: tuple[Layer, ...]
    precision: str = "exact"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        validate(self)

    @property
    def output_size(self) -> int:
        return int(np.prod(self.layers[-1].output_shape))

    @property
    def weight_layer_count(self) -> int:
        return sum(1 for layer in self.layers if layer.kind is not LayerKind.AVERAGE_POOLING)

    @property
    def map_shape(self) -> tuple[int, int, int]:
        h, w, c = self.input_shape
        return (c, h, w)


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


def _check_layer(pos: int, layer: Layer, approximate: bool) -> None:
    def fail(msg: str):
        raise ModelError(f"layer {pos} ({layer.kind}): {msg}")

    in_maps, in_h, in_w = layer.input_shape
    out_maps, out_h, out_w = layer.output_shape
    if min(layer.input_shape) <= 0 or min(layer.output_shape) <= 0:
        fail("shapes must be positive")
    if len(layer.biases) != out_maps:
        fail(f"expected {out_maps} biases, got {len(layer.biases)}")
    for i, o in layer.connections:
        if not (0 <= i < in_maps and 0 <= o < out_maps):
            fail(f"connection ({i}, {o}) references a missing map")
    if len(set(layer.connections)) != len(layer.connections):
        fail("duplicate connection")

    if layer.kind is LayerKind.CONVOLUTION:
        if len(layer.weights) != len(layer.connections):
            fail(f"{len(layer.connections)} connections but {len(layer.weights)} kernels")
        if layer.pool_coefficients:
            fail("convolution has no pooling coefficients")
        for w in layer.weights:
            kh, kw = weight_shape(w)
            if kh > in_h or kw > in_w:
                fail("kernel larger than input map")
            if (in_h - kh + 1, in_w - kw + 1) != (out_h, out_w):
                fail(f"kernel {kh}x{kw} does not map {in_h}x{in_w} to {out_h}x{out_w}")
    elif layer.kind is LayerKind.AVERAGE_POOLING:
        if layer.window is None:
            fail("missing pooling window")
        wh, ww = layer.window
        if wh <= 0 or ww <= 0:
            fail("window must be positive")
        if (out_maps, out_h, out_w) != (in_maps, in_h // wh, in_w // ww) or in_h % wh or in_w % ww:
            fail(f"window {wh}x{ww} does not tile {in_h}x{in_w} into {out_h}x{out_w}")
        if len(layer.pool_coefficients) != in_maps:
            fail("need exactly one coefficient per map")
        if sorted(layer.connections) != [(i, i) for i in range(in_maps)]:
            fail("pooling connects maps one-to-one")
        if layer.weights:
            fail("pooling has no weight matrices")
    elif layer.kind is LayerKind.FULLY_CONNECTED:
        if (out_h, out_w) != (1, 1):
            fail("fully-connected outputs are 1x1 maps")
        if len(layer.weights) != out_maps:
            fail(f"need one weight row per output neuron ({out_maps})")
        n_in = in_maps * in_h * in_w
        for w in layer.weights:
            if tuple(weight_shape(w)) != (1, n_in):
                fail(f"weight rows must be 1x{n_in}")
        full = {(i, o) for o in range(out_maps) for i in range(in_maps)}
        if set(layer.connections) != full:
            fail("fully-connected layers need the complete connection table")
    else:  # pragma: no cover
        fail("unknown layer kind")

    for w in layer.weights:
        if approximate != isinstance(w, ApproximateWeight):
            fail("weight precision does not match model precision")
        if not approximate and not np.all(np.isfinite(w)):
            fail("non-finite weight")
    for s in (*layer.biases, *layer.pool_coefficients):
        if approximate != isinstance(s, CsdCode):
            fail("scalar precision does not match model precision")


def validate(model: NetworkModel) -> None:
    if model.precision not in ("exact", "approximate"):
        raise ModelError(f"unknown precision tag {model.precision!r}")
    if not model.layers:
        raise ModelError("model has no layers")
    expected = model.map_shape
    for pos, layer in enumerate(model.layers):
        if tuple(layer.input_shape) != tuple(expected):
            raise ModelError(f"layer {pos} ({layer.kind}): input shape {layer.input_shape} != previous output {expected}")
        _check_layer(pos, layer, model.precision == "approximate")
        expected = layer.output_shape


# --------------------------------------------------------------------------
# Census
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Census:
    matrix_count: int
    weight_count: int
    pool_coeff_count: int
    bias_count: int

    @property
    def trainable(self) -> int:
        return self.weight_count + self.pool_coeff_count + self.bias_count


def parameter_census(model: NetworkModel) -> Census:
    return Census(
        matrix_count=sum(len(layer.weights) for layer in model.layers),
        weight_count=sum(layer.weight_count for layer in model.layers),
        pool_coeff_count=sum(len(layer.pool_coefficients) for layer in model.layers),
        bias_count=sum(len(layer.biases) for layer in model.layers),
    )


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------


def _num(x: float) -> str:
    return repr(float(x))


def _scalar_to_json(s: Scalar) -> Any:
    if isinstance(s, CsdCode):
        return {"value": str(s.dyadic), "csd": str(s)}
    return _num(s)


def _scalar_from_json(obj: Any) -> Scalar:
    if isinstance(obj, dict):
        code = CsdCode.parse(obj["csd"])
        if DyadicRational.parse(obj["value"]).fraction != code.fraction:
            raise ModelError(f"CSD form {obj['csd']!r} does not match value {obj['value']!r}")
        return code
    return float(obj)


def _weight_to_json(w: Weight) -> dict:
    if isinstance(w, ApproximateWeight):
        return {
            "shape": list(w.shape),
            "set": w.set_name,
            "alpha": _num(w.alpha),
            "alpha_csd": str(w.alpha_code),
            "log2_denominator": int(w.log2_denominator),
            "numerators": [int(v) for v in w.numerators.ravel()],
            "csd": {str(k): str(v) for k, v in sorted(w.entry_codes().items())},
            "error": _num(w.error),
        }
    arr = np.asarray(w, dtype=float)
    return {"shape": list(arr.shape), "values": [_num(v) for v in arr.ravel()]}


def _weight_from_json(obj: dict) -> Weight:
    shape = tuple(int(v) for v in obj["shape"])
    if "numerators" in obj:
        nums = np.array([int(v) for v in obj["numerators"]], dtype=np.int64)
        if nums.size != math.prod(shape):
            raise ModelError(f"numerator count {nums.size} does not match shape {shape}")
        for key, text in obj.get("csd", {}).items():
            if CsdCode.parse(text).fraction != int(key):
                raise ModelError(f"CSD form {text!r} does not encode {key}")
        return ApproximateWeight(
            alpha=float(obj["alpha"]),
            alpha_code=CsdCode.parse(obj["alpha_csd"]),
            numerators=nums.reshape(shape),
            log2_denominator=int(obj["log2_denominator"]),
            error=float(obj["error"]),
            set_name=obj.get("set", ""),
        )
    vals = np.array([float(v) for v in obj["values"]], dtype=float)
    if vals.size != math.prod(shape):
        raise ModelError(f"value count {vals.size} does not match shape {shape}")
    return vals.reshape(shape)


def model_to_dict(model: NetworkModel) -> dict:
    layers = []
    for layer in model.layers:
        entry: dict[str, Any] = {
            "kind": str(layer.kind),
            "input_shape": list(layer.input_shape),
            "output_shape": list(layer.output_shape),
            "activation": str(layer.activation),
            "connections": [list(c) for c in layer.connections],
        }
        if layer.window is not None:
            entry["window"] = list(layer.window)
        if layer.kind is not LayerKind.AVERAGE_POOLING:
            entry["weights"] = [_weight_to_json(w) for w in layer.weights]
        entry["biases"] = [_scalar_to_json(b) for b in layer.biases]
        if layer.kind is LayerKind.AVERAGE_POOLING:
            entry["pool_coefficients"] = [_scalar_to_json(c) for c in layer.pool_coefficients]
        layers.append(entry)
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "name": model.name,
        "precision": model.precision,
        "input_shape": list(model.input_shape),
        "meta": model.meta,
        "layers": layers,
    }


def model_from_dict(doc: dict) -> NetworkModel:
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    if doc.get("version") is None:
        raise ModelError("missing version field")
    if doc["version"] != FORMAT_VERSION:
        raise ModelError(f"unsupported model version {doc['version']!r}")
    if doc.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise ModelError(f"not a {FORMAT_NAME} document")
    raw_layers = doc.get("layers")
    if not raw_layers:
        raise ModelError("model has no layers")
    layers = []
    for pos, raw in enumerate(raw_layers):
        try:
            kind = LayerKind(raw["kind"])
            layers.append(
                Layer(
                    kind=kind,
                    input_shape=tuple(int(v) for v in raw["input_shape"]),
                    output_shape=tuple(int(v) for v in raw["output_shape"]),
                    connections=tuple((int(i), int(o)) for i, o in raw["connections"]),
                    biases=tuple(_scalar_from_json(b) for b in raw["biases"]),
                    activation=parse_kind(raw.get("activation", "Exact")),
                    weights=tuple(_weight_from_json(w) for w in raw.get("weights", [])),
                    pool_coefficients=tuple(_scalar_from_json(c) for c in raw.get("pool_coefficients", [])),
                    window=tuple(int(v) for v in raw["window"]) if raw.get("window") else None,
                )
            )
        except ModelError as exc:
            raise ModelError(f"layer {pos}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"layer {pos}: malformed entry ({exc!r})") from None
    try:
        return NetworkModel(
            name=str(doc.get("name", "model")),
            input_shape=tuple(int(v) for v in doc["input_shape"]),
            layers=tuple(layers),
            precision=doc.get("precision", "exact"),
            meta=dict(doc.get("meta", {})),
        )
    except KeyError as exc:
        raise ModelError(f"missing field {exc}") from None


def dumps(model: NetworkModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=False) + "\n"


def save_model(model: NetworkModel, path) -> None:
    Path(path).write_text(dumps(model))


def load_model(path) -> NetworkModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc)


# --------------------------------------------------------------------------
# Reference architectures
# --------------------------------------------------------------------------

# Face-finder C2 table: two maps fed by each pooled map, then six maps fed by pairs.
CFF_C2_TABLE = (
    [(i, 2 * i) for i in range(4)]
    + [(i, 2 * i + 1) for i in range(4)]
    + [(a, 8 + k) for k, pair in enumerate([(0, 1), (2, 3), (0, 2), (1, 3), (0, 3), (1, 2)]) for a in pair]
)


def _init(rng, shape, fan_in):
    if rng is None:
        return np.zeros(shape)
    return rng.uniform(-1.0, 1.0, size=shape) / math.sqrt(fan_in)


def _small(rng, n):
    return np.zeros(n) if rng is None else rng.uniform(-0.5, 0.5, size=n)


def _coef(rng, n):
    return np.ones(n) if rng is None else rng.uniform(0.5, 1.5, size=n)


def cff_skeleton(seed: int | None = None, activation=ActivationKind.EXACT) -> NetworkModel:
    """Six-layer face-finder shape: 32x36 input, 951 trainable parameters.

    With ``seed=None`` weights and biases are zero and pooling coefficients one.
    """
    rng = None if seed is None else np.random.default_rng(seed)
    act = parse_kind(activation)
    layers = []
    shape = (1, 32, 36)
    c1 = Layer.convolution(shape, [_init(rng, (5, 5), 25) for _ in range(4)], [(0, o) for o in range(4)], _small(rng, 4), act)
    layers.append(c1)
    s1 = Layer.pooling(c1.output_shape, (2, 2), _coef(rng, 4), _small(rng, 4), act)
    layers.append(s1)
    c2 = Layer.convolution(s1.output_shape, [_init(rng, (3, 3), 18) for _ in CFF_C2_TABLE], CFF_C2_TABLE, _small(rng, 14), act)
    layers.append(c2)
    s2 = Layer.pooling(c2.output_shape, (2, 2), _coef(rng, 14), _small(rng, 14), act)
    layers.append(s2)
    n1 = Layer.convolution(s2.output_shape, [_init(rng, (6, 7), 42) for _ in range(14)], [(i, i) for i in range(14)], _small(rng, 14), act)
    layers.append(n1)
    out = Layer.fully_connected(n1.output_shape, _init(rng, (1, 14), 14), _small(rng, 1), act)
    layers.append(out)
    return NetworkModel("cff", (32, 36, 1), tuple(layers))


def lenet_like(
    maps: Sequence[int] = (5, 50, 100, 10),
    seed: int | None = None,
    activation=ActivationKind.EXACT,
    name: str = "mnist",
) -> NetworkModel:
    """Conv 5x5, pool 2, conv 3x3 (full), pool 2, 6x6 neurons (full), output layer on 32x32 input."""
    rng = None if seed is None else np.random.default_rng(seed)
    act = parse_kind(activation)
    m1, m2, m3, m4 = maps
    c1 = Layer.convolution((1, 32, 32), [_init(rng, (5, 5), 25) for _ in range(m1)], [(0, o) for o in range(m1)], _small(rng, m1), act)
    s1 = Layer.pooling(c1.output_shape, (2, 2), _coef(rng, m1), _small(rng, m1), act)
    full2 = [(i, o) for o in range(m2) for i in range(m1)]
    c2 = Layer.convolution(s1.output_shape, [_init(rng, (3, 3), 9 * m1) for _ in full2], full2, _small(rng, m2), act)
    s2 = Layer.pooling(c2.output_shape, (2, 2), _coef(rng, m2), _small(rng, m2), act)
    full3 = [(i, o) for o in range(m3) for i in range(m2)]
    n1 = Layer.convolution(s2.output_shape, [_init(rng, (6, 6), 36 * m2) for _ in full3], full3, _small(rng, m3), act)
    out = Layer.fully_connected(n1.output_shape, _init(rng, (m4, m3), m3), _small(rng, m4), act)
    return NetworkModel(name, (32, 32, 1), (c1, s1, c2, s2, n1, out))


def mnist_skeleton(seed: int | None = None, activation=ActivationKind.EXACT) -> NetworkModel:
    """Digit-recognition shape: 5, 50, 100 and 10 maps; 183375 matrix weights."""
    return lenet_like((5, 50, 100, 10), seed=seed, activation=activation, name="mnist")
