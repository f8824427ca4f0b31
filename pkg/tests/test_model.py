import json

import numpy as np
import pytest

from multiplierless.approximator import approximate_network
from multiplierless.model import (
    CFF_C2_TABLE,
    Layer,
    LayerKind,
    ModelError,
    NetworkModel,
    cff_skeleton,
    dumps,
    lenet_like,
    load_model,
    mnist_skeleton,
    model_from_dict,
    model_to_dict,
    parameter_census,
    save_model,
)


def test_cff_census():
    c = parameter_census(cff_skeleton())
    assert (c.matrix_count, c.weight_count, c.pool_coeff_count, c.bias_count) == (39, 882, 18, 51)
    assert c.trainable == 951


def test_cff_shapes():
    model = cff_skeleton()
    shapes = [layer.output_shape for layer in model.layers]
    assert shapes == [(4, 28, 32), (4, 14, 16), (14, 12, 14), (14, 6, 7), (14, 1, 1), (1, 1, 1)]
    assert len(CFF_C2_TABLE) == 20
    assert model.weight_layer_count == 4


def test_mnist_census():
    c = parameter_census(mnist_skeleton())
    assert (c.matrix_count, c.weight_count) == (5265, 183375)
    assert mnist_skeleton().output_size == 10


def test_skeleton_defaults():
    model = cff_skeleton()
    assert all(not np.any(w) for layer in model.layers for w in layer.weights)
    assert all(c == 1.0 for c in model.layers[1].pool_coefficients)


@pytest.mark.parametrize("precision", ["exact", "approximate"])
def test_round_trip(tmp_path, precision):
    model = lenet_like((2, 3, 4, 10), seed=9)
    if precision == "approximate":
        model = approximate_network(model, "7,3,3,3", activation="plan")
    path = tmp_path / "m.json"
    save_model(model, path)
    again = load_model(path)
    assert dumps(again) == dumps(model)
    assert again.precision == precision
    for a, b in zip(model.layers, again.layers):
        for wa, wb in zip(a.weights, b.weights):
            if precision == "exact":
                assert np.array_equal(wa, wb)
            else:
                assert np.array_equal(wa.numerators, wb.numerators)
                assert wa.alpha_code == wb.alpha_code and wa.alpha == wb.alpha
        assert a.biases == b.biases


def test_approximate_file_carries_csd(tmp_path):
    model = approximate_network(lenet_like((2, 3, 4, 10), seed=9), "7")
    doc = model_to_dict(model)
    w = doc["layers"][0]["weights"][0]
    assert {"alpha", "alpha_csd", "numerators", "csd", "set"} <= set(w)
    assert all("csd" in b for b in doc["layers"][0]["biases"])


def _doc():
    return model_to_dict(lenet_like((2, 3, 4, 10), seed=1))


@pytest.mark.parametrize(
    "mutate,match",
    [
        (lambda d: d.pop("version"), "version"),
        (lambda d: d.update(version=2), "version"),
        (lambda d: d.update(format="other"), "document"),
        (lambda d: d.update(layers=[]), "no layers"),
        (lambda d: d.update(precision="fuzzy"), "precision"),
        (lambda d: d["layers"][2].update(connections=[[0, 0], [0, 0]]), "layer 2"),
        (lambda d: d["layers"][0]["weights"][0].update(values=["1.0"]), "layer 0"),
        (lambda d: d["layers"][1].update(pool_coefficients=["1.0"]), "layer 1"),
        (lambda d: d["layers"][4].update(input_shape=[3, 5, 5]), "layer 4"),
        (lambda d: d["layers"][5]["biases"].pop(), "layer 5"),
        (lambda d: d["layers"][0].update(kind="Mystery"), "layer 0"),
    ],
)
def test_malformed(mutate, match):
    doc = _doc()
    mutate(doc)
    with pytest.raises(ModelError, match=match):
        model_from_dict(doc)


def test_bad_csd_in_file():
    doc = model_to_dict(approximate_network(lenet_like((2, 3, 4, 10), seed=1), "7"))
    doc["layers"][0]["biases"][0] = {"value": "1/2^1", "csd": "+2^0"}
    with pytest.raises(ModelError, match="does not match"):
        model_from_dict(doc)


def test_mixed_precision_rejected():
    exact = lenet_like((2, 3, 4, 10), seed=1)
    with pytest.raises(ModelError, match="precision"):
        NetworkModel("x", exact.input_shape, exact.layers, precision="approximate")


def test_not_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ModelError, match="JSON"):
        load_model(p)


def test_builders_validate():
    with pytest.raises(ModelError, match="tile"):
        NetworkModel("x", (5, 5, 1), (Layer.pooling((1, 5, 5), (2, 2), [1.0], [0.0]),))
    fc = Layer.fully_connected((2, 1, 1), np.ones((3, 2)), np.zeros(3))
    assert fc.kind is LayerKind.FULLY_CONNECTED and len(fc.weights) == 3
    assert NetworkModel("fc", (1, 1, 2), (fc,)).output_size == 3


def test_meta_is_serialised():
    doc = json.loads(dumps(approximate_network(lenet_like((2, 3, 4, 10), seed=1), "7", activation="asg")))
    assert doc["meta"]["scheme"] == "A7" and doc["meta"]["activation"] == "ASG"
