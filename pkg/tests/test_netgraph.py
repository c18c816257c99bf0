import json

import numpy as np
import pytest

from ebnet import fixtures as F
from ebnet import netgraph as N
from ebnet.errors import (CycleDetected, DanglingInput, IndexOutOfRange, NegativeWeight,
                          ParseError, ShapeMismatch, UnknownLayer)
from ebnet.netgraph import LayerSpec


def tiny_layers():
    return [LayerSpec("data", "input", (), {"shape": [3, 1, 1]}),
            LayerSpec("fc1", "fc", ("data",)),
            LayerSpec("relu1", "relu", ("fc1",)),
            LayerSpec("fc2", "fc", ("relu1",))]


def tiny_weights():
    return {"fc1": {"weight": np.arange(12.0).reshape(4, 3) - 5, "bias": np.ones(4)},
            "fc2": {"weight": np.ones((2, 4))}}


class TestBuild:
    def test_toposort_reorders(self):
        layers = tiny_layers()[::-1]
        model = N.build_model(layers, tiny_weights(), "fc2")
        assert [l.id for l in model.layers] == ["data", "fc1", "relu1", "fc2"]

    def test_cycle(self):
        layers = [LayerSpec("data", "input", ()), LayerSpec("a", "relu", ("b",)),
                  LayerSpec("b", "relu", ("a",))]
        with pytest.raises(CycleDetected):
            N.build_model(layers, {}, "a")

    def test_dangling(self):
        layers = [LayerSpec("data", "input", ()), LayerSpec("a", "relu", ("ghost",))]
        with pytest.raises(DanglingInput):
            N.build_model(layers, {}, "a")

    def test_unknown_kind(self):
        layers = [LayerSpec("data", "input", ()), LayerSpec("a", "gelu", ("data",))]
        with pytest.raises(ParseError):
            N.build_model(layers, {}, "a")

    def test_unknown_output(self):
        with pytest.raises(UnknownLayer):
            N.build_model(tiny_layers(), tiny_weights(), "nope")

    def test_weight_shape_mismatch(self):
        w = tiny_weights()
        w["fc2"]["weight"] = np.ones((2, 5))
        with pytest.raises(ShapeMismatch):
            N.build_model(tiny_layers(), w, "fc2")

    def test_softmax_must_be_last(self):
        layers = tiny_layers()
        layers.insert(3, LayerSpec("sm", "softmax", ("relu1",)))
        layers[-1] = LayerSpec("fc2", "fc", ("sm",))
        with pytest.raises(ParseError):
            N.build_model(layers, tiny_weights(), "fc2")

    def test_dropout_alias(self):
        layers = tiny_layers()
        layers.append(LayerSpec("d", "dropout-identity", ("fc2",)))
        model = N.build_model(layers, tiny_weights(), "fc2")
        assert model.layer("d").kind == "dropout"


class TestForward:
    def test_mlp_values(self):
        model = N.build_model(tiny_layers(), tiny_weights(), "fc2")
        x = np.array([1.0, 0.5, 2.0]).reshape(3, 1, 1)
        cache = N.forward(model, x)
        h = np.maximum(tiny_weights()["fc1"]["weight"] @ x.ravel() + 1, 0)
        np.testing.assert_allclose(cache.responses["fc2"].ravel(), np.ones((2, 4)) @ h)

    def test_input_shape_checked(self):
        model = N.build_model(tiny_layers(), tiny_weights(), "fc2")
        with pytest.raises(ShapeMismatch):
            N.forward(model, np.zeros((4, 1, 1)))

    def test_zoo_runs_every_kind(self):
        model = F.zoo_net(0)
        cache = N.forward(model, np.random.default_rng(0).uniform(size=model.input_layer.params["shape"]))
        kinds = {l.kind for l in model.layers}
        assert {"conv", "relu", "lrn", "maxpool", "concat", "dropout", "avgpool", "flatten", "fc"} <= kinds
        cat = model.layer("cat")
        assert cache.responses["cat"].shape[0] == sum(cache.responses[s].shape[0] for s in cat.inputs)
        np.testing.assert_array_equal(cache.responses["drop"], cache.responses["cat"])
        assert "pool1" in cache.masks

    def test_toy_softmax_sums_to_one(self):
        model = F.toy_convnet(0)
        cache = N.forward(model, np.random.default_rng(1).uniform(size=(2, 8, 8)))
        assert cache.responses["prob"].sum() == pytest.approx(1.0)


class TestStorage:
    def test_round_trip(self, tmp_path):
        model = F.zoo_net(3)
        N.save_model(model, tmp_path / "m.json")
        back = N.read_model(tmp_path / "m.json")
        assert [l.id for l in back.layers] == [l.id for l in model.layers]
        for lid, w in model.weights.items():
            np.testing.assert_array_equal(back.weights[lid]["weight"], w["weight"])
        x = np.random.default_rng(0).uniform(size=model.input_layer.params["shape"])
        np.testing.assert_array_equal(N.forward(back, x).responses["fc"],
                                      N.forward(model, x).responses["fc"])

    def test_offsets_are_elements(self):
        manifest, blob = N.dump_model(N.build_model(tiny_layers(), tiny_weights(), "fc2"))
        doc = json.loads(manifest)
        fc2 = next(l for l in doc["layers"] if l["id"] == "fc2")
        assert fc2["weight_offset"] == 12 + 4
        assert len(blob) == (12 + 4 + 8) * 8

    def test_truncated_blob(self):
        manifest, blob = N.dump_model(N.build_model(tiny_layers(), tiny_weights(), "fc2"))
        with pytest.raises(ParseError):
            N.load_model(manifest, blob[:-8])
        with pytest.raises(ParseError):
            N.load_model(manifest, blob[:-3])

    def test_extra_blob_values(self):
        manifest, blob = N.dump_model(N.build_model(tiny_layers(), tiny_weights(), "fc2"))
        with pytest.raises(ParseError):
            N.load_model(manifest, blob + b"\0" * 8)

    def test_non_finite(self):
        manifest, blob = N.dump_model(N.build_model(tiny_layers(), tiny_weights(), "fc2"))
        bad = np.frombuffer(blob, "<f8").copy()
        bad[0] = np.nan
        with pytest.raises(ParseError):
            N.load_model(manifest, bad.tobytes())

    def test_bad_json(self):
        with pytest.raises(ParseError):
            N.load_model(b"{not json", b"")
        with pytest.raises(ParseError):
            N.load_model(b'{"format": "other"}', b"")


class TestClassSignal:
    def setup_method(self):
        self.model = N.build_model(tiny_layers(), tiny_weights(), "fc2")

    def test_one_hot(self):
        s = N.class_signal(self.model, [1])
        np.testing.assert_array_equal(s.values.ravel(), [0.0, 1.0])

    def test_weighted_mixture_normalized(self):
        s = N.class_signal(self.model, [0, 1], [1.0, 3.0])
        np.testing.assert_allclose(s.values.ravel(), [0.25, 0.75])

    def test_errors(self):
        with pytest.raises(IndexOutOfRange):
            N.class_signal(self.model, [2])
        with pytest.raises(NegativeWeight):
            N.class_signal(self.model, [0], [-1.0])

    def test_spatial_confidence_map(self):
        shape = (3, 2, 2)
        cmap = np.array([[1.0, 0.0], [3.0, 0.0]])
        s = N.class_signal(F.toy_convnet(0), [2], output_shape=shape, confidence_map=cmap,
                           layer_id="conv2")
        assert s.values.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(s.values[2], cmap / 4)
        assert not s.values[:2].any()
