import numpy as np
import pytest

from ebnet import excitation as E
from ebnet import fixtures as F
from ebnet import netgraph as N
from ebnet import tensor as T
from ebnet.errors import (DualUndefined, NegativeActivation, NegativeWeight, ShapeMismatch,
                          SignalBelowTarget)


def dense_matrix(fn, in_shape):
    """Columns are fn applied to each basis tensor."""
    n = int(np.prod(in_shape))
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(fn(e.reshape(in_shape)).ravel())
    return np.stack(cols, axis=1)


def eb_reference(a, w, p):
    """Per-neuron loop over the dense excitatory matrix."""
    wp = np.maximum(w, 0)
    out = np.zeros(w.shape[1])
    for i in range(w.shape[0]):
        norm = sum(wp[i, j] * a[j] for j in range(w.shape[1]))
        if norm == 0:
            continue
        for j in range(w.shape[1]):
            out[j] += p[i] * wp[i, j] * a[j] / norm
    return out


class TestAffineStep:
    def test_hand_computed_fc(self):
        a = np.array([1.0, 2.0]).reshape(2, 1, 1)
        w = np.array([[1.0, -1.0], [2.0, 1.0]])
        p = np.array([0.3, 0.7]).reshape(2, 1, 1)
        got = E.eb_step_affine(a, w, p)
        np.testing.assert_allclose(got.ravel(), [0.65, 0.35], atol=1e-15)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 1)])
    def test_conv_matches_dense_reference(self, stride, pad):
        rng = np.random.default_rng(stride + pad)
        a = rng.uniform(size=(2, 6, 5))
        params = T.ConvParams(rng.normal(size=(3, 2, 3, 3)), stride, pad)
        w = dense_matrix(lambda x: T.conv2d_forward(x, params), a.shape)
        out_shape = params.output_shape(a.shape)
        p = rng.dirichlet(np.ones(int(np.prod(out_shape))))
        got = E.eb_step_affine(a, params, p.reshape(out_shape))
        np.testing.assert_allclose(got.ravel(), eb_reference(a.ravel(), w, p), rtol=1e-12, atol=1e-16)

    def test_avgpool_matches_dense_reference(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(size=(2, 5, 5))
        pp = T.PoolParams(3, 2, 1)
        w = dense_matrix(lambda x: T.avgpool_forward(x, 3, 2, 1), a.shape)
        out_shape = pp.output_shape(a.shape)
        p = rng.dirichlet(np.ones(int(np.prod(out_shape))))
        got = E.eb_step_affine(a, pp, p.reshape(out_shape))
        np.testing.assert_allclose(got.ravel(), eb_reference(a.ravel(), w, p), rtol=1e-12)

    def test_bias_is_ignored(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(size=(2, 4, 4))
        k = rng.normal(size=(2, 2, 3, 3))
        p = rng.uniform(size=(2, 2, 2))
        with_bias = E.eb_step_affine(a, T.ConvParams(k, bias=np.array([5.0, -5.0])), p)
        np.testing.assert_array_equal(with_bias, E.eb_step_affine(a, T.ConvParams(k), p))

    def test_zero_normalizer_drops_mass(self):
        a = np.array([1.0, 0.0]).reshape(2, 1, 1)
        w = np.array([[-1.0, 1.0], [1.0, 1.0]])
        p = np.array([0.4, 0.6]).reshape(2, 1, 1)
        got = E.eb_step_affine(a, w, p)
        np.testing.assert_allclose(got.ravel(), [0.6, 0.0])

    def test_negative_activation(self):
        with pytest.raises(NegativeActivation):
            E.eb_step_affine(np.full((2, 1, 1), -0.5), np.ones((1, 2)), np.ones((1, 1, 1)))

    def test_shift_admits_lower_bound(self):
        a = np.array([-0.5, 1.0]).reshape(2, 1, 1)
        w = np.array([[1.0, 1.0]])
        got = E.eb_step_affine(a, w, np.ones((1, 1, 1)), shift_lambda=1.0)
        np.testing.assert_allclose(got.ravel(), [0.5 / 2.5, 2.0 / 2.5])

    def test_top_shape_checked(self):
        with pytest.raises(ShapeMismatch):
            E.eb_step_affine(np.ones((2, 1, 1)), np.ones((3, 2)), np.ones((2, 1, 1)))


class TestOtherSteps:
    def test_maxpool_routes_to_argmax(self):
        x = np.array([[[1.0, 5.0, 2.0, 0.0], [3.0, 4.0, 9.0, 1.0]]])
        out, mask = T.maxpool_forward(x, 2, 2)
        top = np.array([[[0.25, 0.75]]])
        got = E.eb_step_maxpool(top, mask, x.shape)
        want = np.zeros_like(x)
        want[0, 0, 1] = 0.25
        want[0, 1, 2] = 0.75
        np.testing.assert_array_equal(got, want)

    def test_maxpool_overlap_accumulates(self):
        x = np.zeros((1, 3, 3))
        x[0, 1, 1] = 1.0
        _, mask = T.maxpool_forward(x, 2, 1)
        got = E.eb_step_maxpool(np.full((1, 2, 2), 0.25), mask, x.shape)
        assert got[0, 1, 1] == 1.0

    def test_identity_steps(self):
        t = np.random.default_rng(0).uniform(size=(3, 2, 2))
        assert E.eb_step_relu(t) is t
        assert E.eb_step_lrn(t) is t

    def test_concat_split(self):
        t = np.arange(10.0).reshape(5, 1, 2)
        a, b = E.eb_step_concat(t, [2, 3])
        np.testing.assert_array_equal(a, t[:2])
        np.testing.assert_array_equal(b, t[2:])
        with pytest.raises(ShapeMismatch):
            E.eb_step_concat(t, [2, 2])


class TestSignal:
    def test_rejects_negative(self):
        with pytest.raises(NegativeWeight):
            E.TopDownSignal("fc", np.array([0.5, -0.1]).reshape(2, 1, 1))

    def test_add_and_scale(self):
        p = E.TopDownSignal("fc", np.array([1.0, 0.0]).reshape(2, 1, 1))
        q = E.TopDownSignal("fc", np.array([0.0, 1.0]).reshape(2, 1, 1))
        r = p.scaled(2.0) + q
        assert r.mass == pytest.approx(3.0)


@pytest.fixture
def toy():
    model = F.toy_convnet(0)
    cache = N.forward(model, np.random.default_rng(4).uniform(size=(2, 8, 8)))
    return model, cache


class TestPropagation:
    def test_mass_conserved_on_toy(self, toy):
        model, cache = toy
        fields = E.propagate_layers(model, cache, N.class_signal(model, [0]))
        masses = [fields[l.id].mass for l in model.layers if l.id in fields]
        assert all(m <= 1 + 1e-12 for m in masses)
        assert np.all(np.diff(masses) >= -1e-12)  # bottom-up order: non-decreasing

    def test_single_target_matches_sweep(self, toy):
        model, cache = toy
        sig = N.class_signal(model, [2])
        fields = E.propagate_layers(model, cache, sig)
        for lid in ("conv2", "pool1", "data"):
            np.testing.assert_array_equal(
                E.excitation_backprop(model, cache, sig, lid).values, fields[lid].values)

    def test_fan_out_sums(self):
        model = F.zoo_net(1)
        cache = N.forward(model, np.random.default_rng(2).uniform(size=model.input_layer.params["shape"]))
        sig = N.class_signal(model, [0])
        f = E.propagate_layers(model, cache, sig)
        cat = model.layer("cat")
        # both branches read pool1; its MWP gathers what each branch passed down
        parts = [E.step_layer(model, cache, b, f[b].values)[model.layer(b).inputs[0]]
                 for b in ("br_a", "br_b")]
        np.testing.assert_allclose(f["pool1"].values, parts[0] + parts[1], rtol=1e-13)
        assert len(cat.inputs) == 2

    def test_signal_below_target(self, toy):
        model, cache = toy
        sig = E.TopDownSignal("conv2", np.ones_like(cache.responses["conv2"]))
        with pytest.raises(SignalBelowTarget):
            E.excitation_backprop(model, cache, sig, "fc3")

    def test_signal_shape_checked(self, toy):
        model, cache = toy
        with pytest.raises(ShapeMismatch):
            E.excitation_backprop(model, cache, E.TopDownSignal("fc3", np.ones((4, 1, 1))), "data")


class TestContrastive:
    def test_two_pass_equivalence(self, toy):
        model, cache = toy
        sig = N.class_signal(model, [1])
        single = E.contrastive_backprop(model, cache, sig, "pool1", truncate=False)
        w = model.weights["fc3"]["weight"]
        dual_w = {k: dict(v) for k, v in model.weights.items()}
        dual_w["fc3"]["weight"] = -w
        dual = N.build_model(model.layers, dual_w, model.output_layer, model.metadata)
        a = E.excitation_backprop(model, cache, sig, "pool1").values
        b = E.excitation_backprop(dual, cache, sig, "pool1").values
        np.testing.assert_allclose(single.values, a - b, atol=1e-15)
        assert E.contrastive_backprop(model, cache, sig, "pool1").values.min() >= 0

    def test_nonnegative_top_weights_identical(self, toy):
        model, cache = toy
        w = {k: dict(v) for k, v in model.weights.items()}
        w["fc3"]["weight"] = np.abs(w["fc3"]["weight"])
        pos = N.build_model(model.layers, w, model.output_layer)
        cache = N.forward(pos, cache.responses["data"])
        sig = N.class_signal(pos, [0])
        np.testing.assert_array_equal(E.contrastive_backprop(pos, cache, sig, "conv1").values,
                                      E.excitation_backprop(pos, cache, sig, "conv1").values)

    def test_dual_undefined(self, toy):
        model, cache = toy
        sig = E.TopDownSignal("relu2", np.ones_like(cache.responses["relu2"]))
        with pytest.raises(DualUndefined):
            E.contrastive_backprop(model, cache, sig, "pool1")

    def test_target_equals_signal(self, toy):
        model, cache = toy
        with pytest.raises(SignalBelowTarget):
            E.contrastive_backprop(model, cache, N.class_signal(model, [0]), "fc3")

    def test_empty_result_warns(self):  # all top weights negative: nothing survives
        layers = [N.LayerSpec("data", "input", (), {"shape": [2, 1, 1]}),
                  N.LayerSpec("fc", "fc", ("data",))]
        model = N.build_model(layers, {"fc": {"weight": np.array([[1.0, -1.0]])}}, "fc")
        cache = N.forward(model, np.array([1.0, 1.0]).reshape(2, 1, 1))
        out = E.contrastive_backprop(model, cache, N.class_signal(model, [0]), "data")
        np.testing.assert_array_equal(out.values.ravel(), [1.0, 0.0])
        model2 = N.build_model(layers, {"fc": {"weight": np.array([[-1.0, -1.0]])}}, "fc")
        with pytest.warns(RuntimeWarning):
            out = E.contrastive_backprop(model2, N.forward(model2, cache.responses["data"]),
                                         N.class_signal(model2, [0]), "data")
        assert not out.values.any()


class TestMaps:
    def test_attention_map_shape(self, toy):
        model, cache = toy
        f = E.excitation_backprop(model, cache, N.class_signal(model, [0]), "pool1")
        m = E.mwp_to_attention_map(f, (32, 24), "class0")
        assert m.shape == (32, 24)
        assert m.values.shape == (1, 32, 24)
        assert m.image.min() >= 0

    def test_same_size_is_channel_sum(self, toy):
        model, cache = toy
        f = E.excitation_backprop(model, cache, N.class_signal(model, [0]), "conv1")
        m = E.mwp_to_attention_map(f, (8, 8))
        np.testing.assert_allclose(m.image, f.values.sum(axis=0))

    def test_combine_mean(self):
        a = E.AttentionMap(np.ones((1, 2, 2)), "x")
        b = E.AttentionMap(np.full((1, 2, 2), 3.0), "x")
        np.testing.assert_allclose(E.combine_maps([a, b]).image, 2.0)
        np.testing.assert_allclose(E.combine_maps([a, b], [3, 1]).image, 1.5)
