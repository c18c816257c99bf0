import numpy as np
import pytest

from ebnet import excitation as E
from ebnet import fixtures as F
from ebnet import netgraph as N
from ebnet import oracle as O
from ebnet.errors import TooLarge
from ebnet.netgraph import LayerSpec


def two_layer():
    layers = [LayerSpec("data", "input", (), {"shape": [3, 1, 1]}),
              LayerSpec("fc1", "fc", ("data",)),
              LayerSpec("relu1", "relu", ("fc1",)),
              LayerSpec("fc2", "fc", ("relu1",))]
    weights = {"fc1": {"weight": np.array([[1.0, 2.0, 0.0], [-1.0, 1.0, 1.0]])},
               "fc2": {"weight": np.array([[1.0, 1.0], [-1.0, 2.0]])}}
    model = N.build_model(layers, weights, "fc2")
    cache = N.forward(model, np.array([1.0, 1.0, 2.0]).reshape(3, 1, 1))
    return model, cache


class TestChain:
    def test_hand_worked(self):
        model, cache = two_layer()
        # relu1 = [3, 2]; fc2 row0 splits 3:2, row1 sends everything to unit 1
        # fc1 unit0 splits 1:2:0 over data, unit1 splits 0:1:2 (negative weight dropped)
        chain = O.build_chain(model, cache)
        s = chain.start_vector([0.5, 0.5])
        v = O.expected_visits(chain, s)
        np.testing.assert_allclose(chain.layer_values(v, "relu1").ravel(), [0.3, 0.7])
        want = 0.3 * np.array([1, 2, 0]) / 3 + 0.7 * np.array([0, 1, 2]) / 3
        np.testing.assert_allclose(chain.layer_values(v, "data").ravel(), want)
        assert v[chain.sink] == pytest.approx(0.0)

    def test_rows_stochastic(self):
        model = F.toy_convnet(1)
        cache = N.forward(model, np.random.default_rng(0).uniform(size=(2, 8, 8)))
        chain = O.build_chain(model, cache)
        rows = chain.Q.sum(axis=1) + chain.R.sum(axis=1)
        np.testing.assert_allclose(rows, 1.0, atol=1e-13)
        assert chain.Q.min() >= 0 and chain.R.min() >= 0

    def test_zero_normalizer_goes_to_sink(self):
        model, cache = two_layer()
        cache = N.forward(model, np.array([1.0, 0.0, 0.0]).reshape(3, 1, 1))
        chain = O.build_chain(model, cache)
        v = O.expected_visits(chain, chain.start_vector([0.25, 0.75]))
        # relu1 = [1, 0]: fc2 unit1 only has excitatory weight on the dead unit
        assert v[chain.sink] == pytest.approx(0.75)
        sig = E.TopDownSignal("fc2", np.array([0.25, 0.75]).reshape(2, 1, 1))
        engine = E.excitation_backprop(model, cache, sig, "data")
        assert engine.mass == pytest.approx(0.25)
        assert v[chain.n_transient:].sum() == pytest.approx(1.0)

    def test_too_large(self):
        model = F.midsize_cnn(0, size=32)
        cache = N.forward(model, np.zeros(model.input_layer.params["shape"]))
        with pytest.raises(TooLarge):
            O.build_chain(model, cache)

    def test_neumann_agrees_with_solve(self):
        rng = np.random.default_rng(5)
        model, x, s = F.random_mlp_case(rng)
        cache = N.forward(model, x)
        chain = O.build_chain(model, cache)
        start = chain.start_vector(s)
        np.testing.assert_allclose(O.neumann_visits(chain, start),
                                   O.expected_visits(chain, start)[:chain.n_transient],
                                   rtol=1e-12, atol=1e-15)

    def test_write_chain(self, tmp_path):
        model, cache = two_layer()
        chain = O.build_chain(model, cache)
        O.write_chain(chain, tmp_path / "chain.mtx")
        lines = (tmp_path / "chain.mtx").read_text().splitlines()
        assert lines[0].startswith("%%MatrixMarket")
        nnz = int(lines[2].split()[2])
        assert len(lines) == 3 + nnz


class TestCrossCheck:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_mlp(self, seed):
        model, x, s = F.random_mlp_case(np.random.default_rng(100 + seed))
        cache = N.forward(model, x)
        errs = O.cross_check(model, cache, E.TopDownSignal(model.output_layer, s))
        assert max(errs.values()) <= 1e-9

    def test_zoo_net(self):
        model = F.zoo_net(0)
        cache = N.forward(model, np.random.default_rng(0).uniform(size=model.input_layer.params["shape"]))
        errs = O.cross_check(model, cache, N.class_signal(model, [1]))
        assert max(errs.values()) <= 1e-9
        assert {"norm1", "cat", "avg", "flat"} <= set(errs)

    def test_intermediate_bottom(self):
        model = F.toy_convnet(2)
        cache = N.forward(model, np.random.default_rng(1).uniform(size=(2, 8, 8)))
        errs = O.cross_check(model, cache, N.class_signal(model, [0]), bottom_layer="pool1")
        assert set(errs) == {"fc3", "relu2", "conv2", "pool1"}
        assert max(errs.values()) <= 1e-9


class TestSampling:
    def test_seeded_and_reproducible(self):
        model, cache = two_layer()
        chain = O.build_chain(model, cache)
        s = chain.start_vector([0.5, 0.5])
        a = O.sample_winner_paths(chain, s, 5000, seed=3)
        b = O.sample_winner_paths(chain, s, 5000, seed=3)
        np.testing.assert_array_equal(a, b)
        # every walk visits the top layer once and ends in exactly one absorbing state
        top = chain.layer_values(a, "fc2").sum()
        assert top == 5000
        assert a[chain.n_transient:].sum() == 5000

    def test_frequencies_match(self):
        model, cache = two_layer()
        chain = O.build_chain(model, cache)
        s = chain.start_vector([0.5, 0.5])
        n = 40000
        freq = O.sample_winner_paths(chain, s, n, seed=0) / n
        p = O.expected_visits(chain, s)
        sd = np.sqrt(p * (1 - np.clip(p, 0, 1)) / n)
        assert np.all(np.abs(freq - p) <= 4 * sd + 1e-12)


def test_relative_error_floor():
    assert O.relative_error([1.0, 1e-30], [1.0, 0.0]) <= 1e-15
    assert O.relative_error([1.0, 0.5], [1.0, 0.4]) == pytest.approx(0.25)
