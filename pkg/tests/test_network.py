import math

import numpy as np
import pytest

from conftest import make_graph, random_connected_graph
from spectext.corpus import Corpus, Document, Vocabulary
from spectext.datasets import block_toy_corpus
from spectext.exceptions import ConfigError, DataError
from spectext.graph import cooccurrence_graph
from spectext.network import (AdaGradState, TrainConfig, _backward_pass,
                              _forward_pass, adagrad_step, backward,
                              build_model, conv_forward, evaluate, forward,
                              load_checkpoint, loss, parse_architecture,
                              save_checkpoint, train)
from spectext.spectral import eigendecompose, laplacian, spectral_convolve, \
    truncate_basis


def basis_of(graph, kind="basic"):
    return eigendecompose(laplacian(graph, kind))


def batch_loss(model, X, y):
    probs, _ = _forward_pass(model, X)
    picked = np.maximum(probs[np.arange(len(y)), y], 1e-12)
    return float(-np.log(picked).mean())


def finite_difference_gradients(model, X, y, step=1e-5):
    """Central differences over every entry of every parameter block."""
    grads = {}
    for name, block in model.parameters().items():
        grad = np.zeros_like(block)
        flat = block.ravel()
        for idx in range(flat.shape[0]):
            original = flat[idx]
            flat[idx] = original + step
            up = batch_loss(model, X, y)
            flat[idx] = original - step
            down = batch_loss(model, X, y)
            flat[idx] = original
            grad.ravel()[idx] = (up - down) / (2.0 * step)
        grads[name] = grad
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for name in analytic:
        diff = np.abs(analytic[name] - numeric[name])
        rel = diff / (np.abs(analytic[name]) + 1e-8)
        worst = max(worst, float(rel.max()))
    return worst


def straight_line_forward(model, x):
    """Independent scalar-loop reimplementation of the whole forward pass."""
    maps = [np.asarray(x, dtype=float)]
    for k, layer in enumerate(model.conv_layers):
        u = model.basis.eigenvectors[:, :layer.basis_dim]
        lam = model.basis.eigenvalues[:layer.basis_dim]
        new_maps = []
        for j in range(layer.out_maps):
            acc = np.zeros(model.num_nodes)
            for i in range(layer.in_maps):
                if layer.parameterization == "free":
                    multipliers = layer.weights[i, j]
                else:
                    t = lam / layer.lambda_scale
                    multipliers = sum(a * t**p
                                      for p, a in enumerate(layer.weights[i, j]))
                coeffs = u.T @ maps[i]
                acc = acc + u @ (multipliers * coeffs)
            new_maps.append(np.maximum(acc, 0.0))
        maps = new_maps
    vec = np.concatenate(maps)
    for layer in model.fc_layers[:-1]:
        vec = np.maximum(layer.weights @ vec + layer.bias, 0.0)
    logits = model.fc_layers[-1].weights @ vec + model.fc_layers[-1].bias
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


class TestParseArchitecture:
    def test_two_layer_with_kilo_suffix(self):
        assert parse_architecture("GC8-GC8-FC1K") == ([8, 8], [1000])

    def test_single_conv_with_hidden(self):
        assert parse_architecture("GC8-FC500") == ([8], [500])

    def test_conv_only(self):
        assert parse_architecture("GC4") == ([4], [])

    def test_conv_after_fc_rejected(self):
        with pytest.raises(ConfigError):
            parse_architecture("FC8-GC2")

    def test_garbage_rejected(self):
        with pytest.raises(ConfigError):
            parse_architecture("GC8-XX3")

    def test_missing_conv_rejected(self):
        with pytest.raises(ConfigError):
            parse_architecture("FC32")


class TestConvForward:
    def test_zero_filters_give_zero_output(self, p3):
        basis = basis_of(p3)
        model = build_model("GC2", basis, num_classes=2, seed=0,
                            parameterization="free")
        layer = model.conv_layers[0]
        layer.weights[:] = 0.0
        rng = np.random.default_rng(0)
        out = conv_forward(layer, basis, rng.normal(size=(3, 1)))
        np.testing.assert_array_equal(out, np.zeros((3, 2)))

    def test_identity_filter_passes_nonnegative_signal(self, k3):
        basis = basis_of(k3)
        model = build_model("GC1", basis, num_classes=2, seed=0,
                            parameterization="free")
        layer = model.conv_layers[0]
        layer.weights[:] = 1.0
        x = np.array([0.5, 1.5, 0.0])
        np.testing.assert_allclose(conv_forward(layer, basis, x)[:, 0], x,
                                   atol=1e-10)

    def test_matches_composed_convolutions(self, p3):
        basis = basis_of(p3)
        model = build_model("GC2", basis, num_classes=2, seed=3,
                            parameterization="free", pooling=False)
        layer = model.conv_layers[0]
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 1))
        out = conv_forward(layer, basis, x)
        for j in range(2):
            expected = np.maximum(
                spectral_convolve(basis, x[:, 0], layer.weights[0, j]), 0.0)
            np.testing.assert_allclose(out[:, j], expected, atol=1e-12)

    def test_linear_before_rectifier_when_active(self, k3):
        # With positive filters and a positive signal every pre-activation is
        # positive, so doubling the input exactly doubles the output.
        basis = basis_of(k3)
        model = build_model("GC2", basis, num_classes=2, seed=1,
                            parameterization="free")
        layer = model.conv_layers[0]
        layer.weights[:] = np.abs(layer.weights) + 0.1
        x = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(conv_forward(layer, basis, 2.0 * x),
                                   2.0 * conv_forward(layer, basis, x),
                                   atol=1e-10)


class TestForward:
    def test_fresh_model_predicts_uniformly(self, p3):
        model = build_model("GC2-FC4", basis_of(p3), num_classes=3, seed=0)
        probs = forward(model, np.array([1.0, 0.0, 2.0]))
        np.testing.assert_allclose(probs, np.full(3, 1.0 / 3.0), atol=1e-12)

    def test_probabilities_sum_to_one(self, p3):
        model = build_model("GC2-FC4", basis_of(p3), num_classes=4, seed=1)
        model.fc_layers[-1].weights[:] = np.random.default_rng(2).normal(
            size=model.fc_layers[-1].weights.shape)
        rng = np.random.default_rng(3)
        for _ in range(100):
            probs = forward(model, rng.normal(size=3))
            assert abs(probs.sum() - 1.0) < 1e-12
            assert np.all(probs > 0)

    def test_matches_straight_line_reimplementation(self, p3):
        rng = np.random.default_rng(4)
        for parameterization in ("free", "polynomial"):
            model = build_model("GC2-FC4", basis_of(p3), num_classes=3, seed=9,
                                parameterization=parameterization,
                                kernel_degree=2)
            model.fc_layers[-1].weights[:] = rng.normal(
                size=model.fc_layers[-1].weights.shape)
            for _ in range(5):
                x = rng.normal(size=3)
                np.testing.assert_allclose(forward(model, x),
                                           straight_line_forward(model, x),
                                           atol=1e-12)


class TestLoss:
    def test_perfect_prediction(self):
        assert loss(np.array([1.0, 0.0]), 0) == 0.0

    def test_uniform_four_way(self):
        assert loss(np.full(4, 0.25), 2) == pytest.approx(math.log(4.0), abs=1e-15)

    def test_scalar_example(self):
        assert loss(np.array([0.7, 0.3]), 1) == pytest.approx(-math.log(0.3),
                                                              abs=1e-15)

    def test_floor_prevents_infinity(self):
        assert loss(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-12))


class TestBackward:
    def test_closed_form_at_zero_output_layer(self, p3):
        model = build_model("GC2-FC4", basis_of(p3), num_classes=3, seed=5)
        x = np.array([1.0, 0.5, 2.0])
        grads = backward(model, x, label=1)
        # With a zero output layer the softmax is uniform, so the output
        # weight gradient is (1/C - onehot) outer penultimate activation.
        probs, cache = _forward_pass(model, x[None, :])
        penultimate = cache[1][-1][0][:, 0]
        delta = np.full(3, 1.0 / 3.0)
        delta[1] -= 1.0
        np.testing.assert_allclose(grads["fc1.weights"],
                                   np.outer(delta, penultimate), atol=1e-12)
        np.testing.assert_allclose(grads["fc1.bias"], delta, atol=1e-12)

    @pytest.mark.parametrize("parameterization,kernel_degree",
                             [("free", 0), ("polynomial", 3)])
    def test_matches_finite_differences(self, parameterization, kernel_degree):
        rng = np.random.default_rng(17)
        g = random_connected_graph(rng, max_nodes=5)
        basis = basis_of(g)
        model = build_model("GC2-FC4", basis, num_classes=3, seed=23,
                            parameterization=parameterization,
                            kernel_degree=kernel_degree)
        model.fc_layers[-1].weights[:] = 0.5 * rng.normal(
            size=model.fc_layers[-1].weights.shape)
        n = g.num_nodes
        X = np.abs(rng.normal(size=(3, n))) + 0.05
        y = np.array([0, 1, 2])
        _, cache = _forward_pass(model, X)
        analytic = _backward_pass(model, cache, y)
        numeric = finite_difference_gradients(model, X, y)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_single_sample_wrapper_agrees_with_batch(self, p3):
        model = build_model("GC2-FC4", basis_of(p3), num_classes=2, seed=2)
        rng = np.random.default_rng(6)
        model.fc_layers[-1].weights[:] = rng.normal(
            size=model.fc_layers[-1].weights.shape)
        x = rng.normal(size=3)
        single = backward(model, x, 1)
        _, cache = _forward_pass(model, x[None, :])
        batch = _backward_pass(model, cache, np.array([1]))
        for name in single:
            np.testing.assert_allclose(single[name], batch[name], atol=1e-12)


class TestAdaGrad:
    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdaGradState(accumulators={"w": np.zeros(2)})
        adagrad_step(state, params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_first_step_scalar_arithmetic(self):
        params = {"w": np.array([0.0])}
        state = AdaGradState(learning_rate=0.01, damping=1e-8,
                             accumulators={"w": np.zeros(1)})
        adagrad_step(state, params, {"w": np.array([1.0])})
        expected = -0.01 * 1.0 / (math.sqrt(1.0) + 1e-8)
        np.testing.assert_allclose(params["w"], [expected], atol=1e-18)

    def test_second_step_scales_by_accumulator(self):
        params = {"w": np.array([0.0])}
        state = AdaGradState(learning_rate=0.01, damping=1e-8,
                             accumulators={"w": np.zeros(1)})
        adagrad_step(state, params, {"w": np.array([1.0])})
        first = params["w"][0]
        adagrad_step(state, params, {"w": np.array([1.0])})
        second = params["w"][0] - first
        np.testing.assert_allclose(second, -0.01 / (math.sqrt(2.0) + 1e-8),
                                   atol=1e-18)

    def test_accumulators_monotone_and_parameters_finite(self):
        rng = np.random.default_rng(8)
        params = {"w": rng.normal(size=4)}
        state = AdaGradState(accumulators={"w": np.zeros(4)})
        previous = state.accumulators["w"].copy()
        for _ in range(10_000):
            grad = {"w": np.clip(rng.normal(size=4), -5, 5)}
            adagrad_step(state, params, grad)
            assert np.all(state.accumulators["w"] >= previous)
            previous = state.accumulators["w"].copy()
        assert np.all(np.isfinite(params["w"]))

    def test_frozen_blocks_skipped(self):
        params = {"conv0.weights": np.ones(2), "fc0.weights": np.ones(2)}
        state = AdaGradState(accumulators={k: np.zeros(2) for k in params})
        adagrad_step(state, params, {k: np.ones(2) for k in params},
                     skip=frozenset(["conv0"]))
        np.testing.assert_array_equal(params["conv0.weights"], np.ones(2))
        assert not np.array_equal(params["fc0.weights"], np.ones(2))


@pytest.fixture(scope="module")
def toy_setup():
    corpus = block_toy_corpus(docs_per_class=40, seed=5)
    graph = cooccurrence_graph(corpus, window=3)
    basis = eigendecompose(laplacian(graph, "basic"))
    return corpus, graph, basis


class TestTrain:
    def test_separable_corpus_reaches_full_accuracy(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC4-FC16", basis, num_classes=2, seed=0)
        report = train(model, corpus, basis,
                       TrainConfig(epochs=50, batch_size=16, seed=0))
        final = report.final("train")
        assert final is not None
        assert final.accuracy == 1.0
        assert any(r.accuracy == 1.0 and r.epoch < 50 for r in report.rows)

    def test_zero_epochs_is_a_no_op(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC2-FC8", basis, num_classes=2, seed=1)
        before = {k: v.copy() for k, v in model.parameters().items()}
        report = train(model, corpus, basis, TrainConfig(epochs=0, seed=0))
        assert report.rows == []
        for name, value in model.parameters().items():
            assert np.array_equal(value, before[name])

    def test_same_seed_gives_bit_identical_parameters(self, toy_setup):
        corpus, _, basis = toy_setup
        runs = []
        for _ in range(2):
            model = build_model("GC2-FC8", basis, num_classes=2, seed=3)
            train(model, corpus, basis,
                  TrainConfig(epochs=5, batch_size=16, seed=3))
            runs.append({k: v.copy() for k, v in model.parameters().items()})
        for name in runs[0]:
            assert np.array_equal(runs[0][name], runs[1][name])

    def test_frozen_conv_layers_stay_bit_identical(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC2-GC2-FC8", basis, num_classes=2, seed=4)
        frozen_before = {k: v.tobytes() for k, v in model.parameters().items()
                         if k.startswith("conv")}
        train(model, corpus, basis,
              TrainConfig(epochs=6, batch_size=16, seed=4,
                          frozen=frozenset(["conv0", "conv1"])))
        for name, blob in frozen_before.items():
            assert model.parameters()[name].tobytes() == blob

    def test_unknown_frozen_layer_rejected(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC2-FC8", basis, num_classes=2, seed=4)
        with pytest.raises(ConfigError):
            train(model, corpus, basis,
                  TrainConfig(epochs=1, frozen=frozenset(["conv9"])))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_restores_last_good_epoch(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC2-FC8", basis, num_classes=2, seed=5)
        before = {k: v.copy() for k, v in model.parameters().items()}
        report = train(model, corpus, basis,
                       TrainConfig(epochs=3, batch_size=16, seed=5,
                                   learning_rate=1e160))
        assert report.aborted
        for name, value in model.parameters().items():
            assert np.array_equal(value, before[name])

    def test_validation_rows_emitted(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC2-FC8", basis, num_classes=2, seed=6)
        report = train(model, corpus, basis,
                       TrainConfig(epochs=3, batch_size=16, seed=6,
                                   val_fraction=0.25))
        assert {r.split for r in report.rows} == {"train", "val"}


class TestEvaluate:
    def test_uniform_predictor_scores_first_class_prior(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC2-FC8", basis, num_classes=2, seed=7)
        result = evaluate(model, corpus)
        prior = corpus.class_counts()[0] / len(corpus.documents)
        assert result.accuracy == pytest.approx(prior)
        assert result.mean_loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_memorizing_model_scores_one(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC4-FC16", basis, num_classes=2, seed=0)
        train(model, corpus, basis, TrainConfig(epochs=50, batch_size=16, seed=0))
        assert evaluate(model, corpus).accuracy == 1.0

    def test_confusion_rows_sum_to_class_counts(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC2-FC8", basis, num_classes=2, seed=8)
        result = evaluate(model, corpus)
        np.testing.assert_array_equal(result.confusion.sum(axis=1),
                                      corpus.class_counts())

    def test_empty_corpus_rejected(self, toy_setup):
        corpus, _, basis = toy_setup
        model = build_model("GC2-FC8", basis, num_classes=2, seed=9)
        empty = Corpus(documents=(Document(tokens=("a0",), label=0),
                                  Document(tokens=("b0",), label=1)),
                       vocabulary=corpus.vocabulary, num_classes=2,
                       signal_mode="raw-count")
        assert evaluate(model, empty).accuracy >= 0.0  # smallest legal corpus


class TestCheckpoint:
    def test_roundtrip_preserves_parameters(self, toy_setup, tmp_path):
        corpus, _, basis = toy_setup
        model = build_model("GC2-GC2-FC8", basis, num_classes=2, seed=10)
        train(model, corpus, basis, TrainConfig(epochs=2, batch_size=16, seed=10))
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(model, str(path))
        loaded = load_checkpoint(str(path), basis)
        assert loaded.arch == model.arch
        assert loaded.num_classes == model.num_classes
        for name, value in model.parameters().items():
            assert np.array_equal(loaded.parameters()[name], value)

    def test_wrong_basis_rejected(self, toy_setup, tmp_path):
        corpus, _, basis = toy_setup
        model = build_model("GC2-FC8", basis, num_classes=2, seed=11)
        path = tmp_path / "checkpoint.bin"
        save_checkpoint(model, str(path))
        other = eigendecompose(laplacian(
            make_graph([[0, 1], [1, 0]]), "basic"))
        with pytest.raises(DataError, match="different spectral basis"):
            load_checkpoint(str(path), other)

    def test_deterministic_bytes(self, toy_setup, tmp_path):
        _, _, basis = toy_setup
        model = build_model("GC2-FC8", basis, num_classes=2, seed=12)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(model, str(a))
        save_checkpoint(model, str(b))
        assert a.read_bytes() == b.read_bytes()


class TestPoolingDimensions:
    def test_basis_dims_halve_per_layer(self, toy_setup):
        _, _, basis = toy_setup
        model = build_model("GC2-GC2-GC2", basis, num_classes=2, seed=0,
                            pooling=True)
        dims = [layer.basis_dim for layer in model.conv_layers]
        assert dims[0] == basis.dim
        assert dims[1] == basis.dim // 2
        assert dims[2] == basis.dim // 4

    def test_pooling_off_keeps_full_dimension(self, toy_setup):
        _, _, basis = toy_setup
        model = build_model("GC2-GC2", basis, num_classes=2, seed=0,
                            pooling=False)
        assert all(layer.basis_dim == basis.dim for layer in model.conv_layers)

    def test_truncated_layer_matches_truncated_convolution(self, toy_setup):
        _, _, basis = toy_setup
        model = build_model("GC1-GC1", basis, num_classes=2, seed=13,
                            parameterization="free", pooling=True)
        layer = model.conv_layers[1]
        small = truncate_basis(basis, layer.basis_dim)
        rng = np.random.default_rng(14)
        x = np.abs(rng.normal(size=(basis.num_nodes, 1)))
        out = conv_forward(layer, basis, x)
        expected = np.maximum(
            spectral_convolve(small, x[:, 0], layer.weights[0, 0]), 0.0)
        np.testing.assert_allclose(out[:, 0], expected, atol=1e-12)
