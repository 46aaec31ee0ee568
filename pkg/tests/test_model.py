import numpy as np
import pytest

from flexband.errors import NumericError, ValidationError
from flexband.model import (
    AvgPool1d,
    Conv1d,
    ConvNetModel,
    LabeledDataset,
    MaxPool1d,
    ModelSpec,
    Relu,
    TrainConfig,
    _avgpool_bwd,
    _avgpool_fwd,
    _conv1d_bwd,
    _conv1d_fwd,
    _maxpool_bwd,
    _maxpool_fwd,
    _softmax,
    backward_input,
    default_model_spec,
    evaluate_accuracy,
    forward,
    forward_batch,
    init_params,
    predict_batch,
    train,
)
from flexband.signal import TimeSeries

from oracles import finite_difference_gradient


def tiny_spec(t_len=32, n_classes=3):
    return ModelSpec(
        layers=(
            Conv1d(kernel=5, channels=4, stride=1, padding=2),
            Relu(),
            MaxPool1d(kernel=2, stride=2),
            Conv1d(kernel=3, channels=n_classes, stride=1, padding=1),
            AvgPool1d(kernel=t_len // 2, stride=t_len // 2),
        ),
        input_length=t_len,
        in_channels=1,
        n_classes=n_classes,
    )


class TestModelSpec:
    def test_default_spec_chains_to_16_logits(self):
        spec = default_model_spec()
        assert spec.input_length == 2000
        assert spec.n_classes == 16

    def test_rejects_mismatched_final_channels(self):
        with pytest.raises(ValidationError):
            ModelSpec(
                layers=(Conv1d(kernel=3, channels=4, padding=1), AvgPool1d(8, 8)),
                input_length=8,
                in_channels=1,
                n_classes=3,
            )

    def test_rejects_non_unit_final_length(self):
        with pytest.raises(ValidationError):
            ModelSpec(
                layers=(Conv1d(kernel=3, channels=3, padding=1),),
                input_length=8,
                in_channels=1,
                n_classes=3,
            )


class TestForward:
    def test_probabilities_valid(self):
        spec = tiny_spec()
        params = init_params(spec, 0)
        ts = TimeSeries(np.random.default_rng(0).standard_normal(32))
        dist = forward(spec, params, ts)
        assert np.all(dist.probabilities >= 0)
        assert dist.probabilities.sum() == pytest.approx(1.0, abs=1e-6)

    def test_zero_final_layer_gives_uniform(self):
        spec = tiny_spec()
        params = init_params(spec, 0)
        params.weights[-1][:] = 0.0
        params.biases[-1][:] = 0.0
        ts = TimeSeries(np.random.default_rng(1).standard_normal(32))
        np.testing.assert_allclose(forward(spec, params, ts).probabilities, 1.0 / 3, atol=1e-12)

    def test_deterministic_across_runs(self):
        spec = tiny_spec()
        ts = TimeSeries(np.random.default_rng(2).standard_normal(32))
        a = forward(spec, init_params(spec, 42), ts).probabilities
        b = forward(spec, init_params(spec, 42), ts).probabilities
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch_rejected(self):
        spec = tiny_spec()
        with pytest.raises(ValidationError):
            forward(spec, init_params(spec, 0), TimeSeries(np.zeros(16)))


class TestLayerGradients:
    """Each layer kernel against central finite differences in isolation."""

    def _check(self, fwd_scalar, bwd_grad, x, n_coords=12, tol=1e-3):
        rng = np.random.default_rng(0)
        coords = rng.choice(x.size, size=min(n_coords, x.size), replace=False)
        numeric = finite_difference_gradient(fwd_scalar, x, coords)
        analytic = bwd_grad().reshape(-1)[coords]
        scale = np.maximum(np.abs(numeric), 1e-6)
        assert np.max(np.abs(analytic - numeric) / scale) <= tol

    def test_conv1d(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 16))
        w = rng.standard_normal((4, 3, 5))
        b = rng.standard_normal(4)
        r = rng.standard_normal((2, 4, 16))

        def scalar(xv):
            out, _ = _conv1d_fwd(xv, w, b, 1, 2)
            return float(np.sum(out * r))

        def analytic():
            _, cache = _conv1d_fwd(x, w, b, 1, 2)
            dx, _, _ = _conv1d_bwd(cache, w, r, 1, 2, need_param_grads=False)
            return dx

        self._check(scalar, analytic, x)

    def test_conv1d_strided(self):
        rng = np.random.default_rng(30)
        x = rng.standard_normal((2, 3, 17))
        w = rng.standard_normal((4, 3, 5))
        b = rng.standard_normal(4)
        out, cache = _conv1d_fwd(x, w, b, 2, 2)
        r = rng.standard_normal(out.shape)

        def scalar(xv):
            o, _ = _conv1d_fwd(xv, w, b, 2, 2)
            return float(np.sum(o * r))

        def analytic():
            dx, _, _ = _conv1d_bwd(cache, w, r, 2, 2, need_param_grads=False)
            return dx

        self._check(scalar, analytic, x)

    def test_conv1d_weight_gradient(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3, 16))
        w = rng.standard_normal((4, 3, 5))
        b = rng.standard_normal(4)
        r = rng.standard_normal((2, 4, 16))

        def scalar(wv):
            out, _ = _conv1d_fwd(x, wv, b, 1, 2)
            return float(np.sum(out * r))

        def analytic():
            _, cache = _conv1d_fwd(x, w, b, 1, 2)
            _, dw, _ = _conv1d_bwd(cache, w, r, 1, 2, need_param_grads=True)
            return dw

        self._check(scalar, analytic, w)

    def test_conv1d_matches_sliding_dot_product(self):
        rng = np.random.default_rng(31)
        x = rng.standard_normal((2, 3, 20))
        w = rng.standard_normal((4, 3, 5))
        b = rng.standard_normal(4)
        out, _ = _conv1d_fwd(x, w, b, 1, 2)
        xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
        expected = np.zeros_like(out)
        for bi in range(2):
            for o in range(4):
                for t in range(20):
                    expected[bi, o, t] = np.sum(w[o] * xp[bi, :, t : t + 5]) + b[o]
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_maxpool(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 16))
        r = rng.standard_normal((2, 3, 8))

        def scalar(xv):
            out, _ = _maxpool_fwd(xv, 2, 2)
            return float(np.sum(out * r))

        def analytic():
            _, idx = _maxpool_fwd(x, 2, 2)
            return _maxpool_bwd(r, idx, x.shape, 2, 2)

        self._check(scalar, analytic, x)

    def test_maxpool_overlapping(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 2, 17))
        out, _ = _maxpool_fwd(x, 3, 2)
        r = rng.standard_normal(out.shape)

        def scalar(xv):
            o, _ = _maxpool_fwd(xv, 3, 2)
            return float(np.sum(o * r))

        def analytic():
            _, idx = _maxpool_fwd(x, 3, 2)
            return _maxpool_bwd(r, idx, x.shape, 3, 2)

        self._check(scalar, analytic, x)

    def test_avgpool(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 3, 16))
        r = rng.standard_normal((2, 3, 4))

        def scalar(xv):
            return float(np.sum(_avgpool_fwd(xv, 4, 4) * r))

        self._check(scalar, lambda: _avgpool_bwd(r, x.shape, 4, 4), x)

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(8)
        z = rng.standard_normal((2, 5))
        t = rng.random((2, 5))

        def scalar(zv):
            p = _softmax(zv)
            return float(-np.sum(t * np.log(p)))

        def analytic():
            p = _softmax(z)
            return t.sum(axis=1, keepdims=True) * p - t

        self._check(scalar, analytic, z)


class TestBackwardInput:
    def test_matches_finite_differences(self):
        spec = tiny_spec()
        params = init_params(spec, 10)
        rng = np.random.default_rng(10)
        x = rng.standard_normal((32, 1))
        target = np.zeros(3)
        target[1] = 0.7

        def scalar(xv):
            p = forward_batch(spec, params, xv[None])[0]
            return float(-np.sum(target * np.log(p)))

        coords = rng.choice(32, size=20, replace=False)
        numeric = finite_difference_gradient(scalar, x, coords)
        analytic = backward_input(spec, params, TimeSeries(x), target).reshape(-1)[coords]
        scale = np.maximum(np.abs(numeric), 1e-8)
        assert np.max(np.abs(analytic - numeric) / scale) <= 1e-3

    def test_zero_input_zero_bias_uniform_target_gives_zero_gradient(self):
        spec = tiny_spec()
        params = init_params(spec, 0)
        for b in params.biases:
            b[:] = 0.0
        grad = backward_input(spec, params, TimeSeries(np.zeros(32)), np.full(3, 1 / 3))
        np.testing.assert_array_equal(grad, 0.0)

    def test_gradient_linear_in_target(self):
        spec = tiny_spec()
        params = init_params(spec, 3)
        ts = TimeSeries(np.random.default_rng(11).standard_normal(32))
        target = np.array([0.2, 0.5, 0.3])
        g1 = backward_input(spec, params, ts, target)
        g2 = backward_input(spec, params, ts, 2.5 * target)
        np.testing.assert_allclose(g2, 2.5 * g1, atol=1e-12)


class TestPredictBatch:
    def test_batch_of_one_equals_forward(self):
        spec = tiny_spec()
        params = init_params(spec, 1)
        x = np.random.default_rng(1).standard_normal((32, 1))
        probs, labels = predict_batch(spec, params, x[None])
        single = forward(spec, params, TimeSeries(x))
        np.testing.assert_array_equal(probs[0], single.probabilities)
        assert labels[0] == single.predicted_class

    def test_permutation_equivariance(self):
        spec = tiny_spec()
        params = init_params(spec, 2)
        xs = np.random.default_rng(2).standard_normal((6, 32, 1))
        perm = np.array([3, 1, 5, 0, 4, 2])
        probs, _ = predict_batch(spec, params, xs)
        probs_perm, _ = predict_batch(spec, params, xs[perm])
        np.testing.assert_allclose(probs_perm, probs[perm], atol=1e-12)

    def test_batch_matches_per_sample_loop(self):
        spec = tiny_spec()
        params = init_params(spec, 3)
        xs = np.random.default_rng(3).standard_normal((5, 32, 1))
        probs, _ = predict_batch(spec, params, xs)
        for i in range(5):
            solo = forward(spec, params, TimeSeries(xs[i])).probabilities
            np.testing.assert_allclose(probs[i], solo, atol=1e-9)


class TestTranslation:
    def test_same_conv_shifts_with_input(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((1, 1, 64))
        w = rng.standard_normal((4, 1, 5))
        b = np.zeros(4)
        shift = 2
        x_shifted = np.roll(x, shift, axis=2)
        out, _ = _conv1d_fwd(x, w, b, 1, 2)
        out_shifted, _ = _conv1d_fwd(x_shifted, w, b, 1, 2)
        interior = slice(8, 56)
        np.testing.assert_allclose(out_shifted[:, :, interior],
                                   np.roll(out, shift, axis=2)[:, :, interior], atol=1e-10)


def make_toy_task(n_per_class=40, t_len=64, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(t_len)
    xs, ys = [], []
    for _ in range(n_per_class):
        tone = np.sin(2 * np.pi * 8 * t / t_len + rng.uniform(0, 2 * np.pi))
        xs.append(tone + 0.05 * rng.standard_normal(t_len))
        ys.append(0)
        xs.append(rng.standard_normal(t_len))
        ys.append(1)
    return LabeledDataset(np.array(xs)[:, :, None], np.array(ys))


class TestTrain:
    def _toy_spec(self):
        return ModelSpec(
            layers=(
                Conv1d(kernel=7, channels=8, stride=1, padding=3),
                Relu(),
                MaxPool1d(kernel=2, stride=2),
                Conv1d(kernel=7, channels=2, stride=1, padding=3),
                AvgPool1d(kernel=32, stride=32),
            ),
            input_length=64,
            in_channels=1,
            n_classes=2,
        )

    def test_separable_toy_reaches_perfect_validation(self):
        spec = self._toy_spec()
        result = train(spec, make_toy_task(seed=0), make_toy_task(seed=1),
                       TrainConfig(max_epochs=20, learning_rate=3e-3, batch_size=16,
                                   patience=20, seed=0))
        assert result.best_val_accuracy == 1.0
        assert result.best_epoch < 20

    def test_best_checkpoint_at_least_as_good_as_final(self):
        spec = self._toy_spec()
        result = train(spec, make_toy_task(seed=2), make_toy_task(seed=3),
                       TrainConfig(max_epochs=8, learning_rate=3e-3, batch_size=16,
                                   patience=8, seed=1))
        assert result.best_val_accuracy >= result.history[-1].val_accuracy
        returned_acc = evaluate_accuracy(spec, result.params, make_toy_task(seed=3))
        assert returned_acc == pytest.approx(result.best_val_accuracy)

    def test_training_is_deterministic(self):
        spec = self._toy_spec()
        cfg = TrainConfig(max_epochs=3, learning_rate=1e-3, batch_size=16, patience=3, seed=5)
        r1 = train(spec, make_toy_task(seed=4), make_toy_task(seed=5), cfg)
        r2 = train(spec, make_toy_task(seed=4), make_toy_task(seed=5), cfg)
        for w1, w2 in zip(r1.params.weights, r2.params.weights):
            np.testing.assert_array_equal(w1, w2)

    def test_nan_divergence_aborts(self):
        spec = self._toy_spec()
        data = make_toy_task(seed=6)
        huge = LabeledDataset(data.samples * 1e200, data.labels)
        with np.errstate(all="ignore"), pytest.raises(NumericError):
            train(spec, huge, huge, TrainConfig(max_epochs=2, learning_rate=1e300,
                                                batch_size=16, patience=2, seed=0))

    def test_label_range_validated(self):
        spec = self._toy_spec()
        data = make_toy_task(seed=7)
        bad = LabeledDataset(data.samples, data.labels + 5)
        with pytest.raises(ValidationError):
            train(spec, bad, bad, TrainConfig(max_epochs=1, seed=0))


class TestConvNetModel:
    def test_wraps_forward_and_backward(self):
        spec = tiny_spec()
        model = ConvNetModel(spec, init_params(spec, 0))
        ts = TimeSeries(np.random.default_rng(0).standard_normal(32))
        dist = model.forward(ts)
        assert dist.probabilities.shape == (3,)
        grad = model.backward_input(ts, np.array([1.0, 0.0, 0.0]))
        assert grad.shape == (32, 1)

    def test_rejects_mismatched_params(self):
        spec = tiny_spec()
        other = init_params(tiny_spec(n_classes=4), 0)
        with pytest.raises(ValidationError):
            ConvNetModel(spec, other)
