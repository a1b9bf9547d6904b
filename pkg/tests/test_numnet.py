import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from svyconf import numnet
from svyconf.errors import InvalidInputError, TrainingDivergedError
from svyconf.numnet import NetworkParams, TrainConfig


def net(*layers):
    """NetworkParams from (weight, bias) pairs written as nested lists."""
    return NetworkParams(tuple(np.array(w, float) for w, _ in layers),
                         tuple(np.array(b, float) for _, b in layers))


def random_net(rng, sizes, jitter=0.1):
    p = numnet.init_params(sizes, rng)
    return p.with_flat(p.flat() + jitter * rng.standard_normal(p.n_params))


def reference_forward(params, x):
    """Straight-line loop re-implementation, no numpy matmul."""
    h = [float(v) for v in x]
    for li, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = [sum(w[r, c] * h[c] for c in range(len(h))) + b[r] for r in range(w.shape[0])]
        h = z if li == params.depth - 1 else [max(v, 0.0) for v in z]
    return np.array(h)


class TestForward:
    def test_identity_network(self):
        assert numnet.forward(net(([[1]], [0])), [3.0]).tolist() == [3.0]

    def test_relu_kills_negative(self):
        p = net(([[-1]], [0]), ([[1]], [0]))
        assert numnet.forward(p, [5.0]).tolist() == [0.0]

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = random_net(rng, [5, 7, 4, 3])
            x = rng.standard_normal(5)
            np.testing.assert_allclose(numnet.forward(p, x), reference_forward(p, x), rtol=1e-12, atol=1e-14)

    def test_batch_equals_rowwise(self):
        rng = np.random.default_rng(4)
        p = random_net(rng, [3, 5, 2])
        X = rng.standard_normal((6, 3))
        batch = numnet.forward(p, X)
        for i in range(6):
            np.testing.assert_allclose(batch[i], numnet.forward(p, X[i]), rtol=1e-14, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            numnet.forward(net(([[1, 2]], [0])), [1.0, 2.0, 3.0])

    def test_positive_homogeneity_bias_free(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            w1 = rng.standard_normal((4, 3))
            w2 = rng.standard_normal((2, 4))
            x = rng.standard_normal(3)
            c = rng.uniform(0.1, 5)
            base = numnet.forward(net((w1, np.zeros(4)), (w2, np.zeros(2))), x)
            scaled = numnet.forward(net((c * w1, np.zeros(4)), (c * w2, np.zeros(2))), x)
            np.testing.assert_allclose(scaled, c**2 * base, rtol=1e-12, atol=1e-14)

    def test_params_are_read_only(self):
        p = net(([[1.0]], [0.0]))
        with pytest.raises(ValueError):
            p.weights[0][0, 0] = 2.0

    def test_chained_dimensions_enforced(self):
        with pytest.raises(InvalidInputError):
            net(([[1, 2]], [0]), ([[1, 2, 3]], [0]))

    def test_dict_round_trip(self):
        p = random_net(np.random.default_rng(0), [3, 4, 2])
        assert NetworkParams.from_dict(p.to_dict()) == p


class TestElementwise:
    def test_relu_examples(self):
        assert numnet.relu([-1, 0, 2]).tolist() == [0, 0, 2]
        assert not numnet.relu(-np.arange(1, 6)).any()

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)))
    def test_relu_idempotent(self, z):
        np.testing.assert_array_equal(numnet.relu(numnet.relu(z)), numnet.relu(z))

    def test_softmax_examples(self):
        np.testing.assert_allclose(numnet.softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(numnet.softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-15)
        out = numnet.softmax([1000.0, 0.0])
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_softmax_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            numnet.softmax([np.inf, 0.0])
        with pytest.raises(InvalidInputError):
            numnet.softmax([1.0])

    @settings(max_examples=200)
    @given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-50, 50)), st.randoms())
    def test_softmax_sums_to_one_and_permutes(self, z, rnd):
        p = numnet.softmax(z)
        assert abs(p.sum() - 1) <= 1e-12
        assert ((p >= 0) & (p <= 1)).all()
        perm = list(range(z.size))
        rnd.shuffle(perm)
        np.testing.assert_allclose(numnet.softmax(z[perm]), p[perm], rtol=1e-12, atol=1e-300)

    @pytest.mark.parametrize("alpha, t, expected", [(0.5, 2, 1.0), (0.9, -1, 0.1), (0.9, 1, 0.9)])
    def test_pinball_examples(self, alpha, t, expected):
        assert numnet.pinball_loss(t, alpha) == pytest.approx(expected, abs=1e-15)

    @given(st.floats(-1e3, 1e3), st.floats(0.01, 0.99))
    def test_pinball_nonnegative_zero_only_at_zero(self, t, alpha):
        v = numnet.pinball_loss(t, alpha)
        assert v >= 0
        assert (v == 0) == (t == 0)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_pinball_alpha_range(self, alpha):
        with pytest.raises(InvalidInputError):
            numnet.pinball_loss(1.0, alpha)


class TestLosses:
    def test_cross_entropy_zero_at_certainty(self):
        # logit gap large enough that log f_true rounds to 0
        p = net(([[0.0]], [0.0]), ([[0.0], [0.0]], [800.0, 0.0]))
        assert numnet.weighted_cross_entropy(p, [[1.0]], [0], [1.0]).value == 0.0

    def test_cross_entropy_closed_form(self):
        # true-class probabilities 1/2 (weight 2) and 1/4 (weight 1): 2 ln 2 + ln 4
        p = net(([[0.0]], [0.0]), ([[0.0], [0.0]], [0.0, 0.0]))
        q = net(([[0.0]], [0.0]), ([[0.0], [0.0]], [0.0, math.log(3)]))
        v1 = numnet.weighted_cross_entropy(p, [[0.0]], [0], [2.0]).value  # f=1/2, w=2
        v2 = numnet.weighted_cross_entropy(q, [[0.0]], [0], [1.0]).value  # f=1/4, w=1
        assert v1 + v2 == pytest.approx(4 * math.log(2), rel=1e-14)

    def test_mse_examples(self):
        p = net(([[1.0]], [0.0]))
        assert numnet.weighted_mse(p, [[1.0], [2.0]], [1.0, 2.0], [1.0, 1.0]).value == 0.0
        assert numnet.weighted_mse(p, [[1.0]], [3.0], [3.0]).value == 12.0

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_nonpositive_weight_rejected(self, bad):
        p = net(([[1.0], [0.0]], [0.0, 0.0]))
        with pytest.raises(InvalidInputError):
            numnet.weighted_cross_entropy(p, [[1.0], [2.0]], [0, 1], [1.0, bad])
        with pytest.raises(InvalidInputError):
            numnet.weighted_mse(net(([[1.0]], [0.0])), [[1.0]], [0.0], [bad])

    def test_label_range_checked(self):
        p = net(([[1.0], [0.0]], [0.0, 0.0]))
        with pytest.raises(InvalidInputError):
            numnet.weighted_cross_entropy(p, [[1.0]], [2], [1.0])

    def test_extreme_logits_stay_finite(self):
        p = net(([[1.0], [-1.0]], [0.0, 0.0]))
        lv = numnet.weighted_cross_entropy(p, [[1e4]], [1], [1.0])
        assert np.isfinite(lv.value) and np.isfinite(lv.gradient).all()

    @pytest.mark.parametrize("kind", ["cross_entropy", "mse", "pinball"])
    def test_gradient_matches_finite_differences(self, kind):
        rng = np.random.default_rng(11)
        for _ in range(5):
            sizes = [3, 5, 4, 3 if kind == "cross_entropy" else 1]
            p = random_net(rng, sizes)
            assert p.n_params <= 200
            X = rng.standard_normal((9, 3))
            w = rng.uniform(0.5, 4, 9)
            y = rng.integers(0, 3, 9) if kind == "cross_entropy" else rng.standard_normal(9)
            cfg = TrainConfig(loss_kind=kind, quantile_alpha=0.3 if kind == "pinball" else None,
                              n_classes=3)
            g = numnet.loss(p, X, y, w, cfg).gradient
            fd = numnet.numerical_gradient(lambda t: numnet.loss(p.with_flat(t), X, y, w, cfg).value, p.flat())
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5

    @pytest.mark.parametrize("kind", ["cross_entropy", "mse", "pinball"])
    def test_weight_homogeneity(self, kind):
        rng = np.random.default_rng(12)
        p = random_net(rng, [2, 4, 2 if kind == "cross_entropy" else 1])
        X = rng.standard_normal((7, 2))
        y = rng.integers(0, 2, 7) if kind == "cross_entropy" else rng.standard_normal(7)
        cfg = TrainConfig(loss_kind=kind, quantile_alpha=0.7 if kind == "pinball" else None)
        base = numnet.loss(p, X, y, np.ones(7), cfg)
        # c a power of two keeps the scaling exact
        scaled = numnet.loss(p, X, y, np.full(7, 8.0), cfg)
        assert scaled.value == 8.0 * base.value
        np.testing.assert_array_equal(scaled.gradient, 8.0 * base.gradient)

    def test_gradient_length(self):
        p = random_net(np.random.default_rng(0), [3, 4, 2])
        assert numnet.weighted_cross_entropy(p, np.zeros((2, 3)), [0, 1], [1, 1]).gradient.size == p.n_params


def separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 2))
    margin = X[:, 0] + 0.5 * X[:, 1]
    keep = np.abs(margin) > 0.1
    X = X[keep][:n]
    return X, (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)


class TestTrain:
    def test_separable_reaches_high_accuracy(self):
        X, y = separable(260)
        X, y = X[:200], y[:200]
        cfg = TrainConfig(hidden_widths=(8,), epochs=300, learning_rate=1e-2, seed=1)
        p = numnet.train(X, y, np.ones(len(y)), cfg)
        acc = (numnet.predict_proba(p, X).argmax(axis=1) == y).mean()
        assert acc >= 0.99

    def test_convex_last_layer_loss_non_increasing(self):
        # no hidden layer: logistic regression, convex; small steps never go up
        rng = np.random.default_rng(2)
        X = rng.standard_normal((50, 3))
        y = (X @ [1.0, -1.0, 0.5] + 0.3 * rng.standard_normal(50) > 0).astype(int)
        cfg = TrainConfig(hidden_widths=(), epochs=200, learning_rate=1e-3, seed=0)
        _, trace = numnet.train_with_trace(X, y, rng.uniform(0.5, 2, 50), cfg)
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
        assert trace[-1] < trace[0]

    def test_duplicate_row_equals_double_weight(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((20, 2))
        y = rng.integers(0, 2, 20)
        w = rng.uniform(0.5, 2, 20)
        cfg = TrainConfig(hidden_widths=(4,), epochs=30, learning_rate=1e-2, seed=5)
        _, t_dup = numnet.train_with_trace(np.vstack([X, X[:1]]), np.append(y, y[0]), np.append(w, w[0]), cfg)
        w2 = w.copy()
        w2[0] *= 2
        _, t_dbl = numnet.train_with_trace(X, y, w2, cfg)
        # identical objective; only summation order differs
        np.testing.assert_allclose(t_dup, t_dbl, rtol=1e-10)

    @pytest.mark.parametrize("batch", ["full", 7])
    def test_deterministic(self, batch):
        X, y = separable(60, seed=4)
        cfg = TrainConfig(hidden_widths=(5, 3), epochs=20, batch_size=batch, seed=99)
        a, ta = numnet.train_with_trace(X, y, np.ones(len(y)), cfg)
        b, tb = numnet.train_with_trace(X, y, np.ones(len(y)), cfg)
        assert a == b and ta == tb
        c = numnet.train(X, y, np.ones(len(y)), cfg.replace(seed=100))
        assert not a == c

    def test_params_finite_after_training(self):
        X, y = separable(50)
        p = numnet.train(X, y, np.ones(len(y)), TrainConfig(epochs=5))
        assert p.all_finite()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self):
        X = np.array([[1e200], [-1e200]])
        cfg = TrainConfig(hidden_widths=(), loss_kind="mse", epochs=3, learning_rate=1.0)
        with pytest.raises(TrainingDivergedError) as info:
            numnet.train(X, np.array([1e200, -1e200]), np.ones(2), cfg)
        assert info.value.epoch == 0

    def test_minibatch_gradient_scaling_keeps_objective(self):
        # a single batch containing all rows must match full-batch training exactly
        X, y = separable(40, seed=8)
        cfg = TrainConfig(hidden_widths=(4,), epochs=10, seed=3)
        a = numnet.train(X, y, np.ones(len(y)), cfg)
        b = numnet.train(X, y, np.ones(len(y)), cfg.replace(batch_size=len(y)))
        assert a == b

    def test_pinball_training_finds_constant_quantile(self):
        rng = np.random.default_rng(6)
        target = rng.standard_normal(400)
        X = np.zeros((400, 1))
        cfg = TrainConfig(hidden_widths=(), loss_kind="pinball", quantile_alpha=0.2,
                          epochs=3000, learning_rate=5e-3, seed=0)
        p = numnet.train(X, target, np.ones(400), cfg)
        q = numnet.forward(p, [0.0])[0]
        lo, hi = np.sort(target)[[78, 81]]
        assert lo <= q <= hi

    @pytest.mark.parametrize("kwargs", [
        {"learning_rate": 0.0}, {"loss_kind": "pinball"}, {"loss_kind": "pinball", "quantile_alpha": 1.0},
        {"adam_beta1": 1.0}, {"epochs": 0}, {"batch_size": 0}, {"loss_kind": "hinge"},
        {"hidden_widths": (0,)}, {"seed": -1},
    ])
    def test_config_validation(self, kwargs):
        with pytest.raises(InvalidInputError):
            TrainConfig(**kwargs)

    def test_empty_dataset_rejected(self):
        with pytest.raises(InvalidInputError):
            numnet.train(np.zeros((0, 2)), np.zeros(0), np.zeros(0), TrainConfig())
