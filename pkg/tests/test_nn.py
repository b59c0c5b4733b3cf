import numpy as np
import pytest

from eegcnn.nn import (ARCHITECTURES, Adam, AdamState, Conv, Dense, Dropout, EarlyStopping, Flatten, MaxPool,
                       Model, ReLU, ShapeError, Softmax, TrainConfig, adam_step, build_model,
                       check_model_gradients, cross_entropy, one_hot, train)
from eegcnn.nn.layers import same_padding

from oracles import conv_same_loop, numeric_grad


def layer_grad_errors(layer, x, seed=0):
    """Max abs error of backprop vs central differences for loss = sum(forward(x) * G)."""
    G = np.random.default_rng(seed + 1).normal(size=layer.forward(x, train=True, rng=np.random.default_rng(seed)).shape)

    def loss():
        return float(np.sum(layer.forward(x, train=True, rng=np.random.default_rng(seed)) * G))

    layer.forward(x, train=True, rng=np.random.default_rng(seed))
    dx = layer.backward(G)
    errs = {"x": np.max(np.abs(dx - numeric_grad(loss, x)))}
    analytic = {k: g.copy() for k, g in layer.grads.items()}
    for k, p in layer.params.items():
        errs[k] = np.max(np.abs(analytic[k] - numeric_grad(loss, p)))
    return errs


def built(layer, shape, seed=0):
    layer.build(shape, np.random.default_rng(seed))
    return layer


class TestConv:
    @pytest.mark.parametrize("kernel,shape", [((3, 3), (5, 7, 2)), ((2, 2), (4, 5, 3)), ((5, 5), (6, 6, 1)),
                                              ((2, 1), (5, 4, 2)), ((3,), (9, 2)), ((3, 3, 2), (4, 5, 6, 2))])
    def test_matches_loop_oracle(self, kernel, shape):
        rng = np.random.default_rng(3)
        conv = built(Conv(kernel, 4), shape)
        conv.params["b"][:] = rng.normal(size=4)
        x = rng.normal(size=(2,) + shape)
        np.testing.assert_allclose(conv.forward(x), conv_same_loop(x, conv.params["W"], conv.params["b"]),
                                   rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kernel,shape", [((3, 3), (4, 5, 2)), ((2, 2), (3, 4, 2)), ((3, 2, 2), (3, 3, 4, 2))])
    def test_gradients(self, kernel, shape):
        conv = built(Conv(kernel, 3), shape)
        x = np.random.default_rng(0).normal(size=(2,) + shape)
        assert max(layer_grad_errors(conv, x).values()) < 1e-7

    def test_full_convolution_1d(self):
        # full convolution of x with k == same-correlation of zero-prepended x with the reversed kernel
        x, k = np.array([1.0, 2.0]), np.array([3.0, 4.0])
        conv = built(Conv((2,), 1), (3, 1))
        conv.params["W"][:, 0, 0] = k[::-1]
        xin = np.concatenate([np.zeros(len(k) - 1), x]).reshape(1, 3, 1)
        out = conv.forward(xin).ravel()
        assert out.tolist() == [3.0, 10.0, 8.0]
        assert out.tolist() == np.convolve(x, k).tolist()

    def test_identity_kernel(self):
        x = np.random.default_rng(1).normal(size=(3, 12, 20, 1))
        conv = built(Conv((3, 3), 1), (12, 20, 1))
        conv.params["W"][:] = 0
        conv.params["W"][1, 1, 0, 0] = 1.0
        assert np.array_equal(conv.forward(x), x)

    def test_same_padding_even_kernel_pads_after(self):
        assert same_padding((2, 5, 1)) == [(0, 1), (2, 2), (0, 0)]

    def test_same_padding_preserves_shape(self):
        conv = built(Conv((5, 5), 32), (12, 1000, 1))
        assert conv.forward(np.zeros((1, 12, 1000, 1))).shape == (1, 12, 1000, 32)

    def test_rank_mismatch(self):
        with pytest.raises(ShapeError):
            Conv((3, 3), 2).build((5, 5, 5, 1), None)

    def test_init_bounds(self):
        conv = built(Conv((5, 5), 32), (12, 50, 1))
        bound = np.sqrt(6 / 25)
        assert np.abs(conv.params["W"]).max() <= bound
        assert np.all(conv.params["b"] == 0)


class TestMaxPool:
    def test_forward_truncates(self):
        x = np.arange(5 * 7, dtype=float).reshape(1, 5, 7, 1)
        pool = built(MaxPool((2, 2)), (5, 7, 1))
        out = pool.forward(x)
        assert out.shape == (1, 2, 3, 1)
        assert out[0, :, :, 0].tolist() == [[8, 10, 12], [22, 24, 26]]

    def test_small_examples(self):
        pool = built(MaxPool((2, 2)), (2, 2, 1))
        assert pool.forward(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)).ravel().tolist() == [4.0]
        big = built(MaxPool((2, 2)), (12, 1000, 1))
        out = big.forward(np.full((1, 12, 1000, 1), 2.5))
        assert out.shape == (1, 6, 500, 1) and np.all(out == 2.5)

    def test_gradients(self):
        rng = np.random.default_rng(0)
        # a permutation of spaced values: no ties, no winner flips under perturbation
        x = (rng.permutation(2 * 5 * 6 * 2) * 0.1).reshape(2, 5, 6, 2)
        pool = built(MaxPool((2, 2)), (5, 6, 2))
        assert layer_grad_errors(pool, x)["x"] < 1e-8

    def test_gradient_routes_to_winner(self):
        x = np.array([[1.0, 4.0], [3.0, 2.0]]).reshape(1, 2, 2, 1)
        pool = built(MaxPool((2, 2)), (2, 2, 1))
        pool.forward(x, train=True)
        dx = pool.backward(np.ones((1, 1, 1, 1)))
        assert dx[0, :, :, 0].tolist() == [[0, 1], [0, 0]]

    def test_3d(self):
        x = np.random.default_rng(2).permutation(4 * 5 * 6).astype(float).reshape(1, 4, 5, 6, 1)
        pool = built(MaxPool((2, 2, 2)), (4, 5, 6, 1))
        out = pool.forward(x)
        ref = x[0, :4, :4, :6, 0].reshape(2, 2, 2, 2, 3, 2).max(axis=(1, 3, 5))
        assert np.array_equal(out[0, ..., 0], ref)

    def test_too_large(self):
        with pytest.raises(ShapeError):
            MaxPool((2, 2)).build((1, 4, 1), None)


class TestDropout:
    def test_eval_is_identity(self):
        x = np.ones((4, 10))
        assert np.array_equal(Dropout(0.5).forward(x), x)

    def test_drop_fraction_and_scale(self):
        x = np.ones((1000, 1000))
        out = Dropout(0.5).forward(x, train=True, rng=np.random.default_rng(0))
        assert abs(np.mean(out == 0) - 0.5) < 0.01
        assert set(np.unique(out)) == {0.0, 2.0}
        assert abs(out.mean() - 1.0) < 0.02

    def test_zero_rate_train_is_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 10))
        assert np.array_equal(Dropout(0.0).forward(x, train=True, rng=np.random.default_rng(0)), x)

    def test_gradients(self):
        x = np.random.default_rng(0).normal(size=(3, 8))
        assert layer_grad_errors(Dropout(0.3), x)["x"] < 1e-8

    def test_rejects_p_one(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestDenseReluSoftmax:
    def test_dense_gradients(self):
        d = built(Dense(4), (6,))
        x = np.random.default_rng(0).normal(size=(3, 6))
        assert max(layer_grad_errors(d, x).values()) < 1e-8

    def test_relu_gradients(self):
        x = np.random.default_rng(0).normal(size=(3, 8))
        x[np.abs(x) < 1e-3] = 0.5
        assert layer_grad_errors(ReLU(), x)["x"] < 1e-8

    def test_flatten_gradients(self):
        f = built(Flatten(), (2, 3, 2))
        x = np.random.default_rng(0).normal(size=(2, 2, 3, 2))
        assert layer_grad_errors(f, x)["x"] < 1e-8

    def test_softmax_gradients(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        assert layer_grad_errors(Softmax(), x)["x"] < 1e-8

    def test_softmax_sums_to_one_and_is_stable(self):
        p = Softmax().forward(np.array([[1000.0, 0.0], [-1000.0, -1000.0], [3.0, 1.0]]))
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.isfinite(p))
        assert p[1].tolist() == [0.5, 0.5]

    def test_backward_without_forward(self):
        with pytest.raises(RuntimeError):
            ReLU().backward(np.ones((1, 2)))


def small_model(seed=0):
    return Model([Conv((3, 3), 4), ReLU(), MaxPool((2, 2)), Flatten(), Dense(2), Softmax()], (4, 6, 1),
                 seed=seed)


class TestModel:
    @pytest.mark.parametrize("name", ARCHITECTURES)
    def test_architecture_shapes(self, name):
        m = build_model(name, (12, 50, 1))
        p = m.forward(np.random.default_rng(0).normal(size=(3, 12, 50, 1)))
        assert p.shape == (3, 2)
        assert np.allclose(p.sum(axis=1), 1, atol=1e-12)
        assert m.n_conv == int(name[0])

    @pytest.mark.parametrize("name", ARCHITECTURES)
    def test_3d_variant(self, name):
        m = build_model(name, (4, 5, 20, 1))
        assert m.forward(np.zeros((2, 4, 5, 20, 1))).shape == (2, 2)
        assert m.layers[0].kernel == (5, 5, 5)

    def test_table_3conv_layout(self):
        m = build_model("3Conv", (12, 50, 1))
        kinds = [(l.kind, getattr(l, "kernel", getattr(l, "units", getattr(l, "p", None)))) for l in m.layers]
        assert kinds == [("conv", (5, 5)), ("relu", None), ("conv", (3, 3)), ("relu", None),
                         ("maxpool", None), ("conv", (3, 3)), ("relu", None), ("dropout", 0.5),
                         ("flatten", None), ("dense", 128), ("relu", None), ("dropout", 0.5),
                         ("dense", 2), ("softmax", None)]

    def test_zero_weights_give_uniform_output(self):
        m = small_model()
        m.set_weights({k: np.zeros_like(v) for k, v in m.parameters()})
        p = m.forward(np.random.default_rng(0).normal(size=(5, 4, 6, 1)))
        assert np.array_equal(p, np.full((5, 2), 0.5))

    def test_full_gradient_check(self):
        m = small_model(1)
        x = np.random.default_rng(2).normal(size=(3, 4, 6, 1))
        res = check_model_gradients(m, x, one_hot([0, 1, 1]), h=1e-5, per_param=None)
        assert res.worst < 1e-6

    def test_perfect_prediction_zero_gradient(self):
        m = small_model()
        m.set_weights({k: np.zeros_like(v) for k, v in m.parameters()})
        m.layers[4].params["b"][:] = [-50.0, 50.0]
        m.forward(np.ones((2, 4, 6, 1)), mode="train")
        grads = dict(m.backward(one_hot([1, 1])))
        assert all(np.abs(g).max() < 1e-20 for g in grads.values())

    def test_duplicated_batch_same_gradient(self):
        x = np.random.default_rng(0).normal(size=(3, 4, 6, 1))
        y = one_hot([0, 1, 0])
        m = small_model()
        m.forward(x, mode="train")
        g1 = {k: v.copy() for k, v in m.backward(y)}
        m.forward(np.concatenate([x, x]), mode="train")
        g2 = dict(m.backward(np.concatenate([y, y])))
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)

    def test_shape_error_names_layer(self):
        m = build_model("3Conv", (12, 50, 1))
        with pytest.raises(ShapeError, match="layer 0"):
            m.forward(np.zeros((1, 12, 49, 1)))

    def test_backward_requires_train_forward(self):
        m = small_model()
        m.forward(np.zeros((1, 4, 6, 1)))
        with pytest.raises(RuntimeError):
            m.backward(one_hot([0]))

    def test_save_load_roundtrip(self, tmp_path):
        m = build_model("4Conv", (12, 20, 1), seed=5)
        path = m.save(tmp_path / "m.npz")
        m2 = Model.load(path)
        x = np.random.default_rng(0).normal(size=(2, 12, 20, 1))
        assert np.array_equal(m.forward(x), m2.forward(x))
        assert m2.to_config() == m.to_config()

    def test_cross_entropy(self):
        p = np.array([[0.25, 0.75], [0.5, 0.5]])
        assert cross_entropy(p, one_hot([1, 0])) == pytest.approx(-(np.log(0.75) + np.log(0.5)) / 2, rel=1e-15)


class TestAdam:
    def test_first_step_closed_form(self):
        # bias correction makes the first step lr * g / (|g| + eps')
        p = {"w": np.array([1.0, -2.0, 0.5])}
        g = {"w": np.array([0.3, -4.0, 0.0])}
        adam_step(p, g, AdamState(), lr=0.01, eps=1e-8)
        expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g["w"] / (np.abs(g["w"]) + 1e-8)
        np.testing.assert_allclose(p["w"], expected, rtol=1e-15)

    def test_two_steps_against_recurrence(self):
        b1, b2, lr, eps = 0.9, 0.999, 0.1, 1e-8
        gs = [2.0, -1.0]
        w, m, v = 1.0, 0.0, 0.0
        p = {"w": np.array([1.0])}
        st = AdamState()
        for t, gv in enumerate(gs, start=1):
            m = b1 * m + (1 - b1) * gv
            v = b2 * v + (1 - b2) * gv * gv
            w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
            adam_step(p, {"w": np.array([gv])}, st, lr, b1, b2, eps)
        assert p["w"][0] == pytest.approx(w, rel=1e-14)
        assert st.t == 2

    def test_zero_gradient_keeps_params(self):
        p = {"w": np.array([1.5, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1)
        assert p["w"].tolist() == [1.5, -2.0]

    def test_hundred_steps_bitwise_deterministic(self):
        def run():
            m = small_model(3)
            opt = Adam(lr=0.01)
            x = np.random.default_rng(1).normal(size=(4, 4, 6, 1))
            for _ in range(100):
                m.forward(x, mode="train")
                m.backward(one_hot([0, 1, 1, 0]))
                opt.step(m)
            return m.get_weights()
        a, b = run(), run()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_minimizes_quadratic(self):
        p = {"w": np.array([5.0, -3.0])}
        st = AdamState()
        for _ in range(2000):
            adam_step(p, {"w": 2 * p["w"]}, st, lr=0.05)
        assert np.abs(p["w"]).max() < 1e-2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())


def blobs(n=120, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(size=(n, 4, 6, 1)) * 0.5
    x[y == 1, :2] += 1.5
    return x, y


class TestTraining:
    def test_learns_separable_blobs(self):
        x, y = blobs()
        model, log = train(small_model(), x, y, TrainConfig(learning_rate=1e-2, batch_size=16, max_epochs=30,
                                                            patience=5, seed=0))
        assert np.mean(np.argmax(model.predict(x), axis=1) == y) == 1.0
        assert log.epochs[0].train_loss > log.epochs[log.best_epoch - 1].train_loss

    def test_deterministic(self):
        x, y = blobs(60)
        cfg = TrainConfig(batch_size=16, max_epochs=3, seed=4)
        m1, l1 = train(small_model(), x, y, cfg)
        m2, l2 = train(small_model(), x, y, cfg)
        assert l1 == l2
        for (k, a), (_, b) in zip(m1.parameters(), m2.parameters()):
            assert np.array_equal(a, b)

    def test_single_class_rejected(self):
        x, _ = blobs(20)
        with pytest.raises(ValueError, match="single class"):
            train(small_model(), x, np.zeros(20, dtype=int))

    def test_early_stopping_patience(self):
        es = EarlyStopping(3)
        losses = [1.0, 0.8, 0.9, 0.85, 0.81]
        stops = [es.update(e, l) for e, l in enumerate(losses, start=1)]
        assert stops == [False, False, False, False, True]
        assert es.best_epoch == 2

    def test_patience_one_keeps_first_epoch(self):
        m = small_model()
        first = m.get_weights()
        es = EarlyStopping(1)
        assert es.update(1, 0.5, m) is False
        for _, p in m.parameters():
            p += 1.0
        assert es.update(2, 0.6, m) is True
        assert es.best_epoch == 1
        assert all(np.array_equal(es.best_weights[k], first[k]) for k in first)

    def test_returns_best_epoch_model(self):
        x, y = blobs(60)
        cfg = TrainConfig(learning_rate=0.05, batch_size=8, max_epochs=12, patience=2)
        model, log = train(small_model(), x, y, cfg)
        best = log.epochs[log.best_epoch - 1]
        assert best.val_loss == min(r.val_loss for r in log.epochs)
        assert log.stopped_epoch >= log.best_epoch
        # the returned weights reproduce the best epoch's validation loss
        from eegcnn.nn.train import evaluate, stratified_split
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        _, va = stratified_split(y, cfg.validation_fraction, np.random.default_rng(seeds[1]))
        assert evaluate(model, x[va], y[va])[0] == pytest.approx(best.val_loss, rel=1e-12)

    def test_train_log_csv(self, tmp_path):
        x, y = blobs(40)
        _, log = train(small_model(), x, y, TrainConfig(max_epochs=2, batch_size=8))
        lines = log.write_csv(tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_acc"
        assert len(lines) == 3

    def test_adam_object_steps_model(self):
        m = small_model()
        before = m.get_weights()
        m.forward(np.ones((2, 4, 6, 1)), mode="train")
        m.backward(one_hot([0, 1]))
        Adam(lr=0.1).step(m)
        assert any(not np.array_equal(before[k], v) for k, v in m.parameters())
