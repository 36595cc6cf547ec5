import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from timemagnet.autodiff import (
    AdamW,
    GradCheckError,
    OptimizerState,
    ShapeError,
    Tape,
    Tensor,
    adamw_step,
    clip_global_norm,
    global_norm,
    grad_check,
    grad_check_params,
    ops,
    stream,
    weighted_cross_entropy,
)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def _grad(f, *xs):
    ts = [Tensor(x, requires_grad=True) for x in xs]
    with Tape() as tape:
        tape.backward(f(*ts), ts)
    return [t.grad for t in ts]


class TestTape:
    def test_scalar_chain(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            y = x * x + x * 2.0
            tape.backward(y, [x])
        assert x.grad == pytest.approx(8.0)

    def test_non_scalar_loss_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
            with pytest.raises(ShapeError):
                tape.backward(y, [x])

    def test_unreached_param_gets_zero(self):
        x = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            tape.backward(ops.sum(x * x), [x, unused])
        np.testing.assert_array_equal(unused.grad, np.zeros((2, 2)))

    def test_grads_accumulate(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        for _ in range(2):
            with Tape() as tape:
                tape.backward(ops.sum(x * 3.0), [x])
        np.testing.assert_allclose(x.grad, [6.0, 6.0])

    def test_no_recording_without_tape(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = x * 2.0
        assert y.node_id is None

    def test_tape_is_thread_local(self):
        errors = []

        def work(v):
            try:
                x = Tensor(float(v), requires_grad=True)
                with Tape() as tape:
                    y = x * x * x
                    tape.backward(y, [x])
                assert x.grad == pytest.approx(3 * v * v)
            except Exception as e:  # pragma: no cover - surfaced by the assert below
                errors.append(e)

        threads = [threading.Thread(target=work, args=(i + 1,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors


class TestBroadcasting:
    def test_add_broadcast_grad_shapes(self):
        ga, gb = _grad(lambda a, b: ops.sum(a + b), np.ones((3, 4)), np.ones(4))
        np.testing.assert_array_equal(ga, np.ones((3, 4)))
        np.testing.assert_array_equal(gb, np.full(4, 3.0))

    def test_incompatible_shapes_name_both(self):
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3,\)"):
            ops.add(Tensor(np.ones((3, 4))), Tensor(np.ones(3)))

    @given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (3,), elements=finite))
    @settings(max_examples=30, deadline=None)
    def test_mul_matches_numpy(self, a, b):
        np.testing.assert_array_equal(ops.mul(Tensor(a), Tensor(b)).data, a * b)


class TestElementwise:
    def test_gelu_frozen_values(self):
        # frozen from the tanh-approximation oracle
        out = ops.gelu(Tensor(np.array([1.0, -0.5]))).data
        np.testing.assert_allclose(out, [0.8411919906082768, -0.15428599017485606], rtol=0, atol=1e-9)

    @given(arrays(np.float64, (5,), elements=finite))
    @settings(max_examples=30, deadline=None)
    def test_gelu_matches_oracle(self, x):
        np.testing.assert_allclose(ops.gelu(Tensor(x)).data, oracles.gelu_tanh(x), atol=1e-9)

    @given(arrays(np.float64, (3, 4), elements=st.floats(-30, 30)))
    @settings(max_examples=30, deadline=None)
    def test_softmax_rows_sum_to_one(self, x):
        s = ops.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(s, oracles.softmax_rows(x), atol=1e-12)

    def test_log_softmax_stable_for_large_logits(self):
        out = ops.log_softmax(Tensor(np.array([[1000.0, 0.0]])), axis=-1).data
        np.testing.assert_allclose(out, [[0.0, -1000.0]])

    def test_clip_gradient_only_inside(self):
        (g,) = _grad(lambda x: ops.sum(ops.clip(x, lo=0.0, hi=1.0)), np.array([-1.0, 0.5, 2.0]))
        np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])

    @pytest.mark.parametrize("kind", ["relu", "leaky_relu", "elu", "sigmoid", "tanh", "silu", "gelu"])
    def test_activation_gradients(self, kind):
        x = Tensor(np.array([-1.3, -0.2, 0.4, 2.1]))
        err = grad_check(lambda t: ops.sum(ops.activation(t, kind) * t), x)
        assert err < 1e-7


class TestReductionsAndShapes:
    def test_max_gradient_goes_to_first_argmax(self):
        (g,) = _grad(lambda x: ops.max(x, axis=-1).sum(), np.array([[1.0, 3.0, 3.0]]))
        np.testing.assert_array_equal(g, [[0.0, 1.0, 0.0]])

    def test_getitem_advanced_accumulates(self):
        idx = np.array([0, 0, 2])
        (g,) = _grad(lambda x: ops.sum(ops.getitem(x, idx)), np.zeros(3))
        np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])

    def test_index_add_forward_and_back(self):
        src = np.arange(6.0).reshape(3, 2)
        out = ops.index_add(4, np.array([1, 1, 3]), Tensor(src)).data
        np.testing.assert_array_equal(out, [[0, 0], [2, 4], [0, 0], [4, 5]])
        err = grad_check(lambda t: ops.sum(ops.index_add(4, np.array([1, 1, 3]), t) ** 2), Tensor(src))
        assert err < 1e-7

    @pytest.mark.parametrize("op", ["concat", "stack", "transpose", "reshape", "flip", "mean"])
    def test_shape_op_gradients(self, op):
        rng = np.random.default_rng(1)
        a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3)))
        probe = rng.normal(size=(4, 3)) if op == "concat" else None
        fns = {
            "concat": lambda: ops.sum(ops.concat([a, b], axis=0) * probe),
            "stack": lambda: ops.sum(ops.stack([a, b], axis=1) ** 2),
            "transpose": lambda: ops.sum(ops.transpose(a) * np.arange(6.0).reshape(3, 2)),
            "reshape": lambda: ops.sum(ops.reshape(a, (3, 2)) ** 3),
            "flip": lambda: ops.sum(ops.flip(a, 1) * np.arange(6.0).reshape(2, 3)),
            "mean": lambda: ops.sum(ops.mean(a * b, axis=0) ** 2),
        }
        assert grad_check_params(fns[op], [a, b]) < 1e-7

    def test_matmul_batch_broadcast(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.normal(size=(2, 3, 4)))
        w = Tensor(rng.normal(size=(4, 5)))
        np.testing.assert_allclose(ops.matmul(a, w).data, a.data @ w.data)
        assert grad_check_params(lambda: ops.sum(ops.matmul(a, w) ** 2), [a, w]) < 1e-7

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


class TestConvolution:
    def test_conv_exact_on_integers(self):
        rng = np.random.default_rng(3)
        x = rng.integers(-4, 5, size=(2, 3, 5, 6)).astype(float)
        w = rng.integers(-3, 4, size=(4, 3, 3, 3)).astype(float)
        b = rng.integers(-2, 3, size=4).astype(float)
        np.testing.assert_array_equal(ops.conv2d(Tensor(x), Tensor(w), Tensor(b)).data,
                                      oracles.conv2d_loop(x, w, b))

    def test_conv_float_matches_loop(self):
        rng = np.random.default_rng(4)
        x, w = rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3))
        np.testing.assert_allclose(ops.conv2d(Tensor(x), Tensor(w)).data, oracles.conv2d_loop(x, w), atol=1e-12)

    def test_conv_1x1_no_padding(self):
        rng = np.random.default_rng(5)
        x, w = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(1, 3, 1, 1))
        np.testing.assert_allclose(ops.conv2d(Tensor(x), Tensor(w), padding=0).data,
                                   oracles.conv2d_loop(x, w, padding=0), atol=1e-12)

    def test_conv_channel_mismatch(self):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_conv_gradcheck(self):
        rng = np.random.default_rng(6)
        x, w, b = (Tensor(rng.normal(size=s)) for s in [(2, 2, 4, 3), (3, 2, 3, 3), (3,)])
        probe = rng.normal(size=(2, 3, 4, 3))
        assert grad_check_params(lambda: ops.sum(ops.conv2d(x, w, b) * probe), [x, w, b]) < 1e-7

    def test_maxpool_matches_loop_and_rejects_odd(self):
        x = np.random.default_rng(7).normal(size=(2, 3, 4, 6))
        np.testing.assert_array_equal(ops.max_pool2x2(Tensor(x)).data, oracles.maxpool_loop(x))
        with pytest.raises(ShapeError):
            ops.max_pool2x2(Tensor(np.ones((1, 1, 3, 4))))


class TestOptim:
    def test_adamw_matches_scalar_oracle(self):
        p = Tensor(np.array([1.0]))
        state = OptimizerState(lr=1e-2, weight_decay=0.1)
        for g in [0.5, -0.25, 1.0]:
            adamw_step([p], [np.array([g])], state)
        # frozen from the scalar oracle
        assert p.data[0] == pytest.approx(0.9777811663376385, abs=1e-12)
        assert p.data[0] == pytest.approx(oracles.adamw_scalar(1.0, [0.5, -0.25, 1.0], 1e-2, 0.1), abs=1e-15)

    def test_adamw_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adamw_step([Tensor(np.ones(3))], [np.ones(2)], OptimizerState())

    def test_zero_lr_leaves_params(self):
        p = Tensor(np.array([1.0, -2.0]))
        opt = AdamW([p], lr=0.0, weight_decay=0.5)
        opt.step([np.array([1.0, 1.0])])
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_clip_global_norm(self):
        grads = [np.array([3.0, 0.0]), np.array([[4.0]])]
        out = clip_global_norm(grads, 1.0)
        assert global_norm(out) == pytest.approx(1.0)
        np.testing.assert_allclose(out[0], [0.6, 0.0])
        same = clip_global_norm(grads, 10.0)
        np.testing.assert_array_equal(same[0], grads[0])

    def test_weighted_ce_uniform_logits(self):
        loss = weighted_cross_entropy(Tensor(np.zeros((4, 7))), np.array([0, 1, 2, 3]))
        assert loss.item() == pytest.approx(np.log(7))

    def test_weighted_ce_normalised_by_selected_weights(self):
        rng = np.random.default_rng(8)
        logits = rng.normal(size=(3, 4))
        labels = np.array([0, 2, 2])
        w = np.array([2.0, 1.0, 0.5, 1.0])
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        ref = -sum(w[y] * logp[i, y] for i, y in enumerate(labels)) / w[labels].sum()
        assert weighted_cross_entropy(Tensor(logits), labels, w).item() == pytest.approx(ref, abs=1e-12)

    def test_weighted_ce_label_out_of_range(self):
        with pytest.raises(ValueError, match="label 7"):
            weighted_cross_entropy(Tensor(np.zeros((1, 7))), np.array([7]))


class TestRng:
    def test_streams_reproducible_and_distinct(self):
        a = stream(42, "x", 1).random(4)
        np.testing.assert_array_equal(a, stream(42, "x", 1).random(4))
        assert not np.array_equal(a, stream(42, "x", 2).random(4))
        assert not np.array_equal(a, stream(43, "x", 1).random(4))


class TestGradCheck:
    def test_detects_wrong_gradient(self):
        from timemagnet.autodiff.tensor import record

        def bad_square(x):
            return record("bad", (x,), x.data ** 2, lambda g: (g * 3.0 * x.data,))

        x = Tensor(np.array([1.0, 2.0]))
        with pytest.raises(GradCheckError):
            grad_check(lambda t: ops.sum(bad_square(t)), x, tol=1e-4)

    def test_restores_grad_state(self):
        x = Tensor(np.array([1.0]))
        grad_check(lambda t: ops.sum(t * t), x)
        assert x.grad is None and not x.requires_grad
