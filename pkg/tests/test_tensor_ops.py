"""Forward behaviour of the tensor ops against direct definitions."""
import numpy as np
import pytest

from app.tensor import SGD, Parameter, Tape, Tensor, sgd_step
from app.tensor import ops


def naive_conv2d(x, w, stride, padding, groups):
    """Nested-loop cross-correlation; the reference the vectorized op must match."""
    n, c, h, wd = x.shape
    out_c, group_c, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (wd + 2 * padding - kw) // stride + 1
    per_group = out_c // groups
    out = np.zeros((n, out_c, out_h, out_w))
    for b in range(n):
        for o in range(out_c):
            g = o // per_group
            for i in range(out_h):
                for j in range(out_w):
                    window = xp[b, g * group_c:(g + 1) * group_c,
                                i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, o, i, j] = np.sum(window * w[o])
    return out


class TestConv2d:
    """conv2d matches the nested-loop definition."""

    @pytest.mark.parametrize("stride,padding,groups,in_c,out_c,kernel", [
        (1, 0, 1, 3, 4, 1),
        (1, 1, 1, 3, 5, 3),
        (2, 1, 1, 3, 11, 3),
        (2, 1, 6, 6, 6, 3),
        (1, 1, 2, 4, 6, 3),
    ])
    def test_matches_reference(self, rng, stride, padding, groups, in_c, out_c, kernel):
        x = rng.normal(size=(2, in_c, 7, 6))
        w = rng.normal(size=(out_c, in_c // groups, kernel, kernel))
        out = ops.conv2d(Tensor(x), Tensor(w), stride, padding, groups)
        np.testing.assert_allclose(out.numpy(), naive_conv2d(x, w, stride, padding, groups),
                                   rtol=1e-10, atol=1e-10)

    def test_output_size_formula(self):
        assert ops.conv_output_size(64, 3, 2, 1) == 32
        assert ops.conv_output_size(32, 3, 1, 1) == 32
        assert ops.conv_output_size(7, 3, 2, 1) == 4

    def test_channel_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="channel mismatch"):
            ops.conv2d(Tensor(rng.normal(size=(1, 3, 4, 4))), Tensor(rng.normal(size=(2, 4, 1, 1))))

    def test_kernel_larger_than_input_rejected(self, rng):
        with pytest.raises(ValueError, match="does not fit"):
            ops.conv2d(Tensor(rng.normal(size=(1, 1, 2, 2))), Tensor(rng.normal(size=(1, 1, 3, 3))))

    def test_float32_stays_float32(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 5, 5)).astype(np.float32))
        w = Tensor(rng.normal(size=(3, 2, 3, 3)).astype(np.float32))
        assert ops.conv2d(x, w, padding=1).dtype == np.float32


class TestBatchNorm:
    """Training uses batch statistics; inference uses the running buffers."""

    def test_training_normalizes_per_channel(self, rng):
        x = Tensor(rng.normal(3.0, 2.0, size=(4, 3, 5, 5)))
        gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
        out = ops.batchnorm(x, gamma, beta, np.zeros(3), np.ones(3), training=True, eps=1e-12)
        np.testing.assert_allclose(out.numpy().mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.numpy().var(axis=(0, 2, 3)), 1.0, rtol=1e-6)

    def test_running_stats_update_in_place(self, rng):
        x = rng.normal(1.0, 3.0, size=(4, 2, 3, 3))
        mean, var = np.zeros(2), np.ones(2)
        ops.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), mean, var,
                      training=True, momentum=0.9)
        np.testing.assert_allclose(mean, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))

    def test_inference_uses_running_stats(self):
        x = Tensor(np.full((1, 1, 2, 2), 5.0))
        out = ops.batchnorm(x, Tensor([2.0]), Tensor([1.0]), np.array([3.0]), np.array([4.0]),
                            training=False, eps=0.0)
        np.testing.assert_allclose(out.numpy(), 2.0 * (5.0 - 3.0) / 2.0 + 1.0)

    def test_inference_leaves_buffers_alone(self, rng):
        mean, var = np.array([0.5]), np.array([2.0])
        ops.batchnorm(Tensor(rng.normal(size=(2, 1, 3, 3))), Tensor([1.0]), Tensor([0.0]),
                      mean, var, training=False)
        assert mean[0] == 0.5 and var[0] == 2.0

    def test_single_value_per_channel_rejected_in_training(self):
        with pytest.raises(ValueError, match="more than one value"):
            ops.batchnorm(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                          np.zeros(2), np.ones(2), training=True)


class TestElementwise:

    def test_relu(self):
        out = ops.relu(Tensor([[-1.0, 0.0, 2.5]]))
        np.testing.assert_array_equal(out.numpy(), [[0.0, 0.0, 2.5]])

    def test_sigmoid_stays_inside_open_interval(self):
        out = ops.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0], dtype=np.float32))).numpy()
        assert 0.0 < out[0] < out[1] < out[2] < 1.0
        assert out[1] == pytest.approx(0.5)

    def test_unknown_activation(self):
        with pytest.raises(ValueError, match="unknown activation"):
            ops.activation(Tensor([1.0]), "tanh")

    def test_add_needs_equal_shapes(self):
        with pytest.raises(ValueError, match="equal shapes"):
            ops.add(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 1))))

    def test_global_avgpool(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        np.testing.assert_allclose(ops.global_avgpool(Tensor(x)).numpy(), x.mean(axis=(2, 3)))

    def test_linear(self, rng):
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)
        np.testing.assert_allclose(ops.linear(Tensor(x), Tensor(w), Tensor(b)).numpy(), x @ w.T + b)


class TestLosses:

    def test_mse(self):
        loss = ops.mean_squared_error(Tensor([0.5, 1.0]), np.array([0.0, 1.0]))
        assert loss.item() == pytest.approx(0.125)

    def test_mae(self):
        loss = ops.mean_absolute_error(Tensor([0.5, 0.25]), np.array([0.0, 1.0]))
        assert loss.item() == pytest.approx(0.625)

    def test_cross_entropy_uniform_logits(self):
        loss = ops.softmax_cross_entropy(Tensor(np.zeros((2, 4))), np.array([0, 3]))
        assert loss.item() == pytest.approx(np.log(4.0))

    def test_cross_entropy_label_out_of_range(self):
        with pytest.raises(ValueError, match="labels must lie"):
            ops.softmax_cross_entropy(Tensor(np.zeros((1, 3))), np.array([3]))

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            ops.mean_squared_error(Tensor(np.zeros(0)), np.zeros(0))


class TestTape:

    def test_replay_twice_rejected(self):
        p = Parameter([1.0, 2.0], "p", dtype=np.float64)
        tape = Tape()
        loss = ops.weighted_sum(p, np.ones(2), tape=tape)
        tape.backward(loss)
        with pytest.raises(RuntimeError, match="already replayed"):
            tape.backward(loss)

    def test_non_scalar_loss_rejected(self):
        p = Parameter([1.0, 2.0], "p", dtype=np.float64)
        tape = Tape()
        out = ops.relu(p, tape=tape)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(out)

    def test_unreached_parameter_gets_zero_grad(self):
        used = Parameter([1.0, 2.0], "used", dtype=np.float64)
        unused = Parameter([3.0], "unused", dtype=np.float64)
        unused.grad = np.array([9.0])
        tape = Tape()
        tape.backward(ops.weighted_sum(used, np.array([2.0, 3.0]), tape=tape), [used, unused])
        np.testing.assert_array_equal(used.grad, [2.0, 3.0])
        np.testing.assert_array_equal(unused.grad, [0.0])

    def test_shared_input_accumulates(self):
        p = Parameter([2.0], "p", dtype=np.float64)
        tape = Tape()
        doubled = ops.add(p, p, tape=tape)
        tape.backward(ops.weighted_sum(doubled, np.array([1.0]), tape=tape))
        np.testing.assert_array_equal(p.grad, [2.0])

    def test_untaped_op_records_nothing(self):
        p = Parameter([1.0], "p")
        tape = Tape()
        out = ops.relu(p)
        assert out.requires_grad and len(tape) == 0


class TestSGD:
    """v <- m*v + g + wd*w; w <- w - lr*v."""

    def test_single_step(self):
        p = Parameter([1.0], "w", dtype=np.float64)
        p.grad = np.array([0.5])
        state = {}
        sgd_step([p], lr=0.1, weight_decay=0.1, momentum=0.9, state=state)
        assert p.data[0] == pytest.approx(1.0 - 0.1 * (0.5 + 0.1))
        assert state["w"][0] == pytest.approx(0.6)

    def test_momentum_carries_over(self):
        p = Parameter([0.0], "w", dtype=np.float64)
        optimizer = SGD([p], momentum=0.5)
        for _ in range(2):
            p.grad = np.array([1.0])
            optimizer.step(1.0)
        # v1 = 1, v2 = 0.5 + 1
        assert p.data[0] == pytest.approx(-2.5)

    def test_missing_gradient_rejected(self):
        p = Parameter([0.0], "w")
        p.grad = None
        with pytest.raises(ValueError, match="no gradient"):
            sgd_step([p], 0.1, 0.0, 0.0, {})
