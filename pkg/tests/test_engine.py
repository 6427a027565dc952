"""Tensor/tape engine: forward semantics, backward rules, recording discipline."""

import numpy as np
import pytest

from advforge.engine import ShapeMismatch, Tape, Tensor, frozen, record
from advforge.engine import ops

import oracles


class TestForwardOps:
    def test_add(self):
        out = ops.add(Tensor([1, 2]), Tensor([3, 4]))
        assert np.array_equal(out.data, [4, 6])

    def test_subtract(self):
        assert np.array_equal(ops.subtract(Tensor([5, 2]), Tensor([1, 4])).data, [4, -2])

    def test_multiply(self):
        assert np.array_equal(ops.multiply(Tensor([2, 3]), Tensor([4, 5])).data, [8, 15])

    def test_scale(self):
        assert np.array_equal(ops.scale(Tensor([1, -2]), 2.5).data, [2.5, -5.0])

    def test_relu(self):
        assert np.array_equal(ops.relu(Tensor([-1, 0, 2])).data, [0, 0, 2])

    def test_sign_zero_is_zero(self):
        assert np.array_equal(ops.sign(Tensor([-3.0, 0.0, 0.5])).data, [-1, 0, 1])

    def test_clamp(self):
        assert np.array_equal(ops.clamp(Tensor([-1.0, 0.5, 2.0]), 0.0, 1.0).data, [0, 0.5, 1])

    def test_matmul(self):
        a = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        b = Tensor(np.arange(12, dtype=np.float32).reshape(3, 4))
        assert np.allclose(ops.matmul(a, b).data, a.data @ b.data)

    def test_conv2d_ones(self):
        # hand-computed sliding-window sum: every 2x2 window of ones sums to 4
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 2, 2)))
        assert np.array_equal(ops.conv2d(x, w).data, np.full((1, 1, 2, 2), 4.0))

    def test_conv2d_matches_reference(self, rng):
        x = rng.standard_normal((2, 3, 9, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        for stride, pad in [(1, 0), (1, 1), (2, 1), (3, 2)]:
            got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
            want = oracles.conv2d_ref(x, w, b, stride=stride, pad=pad)
            assert np.allclose(got, want, atol=1e-4), (stride, pad)

    def test_maxpool_matches_reference(self, rng):
        x = rng.standard_normal((3, 2, 8, 6)).astype(np.float32)
        got = ops.maxpool2d(Tensor(x), 2).data
        assert np.allclose(got, oracles.maxpool2d_ref(x, 2))

    def test_mean_sum(self, rng):
        x = rng.standard_normal((5, 3)).astype(np.float32)
        assert np.isclose(ops.mean(Tensor(x)).item(), x.astype(np.float64).mean(), atol=1e-6)
        assert np.isclose(ops.tsum(Tensor(x)).item(), x.astype(np.float64).sum(), atol=1e-5)

    def test_flatten(self, rng):
        x = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
        assert ops.flatten(Tensor(x)).shape == (4, 18)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeMismatch, match=r"\(2,\).*\(3,\)"):
            ops.add(Tensor([1, 2]), Tensor([1, 2, 3]))

    def test_conv2d_kernel_too_large(self):
        with pytest.raises(ShapeMismatch, match="larger than padded input"):
            ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 5, 5))))

    def test_finite_outputs_on_finite_inputs(self, rng):
        x = rng.standard_normal((8, 6)).astype(np.float32) * 100
        for out in (ops.relu(Tensor(x)), ops.clamp(Tensor(x), -1, 1), ops.sign(Tensor(x))):
            assert np.all(np.isfinite(out.data))


class TestSoftmaxCrossEntropy:
    def test_uniform_two_classes(self):
        loss = ops.softmax_cross_entropy(Tensor(np.zeros((1, 2))), [0])
        assert abs(loss.item() - np.log(2)) < 1e-6

    def test_extreme_logits_stay_finite(self):
        loss = ops.softmax_cross_entropy(Tensor(np.array([[1000.0, 0.0]])), [0])
        assert loss.item() == pytest.approx(0.0, abs=1e-6)
        loss = ops.softmax_cross_entropy(Tensor(np.array([[-1000.0, 1000.0]])), [0])
        assert np.isfinite(loss.item())

    def test_matches_float64_reference(self, rng):
        logits = rng.standard_normal((4, 3)).astype(np.float32) * 3
        labels = np.array([0, 2, 1, 2])
        got = ops.softmax_cross_entropy(Tensor(logits), labels).item()
        assert oracles.rel_err(got, oracles.softmax_ce_ref(logits, labels)) < 1e-6

    def test_out_of_range_label_identifies_index(self):
        with pytest.raises(ValueError, match="batch index 1"):
            ops.softmax_cross_entropy(Tensor(np.zeros((3, 2))), [0, 5, 1])


class TestBackward:
    def test_sum_grad_is_ones(self, rng):
        x = Tensor(rng.standard_normal((3, 4)).astype(np.float32), requires_grad=True)
        with record() as t:
            t.backward(ops.tsum(x))
        assert np.array_equal(x.grad, np.ones((3, 4), dtype=np.float32))

    def test_mean_square_grad(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with record() as t:
            t.backward(ops.mean(ops.multiply(x, x)))
        assert np.allclose(x.grad, [2 / 3, 4 / 3, 2.0], atol=1e-6)

    def test_fanout_accumulates(self):
        x = Tensor([1.0, 1.0], requires_grad=True)
        with record() as t:
            t.backward(ops.tsum(ops.add(x, x)))
        assert np.array_equal(x.grad, [2.0, 2.0])

    def test_repeated_backward_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        with record() as t:
            loss = ops.tsum(x)
            t.backward(loss)
            t.backward(loss)
        # second call seeds the loss grad again and replays
        assert x.grad[0] == pytest.approx(3.0)  # 1 + 2 from doubled upstream seed

    def test_sign_propagates_zero(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        with record() as t:
            t.backward(ops.tsum(ops.sign(x)))
        assert np.array_equal(x.grad, [0.0, 0.0])

    def test_clamp_boundary_gradient_zero(self):
        x = Tensor([-0.5, 0.0, 0.5, 1.0, 1.5], requires_grad=True)
        with record() as t:
            t.backward(ops.tsum(ops.clamp(x, 0.0, 1.0)))
        assert np.array_equal(x.grad, [0.0, 0.0, 1.0, 0.0, 0.0])

    def test_non_scalar_backward_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with record() as t:
            y = ops.add(x, x)
            with pytest.raises(ShapeMismatch, match="scalar"):
                t.backward(y)

    def test_off_tape_loss_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        with record():
            loss = ops.tsum(x)
        with pytest.raises(ValueError, match="not produced on this tape"):
            Tape().backward(loss)

    def test_nothing_recorded_outside_context(self):
        x = Tensor([1.0], requires_grad=True)
        y = ops.tsum(x)
        assert y.requires_grad is False

    def test_nothing_recorded_without_requires_grad(self):
        with record() as t:
            ops.add(Tensor([1.0]), Tensor([2.0]))
        assert len(t) == 0


class TestFrozenAndDetach:
    def test_frozen_blocks_parameter_grads(self, rng):
        w = Tensor(rng.standard_normal((3, 2)).astype(np.float32), requires_grad=True)
        x = Tensor(rng.standard_normal((4, 3)).astype(np.float32), requires_grad=True)
        with frozen([w]):
            with record() as t:
                t.backward(ops.tsum(ops.matmul(x, w)))
        assert w.grad is None
        assert x.grad is not None
        assert w.requires_grad is True  # restored

    def test_freeze_after_record_does_not_rewrite_history(self, rng):
        w = Tensor(rng.standard_normal((3, 2)).astype(np.float32), requires_grad=True)
        x = Tensor(rng.standard_normal((4, 3)).astype(np.float32))
        with record() as t:
            loss = ops.tsum(ops.matmul(x, w))
            w.requires_grad = False
            t.backward(loss)
        w.requires_grad = True
        assert w.grad is not None  # op recorded while live

    def test_detach_shares_data_but_not_graph(self, rng):
        x = Tensor(rng.standard_normal(5).astype(np.float32), requires_grad=True)
        d = x.detach()
        assert d.data is x.data
        assert d.requires_grad is False


class TestDeterminism:
    def test_forward_backward_bit_identical(self, lenet, rng):
        x = rng.random((4, 1, 28, 28), dtype=np.float32)
        labels = np.array([1, 2, 3, 4])
        results = []
        for _ in range(2):
            xt = Tensor(x, requires_grad=True)
            with record() as t:
                loss = ops.softmax_cross_entropy(lenet.logits(xt), labels)
                t.backward(loss)
            results.append((loss.item(), xt.grad.copy()))
            for p in lenet.parameters():
                p.grad = None
        assert results[0][0] == results[1][0]
        assert np.array_equal(results[0][1], results[1][1])
