"""Autodiff engine: forward values, backward rules, tape semantics."""
import numpy as np
import pytest

import dpno.autodiff as ad
from dpno.autodiff import Tape, Tensor

from helpers import finite_difference_grad, gradcheck, max_rel_err


def t(data, rg=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


class TestElementwise:
    def test_add_values(self):
        out = ad.add(t([1.0, 2.0]), t([3.0, 4.0]))
        assert np.array_equal(out.data, [4.0, 6.0])

    def test_mul_by_zero_tensor_and_grad(self):
        x = t([1.5, -2.0, 3.0])
        z = t(np.zeros(3), rg=False)
        with Tape() as tape:
            out = ad.tensor_sum(ad.mul(x, z))
        assert np.array_equal(out.data, 0.0)
        tape.backward(out)
        assert np.array_equal(x.grad, np.zeros(3))

    def test_sub_self_cancels_grads(self):
        x = t([1.0, 2.0, 3.0])
        with Tape() as tape:
            out = ad.tensor_sum(ad.sub(x, x))
        assert np.allclose(out.data, 0.0)
        tape.backward(out)
        # +1 and -1 paths accumulate to zero
        assert np.array_equal(x.grad, np.zeros(3))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
            ad.add(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))

    def test_scale(self):
        x = t([2.0, -1.0])
        with Tape() as tape:
            out = ad.tensor_sum(ad.scale(x, 2.5))
        tape.backward(out)
        assert np.allclose(x.grad, [2.5, 2.5])

    def test_no_general_broadcasting(self):
        with pytest.raises(ValueError):
            ad.mul(t(np.ones((2, 3))), t(np.ones(3)))

    def test_bias_add_broadcasts_channel_axis_only(self):
        x = t(np.ones((2, 4, 3)))
        b = t([1.0, 2.0, 3.0])
        with Tape() as tape:
            out = ad.tensor_sum(ad.bias_add(x, b))
        assert np.allclose(out.data, 2 * 4 * 3 + 2 * 4 * 6)
        tape.backward(out)
        assert np.allclose(b.grad, [8.0, 8.0, 8.0])

    def test_nonfinite_output_raises(self):
        x = t([1e308])
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            ad.mul(x, x)

    def test_nonfinite_leaf_rejected(self):
        with pytest.raises(FloatingPointError):
            Tensor(np.array([np.nan]))


class TestMatmul:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((3, 2))
        out = ad.matmul(t(np.eye(3)), t(x))
        assert np.allclose(out.data, x)

    def test_hand_sum(self):
        out = ad.matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[1.0], [1.0]]))
        assert np.allclose(out.data, [[3.0], [7.0]])

    def test_inner_dim_mismatch(self):
        with pytest.raises(ValueError, match="inner dimensions"):
            ad.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        a = t(rng.uniform(-1, 1, (4, 3)))
        b = t(rng.uniform(-1, 1, (3, 5)))
        err = gradcheck(lambda: ad.tensor_sum(ad.matmul(a, b)), [a, b])
        assert err < 1e-5

    def test_batched_grad(self):
        rng = np.random.default_rng(2)
        a = t(rng.uniform(-1, 1, (2, 3, 4)))
        b = t(rng.uniform(-1, 1, (4, 5)))
        err = gradcheck(lambda: ad.tensor_sum(ad.matmul(a, b)), [a, b])
        assert err < 1e-5

    def test_batched_both_grad(self):
        rng = np.random.default_rng(3)
        a = t(rng.uniform(-1, 1, (2, 3, 4)))
        b = t(rng.uniform(-1, 1, (2, 4, 5)))
        err = gradcheck(lambda: ad.tensor_sum(ad.matmul(a, b)), [a, b])
        assert err < 1e-5


class TestGelu:
    def test_zero(self):
        assert ad.gelu(t([0.0])).data[0] == 0.0

    def test_value_at_three(self):
        # independent closed-form evaluation
        import math
        inner = math.sqrt(2.0 / math.pi) * (3.0 + 0.044715 * 27.0)
        expected = 0.5 * 3.0 * (1.0 + math.tanh(inner))
        got = float(ad.gelu(t([3.0])).data[0])
        assert abs(got - expected) < 1e-12
        assert abs(got - 2.99636) < 1e-4

    def test_derivative_matches_fd_at_random_points(self):
        rng = np.random.default_rng(4)
        x = t(rng.uniform(-3, 3, 20))
        err = gradcheck(lambda: ad.tensor_sum(ad.gelu(x)), [x])
        assert err < 1e-5


class TestConcat:
    def test_layout(self):
        a = t(np.ones((2, 5, 2)))
        b = t(2 * np.ones((2, 5, 3)))
        out = ad.concat_channels([a, b])
        assert out.shape == (2, 5, 5)
        assert np.all(out.data[..., :2] == 1.0) and np.all(out.data[..., 2:] == 2.0)

    def test_singleton(self):
        a = t(np.ones((2, 3)))
        assert ad.concat_channels([a]) is a

    def test_backward_splits(self):
        a = t(np.ones((2, 2)))
        b = t(np.ones((2, 3)))
        with Tape() as tape:
            out = ad.tensor_sum(ad.concat_channels([a, b]))
        tape.backward(out)
        assert np.array_equal(a.grad, np.ones((2, 2)))
        assert np.array_equal(b.grad, np.ones((2, 3)))

    def test_non_channel_mismatch(self):
        with pytest.raises(ValueError, match="non-channel"):
            ad.concat_channels([t(np.ones((2, 3, 1))), t(np.ones((2, 4, 1)))])


class TestRelativeL2:
    def test_identical_is_zero(self):
        u = t(np.random.default_rng(5).standard_normal((3, 7)), rg=False)
        assert float(ad.relative_l2(u, u).data) == 0.0

    def test_double_is_one(self):
        u = np.random.default_rng(6).standard_normal((3, 7))
        out = ad.relative_l2(t(2 * u, rg=False), u)
        assert abs(float(out.data) - 1.0) < 1e-12

    def test_batch_mean_of_ratios(self):
        true = np.zeros((2, 4))
        true[0] = [1, 0, 0, 0]
        true[1] = [0, 1, 0, 0]
        pred = true.copy()
        pred[0, 0] = 1.1   # ratio 0.1
        pred[1, 1] = 1.3   # ratio 0.3
        out = ad.relative_l2(t(pred, rg=False), true)
        assert abs(float(out.data) - 0.2) < 1e-12

    def test_zero_norm_target_rejected(self):
        with pytest.raises(ValueError, match="zero norm"):
            ad.relative_l2(t(np.ones((2, 3))), np.vstack([np.ones(3), np.zeros(3)]))

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(7)
        pred = t(rng.uniform(-1, 1, (3, 5)))
        true = rng.uniform(-1, 1, (3, 5))
        err = gradcheck(lambda: ad.relative_l2(pred, true), [pred])
        assert err < 1e-5


class TestTape:
    def test_sum_grad_is_ones(self):
        x = t(np.arange(4.0))
        with Tape() as tape:
            loss = ad.tensor_sum(x)
        tape.backward(loss)
        assert np.array_equal(x.grad, np.ones(4))

    def test_square_grad(self):
        x = t(np.array([1.0, -2.0, 3.0]))
        with Tape() as tape:
            loss = ad.tensor_sum(ad.mul(x, x))
        tape.backward(loss)
        assert np.allclose(x.grad, 2 * x.data)

    def test_diamond_accumulation(self):
        x = t(np.array([2.0]))
        with Tape() as tape:
            a = ad.scale(x, 3.0)
            b = ad.mul(x, x)
            loss = ad.tensor_sum(ad.add(a, b))
        tape.backward(loss)
        # d/dx (3x + x^2) = 3 + 2x = 7
        assert np.allclose(x.grad, [7.0])

    def test_backward_on_nonscalar_rejected(self):
        x = t(np.ones(3))
        with Tape() as tape:
            y = ad.scale(x, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(y)

    def test_consumed_tape_rejected(self):
        x = t(np.ones(2))
        with Tape() as tape:
            loss = ad.tensor_sum(x)
        tape.backward(loss)
        with pytest.raises(RuntimeError, match="consumed"):
            tape.backward(loss)

    def test_no_tape_means_no_recording(self):
        x = t(np.ones(2))
        loss = ad.tensor_sum(x)
        assert loss.grad is None and x.grad is None

    def test_determinism(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((5, 5))
        b = rng.standard_normal((5, 5))
        r1 = ad.matmul(ad.gelu(t(a, rg=False)), t(b, rg=False)).data
        r2 = ad.matmul(ad.gelu(t(a.copy(), rg=False)), t(b.copy(), rg=False)).data
        assert np.array_equal(r1, r2)


class TestGradientCorrectnessSweep:
    """Every differentiable op against central finite differences on random
    inputs in [-1, 1]."""

    def test_all_ops(self):
        rng = np.random.default_rng(9)
        x = t(rng.uniform(-1, 1, (3, 4)))
        y = t(rng.uniform(-1, 1, (3, 4)))
        b = t(rng.uniform(-1, 1, 4))
        cases = {
            "add": lambda: ad.tensor_sum(ad.mul(ad.add(x, y), y)),
            "sub": lambda: ad.tensor_sum(ad.mul(ad.sub(x, y), x)),
            "mul": lambda: ad.tensor_sum(ad.mul(x, y)),
            "scale": lambda: ad.tensor_sum(ad.scale(x, -1.7)),
            "bias_add": lambda: ad.tensor_sum(ad.mul(ad.bias_add(x, b), x)),
            "gelu": lambda: ad.tensor_sum(ad.gelu(x)),
            "concat": lambda: ad.tensor_sum(ad.mul(ad.concat_channels([x, y]),
                                                   ad.concat_channels([y, x]))),
            "transpose": lambda: ad.tensor_sum(ad.mul(ad.transpose(x), ad.transpose(y))),
            "reshape": lambda: ad.tensor_sum(ad.mul(ad.reshape(x, (4, 3)), ad.reshape(y, (4, 3)))),
        }
        for name, fn in cases.items():
            err = gradcheck(fn, [x, y, b])
            assert err < 1e-5, f"{name}: rel err {err}"
