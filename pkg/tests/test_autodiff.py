"""Autodiff engine: forward semantics, backward analytics, gradient checks."""

import numpy as np
import pytest

from tabframe import autodiff as ad
from tabframe.autodiff import (
    DiffTensor,
    Tape,
    backward,
    constant,
    grad_check,
    grad_check_tensors,
    parameter,
)
from tabframe.errors import (
    DetachedTensorError,
    IndexOutOfBoundsError,
    NotScalarLossError,
    ShapeMismatchError,
)


def scalar_sum(t):
    """Reduce any tensor to a scalar via repeated mean (differentiable)."""
    out = t
    while out.ndim > 0:
        out = ad.mean_axis(out, 0)
    return out


class TestForwardSemantics:
    def test_add_identity(self):
        x = constant([[1.0, 2.0]])
        assert np.array_equal(ad.add(x, constant(0.0)).data, x.data)

    def test_softmax_single_element(self):
        assert ad.softmax_lastdim(constant([3.7])).data.tolist() == [1.0]

    def test_matmul_identity(self):
        a = constant([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(a, constant(np.eye(2)))
        assert np.array_equal(out.data, a.data)

    def test_matmul_shape_errors(self):
        with pytest.raises(ShapeMismatchError):
            ad.matmul(constant(np.zeros((2, 3))), constant(np.zeros((4, 2))))
        with pytest.raises(ShapeMismatchError) as err:
            ad.add(constant(np.zeros((2, 3))), constant(np.zeros((3, 2))))
        assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)

    def test_suffix_broadcast_only(self):
        # [N, F] + [F] allowed; [N, 1] + [F] is not
        ad.add(constant(np.zeros((4, 3))), constant(np.zeros(3)))
        with pytest.raises(ShapeMismatchError):
            ad.add(constant(np.zeros((4, 1))), constant(np.zeros(3)))

    def test_gather_rows_bounds(self):
        table = parameter(np.zeros((3, 2)))
        with pytest.raises(IndexOutOfBoundsError):
            ad.gather_rows(table, np.array([3]))

    def test_forward_determinism(self):
        rng = np.random.default_rng(0)
        x = constant(rng.standard_normal((5, 4)))
        w = constant(rng.standard_normal((4, 4)))
        a = ad.softmax_lastdim(ad.matmul(x, w)).data
        b = ad.softmax_lastdim(ad.matmul(x, w)).data
        assert np.array_equal(a, b)

    def test_batch_row_stability(self):
        # single-row forward equals the row of a full-batch forward, bitwise
        rng = np.random.default_rng(1)
        x = rng.standard_normal((64, 7))
        w = rng.standard_normal((7, 5))
        full = ad.matmul(constant(x), constant(w)).data
        one = ad.matmul(constant(x[3:4]), constant(w)).data
        assert np.array_equal(full[3:4], one)


class TestBackwardAnalytic:
    def test_sum_of_squares(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            y = ad.mul(x, x)
            loss = ad.mean_axis(y, 0)  # mean; grad = 2x/n
        backward(tape, loss)
        assert np.allclose(x.grad, [1.0, 2.0])  # 2*x/2

    def test_mean_grad(self):
        x = parameter([1.0, 2.0, 3.0, 4.0])
        with Tape() as tape:
            loss = ad.mean_axis(x, 0)
        backward(tape, loss)
        assert np.array_equal(x.grad, [0.25] * 4)

    def test_gather_scatter_zero_elsewhere(self):
        table = parameter(np.ones((4, 2)))
        with Tape() as tape:
            rows = ad.gather_rows(table, np.array([1, 1, 3]))
            loss = scalar_sum(rows)
        backward(tape, loss)
        assert np.array_equal(table.grad[0], [0.0, 0.0])
        assert np.array_equal(table.grad[2], [0.0, 0.0])
        assert table.grad[1].sum() > 0 and table.grad[3].sum() > 0

    def test_accumulation_when_reused(self):
        x = parameter([2.0])
        with Tape() as tape:
            loss = ad.mean_axis(ad.add(x, x), 0)
        backward(tape, loss)
        assert np.array_equal(x.grad, [2.0])

    def test_backward_linearity(self):
        rng = np.random.default_rng(2)
        x = parameter(rng.standard_normal(6))

        def run(scale):
            x.grad = None
            with Tape() as tape:
                loss = ad.mean_axis(ad.mul(ad.mul(x, x), constant(scale)), 0)
            backward(tape, loss)
            return x.grad.copy()

        g1 = run(1.0)
        g3 = run(3.0)
        assert np.allclose(g3, 3.0 * g1)

    def test_tape_cleared_after_backward(self):
        x = parameter([1.0])
        with Tape() as tape:
            loss = ad.mean_axis(x, 0)
        backward(tape, loss)
        assert len(tape) == 0

    def test_not_scalar_loss(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            y = ad.mul(x, x)
        with pytest.raises(NotScalarLossError):
            backward(tape, y)

    def test_detached_tensor(self):
        x = parameter([1.0])
        with Tape() as tape:
            ad.mul(x, x)
        stray = parameter(0.0)
        with pytest.raises(DetachedTensorError):
            backward(tape, stray)


class TestGradCheck:
    def test_sum_of_squares_example(self):
        x = parameter([0.3, -1.2, 2.0])
        err = grad_check(lambda t: scalar_sum(ad.mul(t, t)), x, eps=1e-4)
        assert err <= 1e-6

    def test_relu_away_from_kink(self):
        x = parameter([0.5, -0.7, 1.3, -2.0])
        err = grad_check(lambda t: scalar_sum(ad.relu(t)), x, eps=1e-4)
        assert err <= 1e-6

    def test_constant_function(self):
        x = parameter([1.0, 2.0])
        err = grad_check(lambda t: constant(5.0), x, eps=1e-4)
        assert err == 0.0

    @pytest.mark.parametrize("kind", sorted(ad.OPS))
    def test_each_op_kind(self, kind):
        rng = np.random.default_rng(hash(kind) % 2**32)
        err = _check_op(kind, rng)
        assert err <= 1e-4, f"{kind}: {err}"


def _check_op(kind: str, rng: np.random.Generator) -> float:
    """One randomized gradient check for a single op kind."""
    if kind == "matmul":
        a = parameter(rng.standard_normal((3, 4)))
        b = parameter(rng.standard_normal((4, 2)))
        return grad_check_tensors(lambda: scalar_sum(ad.matmul(a, b)), [a, b])
    if kind in ("add", "mul"):
        a = parameter(rng.standard_normal((3, 4)))
        b = parameter(rng.standard_normal(4))
        fn = ad.OPS[kind]
        return grad_check_tensors(lambda: scalar_sum(fn(a, b)), [a, b])
    if kind == "relu":
        x = parameter(rng.standard_normal(12) + np.where(rng.random(12) > 0.5, 0.3, -0.3))
        return grad_check(lambda t: scalar_sum(ad.relu(t)), x)
    if kind == "softmax_lastdim":
        x = parameter(rng.standard_normal((3, 5)))
        return grad_check(lambda t: scalar_sum(ad.softmax_lastdim(t)), x)
    if kind == "layer_norm_lastdim":
        x = parameter(rng.standard_normal((2, 6)))
        w = constant(rng.standard_normal(6))
        return grad_check(
            lambda t: scalar_sum(ad.mul(ad.layer_norm_lastdim(t), w)), x
        )
    if kind == "mean_axis":
        x = parameter(rng.standard_normal((3, 4)))
        return grad_check(lambda t: scalar_sum(ad.mean_axis(t, 1)), x)
    if kind == "concat_axis":
        a = parameter(rng.standard_normal((2, 3)))
        b = parameter(rng.standard_normal((2, 2)))
        w = constant(rng.standard_normal(5))
        return grad_check_tensors(
            lambda: scalar_sum(ad.mul(ad.concat_axis([a, b], 1), w)), [a, b]
        )
    if kind == "gather_rows":
        table = parameter(rng.standard_normal((5, 3)))
        ids = rng.integers(0, 5, size=7)
        w = constant(rng.standard_normal(3))
        return grad_check(
            lambda t: scalar_sum(ad.mul(ad.gather_rows(t, ids), w)), table
        )
    if kind == "reshape":
        x = parameter(rng.standard_normal((2, 6)))
        w = constant(rng.standard_normal((3, 4)))
        return grad_check(
            lambda t: scalar_sum(ad.mul(ad.reshape(t, (3, 4)), w)), x
        )
    if kind == "slice":
        x = parameter(rng.standard_normal((4, 5)))
        return grad_check(lambda t: scalar_sum(ad.slice_axis(t, 1, 1, 4)), x)
    if kind == "transpose":
        x = parameter(rng.standard_normal((2, 3, 4)))
        w = constant(rng.standard_normal((4, 3)))
        return grad_check(
            lambda t: scalar_sum(ad.mul(ad.transpose(t, (0, 2, 1)), w)), x
        )
    if kind in ("sin", "cos"):
        x = parameter(rng.standard_normal(9))
        fn = ad.OPS[kind]
        return grad_check(lambda t: scalar_sum(fn(t)), x)
    if kind == "segment_mean":
        table = parameter(rng.standard_normal((6, 3)))
        lengths = rng.integers(0, 4, size=4)
        ids = rng.integers(0, 6, size=int(lengths.sum()))
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        w = constant(rng.standard_normal(3))
        return grad_check(
            lambda t: scalar_sum(ad.mul(ad.segment_mean(t, ids, offsets), w)), table
        )
    raise AssertionError(f"no harness for op kind {kind!r}")


class TestSegmentMean:
    def test_empty_segment_is_zero(self):
        table = constant(np.ones((3, 2)))
        out = ad.segment_mean(table, np.array([], dtype=np.int64), np.array([0, 0]))
        assert np.array_equal(out.data, np.zeros((1, 2)))

    def test_mean_of_pair(self):
        table = constant(np.array([[2.0, 0.0], [4.0, 6.0]]))
        out = ad.segment_mean(table, np.array([0, 1]), np.array([0, 2]))
        assert out.data.tolist() == [[3.0, 3.0]]

    def test_singleton_is_row(self):
        table = constant(np.array([[2.0, 5.0], [1.0, 1.0]]))
        out = ad.segment_mean(table, np.array([0]), np.array([0, 1]))
        assert out.data.tolist() == [[2.0, 5.0]]


class TestOpDispatch:
    def test_apply_op(self):
        out = ad.apply_op("add", constant([1.0]), constant([2.0]))
        assert out.data.tolist() == [3.0]

    def test_unknown_kind(self):
        with pytest.raises(ShapeMismatchError):
            ad.apply_op("frobnicate", constant([1.0]))
