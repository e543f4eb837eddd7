import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffprune import ops
from diffprune.gradcheck import grad_check
from diffprune.tensor import Tape, Tensor, backward, no_grad


def leaf(a, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype), requires_grad=True)


def test_tensor_invariants():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.shape == (2, 2) and t.dtype == np.float32 and t.data.size == 4
    assert Tensor([1.0], dtype=np.float64).dtype == np.float64
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0]).item()


def test_matmul_examples():
    m = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)
    assert ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]
    with pytest.raises(ValueError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_grad_is_row_broadcast_of_b_column_sums(rng):
    a, b = leaf(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 5)), dtype=np.float64)
    with Tape() as tape:
        loss = ops.sum(ops.matmul(a, b))
    tape.backward(loss)
    np.testing.assert_allclose(a.grad, np.tile(b.data.sum(axis=1), (3, 1)), rtol=1e-12)


def test_conv2d_examples(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    w = rng.normal(size=(4, 3, 1, 1))
    out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64))
    np.testing.assert_allclose(out.data, np.einsum("oc,nchw->nohw", w[:, :, 0, 0], x), rtol=1e-12)

    zero = ops.conv2d(Tensor(x), Tensor(np.zeros((2, 3, 3, 3))), Tensor([1.5, -2.0]), pad=1)
    assert zero.shape == (2, 2, 5, 5)
    np.testing.assert_array_equal(zero.data[:, 0], 1.5)
    np.testing.assert_array_equal(zero.data[:, 1], -2.0)


def test_conv2d_is_cross_correlation():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 0, 0] = 1.0
    w = np.arange(9.0).reshape(1, 1, 3, 3)
    out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), pad=1)
    # top-left input pixel meets kernel offset (+1, +1) at output (0, 0)
    assert out.data[0, 0, 0, 0] == w[0, 0, 1, 1]


def test_conv2d_errors():
    x = Tensor(np.ones((1, 1, 6, 6)))
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(np.ones((1, 1, 3, 3))), stride=2, pad=1)  # (6+2-3)/2 not integral
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(np.ones((1, 1, 2, 2))))
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(np.ones((1, 1, 3, 3))), pad=-1)
    assert ops.conv2d(Tensor(np.ones((1, 1, 7, 7))), Tensor(np.ones((1, 1, 3, 3))), stride=2, pad=1).shape == (1, 1, 4, 4)


def test_small_op_examples():
    x = Tensor([0.5, -1.0])
    assert ops.mse_loss(x, x).item() == 0.0
    assert ops.mse_loss(Tensor([0.0, 0.0]), Tensor([1.0, 1.0])).item() == 1.0
    assert ops.silu(Tensor([0.0])).item() == 0.0
    with pytest.raises(ValueError):
        ops.mse_loss(Tensor([1.0]), Tensor([1.0, 2.0]))


def test_group_norm_normalizes(rng):
    x = Tensor(rng.normal(3.0, 2.0, size=(2, 8, 4, 4)), dtype=np.float64)
    out = ops.group_norm(x, 4, Tensor(np.ones(8), dtype=np.float64), Tensor(np.zeros(8), dtype=np.float64)).data
    per_group = out.reshape(2, 4, -1)
    np.testing.assert_allclose(per_group.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(per_group.var(-1), 1.0, rtol=1e-4)


def test_backward_examples():
    x = leaf([3.0])
    with Tape() as tape:
        y = ops.sum(ops.mul(x, x))
    tape.backward(y)
    assert x.grad.tolist() == [6.0]

    c = leaf([1.0, 2.0])
    with Tape() as tape:
        y = ops.sum(ops.mul(Tensor([0.0, 0.0], dtype=np.float64), c)) + Tensor(5.0, dtype=np.float64)
    tape.backward(y)
    np.testing.assert_array_equal(c.grad, 0.0)


def test_backward_accumulates_across_tapes(rng):
    w = leaf(rng.normal(size=(3, 2)))
    x = Tensor(rng.normal(size=(4, 3)), dtype=np.float64)
    grads = []
    for _ in range(2):
        with Tape() as tape:
            loss = ops.mean(ops.silu(ops.matmul(x, w)))
        backward(loss)
        grads.append(w.grad.copy())
    np.testing.assert_allclose(grads[1], 2 * grads[0], rtol=1e-14)
    assert tape.consumed


def test_backward_errors():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = ops.mul(x, x)
    with pytest.raises(ValueError):
        tape.backward(y)  # not scalar
    with Tape() as tape:
        y = ops.sum(ops.mul(x, x))
    tape.backward(y)
    with pytest.raises(RuntimeError):
        tape.backward(y)  # consumed
    with pytest.raises(RuntimeError):
        backward(ops.sum(x))  # never recorded


def test_non_finite_loss_raises():
    x = leaf([np.inf])
    with Tape() as tape:
        y = ops.sum(x)
    with pytest.raises(FloatingPointError):
        tape.backward(y)


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with Tape() as tape:
        with no_grad():
            y = ops.sum(ops.mul(x, x))
    assert not tape.records
    assert y._tape is None


def test_ops_do_not_mutate_inputs(rng):
    arrays = [rng.normal(size=(2, 4, 5, 5)) for _ in range(2)]
    copies = [a.copy() for a in arrays]
    x, y = (leaf(a) for a in arrays)
    w = leaf(rng.normal(size=(3, 4, 3, 3)))
    g, b = leaf(np.ones(4)), leaf(np.zeros(4))
    with Tape() as tape:
        h = ops.group_norm(ops.add(x, y), 2, g, b)
        h = ops.conv2d(ops.silu(h), w, pad=1)
        loss = ops.mse_loss(ops.upsample_nearest(h), Tensor(np.zeros((2, 3, 10, 10))))
    tape.backward(loss)
    for a, c in zip(arrays, copies):
        np.testing.assert_array_equal(a, c)


def test_gradients_bit_identical_across_runs(rng):
    x = rng.normal(size=(4, 2, 5, 5)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)

    def run():
        wl = Tensor(w, requires_grad=True)
        with Tape() as tape:
            loss = ops.mean(ops.silu(ops.conv2d(Tensor(x), wl, pad=1)))
        tape.backward(loss)
        return wl.grad

    np.testing.assert_array_equal(run(), run())


def test_grad_check_linear_is_near_exact(rng):
    a = Tensor(rng.normal(size=5), dtype=np.float64)
    assert grad_check(lambda x: ops.sum(ops.mul(x, a)), Tensor(rng.normal(size=5), dtype=np.float64)) < 1e-9


def test_grad_check_mlp_and_conv(rng):
    w1 = Tensor(rng.normal(size=(5, 3)) * 0.5, dtype=np.float32)
    w2 = Tensor(rng.normal(size=(2, 5)) * 0.5, dtype=np.float32)
    x = Tensor(rng.normal(size=(4, 3)), dtype=np.float32)
    mlp = lambda a, b: ops.mean(ops.mul(ops.linear(ops.silu(ops.linear(x, a)), b), Tensor([[1.0, -0.5]])))
    assert grad_check(mlp, w1, w2) < 1e-4

    img = Tensor(rng.normal(size=(2, 2, 5, 5)), dtype=np.float32)
    k = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.3, dtype=np.float32)
    conv = lambda inp, ker: ops.mean(ops.silu(ops.conv2d(inp, ker, pad=1)))
    assert grad_check(conv, img, k) < 1e-4


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_grad_check_broadcast_add_mul(rows, cols, seed):
    r = np.random.default_rng(seed)
    a = Tensor(r.normal(size=(rows, cols)), dtype=np.float64)
    b = Tensor(r.normal(size=(cols,)), dtype=np.float64)
    f = lambda p, q: ops.sum(ops.mul(ops.add(p, q), ops.sub(p, q)))
    assert grad_check(f, a, b) < 1e-7
