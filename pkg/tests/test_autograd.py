import numpy as np
import pytest

from dualbind import autograd as ag
from dualbind.autograd import Tensor, precision

from gradcheck import fd_coordinate

RNG = np.random.default_rng(0)


def check_op(build, *arrays, weight_seed=1, tol=1e-6):
    """Compare backprop against central differences of sum(out * W) for every input coordinate."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out_shape = build(*[Tensor(a) for a in arrays]).shape
    w = np.random.default_rng(weight_seed).standard_normal(out_shape)

    def scalar():
        return float((build(*[Tensor(a) for a in arrays]).data * w).sum())

    ts = [Tensor(a, requires_grad=True) for a in arrays]
    build(*ts).backward(w)
    for a, t in zip(arrays, ts):
        assert t.grad is not None and t.grad.shape == a.shape
        for idx in np.ndindex(a.shape):
            num = fd_coordinate(scalar, a, idx, h=1e-5)
            assert abs(num - t.grad[idx]) <= tol * max(1.0, abs(num)), (idx, num, t.grad[idx])


def test_elementwise_and_broadcast():
    check_op(lambda a, b: ag.add(a, b), RNG.standard_normal((2, 3)), RNG.standard_normal((3,)))
    check_op(lambda a, b: ag.mul(a, b), RNG.standard_normal((2, 3)), RNG.standard_normal((2, 1)))
    check_op(lambda a: a - 2.0 * a * a, RNG.standard_normal((4,)))


def test_matmul_batched():
    check_op(ag.matmul, RNG.standard_normal((2, 3, 4)), RNG.standard_normal((4, 5)))
    check_op(ag.matmul, RNG.standard_normal((3, 4)), RNG.standard_normal((2, 4, 2)))


@pytest.mark.parametrize("fn", [ag.silu, ag.sigmoid, ag.relu])
def test_activations(fn):
    x = RNG.standard_normal((3, 5))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the relu kink
    check_op(fn, x)


def test_softmax_and_norms():
    check_op(lambda a: ag.softmax(a, axis=-1), RNG.standard_normal((2, 3, 4)))
    check_op(lambda a, g, b: ag.layer_norm(a, g, b), RNG.standard_normal((2, 3, 6)), RNG.standard_normal(6), RNG.standard_normal(6))
    check_op(
        lambda a, g, b: ag.group_norm(a, 2, g, b),
        RNG.standard_normal((2, 4, 3, 3)), RNG.standard_normal(4), RNG.standard_normal(4),
    )


def test_shape_ops():
    check_op(lambda a: ag.reshape(a, (6, 2)), RNG.standard_normal((3, 4)))
    check_op(lambda a: ag.transpose(a, (2, 0, 1)), RNG.standard_normal((2, 3, 4)))
    check_op(lambda a: ag.sum_(a, axis=1), RNG.standard_normal((2, 3, 4)))
    check_op(lambda a: ag.mean(a, axis=(0, 2), keepdims=True), RNG.standard_normal((2, 3, 4)))
    check_op(lambda a, b: ag.concat([a, b], axis=1), RNG.standard_normal((2, 3)), RNG.standard_normal((2, 2)))
    check_op(ag.upsample2x, RNG.standard_normal((1, 2, 2, 3)))


def test_embedding_lookup_accumulates_repeats():
    ids = np.array([[0, 2, 2], [1, 0, 2]])
    check_op(lambda t: ag.take_rows(t, ids), RNG.standard_normal((4, 3)))


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (4, 2, 1), (1, 1, 0), (3, 2, 0)])
def test_conv2d(k, stride, pad):
    x = RNG.standard_normal((2, 3, 6, 6))
    w = RNG.standard_normal((4, 3, k, k))
    b = RNG.standard_normal(4)
    check_op(lambda x, w, b: ag.conv2d(x, w, b, stride, pad), x, w, b)


def test_conv2d_matches_direct_loop():
    x = RNG.standard_normal((1, 2, 5, 5))
    w = RNG.standard_normal((3, 2, 3, 3))
    out = ag.conv2d(Tensor(x), Tensor(w), None, 2, 1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = (xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]).sum()
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_mse_gradient():
    target = RNG.standard_normal((3, 4))
    check_op(lambda p: ag.mse(p, target), RNG.standard_normal((3, 4)))


def test_shared_subexpression_gradients_add():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ag.mul(x, x)
    z = ag.add(y, y)
    ag.sum_(z).backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_precision_context_restores_dtype():
    with precision(np.float32):
        assert Tensor([1.0]).data.dtype == np.float32
    assert Tensor([1.0]).data.dtype == np.float64


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        Tensor(np.ones(3), requires_grad=True).backward()
