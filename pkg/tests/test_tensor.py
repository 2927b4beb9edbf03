import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesture_fusion import tensor as tc
from gesture_fusion.gradcheck import check_gradients
from gesture_fusion.tensor import Tensor


def wide(arr):
    return Tensor(arr, requires_grad=True, dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_matmul_identity_and_hand_values():
    a = Tensor([[1, 0], [0, 1]])
    b = Tensor([[5, 6], [7, 8]])
    np.testing.assert_array_equal(tc.matmul(a, b).data, [[5, 6], [7, 8]])
    np.testing.assert_array_equal(tc.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data, [[11]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(tc.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a, b = wide(rng.standard_normal((4, 3))), wide(rng.standard_normal((3, 2)))
    w = rng.standard_normal((4, 2))
    errs = check_gradients(lambda: (tc.matmul(a, b) * w).sum(), [a, b])
    assert max(errs.values()) < 1e-4


def test_batched_matmul_broadcast_gradient(rng):
    a, b = wide(rng.standard_normal((2, 4, 3))), wide(rng.standard_normal((3, 5)))
    w = rng.standard_normal((2, 4, 5))
    errs = check_gradients(lambda: (tc.matmul(a, b) * w).sum(), [a, b])
    assert max(errs.values()) < 1e-4


def test_layer_norm_values():
    x = Tensor(np.full((1, 4), 3.0))
    out = tc.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), 1e-5)
    np.testing.assert_array_equal(out.data, 0.0)
    with tc.wide_precision():
        out = tc.layer_norm(Tensor([1.0, 3.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), 1e-12)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-9)


def test_layer_norm_empty_axis():
    with pytest.raises(tc.EmptyAxisError):
        tc.layer_norm(Tensor(np.ones((2, 0))), Tensor(np.ones(0)), Tensor(np.zeros(0)))


def test_layer_norm_gradient(rng):
    x = wide(rng.standard_normal((2, 8)))
    g = wide(rng.standard_normal(8))
    b = wide(rng.standard_normal(8))
    w = rng.standard_normal((2, 8))
    errs = check_gradients(lambda: (tc.layer_norm(x, g, b, 1e-5) * w).sum(), [x, g, b])
    assert max(errs.values()) < 1e-4


def test_activation_values():
    np.testing.assert_array_equal(tc.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    assert tc.gelu(Tensor([0.0])).data[0] == 0.0
    # GELU(1) = Phi(1)
    assert tc.gelu(Tensor([1.0], dtype=np.float64)).data[0] == pytest.approx(0.5 * (1 + math.erf(2 ** -0.5)))


@pytest.mark.parametrize("act", [tc.relu, tc.gelu])
def test_activation_gradient(rng, act):
    x = rng.standard_normal((3, 5))
    x[np.abs(x) < 1e-2] = 0.5  # keep away from the ReLU kink
    x = wide(x)
    w = rng.standard_normal((3, 5))
    assert check_gradients(lambda: (act(x) * w).sum(), [x])[0] < 1e-4


def test_max_reduce_values_and_ties():
    vals, idx = tc.max_reduce(Tensor([[1.0, 5.0], [3.0, 2.0]]), axis=0)
    np.testing.assert_array_equal(vals.data, [3.0, 5.0])
    x = Tensor([[2.0], [2.0], [1.0]], requires_grad=True)
    vals, idx = tc.max_reduce(x, axis=0)
    assert idx[0] == 0
    tc.backward(vals.sum())
    np.testing.assert_array_equal(x.grad, [[1.0], [0.0], [0.0]])


def test_max_reduce_empty_axis():
    with pytest.raises(tc.EmptyAxisError):
        tc.max_reduce(Tensor(np.ones((0, 3))), axis=0)


def test_max_reduce_gradient(rng):
    x = wide(rng.permutation(40).reshape(2, 5, 4).astype(float) + rng.random((2, 5, 4)) * 0.1)
    w = rng.standard_normal((2, 4))
    assert check_gradients(lambda: (tc.max_reduce(x, axis=1)[0] * w).sum(), [x])[0] < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 10_000))
def test_max_reduce_permutation_invariant(n, d, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, d)).astype(np.float32)
    p = r.permutation(n)
    a, _ = tc.max_reduce(Tensor(x), axis=0)
    b, _ = tc.max_reduce(Tensor(x[p]), axis=0)
    assert np.array_equal(a.data, b.data)


def test_concat_shapes_and_empty():
    a = Tensor(np.ones((30, 128)))
    assert tc.concat([a, Tensor(np.zeros((30, 128)))], axis=-1).shape == (30, 256)
    out = tc.concat([a, Tensor(np.zeros((30, 0)))], axis=-1)
    np.testing.assert_array_equal(out.data, a.data)
    with pytest.raises(tc.ShapeError):
        tc.concat([a, Tensor(np.ones((29, 4)))], axis=-1)


def test_concat_gradient_split(rng):
    a, b = wide(rng.standard_normal((3, 2))), wide(rng.standard_normal((3, 4)))
    w = rng.standard_normal((3, 6))
    tc.backward((tc.concat([a, b], axis=-1) * w).sum())
    np.testing.assert_array_equal(a.grad, w[:, :2])
    np.testing.assert_array_equal(b.grad, w[:, 2:])
    errs = check_gradients(lambda: (tc.concat([a, b], axis=-1) * w).sum(), [a, b])
    assert max(errs.values()) < 1e-4


def test_cross_entropy_values(rng):
    assert tc.softmax_cross_entropy(Tensor(np.zeros(8)), 3).item() == pytest.approx(math.log(8), abs=1e-6)
    logits = np.full(8, -1000.0)
    logits[2] = 1000.0
    v = tc.softmax_cross_entropy(Tensor(logits), 2).item()
    assert np.isfinite(v) and v == pytest.approx(0.0, abs=1e-12)
    # direct-formula oracle in extended precision
    z = rng.standard_normal(8) * 3
    with tc.wide_precision():
        got = tc.softmax_cross_entropy(Tensor(z), 5).item()
    zl = [np.longdouble(v) for v in z]
    expected = -(zl[5] - np.log(np.sum(np.exp(zl))))
    assert abs(got - float(expected)) < 1e-10


def test_cross_entropy_label_range():
    with pytest.raises(IndexError):
        tc.softmax_cross_entropy(Tensor(np.zeros(8)), 8)


def test_cross_entropy_gradient(rng):
    x = wide(rng.standard_normal((2, 3, 8)))
    labels = rng.integers(0, 8, size=(2, 3))
    assert check_gradients(lambda: tc.cross_entropy(x, labels), [x])[0] < 1e-4


def test_backward_simple_cases(rng):
    x = Tensor(rng.standard_normal(5), requires_grad=True)
    tc.backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones(5))
    x.zero_grad()
    tc.backward((x * x).sum())
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-6)


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(tc.RankError):
        tc.backward(x * 2.0)
    loss = (x * 2.0).sum()
    tc.backward(loss)
    with pytest.raises(tc.GraphError):
        tc.backward(loss)
    with pytest.raises(tc.GraphError):
        tc.backward(Tensor(np.ones(3)).sum())
    with tc.no_grad():
        detached = (x * 2.0).sum()
    with pytest.raises(tc.GraphError):
        tc.backward(detached)


def test_every_path_tensor_gets_grad(rng):
    x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    h = tc.matmul(x, w)
    r = tc.relu(h)
    loss = r.sum()
    tc.backward(loss)
    for t in (x, w, h, r, loss):
        assert t.grad is not None and t.grad.shape == t.shape


def test_standard_precision_gradcheck(rng):
    # float32 with a larger step: looser bound
    a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    errs = check_gradients(lambda: tc.matmul(a, b).sum(), [a, b], eps=1e-2, floor=1e-2)
    assert max(errs.values()) < 1e-2


def test_determinism(rng):
    x = rng.standard_normal((6, 7)).astype(np.float32)
    w = rng.standard_normal((5, 7)).astype(np.float32)

    def run():
        xt, wt = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        loss = tc.gelu(tc.linear(xt, wt)).sum()
        tc.backward(loss)
        return loss.data.copy(), xt.grad.copy(), wt.grad.copy()

    r1, r2 = run(), run()
    for u, v in zip(r1, r2):
        assert np.array_equal(u, v)
