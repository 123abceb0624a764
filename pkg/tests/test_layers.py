import numpy as np
import pytest

from pricecast.ex import InvariantError, ShapeError
from pricecast.layers import (
    Conv1d,
    Dense,
    Flatten,
    MaxPool1d,
    Relu,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    flatten,
    layer_backward,
    layer_forward,
    maxpool1d_backward,
    maxpool1d_forward,
    output_length,
    relu_backward,
    relu_forward,
    unflatten,
)


def numeric_grad(f, x, eps=1e-5):
    """Central differences of the scalar f() with respect to every element of x, perturbed in place."""
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        original = x[i]
        x[i] = original + eps
        plus = f()
        x[i] = original - eps
        minus = f()
        x[i] = original
        grad[i] = (plus - minus) / (2 * eps)
    return grad


def max_relative_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def random_conv(rng, out_ch, in_ch, kernel, stride=1):
    return Conv1d(rng.normal(size=(out_ch, in_ch, kernel)), rng.normal(size=out_ch), stride)


def test_conv1d_forward_hand_example():
    layer = Conv1d(np.array([[[1.0, 0.0, -1.0]]]), np.array([0.5]))
    assert conv1d_forward(layer, np.array([[1.0, 2.0, 3.0, 4.0]])).tolist() == [[-1.5, -1.5]]


def test_conv1d_identity_kernel():
    layer = Conv1d(np.array([[[1.0]]]), np.array([0.0]))
    x = np.array([[0.3, -1.2, 4.0]])
    assert np.array_equal(conv1d_forward(layer, x), x)


def test_conv1d_bias_only():
    layer = Conv1d(np.zeros((2, 1, 3)), np.array([2.0, 2.0]))
    assert (conv1d_forward(layer, np.arange(6.0)[np.newaxis]) == 2.0).all()


def test_conv1d_backward_hand_example():
    layer = Conv1d(np.array([[[3.0]]]), np.array([0.0]))
    grads = conv1d_backward(layer, np.array([[2.0]]), np.array([[1.0]]))
    assert grads.grad_weights.tolist() == [[[2.0]]]
    assert grads.grad_input.tolist() == [[3.0]]
    assert grads.grad_bias.tolist() == [1.0]


def test_conv1d_backward_zero_upstream(rng):
    layer = random_conv(rng, 3, 2, 3)
    x = rng.normal(size=(2, 7))
    grads = conv1d_backward(layer, x, np.zeros((3, 5)))
    assert not grads.grad_input.any()
    assert not grads.grad_weights.any()
    assert not grads.grad_bias.any()


def test_conv1d_shape_errors(rng):
    layer = random_conv(rng, 1, 2, 3)
    with pytest.raises(ShapeError):
        conv1d_forward(layer, np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        conv1d_forward(layer, np.zeros((1, 5)))
    with pytest.raises(ShapeError):
        conv1d_backward(layer, np.zeros((2, 5)), np.zeros((1, 4)))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv1d_gradients_match_finite_differences(rng, stride):
    layer = random_conv(rng, 3, 2, 3, stride)
    x = rng.normal(size=(2, 7))
    upstream = rng.normal(size=conv1d_forward(layer, x).shape)

    def objective():
        return float((conv1d_forward(layer, x) * upstream).sum())

    grads = conv1d_backward(layer, x, upstream)
    assert max_relative_error(grads.grad_weights, numeric_grad(objective, layer.weights)) < 1e-6
    assert max_relative_error(grads.grad_bias, numeric_grad(objective, layer.bias)) < 1e-6
    assert max_relative_error(grads.grad_input, numeric_grad(objective, x)) < 1e-6


def check_layer(layer, x, rng, tolerance=1e-4):
    """Compare layer_backward with finite differences of sum(forward(x) * upstream) for input and parameters."""
    out, cache = layer_forward(layer, x)
    upstream = rng.normal(size=out.shape)

    def objective():
        return float((layer_forward(layer, x)[0] * upstream).sum())

    grads = layer_backward(layer, cache, upstream)
    assert max_relative_error(grads.grad_input, numeric_grad(objective, x)) < tolerance
    if grads.grad_weights is not None:
        assert max_relative_error(grads.grad_weights, numeric_grad(objective, layer.weights)) < tolerance
        assert max_relative_error(grads.grad_bias, numeric_grad(objective, layer.bias)) < tolerance


@pytest.mark.parametrize("seed", range(100))
def test_gradient_law_over_random_configurations(seed):
    rng = np.random.default_rng(seed)
    length = int(rng.integers(4, 12))
    in_ch = int(rng.integers(1, 4))
    x = rng.normal(size=(in_ch, length))
    out_ch, kernel, stride = (int(v) for v in rng.integers(1, 4, size=3))
    width, pool_stride = (int(v) for v in rng.integers(1, 4, size=2))
    out_dim = int(rng.integers(1, 5))

    check_layer(random_conv(rng, out_ch, in_ch, kernel, stride), x.copy(), rng)
    check_layer(MaxPool1d(width, pool_stride), x.copy(), rng)
    check_layer(Relu(), x.copy(), rng)
    check_layer(Flatten(), x.copy(), rng)
    check_layer(Dense(rng.normal(size=(out_dim, length)), rng.normal(size=out_dim)), x[0].copy(), rng)



@pytest.mark.parametrize("seed", range(20))
def test_shape_law(seed):
    rng = np.random.default_rng(seed)
    length = int(rng.integers(1, 30))
    window = int(rng.integers(1, length + 1))
    stride = int(rng.integers(1, 4))
    expected = (length - window) // stride + 1
    conv = random_conv(rng, 2, 1, window, stride)
    assert conv1d_forward(conv, rng.normal(size=(1, length))).shape == (2, expected)
    out, argmax = maxpool1d_forward(MaxPool1d(window, stride), rng.normal(size=(3, length)))
    assert out.shape == argmax.shape == (3, expected)
    assert output_length(length, window, stride) == expected


def test_output_length_rejects_short_input():
    with pytest.raises(ShapeError):
        output_length(2, 3, 1)


def test_conv1d_is_linear_without_bias(rng):
    layer = Conv1d(rng.normal(size=(2, 2, 3)), np.zeros(2))
    x, y = rng.normal(size=(2, 9)), rng.normal(size=(2, 9))
    assert np.allclose(conv1d_forward(layer, x + y), conv1d_forward(layer, x) + conv1d_forward(layer, y))


def test_dense_is_linear_without_bias(rng):
    layer = Dense(rng.normal(size=(3, 4)), np.zeros(3))
    x, y = rng.normal(size=4), rng.normal(size=4)
    assert np.allclose(dense_forward(layer, x + y), dense_forward(layer, x) + dense_forward(layer, y))


def test_batched_conv_matches_single_samples(rng):
    layer = random_conv(rng, 3, 2, 3)
    batch = rng.normal(size=(5, 2, 8))
    upstream = rng.normal(size=(5, 3, 6))
    out = conv1d_forward(layer, batch)
    grads = conv1d_backward(layer, batch, upstream)
    singles = [conv1d_backward(layer, batch[i], upstream[i]) for i in range(5)]
    for i in range(5):
        assert np.allclose(out[i], conv1d_forward(layer, batch[i]))
        assert np.allclose(grads.grad_input[i], singles[i].grad_input)
    assert np.allclose(grads.grad_weights, sum(s.grad_weights for s in singles))
    assert np.allclose(grads.grad_bias, sum(s.grad_bias for s in singles))


def test_maxpool_forward_hand_example():
    out, argmax = maxpool1d_forward(MaxPool1d(2, 2), np.array([[1.0, 3.0, 2.0, 5.0]]))
    assert out.tolist() == [[3.0, 5.0]]
    assert argmax.tolist() == [[1, 3]]


def test_maxpool_ties_go_to_first_index():
    out, argmax = maxpool1d_forward(MaxPool1d(2, 2), np.full((1, 6), 4.0))
    assert out.tolist() == [[4.0, 4.0, 4.0]]
    assert argmax.tolist() == [[0, 2, 4]]


def test_maxpool_width_one_is_identity(rng):
    x = rng.normal(size=(2, 5))
    out, argmax = maxpool1d_forward(MaxPool1d(1, 1), x)
    assert np.array_equal(out, x)
    assert argmax.tolist() == [list(range(5))] * 2


def test_maxpool_forward_rejects_short_input():
    with pytest.raises(ShapeError):
        maxpool1d_forward(MaxPool1d(3, 3), np.zeros((1, 2)))


def test_maxpool_backward_routes_to_argmax():
    _, argmax = maxpool1d_forward(MaxPool1d(2, 2), np.array([[1.0, 3.0, 2.0, 5.0]]))
    assert maxpool1d_backward(argmax, np.array([[1.0, 1.0]]), (1, 4)).tolist() == [[0.0, 1.0, 0.0, 1.0]]
    assert not maxpool1d_backward(argmax, np.zeros((1, 2)), (1, 4)).any()


def test_maxpool_backward_sums_overlapping_windows():
    _, argmax = maxpool1d_forward(MaxPool1d(2, 1), np.array([[1.0, 2.0, 3.0]]))
    assert maxpool1d_backward(argmax, np.array([[1.0, 1.0]]), (1, 3)).tolist() == [[0.0, 1.0, 1.0]]


def test_maxpool_backward_conserves_mass(rng):
    x = rng.normal(size=(3, 12))
    _, argmax = maxpool1d_forward(MaxPool1d(3, 3), x)
    upstream = rng.normal(size=argmax.shape)
    assert np.isclose(maxpool1d_backward(argmax, upstream, x.shape).sum(), upstream.sum())


def test_maxpool_backward_rejects_out_of_range_index():
    with pytest.raises(InvariantError):
        maxpool1d_backward(np.array([[5]]), np.array([[1.0]]), (1, 3))


def test_relu_forward_examples():
    assert relu_forward(np.array([-3.2, 5.49, 0.0])).tolist() == [0.0, 5.49, 0.0]


def test_relu_is_idempotent(rng):
    x = rng.normal(size=50)
    assert np.array_equal(relu_forward(relu_forward(x)), relu_forward(x))


@pytest.mark.parametrize("value,expected", [(-1.0, 0.0), (2.0, 5.0), (0.0, 0.0)])
def test_relu_backward(value, expected):
    assert relu_backward(np.array([value]), np.array([5.0])).tolist() == [expected]


def test_relu_backward_shape_mismatch():
    with pytest.raises(ShapeError):
        relu_backward(np.zeros(3), np.zeros(2))


def test_dense_forward_examples():
    assert dense_forward(Dense(np.eye(2), np.zeros(2)), np.array([7.0, 9.0])).tolist() == [7.0, 9.0]
    assert dense_forward(Dense(np.array([[1.0, 2.0]]), np.array([0.5])), np.array([3.0, 4.0])).tolist() == [11.5]
    assert dense_forward(Dense(np.zeros((1, 3)), np.array([-1.0])), np.ones(3)).tolist() == [-1.0]


def test_dense_forward_rejects_wrong_length():
    with pytest.raises(ShapeError):
        dense_forward(Dense(np.eye(2), np.zeros(2)), np.ones(3))


def test_dense_backward_hand_example():
    grads = dense_backward(Dense(np.array([[2.0]]), np.array([0.0])), np.array([3.0]), np.array([1.0]))
    assert grads.grad_weights.tolist() == [[3.0]]
    assert grads.grad_bias.tolist() == [1.0]
    assert grads.grad_input.tolist() == [2.0]


def test_dense_backward_zero_upstream(rng):
    layer = Dense(rng.normal(size=(3, 4)), rng.normal(size=3))
    grads = dense_backward(layer, rng.normal(size=4), np.zeros(3))
    assert not (grads.grad_weights.any() or grads.grad_bias.any() or grads.grad_input.any())


def test_dense_gradients_match_finite_differences(rng):
    layer = Dense(rng.normal(size=(3, 4)), rng.normal(size=3))
    x = rng.normal(size=4)
    upstream = rng.normal(size=3)

    def objective():
        return float((dense_forward(layer, x) * upstream).sum())

    grads = dense_backward(layer, x, upstream)
    assert max_relative_error(grads.grad_weights, numeric_grad(objective, layer.weights)) < 1e-6
    assert max_relative_error(grads.grad_bias, numeric_grad(objective, layer.bias)) < 1e-6
    assert max_relative_error(grads.grad_input, numeric_grad(objective, x)) < 1e-6


def test_flatten_is_row_major():
    assert flatten(np.array([[1.0, 2.0], [3.0, 4.0]])).tolist() == [1.0, 2.0, 3.0, 4.0]
    assert flatten(np.arange(5.0)[np.newaxis]).tolist() == [0.0, 1.0, 2.0, 3.0, 4.0]


def test_flatten_round_trip(rng):
    x = rng.normal(size=(3, 4))
    assert np.array_equal(unflatten(flatten(x), x.shape), x)


@pytest.mark.parametrize("shape", [(3,), (1, 2, 3, 4)])
def test_flatten_rejects_wrong_rank(shape):
    with pytest.raises(ShapeError):
        flatten(np.zeros(shape))


@pytest.mark.parametrize(
    "layer",
    [
        Conv1d(np.ones((2, 1, 3)), np.zeros(2)),
        MaxPool1d(2, 2),
        Relu(),
        Flatten(),
    ],
)
def test_layer_dispatch_round_trip_shapes(layer, rng):
    x = rng.normal(size=(1, 8))
    out, cache = layer_forward(layer, x)
    grads = layer_backward(layer, cache, np.ones_like(out))
    assert grads.grad_input.shape == x.shape


@pytest.mark.parametrize(
    "factory",
    [
        lambda: Conv1d(np.ones((2, 1)), np.zeros(2)),
        lambda: Conv1d(np.ones((2, 1, 3)), np.zeros(3)),
        lambda: Dense(np.ones(3), np.zeros(1)),
        lambda: Dense(np.ones((2, 3)), np.zeros(3)),
    ],
)
def test_layer_construction_validates_shapes(factory):
    with pytest.raises(ShapeError):
        factory()
