import numpy as np
import pytest

import autodiff as ad
from autodiff import Graph, Tensor
from exceptions import DimensionError, GraphError, NumericError


def test_square_sum_gradient():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(x * x)
    graph.backward(loss)

    np.testing.assert_array_equal(x.grad, 2.0 * x.data)


def test_reused_input_accumulates():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(x + x + x * 3.0)
    graph.backward(loss)

    np.testing.assert_array_equal(x.grad, [5.0, 5.0])


def test_matmul_gradient():
    a = Tensor([[1.0, 2.0, 3.0]], requires_grad=True)
    b = Tensor([[1.0], [0.5], [-1.0]], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(a @ b)
    graph.backward(loss)

    np.testing.assert_array_equal(a.grad, b.data.T)
    np.testing.assert_array_equal(b.grad, a.data.T)


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as graph:
        y = x * 2.0
    with pytest.raises(GraphError):
        graph.backward(y)


def test_graph_is_single_use():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(x)
    graph.backward(loss)
    with pytest.raises(GraphError):
        graph.backward(loss)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError) as info:
        ad.add(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))
    assert '(2, 2)' in str(info.value)
    assert '(2, 3)' in str(info.value)


def test_non_finite_forward_names_op():
    with pytest.raises(NumericError) as info:
        ad.log(Tensor([0.0, 1.0]))
    assert info.value.op == 'log'


def test_max_ties_route_to_lowest_index():
    x = Tensor([[1.0, 1.0, 0.0]], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(ad.tensor_max(x, axis=1))
    graph.backward(loss)

    np.testing.assert_array_equal(x.grad, [[1.0, 0.0, 0.0]])


def test_logsumexp_large_inputs():
    x = Tensor([[1000.0, 1000.0], [-1000.0, -1000.0]])
    value = ad.logsumexp(x, axis=1)
    np.testing.assert_allclose(value.data, [1000.0 + np.log(2.0), -1000.0 + np.log(2.0)])


def test_softplus_extremes_stay_finite():
    x = Tensor([-1000.0, 0.0, 1000.0], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(ad.softplus(x))
    graph.backward(loss)

    np.testing.assert_allclose(ad.softplus(Tensor([-1000.0, 0.0, 1000.0])).data,
                               [0.0, np.log(2.0), 1000.0])
    np.testing.assert_allclose(x.grad, [0.0, 0.5, 1.0])


def test_broadcast_backward_sums_rows():
    b = Tensor([[1.0, 2.0, 3.0]], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(ad.broadcast_to(b, (4, 3)))
    graph.backward(loss)

    np.testing.assert_array_equal(b.grad, [[4.0, 4.0, 4.0]])


def test_index_select_gradient():
    z = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(ad.index_select(z, np.array([1, 0])))
    graph.backward(loss)

    assert loss.item() == 5.0
    np.testing.assert_array_equal(z.grad, [[0.0, 1.0], [1.0, 0.0]])


def test_no_graph_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as graph:
        with ad.no_graph():
            ad.tensor_sum(x * 2.0)
    assert len(graph) == 0


def test_outside_graph_values_only():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ad.tensor_sum(x * x)
    assert y.item() == 5.0
    with pytest.raises(GraphError):
        y.backward()


def test_relu_gradient_masks_negatives():
    x = Tensor([-1.0, 0.5, 2.0], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(ad.relu(x))
    graph.backward(loss)

    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 1.0])


@pytest.mark.parametrize('shift', [-40.0, 3.5, 700.0])
def test_logsumexp_shift_invariance(shift):
    a = np.random.default_rng(0).normal(size=(4, 6))
    base = ad.logsumexp(Tensor(a), axis=1).data
    moved = ad.logsumexp(Tensor(a + shift), axis=1).data
    np.testing.assert_allclose(moved, base + shift, rtol=0.0, atol=1e-12 * max(1.0, abs(shift)))


def test_backward_is_linear_in_the_loss():
    values = np.random.default_rng(1).normal(size=(3, 4))

    def grad_of(*losses):
        x = Tensor(values, requires_grad=True)
        with Graph() as graph:
            total = None
            for weight, fn in losses:
                term = fn(x) * weight
                total = term if total is None else total + term
        graph.backward(total)
        return x.grad

    first = (1.0, lambda x: ad.tensor_sum(ad.tanh(x) * x))
    second = (-2.5, lambda x: ad.logsumexp(ad.reshape(x, (12,)), axis=0))

    np.testing.assert_allclose(grad_of(first, second), grad_of(first) + grad_of(second),
                               rtol=1e-12, atol=1e-14)


def test_elementwise_uses_given_slope():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Graph() as graph:
        loss = ad.tensor_sum(ad.elementwise('cube', x, x.data ** 3, 3.0 * x.data ** 2))
    graph.backward(loss)

    np.testing.assert_array_equal(x.grad, [3.0, 12.0])
    with pytest.raises(DimensionError):
        ad.elementwise('cube', x, np.zeros(3), np.zeros(2))


@pytest.mark.parametrize('op', [ad.add, ad.sub, ad.mul, ad.scalar_mul, ad.add_scalar, ad.matmul,
                                ad.relu, ad.log, ad.exp, ad.tanh, ad.softplus, ad.elementwise,
                                ad.tensor_sum, ad.mean, ad.tensor_max, ad.logsumexp,
                                ad.index_select, ad.reshape, ad.broadcast_to])
def test_public_ops_are_documented(op):
    assert op.__doc__ and op.__doc__.strip()
