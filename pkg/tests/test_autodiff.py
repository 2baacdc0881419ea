import numpy as np
import pytest

from helpers import check_grads
from scatterhsd import autodiff as ad
from scatterhsd.errors import InvalidInput, NumericsError, ShapeError

RNG = np.random.default_rng(0)


def r(*shape):
    return RNG.normal(size=shape)


def test_relu_softmax_examples():
    np.testing.assert_array_equal(ad.relu(ad.Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    np.testing.assert_array_equal(ad.softmax(ad.Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_matmul_triple_loop_oracle():
    a, b = r(2, 3), r(3, 2)
    out = ad.matmul(a, b).data
    ref = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(3):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.abs(out - ref).max() <= 1e-12


def test_product_gradient():
    x, y = ad.Tensor(3.0, requires_grad=True), ad.Tensor(4.0, requires_grad=True)
    with ad.Tape() as tape:
        tape.backward(x * y)
    assert x.grad == 4.0 and y.grad == 3.0


def test_softmax_ce_gradient_at_uniform_logits():
    z = ad.Tensor(np.zeros(4), requires_grad=True)
    with ad.Tape() as tape:
        loss = -ad.sum(ad.log_softmax(z) * np.array([1.0, 0, 0, 0]))
        tape.backward(loss)
    np.testing.assert_allclose(z.grad, [-0.75, 0.25, 0.25, 0.25], atol=1e-15)


def test_nonscalar_backward_rejected():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        y = x * 2.0
        with pytest.raises(InvalidInput):
            tape.backward(y)


def test_nonfinite_forward_raises():
    with pytest.raises(NumericsError):
        ad.log(ad.Tensor([0.0, 1.0]))
    with pytest.raises(NumericsError):
        ad.exp(ad.Tensor([1000.0]))


def test_shape_errors():
    with pytest.raises(ShapeError):
        ad.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ad.linear(np.ones((2, 3)), np.ones((4, 2)))


def test_no_recording_outside_tape():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    y = ad.relu(x)
    assert not y.requires_grad and y._tape is None


def test_max_over_set_routes_to_first_max():
    x = ad.Tensor(np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]]), requires_grad=True)
    with ad.Tape() as tape:
        tape.backward(ad.sum(ad.max_over_set(x, axis=1)))
    np.testing.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])


def test_inputs_not_mutated():
    a, b = r(3, 4), r(4, 2)
    a0, b0 = a.copy(), b.copy()
    ta, tb = ad.Tensor(a, requires_grad=True), ad.Tensor(b, requires_grad=True)
    with ad.Tape() as tape:
        out = ad.sum(ad.relu(ad.linear(ta, tb, np.ones(2))))
        tape.backward(out)
    np.testing.assert_array_equal(ta.data, a0)
    np.testing.assert_array_equal(tb.data, b0)


def test_linearity_of_backward():
    x0 = r(5)

    def grad_of(f):
        x = ad.Tensor(x0.copy(), requires_grad=True)
        with ad.Tape() as tape:
            tape.backward(f(x))
        return x.grad

    f = lambda x: ad.sum(ad.tanh(x))
    g = lambda x: ad.sum(ad.exp(x) * x)
    np.testing.assert_allclose(grad_of(lambda x: f(x) + g(x)), grad_of(f) + grad_of(g),
                               rtol=1e-13)


def test_detach_stops_gradient():
    x = ad.Tensor(r(3), requires_grad=True)
    with ad.Tape() as tape:
        tape.backward(ad.sum(x * ad.detach(x)))
    np.testing.assert_allclose(x.grad, x.data)


# one composite per registered op; every case is differentiated by the tape and by
# central differences
W = r(4, 3)
CASES = {
    "add": (lambda a, b: ad.sum(ad.tanh(ad.add(a, b))), [r(3, 4), r(4)]),
    "sub": (lambda a, b: ad.sum(ad.tanh(ad.sub(a, b))), [r(3, 1), r(4)]),
    "mul": (lambda a, b: ad.sum(ad.mul(a, b)), [r(2, 3), r(3)]),
    "matmul": (lambda a, b: ad.sum(ad.tanh(ad.matmul(a, b))), [r(2, 3), r(3, 4)]),
    "linear": (lambda x, w, b: ad.sum(ad.tanh(ad.linear(x, w, b))), [r(2, 5, 4), r(4, 3), r(3)]),
    "relu": (lambda x: ad.sum(ad.relu(x) * W[:2]), [r(2, 3) + 0.05]),
    "tanh": (lambda x: ad.sum(ad.tanh(x) * W[:2]), [r(2, 3)]),
    "exp": (lambda x: ad.sum(ad.exp(x) * W[:2]), [r(2, 3)]),
    "log": (lambda x: ad.sum(ad.log(x) * W[:2]), [np.abs(r(2, 3)) + 0.5]),
    "softmax": (lambda x: ad.sum(ad.softmax(x) * W), [r(4, 3)]),
    "log_softmax": (lambda x: ad.sum(ad.log_softmax(x) * W), [r(4, 3)]),
    "sum": (lambda x: ad.sum(ad.tanh(ad.sum(x, axis=1))), [r(3, 4)]),
    "mean": (lambda x: ad.sum(ad.tanh(ad.mean(x, axis=0, keepdims=True))), [r(3, 4)]),
    "max_over_set": (lambda x: ad.sum(ad.max_over_set(x, axis=1) * W[:, 0]), [r(4, 5)]),
    "standardize": (lambda x: ad.sum(ad.standardize(x) * W), [r(4, 3)]),
    "reshape": (lambda x: ad.sum(ad.reshape(x, (4, 3)) * W), [r(2, 6)]),
    "gather": (lambda x: ad.sum(ad.tanh(ad.gather(x, [0, 2, 2, 1]))), [r(3, 2)]),
    "batch_gather": (lambda x: ad.sum(ad.tanh(ad.batch_gather(x, [[0, 1, 1], [2, 2, 0]]))),
                     [r(2, 3, 2)]),
    "concat": (lambda a, b: ad.sum(ad.concat([a, b], axis=-1) * W), [r(4, 1), r(4, 2)]),
}


def test_every_registered_op_has_a_case():
    assert set(ad.OPS) <= set(CASES)


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradients_match_finite_differences(name):
    build, leaves = CASES[name]
    assert check_grads(build, leaves) < 1e-4
