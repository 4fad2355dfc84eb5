import numpy as np
import pytest
import scipy.sparse as sp

from src.autodiff import GradientTape, focal_loss_terms
from src.errors import ContractError
from src.utils import make_rng


def _finite_difference(fn, value, h=1e-6):
    grad = np.zeros_like(value)
    for index in np.ndindex(value.shape):
        plus, minus = value.copy(), value.copy()
        plus[index] += h
        minus[index] -= h
        grad[index] = (fn(plus) - fn(minus)) / (2 * h)
    return grad


def test_square():
    tape = GradientTape()
    w = tape.watch(np.array([3.0]), "w")
    assert tape.backward(tape.matmul(w, w))["w"].tolist() == [6.0]


def test_zero_adjoint_gives_zero_gradients():
    tape = GradientTape()
    leaves = tape.watch_all({"a": np.ones((2, 3)), "b": np.ones(3)})
    out = tape.relu(tape.add(leaves["a"], leaves["b"]))
    grads = tape.backward(out, adjoint=0.0)
    assert not np.any(grads["a"]) and not np.any(grads["b"])


def test_backward_before_forward():
    tape = GradientTape()
    with pytest.raises(ContractError):
        tape.backward(tape.watch(1.0, "w"))
    with pytest.raises(ContractError):
        _ = tape.output


def test_disabled_tape_cannot_differentiate():
    tape = GradientTape(enabled=False)
    w = tape.watch(np.ones(2), "w")
    out = tape.matmul(w, w)
    assert out.value == 2.0
    with pytest.raises(ContractError):
        tape.backward(out)


def test_unreachable_parameter_gets_zeros():
    tape = GradientTape()
    used = tape.watch(np.ones(2), "used")
    tape.watch(np.ones(3), "unused")
    grads = tape.backward(tape.matmul(used, used))
    assert grads["unused"].tolist() == [0.0, 0.0, 0.0]


def test_mlp_ops_match_finite_differences():
    rng = make_rng(0, "mlp")
    x = rng.standard_normal((5, 4))
    w1, b1 = rng.standard_normal((4, 3)), rng.standard_normal(3)
    w2 = rng.standard_normal((6, 2))

    def forward(tape, w):
        hidden = tape.relu(tape.add(tape.matmul(tape.constant(x), w), tape.constant(b1)))
        attention = tape.matmul(hidden, tape.tile(tape.mean_rows(hidden), 1))
        pooled = tape.matmul(tape.transpose(hidden), attention)
        features = tape.concat([pooled, tape.mean_rows(hidden)])
        return tape.matmul(tape.stack([features, features]), tape.constant(w2))

    def scalar(w):
        tape = GradientTape(enabled=False)
        out = forward(tape, tape.constant(w))
        return float(np.sum(out.value * np.arange(4).reshape(2, 2)))

    tape = GradientTape()
    w = tape.watch(w1, "w1")
    out = forward(tape, w)
    grads = tape.backward(out, adjoint=np.arange(4.0).reshape(2, 2))
    np.testing.assert_allclose(grads["w1"], _finite_difference(scalar, w1), rtol=1e-6, atol=1e-8)


def test_rayleigh_quotient_gradient():
    laplacian = sp.csr_matrix(np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]))
    x0 = make_rng(1, "rq").standard_normal((3, 2))
    weights = np.array([0.7, -1.3])

    def scalar(x):
        tape = GradientTape(enabled=False)
        return float(tape.rayleigh_quotient(laplacian, tape.constant(x), 1e-12).value @ weights)

    tape = GradientTape()
    x = tape.watch(x0, "x")
    grads = tape.backward(tape.rayleigh_quotient(laplacian, x, 1e-12), adjoint=weights)
    np.testing.assert_allclose(grads["x"], _finite_difference(scalar, x0), rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("with_running_stats", [False, True])
def test_batch_norm_gradient(with_running_stats):
    rng = make_rng(2, "bn")
    z0 = rng.standard_normal((4, 3))
    gamma0, beta0 = rng.standard_normal(3), rng.standard_normal(3)
    upstream = rng.standard_normal((4, 3))
    stats = (rng.standard_normal(3), rng.random(3) + 0.5) if with_running_stats else (None, None)

    def scalar(z, gamma, beta):
        tape = GradientTape(enabled=False)
        out, _, _ = tape.batch_norm(tape.constant(z), tape.constant(gamma), tape.constant(beta), 1e-5, *stats)
        return float(np.sum(out.value * upstream))

    tape = GradientTape()
    leaves = tape.watch_all({"z": z0, "gamma": gamma0, "beta": beta0})
    out, _, _ = tape.batch_norm(leaves["z"], leaves["gamma"], leaves["beta"], 1e-5, *stats)
    grads = tape.backward(out, adjoint=upstream)
    np.testing.assert_allclose(grads["z"], _finite_difference(lambda z: scalar(z, gamma0, beta0), z0),
                               rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(grads["gamma"], _finite_difference(lambda g: scalar(z0, g, beta0), gamma0),
                               rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(grads["beta"], upstream.sum(axis=0), rtol=1e-10)


def test_batch_norm_constant_column_gives_shift():
    tape = GradientTape(enabled=False)
    z = tape.constant(np.ones((3, 2)))
    out, mean, var = tape.batch_norm(z, tape.constant(np.full(2, 5.0)), tape.constant([0.3, -0.2]), 1e-5)
    np.testing.assert_allclose(out.value, [[0.3, -0.2]] * 3)
    assert var.tolist() == [0.0, 0.0]


def test_linear_map_uses_adjoint():
    matrix = make_rng(3, "linear").standard_normal((4, 3))
    tape = GradientTape()
    x = tape.watch(np.ones((3, 2)), "x")
    y = tape.linear_map(x, lambda v: matrix @ v, lambda g: matrix.T @ g)
    upstream = np.arange(8.0).reshape(4, 2)
    np.testing.assert_allclose(tape.backward(y, upstream)["x"], matrix.T @ upstream)


def test_dropout_mask_replayed():
    mask = np.array([[2.0, 0.0], [0.0, 2.0]])
    tape = GradientTape()
    z = tape.watch(np.ones((2, 2)), "z")
    grads = tape.backward(tape.multiply_constant(z, mask), np.ones((2, 2)))
    np.testing.assert_array_equal(grads["z"], mask)


class TestFocalLoss:
    def test_cross_entropy_limit(self):
        logits = np.array([[0.3, -1.2]])
        losses, _ = focal_loss_terms(logits, [1], [1.0], 0.0, -50.0)
        probs = np.exp(logits) / np.exp(logits).sum()
        assert losses[0] == pytest.approx(-np.log(probs[0, 1]))

    def test_confident_correct_is_zero(self):
        losses, grad = focal_loss_terms(np.array([[0.0, 800.0]]), [1], [1.0], 1.5, -50.0)
        assert losses[0] == 0.0
        assert not np.any(grad)

    def test_clamped_log(self):
        losses, _ = focal_loss_terms(np.array([[0.0, -200.0]]), [1], [1.0], 0.0, -50.0)
        assert losses[0] == pytest.approx(50.0)

    @pytest.mark.parametrize("gamma", [0.0, 0.5, 1.5, 2.0])
    def test_gradient(self, gamma):
        rng = make_rng(4, "focal")
        logits0 = rng.standard_normal((5, 2))
        labels = np.array([0, 1, 1, 0, 1])
        weights = np.array([0.2, 0.9, 0.9, 0.2, 0.9])

        def scalar(logits):
            return float(focal_loss_terms(logits, labels, weights, gamma, -50.0)[0].mean())

        tape = GradientTape()
        logits = tape.watch(logits0, "logits")
        loss = tape.focal_loss(logits, labels, weights, gamma, -50.0)
        assert float(loss.value) == pytest.approx(scalar(logits0))
        np.testing.assert_allclose(tape.backward(loss)["logits"], _finite_difference(scalar, logits0),
                                   rtol=1e-6, atol=1e-9)
