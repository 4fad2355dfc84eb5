"""
Reverse-mode differentiation on numpy arrays.

Operations are recorded on a GradientTape in execution order together with
the forward values their vector-Jacobian products need. `backward` walks
the record in reverse and accumulates adjoints into the watched leaves.
A tape created with `enabled=False` evaluates the same operations without
recording anything (inference).
"""

import numpy as np

from src.errors import ContractError, ShapeError


class Variable:
    """A value on the tape plus its accumulated adjoint."""

    __slots__ = ("value", "grad", "name", "_parents", "_vjp")

    def __init__(self, value, name=None, parents=(), vjp=None):
        self.value = value
        self.grad = None
        self.name = name
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Variable(name={self.name!r}, shape={self.shape})"


def _unbroadcast(grad, shape):
    """Sum a broadcast adjoint back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class GradientTape:
    """Records differentiable operations for one forward pass."""

    def __init__(self, enabled=True):
        self.enabled = enabled
        self._nodes = []
        self._leaves = {}

    def __len__(self):
        return len(self._nodes)

    @property
    def output(self):
        """The most recently recorded node."""
        if not self._nodes:
            raise ContractError("backward called before a recorded forward pass")
        return self._nodes[-1]

    def watch(self, value, name):
        """Register a parameter whose gradient should be returned."""
        leaf = Variable(np.asarray(value, dtype=np.float64), name=name)
        self._leaves[name] = leaf
        return leaf

    def watch_all(self, tensors):
        return {name: self.watch(value, name) for name, value in tensors.items()}

    def constant(self, value):
        return Variable(np.asarray(value, dtype=np.float64))

    def _record(self, value, parents, vjp):
        if not self.enabled:
            return Variable(value)
        node = Variable(value, parents=parents, vjp=vjp)
        self._nodes.append(node)
        return node

    # elementwise and linear algebra

    def add(self, a, b):
        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return self._record(a.value + b.value, (a, b), vjp)

    def multiply_constant(self, a, constant):
        """a * constant, with the constant (e.g. a dropout mask) held fixed."""
        def vjp(g):
            return (g * constant,)
        return self._record(a.value * constant, (a,), vjp)

    def matmul(self, a, b):
        """Matrix product supporting 1-D operands on either side."""
        av, bv = a.value, b.value

        def vjp(g):
            a2 = av if av.ndim == 2 else av[None, :]
            b2 = bv if bv.ndim == 2 else bv[:, None]
            g2 = np.reshape(g, (a2.shape[0], b2.shape[1]))
            return (g2 @ b2.T).reshape(av.shape), (a2.T @ g2).reshape(bv.shape)
        return self._record(av @ bv, (a, b), vjp)

    def transpose(self, a):
        def vjp(g):
            return (g.T,)
        return self._record(a.value.T, (a,), vjp)

    def relu(self, a):
        mask = a.value > 0

        def vjp(g):
            return (g * mask,)
        return self._record(a.value * mask, (a,), vjp)

    def mean_rows(self, a):
        n = a.value.shape[0]

        def vjp(g):
            return (np.broadcast_to(g / n, a.value.shape).copy(),)
        return self._record(a.value.mean(axis=0), (a,), vjp)

    def tile(self, a, reps):
        """Repeat a vector `reps` times end to end."""
        width = a.value.shape[0]

        def vjp(g):
            return (g.reshape(reps, width).sum(axis=0),)
        return self._record(np.tile(a.value, reps), (a,), vjp)

    def concat(self, parts):
        """Concatenate 1-D variables."""
        sizes = [p.value.shape[0] for p in parts]
        bounds = np.cumsum([0] + sizes)

        def vjp(g):
            return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(parts)))
        return self._record(np.concatenate([p.value for p in parts]), tuple(parts), vjp)

    def stack(self, rows):
        """Stack 1-D variables into a 2-D batch."""
        def vjp(g):
            return tuple(g[k] for k in range(len(rows)))
        return self._record(np.stack([r.value for r in rows]), tuple(rows), vjp)

    def linear_map(self, a, forward, adjoint):
        """y = A(x) for a fixed linear operator with known adjoint."""
        def vjp(g):
            return (adjoint(g),)
        return self._record(forward(a.value), (a,), vjp)

    # model-specific fused operations

    def rayleigh_quotient(self, laplacian, x, eps):
        """r_f = x_fᵀ L x_f / (x_fᵀ x_f + eps) for every column f.

        dr_f/dx_f = 2 (L x_f - r_f x_f) / (x_fᵀ x_f + eps).
        """
        xv = x.value
        lx = laplacian @ xv
        denominator = np.sum(xv * xv, axis=0) + eps
        ratio = np.sum(xv * lx, axis=0) / denominator

        def vjp(g):
            return (2.0 * (lx - xv * ratio) / denominator * g,)
        return self._record(ratio, (x,), vjp)

    def batch_norm(self, z, gamma, beta, eps, mean=None, var=None):
        """
        Per-column normalisation of a (batch, width) variable.

        With `mean`/`var` omitted the batch statistics are used and
        differentiated through; otherwise they are constants.

        Returns:
            tuple: (output Variable, mean used, variance used)
        """
        zv = z.value
        batch_stats = mean is None
        if batch_stats:
            mean = zv.mean(axis=0)
            var = zv.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        normalized = (zv - mean) * inv_std
        out = normalized * gamma.value + beta.value

        def vjp(g):
            grad_gamma = np.sum(g * normalized, axis=0)
            grad_beta = np.sum(g, axis=0)
            grad_normalized = g * gamma.value
            if batch_stats:
                count = zv.shape[0]
                grad_z = inv_std / count * (
                    count * grad_normalized
                    - grad_normalized.sum(axis=0)
                    - normalized * np.sum(grad_normalized * normalized, axis=0)
                )
            else:
                grad_z = grad_normalized * inv_std
            return grad_z, grad_gamma, grad_beta
        return self._record(out, (z, gamma, beta), vjp), mean, var

    def focal_loss(self, logits, labels, weights, gamma, log_floor):
        """
        Mean over the batch of -w_y (1 - p_y)^γ log p_y with p = softmax(logits).

        log p_y is clamped from below at log_floor; clamped samples pass no gradient
        through the log term.
        """
        losses, grad = focal_loss_terms(logits.value, labels, weights, gamma, log_floor)
        count = len(labels)

        def vjp(g):
            return (g * grad / count,)
        return self._record(np.float64(losses.mean()), (logits,), vjp)

    # reverse pass

    def backward(self, target, adjoint=1.0):
        """
        Propagate adjoints from `target` to every watched leaf.

        Returns:
            dict: Gradient array per watched name (zeros when unreachable)

        Raises:
            ContractError: If nothing was recorded or `target` is not on this tape
        """
        if not self.enabled:
            raise ContractError("Cannot differentiate through a tape recorded with enabled=False")
        if not self._nodes or target._vjp is None:
            raise ContractError("backward called before a recorded forward pass")
        target.grad = np.asarray(adjoint, dtype=np.float64) * np.ones_like(target.value)
        for node in reversed(self._nodes):
            if node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._vjp(node.grad)):
                if grad is None:
                    continue
                if np.shape(grad) != parent.shape:
                    raise ShapeError(f"Adjoint of shape {np.shape(grad)} for value of shape {parent.shape}")
                parent.grad = grad if parent.grad is None else parent.grad + grad
        return {
            name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
            for name, leaf in self._leaves.items()
        }


def focal_loss_terms(logits, labels, weights, gamma, log_floor):
    """
    Per-sample class-balanced focal loss and its gradient w.r.t. the logits.

    Args:
        logits (np.ndarray): (batch, classes)
        labels (np.ndarray): (batch,) true classes
        weights (np.ndarray): (batch,) class-balance weight of each sample's class
        gamma (float): Focal exponent
        log_floor (float): Lower clamp of log p_y

    Returns:
        tuple: (losses (batch,), gradient (batch, classes))
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
    rows = np.arange(len(labels))

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    log_p = log_probs[rows, labels]
    clamped = log_p < log_floor
    log_p = np.maximum(log_p, log_floor)
    p = probs[rows, labels]
    one_minus_p = np.clip(1.0 - p, 0.0, None)

    focal = one_minus_p ** gamma
    losses = -weights * focal * log_p

    # d/dp of -(1-p)^γ log p, times dp/dz = p (onehot - probs)
    if gamma > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            focal_slope = np.where(one_minus_p > 0, gamma * one_minus_p ** (gamma - 1.0), 0.0)
    else:
        focal_slope = np.zeros_like(p)
    log_slope = np.where(clamped, 0.0, focal)
    d_loss_d_p_times_p = -weights * (-focal_slope * log_p * p + log_slope)
    onehot = np.zeros_like(probs)
    onehot[rows, labels] = 1.0
    grad = d_loss_d_p_times_p[:, None] * (onehot - probs)
    return losses, grad
