"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape-based engine: every operation builds a node holding its parents
and a closure that routes the output gradient back to them.  All math runs in
float64 so analytic gradients can be checked against central finite
differences at tight tolerances.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True

_SQRT_2 = np.sqrt(2.0)
_SQRT_2_PI = np.sqrt(2.0 / np.pi)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction; results inside are constants."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        if not _GRAD_ENABLED or not any(p.requires_grad for p in parents):
            return Tensor(data)
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            # Own a dense copy: `grad` may be a view into another buffer.
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)

        def backward(grad, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(grad, b.shape))

        return Tensor._result(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def backward(grad, a=self):
            if a.requires_grad:
                a._accumulate(-grad)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)

        def backward(grad, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(grad * a.data, b.shape))

        return Tensor._result(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)

        def backward(grad, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(grad / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-grad * a.data / (b.data * b.data), b.shape))

        return Tensor._result(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")

        def backward(grad, a=self, e=exponent):
            if a.requires_grad:
                a._accumulate(grad * e * a.data ** (e - 1.0))

        return Tensor._result(self.data ** exponent, (self,), backward)

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)

        def backward(grad, a=self, b=other):
            if a.requires_grad:
                ga = grad @ b.data.swapaxes(-1, -2)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = a.data.swapaxes(-1, -2) @ grad
                b._accumulate(_unbroadcast(gb, b.shape))

        return Tensor._result(self.data @ other.data, (self, other), backward)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def backward(grad, a=self):
            if a.requires_grad:
                a._accumulate(grad.reshape(a.shape))

        return Tensor._result(self.data.reshape(shape), (self,), backward)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))

        def backward(grad, a=self, inv=inverse):
            if a.requires_grad:
                a._accumulate(grad.transpose(inv))

        return Tensor._result(self.data.transpose(axes), (self,), backward)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def __getitem__(self, key) -> "Tensor":
        def backward(grad, a=self, k=key):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, k, grad)
                a._accumulate(full)

        return Tensor._result(self.data[key], (self,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        def backward(grad, a=self, ax=axis, kd=keepdims):
            if a.requires_grad:
                g = grad
                if ax is not None and not kd:
                    g = np.expand_dims(g, ax)
                a._accumulate(np.broadcast_to(g, a.shape).copy())

        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- elementwise nonlinearities -----------------------------------------

    def exp(self) -> "Tensor":
        value = np.exp(self.data)

        def backward(grad, a=self, v=value):
            if a.requires_grad:
                a._accumulate(grad * v)

        return Tensor._result(value, (self,), backward)

    def log(self) -> "Tensor":
        def backward(grad, a=self):
            if a.requires_grad:
                a._accumulate(grad / a.data)

        return Tensor._result(np.log(self.data), (self,), backward)

    def sqrt(self) -> "Tensor":
        value = np.sqrt(self.data)

        def backward(grad, a=self, v=value):
            if a.requires_grad:
                a._accumulate(grad * 0.5 / v)

        return Tensor._result(value, (self,), backward)

    def tanh(self) -> "Tensor":
        value = np.tanh(self.data)

        def backward(grad, a=self, v=value):
            if a.requires_grad:
                a._accumulate(grad * (1.0 - v * v))

        return Tensor._result(value, (self,), backward)

    def relu(self) -> "Tensor":
        keep = (self.data > 0).astype(np.float64)

        def backward(grad, a=self, k=keep):
            if a.requires_grad:
                a._accumulate(grad * k)

        return Tensor._result(self.data * keep, (self,), backward)

    def gelu(self) -> "Tensor":
        # Exact Gaussian CDF form; gradient is Phi(x) + x * phi(x).
        x = self.data
        cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
        value = x * cdf

        def backward(grad, a=self, c=cdf):
            if a.requires_grad:
                pdf = np.exp(-0.5 * a.data * a.data) / np.sqrt(2.0 * np.pi)
                a._accumulate(grad * (c + a.data * pdf))

        return Tensor._result(value, (self,), backward)

    # -- backward driver -----------------------------------------------------

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Backpropagate from this node; `seed` defaults to ones."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed requires a scalar output")
            seed = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(np.asarray(seed, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # Free intermediate gradients and graph references; keep leaf grads.
        for node in order:
            if node._backward is not None:
                node.grad = None
                node._parents = ()
                node._backward = None


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# -- free-function ops -------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def backward(grad, a=x, v=value, ax=axis):
        if a.requires_grad:
            inner = (grad * v).sum(axis=ax, keepdims=True)
            a._accumulate(v * (grad - inner))

    return Tensor._result(value, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    value = shifted - lse

    def backward(grad, a=x, v=value, ax=axis):
        if a.requires_grad:
            a._accumulate(grad - np.exp(v) * grad.sum(axis=ax, keepdims=True))

    return Tensor._result(value, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    Fused into a single tape node; the chained elementwise form costs about
    eight nodes per call, which dominates small-model step time.
    """
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    value = normed * gamma.data + beta.data

    def backward(grad, a=x, g=gamma, b=beta, normed=normed, inv=inv):
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad, b.data.shape))
        if g.requires_grad:
            g._accumulate(_unbroadcast(grad * normed, g.data.shape))
        if a.requires_grad:
            gy = grad * g.data
            mean_gy = gy.mean(axis=-1, keepdims=True)
            mean_gy_normed = (gy * normed).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (gy - mean_gy - normed * mean_gy_normed))

    return Tensor._result(value, (x, gamma, beta), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad, parts=tuple(tensors), offs=offsets, ax=axis):
        for i, part in enumerate(parts):
            if part.requires_grad:
                index = [slice(None)] * grad.ndim
                index[ax] = slice(offs[i], offs[i + 1])
                part._accumulate(grad[tuple(index)])

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(grad, parts=tuple(tensors), ax=axis):
        for i, part in enumerate(parts):
            if part.requires_grad:
                part._accumulate(np.take(grad, i, axis=ax))

    return Tensor._result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup `table[ids]`; gradient scatter-adds into the table."""
    ids = np.asarray(ids)

    def backward(grad, a=table, k=ids):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, k.reshape(-1), grad.reshape(-1, a.data.shape[-1]))
            a._accumulate(full)

    return Tensor._result(table.data[ids], (table,), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = ((x * x).sum(axis=axis, keepdims=True) + eps).sqrt()
    return x / norm


def check_gradient(
    func,
    params: dict[str, Tensor],
    step: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Compare analytic gradients of scalar `func()` against central differences.

    Returns the max relative error per parameter.  `func` must rebuild the
    graph on every call (its value depends on `params` data in place).
    `max_entries` caps the number of probed entries per tensor; the probe
    positions are a seeded deterministic sample.
    """
    for p in params.values():
        p.grad = None
    out = func()
    out.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana_flat = analytic[name].reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            positions = np.arange(flat.size)
        else:
            positions = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.zeros(positions.size)
        for j, i in enumerate(positions):
            original = flat[i]
            flat[i] = original + step
            with no_grad():
                hi = func().item()
            flat[i] = original - step
            with no_grad():
                lo = func().item()
            flat[i] = original
            numeric[j] = (hi - lo) / (2.0 * step)
        picked = ana_flat[positions]
        # Floor shields directions whose true gradient sits below the
        # central-difference noise floor (~1e-10 for unit-scale outputs).
        scale = np.maximum(np.abs(picked) + np.abs(numeric), 1e-5)
        errors[name] = float(np.max(np.abs(picked - numeric) / scale))
        p.grad = None
    return errors
