"""Dense float64 tensors with reverse-mode autodiff, and flat parameter vectors.

The graph is rebuilt on every call: each op returns a new :class:`Tensor`
holding its parents and a closure that pushes the upstream gradient to them.
Only the primitives an MLP classifier needs are provided.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping

import numpy as np

from otmdr import kernels
from otmdr.errors import EmptyBatchError, NonFiniteError, ShapeMismatchError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g  # ops never mutate gradients in place, so aliasing is safe
        else:
            self.grad = self.grad + g

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatchError(f"backward() needs a scalar, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar for the few ops with an obvious meaning
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)


def _node(data, parents, backward):
    out = Tensor(data, _parents=tuple(parents))
    if out.requires_grad:
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul of {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeMismatchError(f"bias {b.shape} does not match {x.shape}")

    def backward(g):
        x._accumulate(g)
        b._accumulate(g.sum(axis=0))

    return _node(x.data + b.data, (x, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"add of {a.shape} and {b.shape}")

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return _node(a.data + b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - y * y))

    return _node(y, (x,), backward)


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """Elementwise ``scale * x + shift``."""

    def backward(g):
        x._accumulate(scale * g)

    return _node(scale * x.data + shift, (x,), backward)


def square_sum(x: Tensor) -> Tensor:
    """Scalar sum of squares, used by quadratic test heads."""
    flat = x.data.ravel()

    def backward(g):
        x._accumulate(2.0 * g * x.data)

    return _node(kernels.pairwise_sum(flat * flat), (x,), backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Fused log-softmax + NLL, averaged over rows with a fixed pairwise tree."""
    labels = np.asarray(labels, dtype=np.int_)
    n = logits.shape[0]
    if n == 0:
        raise EmptyBatchError("empty batch")
    losses, probs = kernels.softmax_xent(logits.data, labels)

    def backward(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        logits._accumulate(d * (g / n))

    return _node(kernels.pairwise_sum(losses) / n, (logits,), backward)


class ParamVector:
    """Ordered named segments of float64 arrays, viewable as one flat vector."""

    __slots__ = ("_segments",)

    def __init__(self, segments: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]):
        items = segments.items() if isinstance(segments, Mapping) else segments
        self._segments = {}
        for name, arr in items:
            if name in self._segments:
                raise ShapeMismatchError(f"duplicate segment {name!r}")
            self._segments[name] = np.array(arr, dtype=np.float64, copy=True)

    @classmethod
    def _wrap(cls, segments: dict) -> ParamVector:
        """Adopt freshly computed arrays without copying them."""
        out = cls.__new__(cls)
        out._segments = segments
        return out

    @classmethod
    def zeros(cls, shapes: Mapping[str, tuple]) -> ParamVector:
        return cls({k: np.zeros(s) for k, s in shapes.items()})

    def __getitem__(self, name):
        return self._segments[name]

    def __len__(self):
        return len(self._segments)

    def __iter__(self):
        return iter(self._segments)

    def items(self):
        return self._segments.items()

    @property
    def names(self) -> list[str]:
        return list(self._segments)

    @property
    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self._segments.items()}

    @property
    def total_len(self) -> int:
        return sum(v.size for v in self._segments.values())

    def flatten(self) -> np.ndarray:
        if not self._segments:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._segments.values()])

    def unflatten(self, flat) -> ParamVector:
        """A vector with this structure whose contents come from ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.total_len,):
            raise ShapeMismatchError(f"flat vector of length {flat.size}, expected {self.total_len}")
        out, i = {}, 0
        for name, v in self._segments.items():
            out[name] = flat[i : i + v.size].reshape(v.shape)
            i += v.size
        return ParamVector(out)

    def check_same_structure(self, other: ParamVector):
        if self.names != other.names:
            raise ShapeMismatchError(f"segment names differ: {self.names} vs {other.names}")
        for name in self.names:
            if self[name].shape != other[name].shape:
                raise ShapeMismatchError(
                    f"segment {name!r}: shape {other[name].shape}, expected {self[name].shape}"
                )

    def map(self, fn) -> ParamVector:
        return ParamVector({k: fn(v) for k, v in self._segments.items()})

    def zip_map(self, other: ParamVector, fn) -> ParamVector:
        self.check_same_structure(other)
        return ParamVector({k: fn(v, other[k]) for k, v in self._segments.items()})

    def _binary(self, other, ufunc) -> ParamVector:
        self.check_same_structure(other)
        return ParamVector._wrap({k: ufunc(v, other._segments[k]) for k, v in self._segments.items()})

    def copy(self) -> ParamVector:
        return ParamVector(self._segments)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        return ParamVector._wrap({k: v * scalar for k, v in self._segments.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self.map(lambda v: v / scalar)

    def __neg__(self):
        return self.map(np.negative)

    def dot(self, other: ParamVector) -> float:
        self.check_same_structure(other)
        return float(np.dot(self.flatten(), other.flatten()))

    def norm(self) -> float:
        f = self.flatten()
        return float(np.sqrt(np.dot(f, f)))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self._segments.values())

    def bit_equal(self, other: ParamVector) -> bool:
        return self.names == other.names and all(
            self[k].shape == other[k].shape and self[k].tobytes() == other[k].tobytes() for k in self.names
        )

    def __repr__(self):
        segs = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._segments.items())
        return f"ParamVector({segs})"


def check_params(params: ParamVector, model):
    expected = model.param_shapes()
    for name, shape in expected.items():
        if name not in params._segments:
            raise ShapeMismatchError(f"missing segment {name!r}")
        if params[name].shape != tuple(shape):
            raise ShapeMismatchError(f"segment {name!r}: shape {params[name].shape}, expected {tuple(shape)}")
    extra = [k for k in params.names if k not in expected]
    if extra:
        raise ShapeMismatchError(f"unexpected segment {extra[0]!r}")


def _check_batch(batch):
    if len(batch) == 0:
        raise EmptyBatchError("empty batch")


def evaluate_loss(params: ParamVector, model, batch) -> float:
    """Mean batch loss ``L_B(theta)`` as defined by ``model.loss_graph``."""
    _check_batch(batch)
    check_params(params, model)
    leaves = {k: Tensor(v) for k, v in params.items()}
    return model.loss_graph(leaves, batch).item()


def loss_and_gradient(params: ParamVector, model, batch) -> tuple[float, ParamVector]:
    _check_batch(batch)
    check_params(params, model)
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = model.loss_graph(leaves, batch)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return loss.item(), ParamVector._wrap(grads)


def gradient(params: ParamVector, model, batch) -> ParamVector:
    return loss_and_gradient(params, model, batch)[1]


def finite_diff_gradient(params: ParamVector, model, batch, h: float = 1e-5) -> ParamVector:
    """Central differences with per-coordinate step ``h * (1 + |theta_i|)``."""
    if not h > 0:
        raise ValueError("h must be positive")
    flat = params.flatten()
    out = np.empty_like(flat)
    for i in range(flat.size):
        step = h * (1.0 + abs(flat[i]))
        probe = flat.copy()
        probe[i] = flat[i] + step
        up = evaluate_loss(params.unflatten(probe), model, batch)
        probe[i] = flat[i] - step
        down = evaluate_loss(params.unflatten(probe), model, batch)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteError(f"non-finite loss probing coordinate {i}")
        out[i] = (up - down) / ((flat[i] + step) - (flat[i] - step))
    return params.unflatten(out)
