"""MLP classifiers, analytic test heads and mean-field Gaussian variational parameters."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from otmdr import tensor as T
from otmdr.errors import ShapeMismatchError
from otmdr.rng import RngStream
from otmdr.tensor import ParamVector, Tensor

DEFAULT_LOG_SIGMA = math.log(0.05)


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """Fully connected classifier ``layer_sizes = (inputs, hidden..., classes)``."""

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes}")
        if self.layer_sizes[-1] < 2:
            raise ValueError("a classifier needs at least 2 classes")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for i, (a, b) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            shapes[f"W{i}"] = (a, b)
            shapes[f"b{i}"] = (b,)
        return shapes

    def logits_graph(self, leaves: dict[str, Tensor], inputs) -> Tensor:
        x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
        if x.data.ndim != 2 or x.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatchError(f"inputs shape {x.shape}, expected (batch, {self.layer_sizes[0]})")
        act = T.relu if self.activation == "relu" else T.tanh
        for i in range(self.n_layers):
            x = T.add_bias(T.matmul(x, leaves[f"W{i}"]), leaves[f"b{i}"])
            if i < self.n_layers - 1:
                x = act(x)
        return x

    def loss_graph(self, leaves, batch) -> Tensor:
        return T.softmax_cross_entropy(self.logits_graph(leaves, batch.inputs), batch.labels)


@dataclasses.dataclass(frozen=True)
class QuadraticHead:
    """``L(theta) = 0.5 * ||theta||^2`` regardless of the batch contents."""

    dim: int = 2

    def param_shapes(self):
        return {"theta": (self.dim,)}

    def loss_graph(self, leaves, batch) -> Tensor:
        return T.affine(T.square_sum(leaves["theta"]), 0.5)


@dataclasses.dataclass(frozen=True)
class LinearHead:
    """``L(theta) = a . theta`` regardless of the batch contents."""

    coef: tuple[float, ...]

    def param_shapes(self):
        return {"theta": (len(self.coef),)}

    def loss_graph(self, leaves, batch) -> Tensor:
        a = Tensor(np.asarray(self.coef, dtype=np.float64).reshape(1, -1))
        theta = leaves["theta"]
        col = _as_column(theta)
        return _squeeze_scalar(T.matmul(a, col))


def _as_column(t: Tensor) -> Tensor:
    def backward(g):
        t._accumulate(g.reshape(t.shape))

    out = Tensor(t.data.reshape(-1, 1), _parents=(t,))
    if out.requires_grad:
        out._backward = backward
    return out


def _squeeze_scalar(t: Tensor) -> Tensor:
    def backward(g):
        t._accumulate(np.full(t.shape, float(g)))

    out = Tensor(t.data.reshape(()), _parents=(t,))
    if out.requires_grad:
        out._backward = backward
    return out


def init_params(model: ModelSpec, seed: int) -> ParamVector:
    """He (relu) or Xavier-style 1/fan_in (tanh) Gaussian weights, zero biases."""
    gain = 2.0 if model.activation == "relu" else 1.0
    segs = {}
    for name, shape in model.param_shapes().items():
        if name.startswith("W"):
            fan_in = shape[0]
            draw = RngStream(seed, purpose=f"init/{name}").normal(int(np.prod(shape)), std=math.sqrt(gain / fan_in))
            segs[name] = draw.reshape(shape)
        else:
            segs[name] = np.zeros(shape)
    return ParamVector(segs)


def forward_logits(params: ParamVector, model: ModelSpec, inputs) -> np.ndarray:
    T.check_params(params, model)
    leaves = {k: Tensor(v) for k, v in params.items()}
    return model.logits_graph(leaves, np.asarray(inputs, dtype=np.float64)).data


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclasses.dataclass
class VariationalParams:
    """Mean-field Gaussian over parameters; scales stored as log sigma."""

    mu: ParamVector
    log_sigma: ParamVector

    def __post_init__(self):
        self.mu.check_same_structure(self.log_sigma)

    @property
    def sigma(self) -> ParamVector:
        return self.log_sigma.map(np.exp)


@dataclasses.dataclass
class NoiseDraw:
    kappa: ParamVector


def init_variational(model: ModelSpec, seed: int, log_sigma: float = DEFAULT_LOG_SIGMA) -> VariationalParams:
    mu = init_params(model, seed)
    return VariationalParams(mu, mu.map(lambda v: np.full(v.shape, log_sigma)))


def draw_noise(like: ParamVector, rng: RngStream) -> NoiseDraw:
    return NoiseDraw(like.unflatten(rng.normal(like.total_len)))


def reparam_sample(v: VariationalParams, noise: NoiseDraw) -> ParamVector:
    """``mu + exp(log_sigma) * kappa`` elementwise."""
    v.mu.check_same_structure(noise.kappa)
    return v.mu + v.sigma.zip_map(noise.kappa, np.multiply)


def kl_to_standard_normal(v: VariationalParams) -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over coordinates."""
    mu = v.mu.flatten()
    ls = v.log_sigma.flatten()
    return float(0.5 * np.sum(np.exp(2.0 * ls) + mu * mu - 1.0) - np.sum(ls))
