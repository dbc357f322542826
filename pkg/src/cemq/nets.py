"""Dense feed-forward networks with explicit reverse-mode gradients.

Everything is float64 numpy. The only topology supported is the fixed MLP
shape the training code needs: ReLU hidden layers and an identity or tanh
output. Forward convention is row-major batches, ``y = relu(x @ W + b)``
layer by layer, so a weight matrix for a layer mapping ``m -> n`` features
has shape ``(m, n)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64

_SAVE_FORMAT_VERSION = 1

OUTPUT_ACTIVATIONS = ("identity", "tanh")


class NumericalError(ArithmeticError):
    """A non-finite value showed up where the math requires finite ones."""


@dataclass
class Gradients:
    """Per-parameter gradient buffers, shape-congruent with a DenseNet."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def is_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.weights + self.biases)


@dataclass
class ForwardCache:
    """Intermediate activations saved by forward_with_cache for backward."""

    inputs: np.ndarray          # [B, in_dim]
    hidden: list[np.ndarray]    # post-ReLU activations per hidden layer
    output: np.ndarray          # [B, out_dim], after output activation


class DenseNet:
    """Fixed-topology MLP: ReLU hidden layers, identity or tanh output."""

    __slots__ = ("layer_sizes", "weights", "biases", "output_activation")

    def __init__(self, layer_sizes, weights, biases, output_activation="identity"):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2 or any(s <= 0 for s in layer_sizes):
            raise ValueError(f"layer_sizes must be >= 2 positive ints, got {layer_sizes}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        if len(weights) != len(layer_sizes) - 1 or len(biases) != len(layer_sizes) - 1:
            raise ValueError("need one weight matrix and bias vector per layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            want = (layer_sizes[i], layer_sizes[i + 1])
            if w.shape != want:
                raise ValueError(f"weight {i} has shape {w.shape}, expected {want}")
            if b.shape != (layer_sizes[i + 1],):
                raise ValueError(f"bias {i} has shape {b.shape}, expected ({layer_sizes[i + 1]},)")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericalError(f"layer {i} parameters contain non-finite values")
        self.layer_sizes = layer_sizes
        self.weights = [np.ascontiguousarray(w, dtype=DTYPE) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=DTYPE) for b in biases]
        self.output_activation = output_activation

    @classmethod
    def initialized(cls, layer_sizes, output_activation="identity", rng=None):
        """Seeded init: each layer uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
        if rng is None:
            rng = np.random.default_rng()
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=(fan_out,)))
        return cls(layer_sizes, weights, biases, output_activation)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def clone(self) -> "DenseNet":
        return DenseNet(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"input has shape {x.shape}, expected (B, {self.in_dim})"
            )
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batch forward pass, [B, in_dim] -> [B, out_dim]. Pure; thread-safe."""
        h = self._check_input(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0.0, out=h)
        if self.output_activation == "tanh":
            np.tanh(h, out=h)
        return h

    def forward_with_cache(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        """Forward pass that keeps the activations backward() needs."""
        x = self._check_input(x)
        h = x
        hidden = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0.0, out=h)
                hidden.append(h)
        if self.output_activation == "tanh":
            np.tanh(h, out=h)
        return h, ForwardCache(inputs=x, hidden=hidden, output=h)

    def backward(self, cache: ForwardCache, upstream: np.ndarray) -> tuple[Gradients, np.ndarray]:
        """Reverse-mode pass from an upstream output gradient.

        Returns the parameter gradients (summed over the batch) and the
        gradient with respect to the inputs, shape [B, in_dim]. The input
        gradient is what lets a policy network receive gradients through a
        Q-network's action columns.
        """
        if not isinstance(cache, ForwardCache):
            raise TypeError("backward needs the ForwardCache from forward_with_cache")
        upstream = np.asarray(upstream, dtype=DTYPE)
        if upstream.shape != cache.output.shape:
            raise ValueError(
                f"upstream has shape {upstream.shape}, expected {cache.output.shape}"
            )
        if cache.inputs.shape[1] != self.in_dim or len(cache.hidden) != len(self.weights) - 1:
            raise ValueError("forward cache does not match this network")

        if self.output_activation == "tanh":
            dz = upstream * (1.0 - cache.output**2)
        else:
            dz = upstream

        d_w: list[np.ndarray] = [None] * len(self.weights)
        d_b: list[np.ndarray] = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            below = cache.hidden[i - 1] if i > 0 else cache.inputs
            d_w[i] = below.T @ dz
            d_b[i] = dz.sum(axis=0)
            dx = dz @ self.weights[i].T
            if i > 0:
                dz = dx * (cache.hidden[i - 1] > 0.0)
        return Gradients(weights=d_w, biases=d_b), dx


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for one DenseNet."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: DenseNet, lr: float, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        state.m_w = [np.zeros_like(w) for w in net.weights]
        state.v_w = [np.zeros_like(w) for w in net.weights]
        state.m_b = [np.zeros_like(b) for b in net.biases]
        state.v_b = [np.zeros_like(b) for b in net.biases]
        return state


def _adam_apply(param, grad, m, v, state, bc1, bc2):
    if state.weight_decay != 0.0:
        grad = grad + state.weight_decay * param
    m *= state.beta1
    m += (1.0 - state.beta1) * grad
    v *= state.beta2
    v += (1.0 - state.beta2) * grad**2
    m_hat = m / bc1
    v_hat = v / bc2
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def adam_step(net: DenseNet, grads: Gradients, state: AdamState) -> None:
    """One in-place Adam update. Raises NumericalError on non-finite grads."""
    if len(grads.weights) != len(net.weights):
        raise ValueError("gradient layer count does not match network")
    for i, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if gw.shape != net.weights[i].shape or gb.shape != net.biases[i].shape:
            raise ValueError(f"gradient shapes for layer {i} do not match network")
    if not grads.is_finite():
        raise NumericalError("non-finite gradient; refusing to update parameters")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for i in range(len(net.weights)):
        _adam_apply(net.weights[i], grads.weights[i], state.m_w[i], state.v_w[i], state, bc1, bc2)
        _adam_apply(net.biases[i], grads.biases[i], state.m_b[i], state.v_b[i], state, bc1, bc2)


def polyak_update(target: DenseNet, source: DenseNet, tau: float) -> None:
    """Soft target update: target <- tau*source + (1-tau)*target, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if target.layer_sizes != source.layer_sizes:
        raise ValueError(
            f"architecture mismatch: {target.layer_sizes} vs {source.layer_sizes}"
        )
    for tw, sw in zip(target.weights, source.weights):
        tw[...] = tau * sw + (1.0 - tau) * tw
    for tb, sb in zip(target.biases, source.biases):
        tb[...] = tau * sb + (1.0 - tau) * tb


def save_dense_net(net: DenseNet, path) -> None:
    """Write a versioned .npz; float64 arrays round-trip bit-exact."""
    meta = {
        "format_version": _SAVE_FORMAT_VERSION,
        "layer_sizes": net.layer_sizes,
        "output_activation": net.output_activation,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load_dense_net(path) -> DenseNet:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format_version") != _SAVE_FORMAT_VERSION:
            raise ValueError(f"unsupported parameter file version: {meta.get('format_version')}")
        n_layers = len(meta["layer_sizes"]) - 1
        weights = [data[f"w{i}"] for i in range(n_layers)]
        biases = [data[f"b{i}"] for i in range(n_layers)]
    return DenseNet(meta["layer_sizes"], weights, biases, meta["output_activation"])
