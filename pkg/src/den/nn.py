"""Dense networks with explicit caches, hand-written backprop and Adam.

Every trainable block of a DEN model (the embedding net, the label
encoder, and both classifier nets) is a :class:`DenseNet`.  Inputs may be
a single vector ``(in,)`` or a batch ``(n, in)``; gradients are summed
over the batch, so callers that want a mean loss scale the upstream
gradient by ``1/n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseNet:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if len(self.weights) != len(self.layer_dims) - 1:
            raise ValueError("need one weight matrix per consecutive pair of dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {i}: expected W{shape}, b({shape[0]},)")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def named_params(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    def n_params(self, with_biases: bool = True) -> int:
        n = sum(w.size for w in self.weights)
        if with_biases:
            n += sum(b.size for b in self.biases)
        return n

    def copy(self) -> DenseNet:
        return DenseNet(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


@dataclass
class DenseGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out


@dataclass
class DenseCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    vector_input: bool


def init_params(
    layer_dims: list[int],
    seed: int | np.random.Generator,
    activations: list[str] | None = None,
) -> DenseNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.

    Hidden layers default to ReLU and the output layer to identity.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError("layer_dims needs at least an input and an output dim")
    if any(d < 1 for d in dims):
        raise ValueError(f"all layer dims must be >= 1, got {dims}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if activations is None:
        activations = ["relu"] * (len(dims) - 2) + ["identity"]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(dims, weights, biases, list(activations))


def dense_forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, DenseCache]:
    x = np.asarray(x, dtype=np.float64)
    vector_input = x.ndim == 1
    a = x[None, :] if vector_input else x
    if a.ndim != 2 or a.shape[1] != net.in_dim:
        raise ValueError(f"expected input width {net.in_dim}, got shape {x.shape}")
    inputs, preacts = [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(a)
        z = a @ w.T + b
        preacts.append(z)
        a = np.maximum(z, 0.0) if act == "relu" else z
    out = a[0] if vector_input else a
    return out, DenseCache(inputs, preacts, vector_input)


def dense_backward(
    net: DenseNet, cache: DenseCache, upstream_grad: np.ndarray
) -> tuple[DenseGrads, np.ndarray]:
    """Backpropagate ``upstream_grad`` (dL/d output) through ``net``."""
    if len(cache.inputs) != len(net.weights):
        raise ValueError("cache does not belong to this network")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if cache.vector_input:
        g = g[None, :]
    if g.shape != cache.preacts[-1].shape:
        raise ValueError(
            f"upstream grad shape {g.shape} != output shape {cache.preacts[-1].shape}"
        )
    n_layers = len(net.weights)
    dw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    db: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in reversed(range(n_layers)):
        if net.activations[i] == "relu":
            g = g * (cache.preacts[i] > 0)
        dw[i] = g.T @ cache.inputs[i]
        db[i] = g.sum(axis=0)
        g = g @ net.weights[i]
    dx = g[0] if cache.vector_input else g
    return DenseGrads(dw, db), dx


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray], **hyper) -> AdamState:
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Inputs are not modified.

    Parameters absent from ``grads`` are passed through untouched and
    their moments are not advanced.
    """
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = dict(params), dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if m.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"{name}: optimizer state shape mismatch")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name], new_v[name] = m, v
    new_state = AdamState(
        new_m, new_v, t, state.learning_rate, state.beta1, state.beta2, state.epsilon
    )
    return new_params, new_state
