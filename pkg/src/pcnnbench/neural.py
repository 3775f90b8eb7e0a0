"""Small numpy multilayer perceptrons with hand-written reverse mode and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer computes
``x @ W + b``. Every function accepts either a single input vector or a
batch ``(n, fan_in)``; gradients of batched calls are summed over the batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericalError

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError(f"need at least input and output sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpSpec:
        return cls(tuple(d["layer_sizes"]), d["hidden_activation"], d["output_activation"])


@dataclass
class MlpParams:
    """Weights and biases of one network. Gradients use the same container."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, spec: MlpSpec, arrays: list[np.ndarray]) -> MlpParams:
        return cls(spec, list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> MlpParams:
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> MlpParams:
        return MlpParams(self.spec, [np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> MlpParams:
        arrays, i = [], 0
        for a in self.arrays():
            arrays.append(np.asarray(vec[i:i + a.size], dtype=float).reshape(a.shape).copy())
            i += a.size
        if i != len(vec):
            raise ValueError(f"vector length {len(vec)} does not match parameter count {i}")
        return MlpParams.from_arrays(self.spec, arrays)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpParams:
        spec = MlpSpec.from_dict(d["spec"])
        params = cls(spec, [np.array(w, dtype=float).reshape(spec.layer_sizes[i], spec.layer_sizes[i + 1])
                            for i, w in enumerate(d["weights"])],
                     [np.array(b, dtype=float) for b in d["biases"]])
        _check_shapes(params)
        return params


def _check_shapes(params: MlpParams):
    sizes = params.spec.layer_sizes
    if len(params.weights) != len(sizes) - 1 or len(params.biases) != len(sizes) - 1:
        raise ValueError("layer count does not match spec")
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
            raise ValueError(f"layer {i}: got W{w.shape} b{b.shape}, spec wants "
                             f"W{(sizes[i], sizes[i + 1])} b{(sizes[i + 1],)}")


def mlp_init(spec: MlpSpec, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases. Deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _check_input(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != params.spec.n_in:
        raise ValueError(f"input shape {x.shape} incompatible with input size {params.spec.n_in}")
    return x


def mlp_forward_cached(params: MlpParams, x):
    """Forward pass that also returns the per-layer outputs needed by :func:`mlp_backward`."""
    x = _check_input(params, x)
    spec = params.spec
    outputs = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = _activate(h @ w + b, spec.output_activation if i == last else spec.hidden_activation)
        outputs.append(h)
    return h, outputs


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    return mlp_forward_cached(params, x)[0]


def mlp_backward(params: MlpParams, outputs: list[np.ndarray], upstream):
    """Reverse pass for the cache produced by :func:`mlp_forward_cached`.

    Returns ``(grads, input_grad)`` for the scalar ``sum(upstream * output)``.
    """
    spec = params.spec
    delta = np.asarray(upstream, dtype=float)
    if delta.shape != outputs[-1].shape:
        raise ValueError(f"upstream shape {delta.shape} != output shape {outputs[-1].shape}")
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        kind = spec.output_activation if i == n - 1 else spec.hidden_activation
        h = outputs[i + 1]
        if kind == "relu":
            delta = delta * (h > 0)
        elif kind == "tanh":
            delta = delta * (1.0 - h * h)
        x = outputs[i]
        if x.ndim == 1:
            gw[i] = np.outer(x, delta)
            gb[i] = delta.copy()
        else:
            gw[i] = x.T @ delta
            gb[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
    return MlpParams(spec, gw, gb), delta


def mlp_gradients(params: MlpParams, x, upstream):
    """Gradient of ``upstream . mlp_forward(params, x)`` w.r.t. parameters and input."""
    _, outputs = mlp_forward_cached(params, x)
    return mlp_backward(params, outputs, upstream)


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rectified: bool = False  # RAdam variance rectification


def adam_init(params: MlpParams, learning_rate: float = 1e-4, rectified: bool = False,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    arrays = params.arrays()
    return OptimizerState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                          0, learning_rate, beta1, beta2, eps, rectified)


def adam_step(state: OptimizerState, params: MlpParams, grads: MlpParams):
    """One bias-corrected Adam (or RAdam) update. Returns ``(new_state, new_params)``.

    An all-zero gradient leaves the parameters untouched; the moments and the
    step counter still advance.
    """
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in g_arrays):
        raise NumericalError("non-finite gradient passed to adam_step")
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    m = [b1 * mi + (1 - b1) * g for mi, g in zip(state.m, g_arrays)]
    v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(state.v, g_arrays)]
    new_state = OptimizerState(m, v, t, state.learning_rate, b1, b2, state.eps, state.rectified)
    if not any(np.any(g) for g in g_arrays):
        return new_state, params

    bc1 = 1 - b1 ** t
    bc2 = 1 - b2 ** t
    lr = state.learning_rate
    new_arrays = []
    if state.rectified:
        rho_inf = 2.0 / (1 - b2) - 1
        rho_t = rho_inf - 2 * t * b2 ** t / bc2
        if rho_t > 4:
            r = np.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
            for p, mi, vi in zip(p_arrays, m, v):
                new_arrays.append(p - lr * r * (mi / bc1) / (np.sqrt(vi / bc2) + state.eps))
        else:
            for p, mi in zip(p_arrays, m):
                new_arrays.append(p - lr * mi / bc1)
    else:
        for p, mi, vi in zip(p_arrays, m, v):
            new_arrays.append(p - lr * (mi / bc1) / (np.sqrt(vi / bc2) + state.eps))
    return new_state, MlpParams.from_arrays(params.spec, new_arrays)


def save_params(path, params: MlpParams, extra: dict | None = None):
    """Write a JSON checkpoint; floats are emitted with round-trip precision."""
    payload = {"format": "pcnnbench-mlp-v1", **params.to_dict()}
    if extra:
        payload["extra"] = extra
    Path(path).write_text(json.dumps(payload))


def load_params(path) -> MlpParams:
    payload = json.loads(Path(path).read_text())
    return MlpParams.from_dict(payload)
