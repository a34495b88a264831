"""Dense-network engine: float64 forward/backward, Adam, checkpoints.

Small fully-connected networks with exact reverse-mode gradients computed
from cached activations (no tape, no framework). Everything is float64
and deterministic given the init seed, which is what makes bit-identical
reruns and finite-difference audits possible downstream.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError

CHECKPOINT_FORMAT = "aerobeam-net"
CHECKPOINT_VERSION = 1

HIDDEN_ACTIVATIONS = ("relu", "mish")
OUTPUT_ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class NetSpec:
    """Layer sizes (input, hidden..., output) and activation choices."""

    sizes: tuple
    hidden: str = "relu"
    output: str = "identity"

    def __post_init__(self):
        if len(self.sizes) < 3:
            raise ValueError(f"need at least one hidden layer, got sizes {self.sizes}")
        if not all(isinstance(s, int) and s >= 1 for s in self.sizes):
            raise ValueError(f"sizes must be positive integers, got {self.sizes}")
        if self.hidden not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]


class NetParams:
    """Dense weights (fan_in, fan_out) and biases (fan_out,) per layer."""

    __slots__ = ("spec", "weights", "biases")

    def __init__(self, spec: NetSpec, weights, biases):
        if len(weights) != spec.n_layers or len(biases) != spec.n_layers:
            raise ValueError("layer count mismatch with spec")
        for i, (w, b) in enumerate(zip(weights, biases)):
            want = (spec.sizes[i], spec.sizes[i + 1])
            if w.shape != want or b.shape != (spec.sizes[i + 1],):
                raise ValueError(f"layer {i}: expected {want}, got {w.shape}/{b.shape}")
        self.spec = spec
        self.weights = list(weights)
        self.biases = list(biases)

    def copy(self) -> "NetParams":
        return NetParams(self.spec, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


class Grads:
    """Parameter gradients, mirroring NetParams layout."""

    __slots__ = ("weights", "biases")

    def __init__(self, weights, biases):
        self.weights = list(weights)
        self.biases = list(biases)

    def add_(self, other: "Grads") -> "Grads":
        for i in range(len(self.weights)):
            self.weights[i] += other.weights[i]
            self.biases[i] += other.biases[i]
        return self

    def scale_(self, factor: float) -> "Grads":
        for i in range(len(self.weights)):
            self.weights[i] *= factor
            self.biases[i] *= factor
        return self


def zero_grads(spec: NetSpec) -> Grads:
    return Grads(
        [np.zeros((spec.sizes[i], spec.sizes[i + 1])) for i in range(spec.n_layers)],
        [np.zeros(spec.sizes[i + 1]) for i in range(spec.n_layers)],
    )


def init_params(spec: NetSpec, seed) -> NetParams:
    """Uniform fan-in init: W ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), b = 0."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.sizes[i], spec.sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetParams(spec, weights, biases)


# ---------------------------------------------------------------- activations

def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _activate(z, kind: str):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "mish":
        return z * np.tanh(_softplus(z))
    if kind == "tanh":
        return np.tanh(z)
    return z  # identity


def _activation_grad(z, kind: str):
    if kind == "relu":
        return (z > 0.0).astype(float)
    if kind == "mish":
        t = np.tanh(_softplus(z))
        sig = 1.0 / (1.0 + np.exp(-z))
        return t + z * (1.0 - t * t) * sig
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


class ForwardCache:
    """Intermediates of one forward pass, tied to the exact params object."""

    __slots__ = ("params", "inputs", "pre_acts")

    def __init__(self, params, inputs, pre_acts):
        self.params = params
        self.inputs = inputs        # input to each layer, len n_layers
        self.pre_acts = pre_acts    # z of each layer, len n_layers


def forward(params: NetParams, x: np.ndarray):
    """Batched forward pass; rows are independent samples.

    Returns (output (batch, out_dim), cache for backward).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.spec.in_dim:
        raise ValueError(
            f"input must have shape (batch, {params.spec.in_dim}), got {x.shape}")
    spec = params.spec
    inputs, pre_acts = [], []
    a = x
    for i in range(spec.n_layers):
        inputs.append(a)
        z = a @ params.weights[i] + params.biases[i]
        pre_acts.append(z)
        kind = spec.output if i == spec.n_layers - 1 else spec.hidden
        a = _activate(z, kind)
    return a, ForwardCache(params, inputs, pre_acts)


def backward(params: NetParams, cache: ForwardCache, upstream: np.ndarray):
    """Exact gradients of sum(output * upstream) w.r.t. params and input.

    upstream: (batch, out_dim) gradient flowing into the network output.
    Returns (Grads, input_grad (batch, in_dim)). The cache must come from
    a forward pass of this very params object.
    """
    if cache.params is not params:
        raise ValueError("stale cache: forward pass was run with different params")
    upstream = np.asarray(upstream, dtype=float)
    spec = params.spec
    if upstream.shape != cache.pre_acts[-1].shape:
        raise ValueError(
            f"upstream must have shape {cache.pre_acts[-1].shape}, got {upstream.shape}")
    d_weights = [None] * spec.n_layers
    d_biases = [None] * spec.n_layers
    g = upstream * _activation_grad(cache.pre_acts[-1], spec.output)
    for i in range(spec.n_layers - 1, -1, -1):
        d_weights[i] = cache.inputs[i].T @ g
        d_biases[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            g = g * _activation_grad(cache.pre_acts[i - 1], spec.hidden)
    return Grads(d_weights, d_biases), g


# ----------------------------------------------------------------------- Adam

class OptState:
    """Adam moments (mirroring the params layout) and step counter."""

    __slots__ = ("m_weights", "v_weights", "m_biases", "v_biases", "step")

    def __init__(self, m_weights, v_weights, m_biases, v_biases, step=0):
        self.m_weights = m_weights
        self.v_weights = v_weights
        self.m_biases = m_biases
        self.v_biases = v_biases
        self.step = step


def init_opt(spec: NetSpec) -> OptState:
    z = zero_grads(spec)
    z2 = zero_grads(spec)
    return OptState(z.weights, z2.weights, z.biases, z2.biases, step=0)


def adam_step(params: NetParams, grads: Grads, opt: OptState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (new_params, new_opt).

    Non-finite gradients are treated as training divergence and raise.
    """
    spec = params.spec
    new_w, new_b = [], []
    m_w, v_w, m_b, v_b = [], [], [], []
    t = opt.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(spec.n_layers):
        for g in (grads.weights[i], grads.biases[i]):
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in layer {i}")
        mw = beta1 * opt.m_weights[i] + (1.0 - beta1) * grads.weights[i]
        vw = beta2 * opt.v_weights[i] + (1.0 - beta2) * grads.weights[i] ** 2
        mb = beta1 * opt.m_biases[i] + (1.0 - beta1) * grads.biases[i]
        vb = beta2 * opt.v_biases[i] + (1.0 - beta2) * grads.biases[i] ** 2
        new_w.append(params.weights[i] - lr * (mw / c1) / (np.sqrt(vw / c2) + eps))
        new_b.append(params.biases[i] - lr * (mb / c1) / (np.sqrt(vb / c2) + eps))
        m_w.append(mw)
        v_w.append(vw)
        m_b.append(mb)
        v_b.append(vb)
    return NetParams(spec, new_w, new_b), OptState(m_w, v_w, m_b, v_b, step=t)


# ----------------------------------------------------------------- checkpoint

def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str, shape) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)


def save_params(path: str, params: NetParams) -> None:
    """Write a versioned JSON checkpoint with bit-exact float64 payloads."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": {
            "sizes": list(params.spec.sizes),
            "hidden": params.spec.hidden,
            "output": params.spec.output,
        },
        "weights": [_encode(w) for w in params.weights],
        "biases": [_encode(b) for b in params.biases],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params(path: str) -> NetParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    spec = NetSpec(
        sizes=tuple(doc["spec"]["sizes"]),
        hidden=doc["spec"]["hidden"],
        output=doc["spec"]["output"],
    )
    weights = [
        _decode(text, (spec.sizes[i], spec.sizes[i + 1]))
        for i, text in enumerate(doc["weights"])
    ]
    biases = [
        _decode(text, (spec.sizes[i + 1],))
        for i, text in enumerate(doc["biases"])
    ]
    return NetParams(spec, weights, biases)
