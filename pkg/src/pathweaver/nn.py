"""Multilayer perceptron drift with explicit reverse- and forward-mode passes, plus Adam.

Parameters live in one flat float64 vector. Layer ``l`` owns ``W_l`` (stored
row-major, shape ``(out, in)``) followed by ``b_l``. Hidden layers use ReLU
with ``relu'(0) = 0``; the output layer is affine.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .drift import Drift


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    activation: str = "relu"
    init_seed: int = 0
    time_dependent: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"layer sizes must be >= 2 positive integers, got {self.layer_sizes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def shapes(self):
        sizes = list(self.layer_sizes)
        if self.time_dependent:
            sizes[0] += 1
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    @property
    def param_count(self) -> int:
        return sum(o * i + o for o, i in self.shapes)


def he_uniform(spec: MlpSpec) -> np.ndarray:
    """He-uniform weights ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    rng = np.random.default_rng(spec.init_seed)
    chunks = []
    for out, fan_in in spec.shapes:
        bound = np.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=out * fan_in))
        chunks.append(np.zeros(out))
    return np.concatenate(chunks)


def _unpack(spec: MlpSpec, params):
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.param_count,):
        raise ValueError(f"expected {spec.param_count} parameters, got shape {params.shape}")
    layers, pos = [], 0
    for out, fan_in in spec.shapes:
        W = params[pos : pos + out * fan_in].reshape(out, fan_in)
        pos += out * fan_in
        b = params[pos : pos + out]
        pos += out
        layers.append((W, b))
    return layers


def _inputs(spec, X, t):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"expected inputs of shape (M, {spec.layer_sizes[0]}), got {X.shape}")
    if spec.time_dependent:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), X.shape[:1])
        return np.concatenate([X, t[:, None]], axis=1)
    return X


def _forward(spec, layers, X, t):
    h = _inputs(spec, X, t)
    acts, pre = [h], []
    for i, (W, b) in enumerate(layers):
        z = h @ W.T + b
        if i < len(layers) - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return h, acts, pre


def mlp_forward(spec: MlpSpec, params, X, t=None) -> np.ndarray:
    return _forward(spec, _unpack(spec, params), X, t)[0]


def _check_cot(cot, out_shape):
    cot = np.asarray(cot, dtype=np.float64)
    if cot.shape != out_shape:
        raise ValueError(f"cotangents have shape {cot.shape}, expected {out_shape}")
    return cot


def mlp_vjp(spec: MlpSpec, params, X, t, cotangents):
    """Reverse mode for ``sum_rows <cotangent, output>``: ``(d/dparams, d/dX)``."""
    layers = _unpack(spec, params)
    out, acts, pre = _forward(spec, layers, X, t)
    g = _check_cot(cotangents, out.shape)
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append(g.sum(axis=0))
        grads.append((g.T @ acts[i]).reshape(-1))
        g = g @ W
        if i > 0:
            g = g * (pre[i - 1] > 0)
    flat = np.concatenate(grads[::-1])
    return flat, g[:, : spec.layer_sizes[0]]


def mlp_pullback(spec: MlpSpec, params, X, t, cotangents) -> np.ndarray:
    return mlp_vjp(spec, params, X, t, cotangents)[0]


def mlp_input_jvp(spec: MlpSpec, params, X, t, tangents) -> np.ndarray:
    """Forward-mode derivative of the output along ``tangents`` (time held fixed)."""
    layers = _unpack(spec, params)
    h = _inputs(spec, X, t)
    v = np.asarray(tangents, dtype=np.float64)
    if v.shape != np.shape(X):
        raise ValueError(f"tangents have shape {v.shape}, expected {np.shape(X)}")
    if spec.time_dependent:
        v = np.concatenate([v, np.zeros((v.shape[0], 1))], axis=1)
    for i, (W, b) in enumerate(layers):
        z = h @ W.T + b
        v = v @ W.T
        if i < len(layers) - 1:
            mask = z > 0
            h = np.where(mask, z, 0.0)
            v = v * mask
    return v


class MLP(Drift):
    """MLP drift field ``f_theta(x)`` (or ``f_theta(x, t)`` when time dependent)."""

    piecewise_linear = True

    def __init__(self, spec: MlpSpec, params=None):
        self.spec = spec
        self.dim = spec.layer_sizes[-1]
        self.param_count = spec.param_count
        self._params = he_uniform(spec) if params is None else np.array(params, dtype=np.float64)
        _unpack(spec, self._params)

    @property
    def params(self):
        return self._params.copy()

    def with_params(self, params):
        return MLP(self.spec, params)

    def eval_batch(self, X, t=None):
        return mlp_forward(self.spec, self._params, X, t)

    def pullback(self, X, t, cotangents):
        return mlp_pullback(self.spec, self._params, X, t, cotangents)

    def vjp(self, X, t, cotangents):
        return mlp_vjp(self.spec, self._params, X, t, cotangents)

    def input_vjp(self, X, t, cotangents):
        return mlp_vjp(self.spec, self._params, X, t, cotangents)[1]

    def input_jvp(self, X, t, tangents):
        return mlp_input_jvp(self.spec, self._params, X, t, tangents)


class NonFiniteGradientError(ValueError):
    pass


@dataclass(frozen=True)
class AdamState:
    step: int
    m: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n_params: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(step=0, m=np.zeros(n_params), v=np.zeros(n_params), lr=lr, **kw)


def adam_step(state: AdamState, params, grad):
    """One bias-corrected Adam descent step; returns ``(params, state)``.

    A non-finite gradient raises :class:`NonFiniteGradientError` and leaves the
    caller's parameters and state untouched.
    """
    grad = np.asarray(grad, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if grad.shape != state.m.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and Adam state shapes differ")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NonFiniteGradientError(f"gradient entry {bad} is {grad[bad]}; step rejected")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(step, m, v, state.lr, state.beta1, state.beta2, state.eps)


# Checkpoint layout (little endian):
#   8 bytes   magic b"PWMLP\x00\x00\x01"
#   4 bytes   uint32 header length H
#   H bytes   UTF-8 JSON: layer_sizes, activation, time_dependent, init_seed, step, param_count
#   8*P bytes float64 parameters in the flat order described in the module docstring
CHECKPOINT_MAGIC = b"PWMLP\x00\x00\x01"


def save_checkpoint(path, spec: MlpSpec, params, step: int = 0) -> None:
    params = np.asarray(params, dtype="<f8")
    header = json.dumps(
        {
            "layer_sizes": list(spec.layer_sizes),
            "activation": spec.activation,
            "time_dependent": spec.time_dependent,
            "init_seed": spec.init_seed,
            "step": int(step),
            "param_count": int(params.size),
        },
        sort_keys=True,
    ).encode()
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(params.tobytes())


def load_checkpoint(path):
    """Returns ``(spec, params, step)``."""
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen].decode())
    params = np.frombuffer(data[12 + hlen :], dtype="<f8").astype(np.float64)
    if params.size != header["param_count"]:
        raise ValueError(f"{path}: truncated parameter block")
    spec = MlpSpec(tuple(header["layer_sizes"]), header["activation"], header["init_seed"], header["time_dependent"])
    return spec, params, header["step"]
