"""Dense encoder/decoder networks and the Adam optimizer.

Networks act column-wise: an input of shape ``(..., width_in, M)`` is ``M``
points processed independently. Hidden layers use ReLU; the output head of
each network is linear.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument


@dataclass
class NetworkParams:
    encoder: list  # [(W, b), ...] with W (out, in), b (out,)
    decoder: list

    @property
    def n_state(self) -> int:
        return self.encoder[0][0].shape[1]

    @property
    def n_latent(self) -> int:
        return self.encoder[-1][0].shape[0]

    def arrays(self) -> list:
        """Flat parameter list: encoder (W, b) pairs then decoder pairs."""
        return [a for layer in self.encoder + self.decoder for a in layer]

    def weights(self) -> list:
        return [w for w, _ in self.encoder + self.decoder]

    def shapes(self) -> list:
        return [a.shape for a in self.arrays()]

    @property
    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def with_arrays(self, arrays) -> "NetworkParams":
        arrays = list(arrays)
        if [a.shape for a in arrays] != self.shapes():
            raise InvalidArgument("parameter shapes do not match network layout")
        it = iter(arrays)
        enc = [(next(it), next(it)) for _ in self.encoder]
        dec = [(next(it), next(it)) for _ in self.decoder]
        return NetworkParams(enc, dec)

    def copy(self) -> "NetworkParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def to_vector(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec) -> "NetworkParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise InvalidArgument(f"vector has {vec.size} entries, network needs {self.n_params}")
        out, i = [], 0
        for shape in self.shapes():
            n = int(np.prod(shape))
            out.append(vec[i:i + n].reshape(shape).copy())
            i += n
        return self.with_arrays(out)


def layer_widths(n_in, n_out, width, hidden):
    return [n_in] + [width] * hidden + [n_out]


def _glorot(rng, widths):
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return layers


def init_network(n_state, n_latent, width=128, hidden=3, seed=0) -> NetworkParams:
    """Glorot-uniform weights, zero biases, seeded with PCG64."""
    rng = np.random.Generator(np.random.PCG64(seed))
    enc = _glorot(rng, layer_widths(n_state, n_latent, width, hidden))
    dec = _glorot(rng, layer_widths(n_latent, n_state, width, hidden))
    return NetworkParams(enc, dec)


def identity_network(n_state, width=None, hidden=3) -> NetworkParams:
    """Exact identity encoder/decoder built from ReLU layers via ``x = relu(x) - relu(-x)``.

    Used as a stub model; needs ``width >= 2 * n_state``.
    """
    width = 2 * n_state if width is None else width
    if width < 2 * n_state:
        raise InvalidArgument("identity network needs width >= 2 * n_state")
    eye = np.eye(n_state)

    def half():
        if hidden == 0:
            return [(eye.copy(), np.zeros(n_state))]
        split = np.zeros((width, n_state))
        split[:2 * n_state] = np.vstack([eye, -eye])
        layers = [(split, np.zeros(width))]
        for _ in range(hidden - 1):
            layers.append((np.eye(width), np.zeros(width)))
        head = np.zeros((n_state, width))
        head[:, :2 * n_state] = np.hstack([eye, -eye])
        layers.append((head, np.zeros(n_state)))
        return layers

    return NetworkParams(half(), half())


def _check_width(layers, x, what):
    if x.shape[-2] != layers[0][0].shape[1]:
        raise InvalidArgument(
            f"{what} expects {layers[0][0].shape[1]} input rows, got {x.shape[-2]}"
        )


def mlp(layers, x):
    """Plain numpy forward pass."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(layers):
        h = w @ h + b[:, None]
        if i < len(layers) - 1:
            np.maximum(h, 0.0, out=h)
    return h


def encode(params: NetworkParams, states):
    states = np.asarray(states, dtype=np.float64)
    _check_width(params.encoder, states, "encoder")
    return mlp(params.encoder, states)


def decode(params: NetworkParams, latent):
    latent = np.asarray(latent, dtype=np.float64)
    _check_width(params.decoder, latent, "decoder")
    return mlp(params.decoder, latent)


def mlp_node(layers, x):
    """Tape forward pass; ``layers`` holds :class:`autodiff.Node` pairs."""
    h = x
    for i, (w, b) in enumerate(layers):
        h = ad.matmul(w, h) + ad.reshape(b, (-1, 1))
        if i < len(layers) - 1:
            h = ad.relu(h)
    return h


@dataclass
class TapeParams:
    """Tape leaves mirroring a :class:`NetworkParams`."""

    nodes: list
    encoder: list = field(default_factory=list)
    decoder: list = field(default_factory=list)

    @classmethod
    def from_params(cls, params: NetworkParams) -> "TapeParams":
        nodes = [ad.parameter(a) for a in params.arrays()]
        it = iter(nodes)
        enc = [(next(it), next(it)) for _ in params.encoder]
        dec = [(next(it), next(it)) for _ in params.decoder]
        return cls(nodes, enc, dec)

    def weights(self):
        return [w for w, _ in self.encoder + self.decoder]


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, **kw) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new ``(params, state)`` and leaves inputs intact."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgument("params, grads and optimizer state are misaligned")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, step, b1, b2, state.eps)
