"""Decoder (mixing) and recognition (encoder) MLPs.

The decoder maps an N-vector of components to an M-vector of noise-free
observations.  The encoder maps an observation to surrogate Gaussian
natural parameters per component: a linear term v and a strictly negative
diagonal quadratic term w (negativity enforced by construction through a
softplus head, so downstream message passing always sees proper
potentials).

Forward passes run either on plain numpy arrays (fast path, used by the
simulator and by inference) or on the gradient tape (used by training).
Both share the layer arithmetic so they cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad

W_FLOOR = 1e-4  # keeps encoder quadratic terms strictly below zero

_ACTIVATIONS = {
    "leaky_tanh": lambda z: np.tanh(z) + 0.1 * z,
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
    "softplus": lambda z: np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))),
}

_TAPE_ACTIVATIONS = {
    "leaky_tanh": ad.leaky_tanh,
    "tanh": ad.tanh,
    "relu": ad.relu,
    "softplus": ad.softplus,
}


@dataclass
class MlpWeights:
    """Dense MLP: list of (weight, bias) with one activation between layers.

    ``layers[k]`` is (W_k of shape (out, in), b_k of shape (out,)).  The
    activation is applied after every layer except the last, so a 1-layer
    net is purely affine unless ``output_activation`` is set.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str = "leaky_tanh"
    output_activation: str | None = None

    def __post_init__(self):
        for k in range(len(self.layers) - 1):
            out_k = self.layers[k][0].shape[0]
            in_next = self.layers[k + 1][0].shape[1]
            if out_k != in_next:
                raise ValueError(f"layer {k} output {out_k} != layer {k+1} input {in_next}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_activation is not None and self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.output_activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def copy(self) -> "MlpWeights":
        return replace(self, layers=[(w.copy(), b.copy()) for w, b in self.layers])


@dataclass
class EncoderOutput:
    """Per-time surrogate natural parameters: linear v, negative diagonal w."""

    v: np.ndarray  # (T, N)
    w: np.ndarray  # (T, N), strictly < 0

    def __post_init__(self):
        if np.any(self.w >= 0.0):
            raise ValueError("encoder quadratic terms must be strictly negative")


def init_mlp(
    in_dim: int,
    out_dim: int,
    n_layers: int,
    hidden: int,
    rng: np.random.Generator,
    activation: str = "leaky_tanh",
    column_normalize: bool = False,
) -> MlpWeights:
    """Scaled-uniform init; optional column normalization keeps the map
    well-conditioned (used for simulated mixing functions)."""
    dims = [in_dim] + [hidden] * (n_layers - 1) + [out_dim]
    layers = []
    for k in range(n_layers):
        fan_in, fan_out = dims[k], dims[k + 1]
        scale = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-scale, scale, size=(fan_out, fan_in))
        if column_normalize:
            w = w / np.linalg.norm(w, axis=0, keepdims=True)
        b = np.zeros(fan_out)
        layers.append((w, b))
    return MlpWeights(layers=layers, activation=activation)


def mlp_forward(mlp: MlpWeights, x: np.ndarray) -> np.ndarray:
    """Evaluate the MLP on a single vector or a (T, in_dim) batch."""
    act = _ACTIVATIONS[mlp.activation]
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for k, (w, b) in enumerate(mlp.layers):
        h = h @ w.T + b
        if k < len(mlp.layers) - 1:
            h = act(h)
    if mlp.output_activation is not None:
        h = _ACTIVATIONS[mlp.output_activation](h)
    return h[0] if np.ndim(x) == 1 else h


def decoder_forward(theta: MlpWeights, s: np.ndarray) -> np.ndarray:
    """Noise-free observation f(s)."""
    return mlp_forward(theta, s)


def encoder_forward(phi: MlpWeights, x: np.ndarray) -> EncoderOutput:
    """Surrogate natural parameters for each row of x.

    The raw head is split in two: the first half is v (unconstrained), the
    second half passes through w = -softplus(raw) - 1e-4 so that every
    quadratic term is strictly negative.
    """
    raw = mlp_forward(phi, np.atleast_2d(x))
    n = raw.shape[1] // 2
    v = raw[:, :n]
    w_raw = raw[:, n:]
    w = -(np.maximum(w_raw, 0.0) + np.log1p(np.exp(-np.abs(w_raw)))) - W_FLOOR
    return EncoderOutput(v=v, w=w)


# -- tape bindings ------------------------------------------------------


def mlp_leaves(tape: ad.Tape, mlp: MlpWeights) -> list[tuple[ad.Node, ad.Node]]:
    """Register every weight and bias as a leaf node on the tape."""
    return [(tape.var(w), tape.var(b)) for w, b in mlp.layers]


def mlp_forward_tape(
    leaves: list[tuple[ad.Node, ad.Node]], x: ad.Node, activation: str
) -> ad.Node:
    """Same arithmetic as mlp_forward, recorded on the tape.  x is (T, in)."""
    act = _TAPE_ACTIVATIONS[activation]
    h = x
    for k, (w, b) in enumerate(leaves):
        h = ad.matmul(h, ad.transpose(w)) + b
        if k < len(leaves) - 1:
            h = act(h)
    return h


def encoder_forward_tape(
    leaves: list[tuple[ad.Node, ad.Node]], x: ad.Node, activation: str
) -> tuple[ad.Node, ad.Node]:
    """Tape version of encoder_forward; returns (v, w) nodes."""
    raw = mlp_forward_tape(leaves, x, activation)
    n = raw.value.shape[1] // 2
    v = ad.getcols(raw, 0, n)
    w = ad.neg(ad.softplus(ad.getcols(raw, n, 2 * n))) - W_FLOOR
    return v, w


def leaves_to_mlp(leaves: list[tuple[ad.Node, ad.Node]], template: MlpWeights) -> MlpWeights:
    """Read current leaf values back into an MlpWeights container."""
    return replace(
        template, layers=[(w.value.copy(), b.value.copy()) for w, b in leaves]
    )


def net_gradients(
    tape: ad.Tape, objective: ad.Node, leaves: list[tuple[ad.Node, ad.Node]]
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reverse-mode gradients of a recorded scalar objective per (W, b)."""
    ad.backward(tape, objective)
    return [(w.grad.copy(), b.grad.copy()) for w, b in leaves]
