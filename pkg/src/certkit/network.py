"""Feedforward ReLU networks: representation, text format, evaluation.

A network is a chain of affine layers, each optionally followed by a ReLU.
The last layer is always affine-only.  Everything here is pure; weights are
stored as read-only float64 arrays so a :class:`Network` can be shared across
threads without copying.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class NetworkFormatError(ValueError):
    """Malformed network file."""


class DimensionMismatchError(ValueError):
    """Layer widths or input vector lengths do not chain."""


class NonFiniteWeightError(ValueError):
    """A weight or bias is NaN or infinite."""


class Activation(str, enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"


class NormKind(str, enum.Enum):
    """Input-space norm used for Lipschitz statements."""

    L1 = "l1"
    L2 = "l2"
    LINF = "linf"


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionMismatchError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AffineLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        w = _frozen(self.weight, 2)
        b = _frozen(self.bias, 1)
        if b.shape[0] != w.shape[0]:
            raise DimensionMismatchError(
                f"bias length {b.shape[0]} != weight rows {w.shape[0]}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NonFiniteWeightError("layer contains non-finite weights")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def is_relu(self) -> bool:
        return self.activation is Activation.RELU


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple[AffineLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionMismatchError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise DimensionMismatchError(
                    f"layer {i + 1} expects width {layers[i].in_dim}, "
                    f"layer {i} produces {layers[i - 1].out_dim}"
                )
        if layers[-1].is_relu:
            raise ValueError("the output layer must not apply a ReLU")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_arrays(cls, weights: Sequence, biases: Sequence) -> "Network":
        """Build a network with ReLU on every layer except the last."""
        if len(weights) != len(biases):
            raise DimensionMismatchError("need one bias per weight matrix")
        n = len(weights)
        return cls(tuple(
            AffineLayer(w, b, Activation.IDENTITY if i == n - 1 else Activation.RELU)
            for i, (w, b) in enumerate(zip(weights, biases))
        ))

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(layer.out_dim for layer in self.layers)

    @property
    def relu_count(self) -> int:
        return sum(layer.out_dim for layer in self.layers if layer.is_relu)

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != net.input_dim:
        raise DimensionMismatchError(
            f"input has length {x.shape[-1]}, network expects {net.input_dim}"
        )
    return x


def evaluate(net: Network, x) -> np.ndarray:
    """Exact forward pass.  ``x`` may be one point ``(d0,)`` or a batch ``(n, d0)``."""
    z = _check_input(net, x)
    for layer in net.layers:
        z = z @ layer.weight.T + layer.bias
        if layer.is_relu:
            z = np.maximum(z, 0.0)
    return z


def preactivations(net: Network, x) -> list[np.ndarray]:
    """Preactivation values of every layer (the last entry is the output)."""
    z = _check_input(net, x)
    out = []
    for layer in net.layers:
        s = z @ layer.weight.T + layer.bias
        out.append(s)
        z = np.maximum(s, 0.0) if layer.is_relu else s
    return out


def activation_pattern(net: Network, x) -> np.ndarray:
    """On/off state of every hidden ReLU, concatenated layer by layer.

    An entry is True iff the neuron's preactivation is strictly positive.
    """
    pre = preactivations(net, x)
    parts = [s > 0 for s, layer in zip(pre, net.layers) if layer.is_relu]
    if not parts:
        shape = np.asarray(x).shape[:-1] if np.ndim(x) > 1 else ()
        return np.zeros(shape + (0,), dtype=bool)
    return np.concatenate(parts, axis=-1)


def param_count(net: Network) -> int:
    """M = sum of d_{l-1} * d_l over layers; biases are not counted."""
    return sum(layer.in_dim * layer.out_dim for layer in net.layers)


def induced_norm_to_l2(w: np.ndarray, norm: NormKind) -> float:
    """Upper bound on sup ||W v||_2 / ||v|| for the given input norm.

    l1 -> l2 is exact (largest column norm).  l2 -> l2 uses the Frobenius
    norm, which dominates the spectral norm.  linf -> l2 uses
    ||(|W| 1)||_2, since each |(Wv)_i| <= sum_j |W_ij| * ||v||_inf.
    """
    norm = NormKind(norm)
    if w.size == 0:
        return 0.0
    if norm is NormKind.L1:
        return float(np.max(np.linalg.norm(w, axis=0)))
    if norm is NormKind.L2:
        return float(np.linalg.norm(w))
    return float(np.linalg.norm(np.abs(w).sum(axis=1)))


def global_lipschitz_upper(net: Network, norm: NormKind = NormKind.L2) -> float:
    """Sound Lipschitz bound of ``f`` from ``(R^d0, norm)`` to ``(R^dL, l2)``.

    Product of per-layer operator norm bounds; ReLU is 1-Lipschitz in l2 so it
    contributes nothing.  Loose by design, never an underestimate.
    """
    bound = induced_norm_to_l2(net.layers[0].weight, norm)
    for layer in net.layers[1:]:
        bound *= float(np.linalg.norm(layer.weight))
    return bound


# -- text format -------------------------------------------------------------

_HEADER = "relu-net v1"


def _floats(line: str, expected: int, where: str) -> list[float]:
    parts = line.split()
    if len(parts) != expected:
        raise DimensionMismatchError(f"{where}: expected {expected} values, got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise NetworkFormatError(f"{where}: {exc}") from None
    if not all(math.isfinite(v) for v in vals):
        raise NonFiniteWeightError(f"{where}: non-finite value")
    return vals


def parse_network(text: str) -> Network:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != _HEADER:
        raise NetworkFormatError(f"first line must be '{_HEADER}'")
    if len(lines) < 2 or not lines[1].startswith("dims"):
        raise NetworkFormatError("second line must be 'dims d0 d1 ... dL'")
    try:
        dims = [int(t) for t in lines[1].split()[1:]]
    except ValueError:
        raise NetworkFormatError("dims must be integers") from None
    if len(dims) < 2 or min(dims) < 1:
        raise NetworkFormatError("dims needs at least two positive widths")

    pos = 2
    layers = []
    for idx in range(1, len(dims)):
        if pos >= len(lines):
            raise NetworkFormatError(f"missing header for layer {idx}")
        head = lines[pos].split()
        if len(head) != 3 or head[0] != "layer" or head[1] != str(idx):
            raise NetworkFormatError(f"expected 'layer {idx} relu|identity', got {lines[pos]!r}")
        if head[2] not in ("relu", "identity"):
            raise NetworkFormatError(f"unknown activation {head[2]!r}")
        pos += 1
        d_in, d_out = dims[idx - 1], dims[idx]
        if pos + d_out + 1 > len(lines):
            raise NetworkFormatError(f"layer {idx} is truncated")
        rows = [_floats(lines[pos + r], d_in, f"layer {idx} row {r + 1}") for r in range(d_out)]
        pos += d_out
        bias = _floats(lines[pos], d_out, f"layer {idx} bias")
        pos += 1
        layers.append(AffineLayer(np.array(rows), np.array(bias), Activation(head[2])))
    if pos != len(lines):
        raise NetworkFormatError("trailing content after last layer")
    return Network(tuple(layers))


def load_network(path) -> Network:
    return parse_network(Path(path).read_text())


def format_network(net: Network) -> str:
    out = [_HEADER, "dims " + " ".join(str(d) for d in net.dims)]
    for idx, layer in enumerate(net.layers, start=1):
        out.append(f"layer {idx} {layer.activation.value}")
        out.extend(" ".join(repr(float(v)) for v in row) for row in layer.weight)
        out.append(" ".join(repr(float(v)) for v in layer.bias))
    return "\n".join(out) + "\n"


def save_network(net: Network, path) -> None:
    Path(path).write_text(format_network(net))


def random_network(dims: Iterable[int], rng: np.random.Generator, scale: float | None = None) -> Network:
    """Gaussian-weight network with the given widths, He-style scaling by default."""
    dims = list(dims)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        s = math.sqrt(2.0 / d_in) if scale is None else scale
        weights.append(rng.normal(0.0, s, size=(d_out, d_in)))
        biases.append(rng.normal(0.0, 0.1 if scale is None else scale, size=d_out))
    return Network.from_arrays(weights, biases)
