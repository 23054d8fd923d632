"""Feed-forward ReLU networks: representation, evaluation, I/O and perturbation."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .box import Box

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


class NetworkFormatError(ValueError):
    """Raised when a network file or in-memory model violates the format."""


@dataclass(frozen=True, eq=False)
class Layer:
    """Affine map followed by an activation; ``weights`` has one row per output neuron."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, ndmin=2)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise NetworkFormatError(f"weights must be a matrix, got shape {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise NetworkFormatError(
                f"bias length {b.shape[0]} != weight row count {w.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise NetworkFormatError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NetworkFormatError("weights and biases must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def pre_activation(self, x: np.ndarray) -> np.ndarray:
        return self.weights @ x + self.bias

    def __call__(self, x: np.ndarray) -> np.ndarray:
        z = self.pre_activation(x)
        return np.maximum(z, 0.0) if self.activation == RELU else z


@dataclass(frozen=True, eq=False)
class Network:
    """The composition ``g_n o ... o g_1``; layers are numbered from 1 in the public API."""

    layers: tuple[Layer, ...]
    input_dim: int
    name: str = "net"
    version: str = "1"

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise NetworkFormatError("network needs at least one layer")
        prev = self.input_dim
        for k, layer in enumerate(layers, start=1):
            if layer.in_dim != prev:
                raise NetworkFormatError(
                    f"layers[{k - 1}].weights: column count {layer.in_dim} "
                    f"!= previous output dimension {prev}")
            if k < len(layers) and layer.activation != RELU:
                raise NetworkFormatError(f"layers[{k - 1}]: hidden layers must use relu")
            prev = layer.out_dim
        object.__setattr__(self, "layers", layers)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> list[int]:
        return [layer.out_dim for layer in self.layers]

    def layer(self, k: int) -> Layer:
        """1-based layer access."""
        if not 1 <= k <= self.n_layers:
            raise IndexError(f"layer {k} outside 1..{self.n_layers}")
        return self.layers[k - 1]

    def layer_in_dim(self, k: int) -> int:
        return self.layer(k).in_dim

    def sub_network(self, from_layer: int, to_layer: int) -> "Network":
        check_range(self, from_layer, to_layer)
        layers = self.layers[from_layer - 1:to_layer]
        return Network(layers, layers[0].in_dim, f"{self.name}[{from_layer}:{to_layer}]",
                       self.version)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "input_dim": self.input_dim,
            "layers": [
                {"weights": layer.weights.tolist(), "bias": layer.bias.tolist(),
                 "activation": layer.activation}
                for layer in self.layers
            ],
        }

    def digest(self) -> str:
        # layers and their arrays are immutable, so the hash is computed once
        cached = self.__dict__.get("_digest")
        if cached is None:
            cached = sha256_hex(canonical_json(self.to_dict()))
            object.__setattr__(self, "_digest", cached)
        return cached

    def same_architecture(self, other: "Network") -> bool:
        return self.input_dim == other.input_dim and self.widths == other.widths and all(
            a.activation == b.activation for a, b in zip(self.layers, other.layers))

    def __call__(self, x) -> np.ndarray:
        return eval_network(self, x)


@dataclass(frozen=True)
class VerificationProblem:
    network: Network
    d_in: Box
    d_out: Box
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.d_in.dim != self.network.input_dim:
            raise ValueError(
                f"d_in has dimension {self.d_in.dim}, network expects {self.network.input_dim}")
        if self.d_out.dim != self.network.output_dim:
            raise ValueError(
                f"d_out has dimension {self.d_out.dim}, network outputs {self.network.output_dim}")


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def check_range(net: Network, from_layer: int, to_layer: int) -> None:
    if not (1 <= from_layer <= to_layer <= net.n_layers):
        raise ValueError(
            f"invalid layer range ({from_layer}, {to_layer}) for a {net.n_layers}-layer network")


def eval_network(net: Network, x) -> np.ndarray:
    return eval_range(net, 1, net.n_layers, x)


def eval_range(net: Network, from_layer: int, to_layer: int, x) -> np.ndarray:
    """Apply ``g_to o ... o g_from`` to ``x``.

    ``x`` may be a single vector or a batch with one row per input.
    """
    check_range(net, from_layer, to_layer)
    h = np.asarray(x, dtype=np.float64)
    expected = net.layer_in_dim(from_layer)
    if h.shape[-1] != expected or h.ndim > 2:
        raise ValueError(f"input has shape {h.shape}, layer {from_layer} expects {expected}")
    for layer in net.layers[from_layer - 1:to_layer]:
        h = h @ layer.weights.T + layer.bias
        if layer.activation == RELU:
            h = np.maximum(h, 0.0)
    return h


def layer_activations(net: Network, x) -> list[np.ndarray]:
    """Post-activation values of every layer for a batch of inputs."""
    h = np.asarray(x, dtype=np.float64)
    out = []
    for layer in net.layers:
        h = h @ layer.weights.T + layer.bias
        if layer.activation == RELU:
            h = np.maximum(h, 0.0)
        out.append(h)
    return out


def perturb(net: Network, magnitude: float, seed: int) -> Network:
    """Shift every weight and bias by an independent uniform draw in [-magnitude, magnitude]."""
    if magnitude < 0:
        raise ValueError("magnitude must be non-negative")
    if magnitude == 0:
        return net
    rng = np.random.default_rng(seed)
    layers = []
    for layer in net.layers:
        dw = rng.uniform(-magnitude, magnitude, size=layer.weights.shape)
        db = rng.uniform(-magnitude, magnitude, size=layer.bias.shape)
        layers.append(Layer(layer.weights + dw, layer.bias + db, layer.activation))
    return Network(tuple(layers), net.input_dim, net.name, f"{net.version}+p{seed}")


def random_network(input_dim: int, widths: Sequence[int], seed: int,
                   final_activation: str = IDENTITY, scale: float = 1.0,
                   name: str = "random") -> Network:
    """He-style Gaussian MLP used by the tests and the benchmark harness."""
    rng = np.random.default_rng(seed)
    layers = []
    prev = input_dim
    for k, width in enumerate(widths):
        act = RELU if k < len(widths) - 1 else final_activation
        w = rng.normal(0.0, scale * math.sqrt(2.0 / prev), size=(width, prev))
        b = rng.normal(0.0, 0.1 * scale, size=width)
        layers.append(Layer(w, b, act))
        prev = width
    return Network(tuple(layers), input_dim, name)


def network_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise NetworkFormatError("network document must be an object")
    for key in ("input_dim", "layers"):
        if key not in doc:
            raise NetworkFormatError(f"missing field {key!r}")
    input_dim = doc["input_dim"]
    if not isinstance(input_dim, int) or isinstance(input_dim, bool) or input_dim <= 0:
        raise NetworkFormatError(f"input_dim: expected positive integer, got {input_dim!r}")
    if not isinstance(doc["layers"], list):
        raise NetworkFormatError("layers: expected a list")
    layers = []
    for k, raw in enumerate(doc["layers"]):
        where = f"layers[{k}]"
        try:
            w = np.array(raw["weights"], dtype=np.float64)
            b = np.array(raw["bias"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkFormatError(f"{where}: {exc}") from exc
        if w.ndim != 2:
            raise NetworkFormatError(f"{where}.weights: expected a rectangular matrix")
        if not np.all(np.isfinite(w)):
            raise NetworkFormatError(f"{where}.weights: non-finite value")
        if not np.all(np.isfinite(b)):
            raise NetworkFormatError(f"{where}.bias: non-finite value")
        act = raw.get("activation", RELU)
        try:
            layers.append(Layer(w, b, act))
        except NetworkFormatError as exc:
            raise NetworkFormatError(f"{where}: {exc}") from exc
    return Network(tuple(layers), input_dim, str(doc.get("name", "net")),
                   str(doc.get("version", "1")))


def _reject_constant(name):
    raise NetworkFormatError(f"non-finite number {name} is not allowed")


def loads_network(text: str) -> Network:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return network_from_dict(doc)


def dumps_network(net: Network) -> str:
    # json emits repr(float), the shortest string that round-trips
    return json.dumps(net.to_dict(), indent=1, allow_nan=False) + "\n"


def load_network(path) -> Network:
    return loads_network(Path(path).read_text(encoding="utf-8"))


def save_network(net: Network, path) -> None:
    Path(path).write_text(dumps_network(net), encoding="utf-8")


def toy_network() -> Network:
    """Two-input, three-hidden-neuron example network (n1..n3 feeding n4)."""
    w1 = [[1.0, -2.0], [-2.0, 1.0], [1.0, -1.0]]
    w2 = [[2.0, 2.0, -1.0]]
    return Network((Layer(w1, [0.0, 0.0, 0.0], RELU), Layer(w2, [0.0], RELU)), 2,
                   "two-layer-example")
