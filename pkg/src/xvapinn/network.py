"""Feed-forward architecture, initialization, flattening and checkpoints.

The shipped networks are tanh multilayer perceptrons with a fixed hidden
width, an identity output layer, and an optional per-axis affine input map
that rescales each coordinate to [0, 1] using the domain bounds (raw asset
prices run into the hundreds and would saturate tanh otherwise).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import input_jet
from .errors import ContractError, SchemaError

CHECKPOINT_SCHEMA_VERSION = 1

_ACTIVATIONS = ("tanh",)


@dataclass(frozen=True)
class InputScaling:
    """Per-axis affine map ``y_k = (p_k - shift_k) / scale_k``."""

    shift: tuple
    scale: tuple

    @classmethod
    def from_bounds(cls, bounds):
        """Map each axis interval ``(lo, hi)`` to [0, 1]."""
        shift = tuple(float(lo) for lo, _ in bounds)
        scale = tuple(float(hi - lo) for lo, hi in bounds)
        if any(s <= 0 for s in scale):
            raise ContractError("input scaling requires lo < hi on every axis")
        return cls(shift=shift, scale=scale)

    def arrays(self):
        return np.asarray(self.shift), np.asarray(self.scale)


@dataclass(frozen=True)
class Architecture:
    """Uniform-width tanh MLP: ``input_dim`` inputs, ``hidden_layers`` hidden
    layers of ``hidden_width`` neurons each, one linear output."""

    input_dim: int
    hidden_layers: int
    hidden_width: int
    output_dim: int = 1
    activation: str = "tanh"
    input_scaling: InputScaling | None = None

    def __post_init__(self):
        if self.input_dim < 1:
            raise ContractError("input_dim must be >= 1")
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ContractError("hidden_layers and hidden_width must be >= 1")
        if self.output_dim != 1:
            raise ContractError("only scalar outputs are supported")
        if self.activation not in _ACTIVATIONS:
            raise ContractError(f"unsupported activation {self.activation!r}")
        if self.input_scaling is not None and len(self.input_scaling.scale) != self.input_dim:
            raise ContractError("input scaling length must match input_dim")

    @property
    def layer_dims(self):
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]


def param_count(arch):
    """Total number of trainable parameters: sum over consecutive layer pairs
    of (fan_in + 1) * fan_out."""
    dims = arch.layer_dims if isinstance(arch, Architecture) else list(arch)
    return int(sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1)))


@dataclass
class NetworkParams:
    """Per-layer weight matrices and bias vectors plus their architecture.

    Treated as immutable after construction; the optimizer creates fresh
    instances through :meth:`from_flat`.
    """

    arch: Architecture
    weights: list = field(repr=False)
    biases: list = field(repr=False)
    seed: int | None = None

    def input_scaling_arrays(self):
        if self.arch.input_scaling is None:
            return None
        return self.arch.input_scaling.arrays()

    def flatten(self):
        chunks = []
        for w, b in zip(self.weights, self.biases):
            chunks.append(w.ravel())
            chunks.append(b)
        return np.concatenate(chunks)

    def from_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (param_count(self.arch),):
            raise ContractError(
                f"flat vector length {flat.shape} does not match parameter count"
            )
        weights, biases = [], []
        pos = 0
        dims = self.arch.layer_dims
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            weights.append(flat[pos : pos + d_in * d_out].reshape(d_out, d_in).copy())
            pos += d_in * d_out
            biases.append(flat[pos : pos + d_out].copy())
            pos += d_out
        return NetworkParams(arch=self.arch, weights=weights, biases=biases, seed=self.seed)


def init(arch, seed):
    """Glorot-uniform weights, zero biases; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return NetworkParams(arch=arch, weights=weights, biases=biases, seed=seed)


def forward(params, points):
    """Network output at one point (1-D input) or a batch (2-D input)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.shape[1] != params.arch.input_dim:
        raise ContractError(
            f"point dimension {pts.shape[1]} does not match input_dim {params.arch.input_dim}"
        )
    scaling = params.input_scaling_arrays()
    if scaling is not None:
        shift, scale = scaling
        pts = (pts - shift) / scale
    a = pts
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = np.tanh(a @ w.T + b)
    out = (a @ params.weights[-1].T + params.biases[-1])[:, 0]
    return float(out[0]) if single else out


def jet(params, point):
    """Jet2 of the network at a point (value plus input derivatives)."""
    return input_jet(params, point)


def save_checkpoint(params, path):
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "architecture": {
            "input_dim": params.arch.input_dim,
            "hidden_layers": params.arch.hidden_layers,
            "hidden_width": params.arch.hidden_width,
            "output_dim": params.arch.output_dim,
            "activation": params.arch.activation,
        },
        "input_scaling": (
            None
            if params.arch.input_scaling is None
            else {
                "shift": list(params.arch.input_scaling.shift),
                "scale": list(params.arch.input_scaling.scale),
            }
        ),
        "seed": params.seed,
        "layers": [
            {"W": w.tolist(), "b": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported checkpoint schema version {doc.get('schema_version')!r}"
        )
    try:
        arch_doc = doc["architecture"]
        scaling_doc = doc.get("input_scaling")
        scaling = (
            None
            if scaling_doc is None
            else InputScaling(shift=tuple(scaling_doc["shift"]), scale=tuple(scaling_doc["scale"]))
        )
        arch = Architecture(
            input_dim=int(arch_doc["input_dim"]),
            hidden_layers=int(arch_doc["hidden_layers"]),
            hidden_width=int(arch_doc["hidden_width"]),
            output_dim=int(arch_doc["output_dim"]),
            activation=arch_doc["activation"],
            input_scaling=scaling,
        )
        layers = doc["layers"]
        weights = [np.asarray(layer["W"], dtype=np.float64) for layer in layers]
        biases = [np.asarray(layer["b"], dtype=np.float64) for layer in layers]
    except (KeyError, TypeError, ValueError, ContractError) as exc:
        raise SchemaError(f"malformed checkpoint: {exc}") from exc
    dims = arch.layer_dims
    if len(weights) != len(dims) - 1:
        raise SchemaError(f"checkpoint has {len(weights)} layers, expected {len(dims) - 1}")
    for idx, (w, b, d_in, d_out) in enumerate(zip(weights, biases, dims[:-1], dims[1:])):
        if w.shape != (d_out, d_in) or b.shape != (d_out,):
            raise SchemaError(
                f"layer {idx} shape mismatch: W {w.shape}, b {b.shape}, expected "
                f"({d_out}, {d_in}) and ({d_out},)"
            )
    return NetworkParams(arch=arch, weights=weights, biases=biases, seed=doc.get("seed"))
