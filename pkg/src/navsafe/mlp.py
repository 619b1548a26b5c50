"""Feedforward ReLU networks in plain numpy.

Weights are stored input-major (``w[l]`` has shape ``(fan_in, fan_out)``) so a
batch of row vectors propagates as ``x @ w + b``.  Hidden layers use ReLU, the
output layer is the identity.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Input or gradient shape does not match the network."""


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @classmethod
    def actor(cls, n_inputs: int = 13, n_actions: int = 5, hidden: int = 64):
        return cls((n_inputs, hidden, hidden, n_actions))

    @classmethod
    def critic(cls, n_inputs: int = 13, hidden: int = 64):
        return cls((n_inputs, hidden, hidden, 1))


@dataclass
class Mlp:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError("layer count does not match spec")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ShapeError(f"layer {i}: got {w.shape}/{b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        ws, bs = [], []
        for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(spec, ws, bs)

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "Mlp":
        sizes = spec.layer_sizes
        return cls(
            spec,
            [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
            [np.zeros(b) for b in sizes[1:]],
        )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return forward(self, x) if x.ndim == 1 else forward_batch(self, x)


@dataclass
class Gradient:
    """Partial derivatives laid out like the network parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Mlp) -> "Gradient":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def scaled(self, c: float) -> "Gradient":
        return Gradient([w * c for w in self.weights], [b * c for b in self.biases])

    def __add__(self, other: "Gradient") -> "Gradient":
        return Gradient(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


def _check_input(net: Mlp, x: np.ndarray, batched: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    want = 2 if batched else 1
    if x.ndim != want or x.shape[-1] != net.spec.n_inputs:
        raise ShapeError(f"expected input of width {net.spec.n_inputs}, got shape {x.shape}")
    return x


def _propagate(net: Mlp, x: np.ndarray, keep: bool):
    acts = [x]
    h = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = _kernels.dense(h, w, b, i < last)
        if keep:
            acts.append(h)
    return h, acts


def forward_batch(net: Mlp, inputs) -> np.ndarray:
    """Row ``i`` of the result is bit-identical to ``forward(net, inputs[i])``."""
    x = np.ascontiguousarray(_check_input(net, inputs, batched=True))
    if x.shape[0] == 0:
        return np.zeros((0, net.spec.n_outputs))
    out, _ = _propagate(net, x, keep=False)
    return out


def forward(net: Mlp, x) -> np.ndarray:
    x = _check_input(net, x, batched=False)
    return forward_batch(net, x[None, :])[0]


def backward_batch(net: Mlp, inputs, output_grads) -> Gradient:
    """Gradient of ``sum_i <output_grads[i], net(inputs[i])>``.

    The ReLU subgradient at exactly zero is taken as zero.
    """
    x = np.ascontiguousarray(_check_input(net, inputs, batched=True))
    g = np.asarray(output_grads, dtype=np.float64)
    if g.shape != (x.shape[0], net.spec.n_outputs):
        raise ShapeError(f"output gradient shape {g.shape} does not match batch")
    _, acts = _propagate(net, x, keep=True)
    gw: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    delta = g
    for i in range(net.n_layers - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0.0)
    return Gradient(gw, gb)


def backward(net: Mlp, x, loss_grad_at_output) -> Gradient:
    x = _check_input(net, x, batched=False)
    g = np.asarray(loss_grad_at_output, dtype=np.float64)
    if g.shape != (net.spec.n_outputs,):
        raise ShapeError(f"output gradient shape {g.shape} does not match net")
    return backward_batch(net, x[None, :], g[None, :])


def input_gradient(net: Mlp, inputs, output_grads) -> np.ndarray:
    """Gradient with respect to the inputs, one row per sample."""
    x = np.ascontiguousarray(_check_input(net, inputs, batched=True))
    _, acts = _propagate(net, x, keep=True)
    delta = np.asarray(output_grads, dtype=np.float64)
    for i in range(net.n_layers - 1, -1, -1):
        delta = delta @ net.weights[i].T
        if i > 0:
            delta = delta * (acts[i] > 0.0)
    return delta


# ----------------------------------------------------------------- Adam
@dataclass
class AdamState:
    m: Gradient
    v: Gradient
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp, **kw) -> "AdamState":
        return cls(Gradient.zeros_like(net), Gradient.zeros_like(net), **kw)


def adam_step(net: Mlp, grad: Gradient, state: AdamState, lr: float = 3e-4) -> tuple[Mlp, AdamState]:
    """One Adam update.  Returns new objects; the inputs are left untouched."""
    if not grad.is_finite():
        raise FloatingPointError("non-finite gradient passed to adam_step")
    b1, b2, t = state.beta1, state.beta2, state.t + 1
    params = net.params()
    grads = grad.arrays()
    ms, vs = state.m.arrays(), state.v.arrays()
    if [p.shape for p in params] != [g.shape for g in grads] or len(ms) != len(params):
        raise ShapeError("gradient / optimizer state not congruent with network")
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, ms, vs):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    n = net.n_layers
    out = Mlp(net.spec, new_p[:n], new_p[n:])
    st = AdamState(
        Gradient(new_m[:n], new_m[n:]), Gradient(new_v[:n], new_v[n:]), t, b1, b2, state.eps
    )
    return out, st


# ----------------------------------------------------------- margin network
@dataclass(frozen=True)
class MarginNet:
    """``base`` with an extra output layer computing ``y_i - y_k`` for all i."""

    base: Mlp
    k: int

    @property
    def n_inputs(self) -> int:
        return self.base.spec.n_inputs

    @property
    def n_outputs(self) -> int:
        return self.base.spec.n_outputs

    def forward_batch(self, inputs) -> np.ndarray:
        y = forward_batch(self.base, inputs)
        return y - y[:, self.k : self.k + 1]

    def forward(self, x) -> np.ndarray:
        y = forward(self.base, x)
        return y - y[self.k]

    def folded(self) -> Mlp:
        """Same function with the difference layer merged into the last affine map."""
        ws = [w.copy() for w in self.base.weights]
        bs = [b.copy() for b in self.base.biases]
        ws[-1] = ws[-1] - ws[-1][:, self.k : self.k + 1]
        bs[-1] = bs[-1] - bs[-1][self.k]
        return Mlp(self.base.spec, ws, bs)


def augment_with_margin(net: Mlp, k: int) -> MarginNet:
    if not 0 <= k < net.spec.n_outputs:
        raise IndexError(f"action {k} out of range for {net.spec.n_outputs} outputs")
    return MarginNet(net, int(k))


# ------------------------------------------------------------ checkpoints
def to_bytes(net: Mlp, meta: dict | None = None) -> bytes:
    header = {"format": "navsafe-mlp", "version": CHECKPOINT_VERSION,
              "layer_sizes": list(net.spec.layer_sizes), "meta": meta or {}}
    arrays = {f"w{i}": w for i, w in enumerate(net.weights)}
    arrays.update({f"b{i}": b for i, b in enumerate(net.biases)})
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    return buf.getvalue()


def from_bytes(data: bytes) -> tuple[Mlp, dict]:
    if not data.startswith(b"PK"):
        raise ValueError("malformed checkpoint: not an npz archive")
    try:
        with np.load(io.BytesIO(data), allow_pickle=False) as z:
            header = json.loads(z["header"].tobytes().decode())
            if header.get("format") != "navsafe-mlp":
                raise ValueError("not a navsafe network checkpoint")
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            spec = MlpSpec(tuple(header["layer_sizes"]))
            n = len(spec.layer_sizes) - 1
            net = Mlp(spec, [z[f"w{i}"] for i in range(n)], [z[f"b{i}"] for i in range(n)])
    except (KeyError, OSError, EOFError, zipfile.BadZipFile, json.JSONDecodeError,
            UnicodeDecodeError) as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from exc
    return net, header.get("meta", {})


def save(net: Mlp, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(net, meta))
    return path


def load(path) -> Mlp:
    return from_bytes(Path(path).read_bytes())[0]


def load_with_meta(path) -> tuple[Mlp, dict]:
    return from_bytes(Path(path).read_bytes())
