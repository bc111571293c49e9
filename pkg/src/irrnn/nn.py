"""Small fully connected networks over voxel coordinates.

Everything is batched: an input batch is a ``(B, D)`` array and outputs are
``(B, output_dim)``. Parameters are float64 so trained nets are bit-for-bit
reproducible given their seeds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import FormatError, InvalidArgumentError, TrainingDivergedError
from .grid import read_array, read_manifest, write_array, write_manifest

ACTIVATIONS = ("relu", "sigmoid")


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    hidden_layers: int = 4
    hidden_width: int = 64
    output_dim: int = 1
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_layers", "hidden_width", "output_dim"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer, got {value!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    def layer_sizes(self):
        return ([self.input_dim] + [self.hidden_width] * self.hidden_layers
                + [self.output_dim])


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 0.2
    lr_decay: float = 0.995
    seed: int = 0
    # cap on the global gradient norm of a step; inf disables clipping
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if not self.learning_rate >= 0 or not np.isfinite(self.learning_rate):
            raise InvalidArgumentError("learning_rate must be a finite non-negative number")
        if not 0 < self.lr_decay <= 1:
            raise InvalidArgumentError("lr_decay must lie in (0, 1]")
        if not self.clip_norm > 0:
            raise InvalidArgumentError("clip_norm must be positive (inf disables clipping)")


@dataclass
class NeuralNet:
    """Parameters ``weights[l]`` (K_{l+1} x K_l) and ``biases[l]`` (K_{l+1},)."""

    weights: list
    biases: list
    config: NetConfig = field(repr=False)

    def __post_init__(self):
        sizes = self.config.layer_sizes()
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise InvalidArgumentError("parameter count does not match the config")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise InvalidArgumentError(f"layer {l} has shapes {W.shape}, {b.shape}")

    def copy(self):
        return NeuralNet([W.copy() for W in self.weights],
                         [b.copy() for b in self.biases], self.config)

    def parameters(self):
        """All parameters flattened in layer order (W_0, b_0, W_1, ...)."""
        return np.concatenate([p.ravel() for W, b in zip(self.weights, self.biases)
                               for p in (W, b)])

    def set_parameters(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        for W, b in zip(self.weights, self.biases):
            for p in (W, b):
                p[...] = flat[pos:pos + p.size].reshape(p.shape)
                pos += p.size
        if pos != flat.size:
            raise InvalidArgumentError(f"expected {pos} parameters, got {flat.size}")

    def __call__(self, s):
        return forward(self, s)


def init_net(config: NetConfig) -> NeuralNet:
    """Glorot-uniform weights, zero biases, deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    sizes = config.layer_sizes()
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NeuralNet(weights, biases, config)


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return expit(z)


def _as_batch(net, s):
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    S = s[None, :] if single else s
    if S.ndim != 2 or S.shape[1] != net.config.input_dim:
        raise InvalidArgumentError(
            f"input has shape {s.shape}, net expects {net.config.input_dim} coordinates")
    return S, single


def _forward_trace(net, S):
    """Return the post-activation values of every hidden layer and the output."""
    hidden = []
    h = S
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T
        z += b
        if l == last:
            return hidden, z
        h = _activate(net.config.activation, z)
        hidden.append(h)


def forward(net: NeuralNet, s) -> np.ndarray:
    """Evaluate the net at one coordinate (D,) or a batch (B, D)."""
    S, single = _as_batch(net, s)
    out = _forward_trace(net, S)[1]
    return out[0] if single else out


def hidden_activations(net: NeuralNet, s) -> list:
    S, _ = _as_batch(net, s)
    return _forward_trace(net, S)[0]


def _backprop(net, S, hidden, G):
    grads_W = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    delta = G
    for l in range(len(net.weights) - 1, -1, -1):
        inp = S if l == 0 else hidden[l - 1]
        grads_W[l] = delta.T @ inp
        grads_b[l] = delta.sum(axis=0)
        if l == 0:
            break
        delta = delta @ net.weights[l]
        h = hidden[l - 1]
        if net.config.activation == "relu":
            delta *= h > 0
        else:
            delta *= h * (1.0 - h)
    return grads_W, grads_b


def backward(net: NeuralNet, s, upstream):
    """Gradients of ``sum_b <upstream[b], net(s[b])>`` w.r.t. every parameter.

    Returns ``(grads_W, grads_b)`` with the same shapes as the parameters.
    """
    S, single = _as_batch(net, s)
    G = np.asarray(upstream, dtype=np.float64)
    if single and G.ndim == 1:
        G = G[None, :]
    if G.shape != (S.shape[0], net.config.output_dim):
        raise InvalidArgumentError(
            f"upstream gradient has shape {G.shape}, expected "
            f"{(S.shape[0], net.config.output_dim)}")
    if S.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    hidden, _ = _forward_trace(net, S)
    return _backprop(net, S, hidden, G)


def train(net: NeuralNet, coords, spec: TrainSpec, loss) -> NeuralNet:
    """Mini-batch SGD over voxels.

    ``loss(idx, out)`` receives the voxel indices of a batch and the net
    outputs at those voxels, and returns ``(value, grad)`` where ``grad`` is
    d value / d out with the shape of ``out``. A step whose parameter
    gradient norm exceeds ``spec.clip_norm`` is scaled back to that norm;
    the learning rate decays once per epoch. The input net is not modified.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != net.config.input_dim:
        raise InvalidArgumentError(f"coords must be V x {net.config.input_dim}")
    net = net.copy()
    rng = np.random.default_rng(spec.seed)
    with np.errstate(over="ignore", invalid="ignore"):
        _sgd(net, coords, spec, loss, rng)
    return net


def _sgd(net, coords, spec, loss, rng):
    V = coords.shape[0]
    lr = spec.learning_rate
    step = 0
    for _ in range(spec.epochs):
        order = rng.permutation(V)
        for start in range(0, V, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            S = coords[idx]
            hidden, out = _forward_trace(net, S)
            value, G = loss(idx, out)
            if not np.isfinite(value) or not np.all(np.isfinite(G)):
                raise TrainingDivergedError(step)
            grads_W, grads_b = _backprop(net, S, hidden, G)
            norm = np.sqrt(sum(np.vdot(g, g) for g in grads_W + grads_b))
            rate = lr if norm <= spec.clip_norm else lr * spec.clip_norm / norm
            for W, b, gW, gb in zip(net.weights, net.biases, grads_W, grads_b):
                W -= rate * gW
                b -= rate * gb
            if not all(np.all(np.isfinite(W)) for W in net.weights):
                raise TrainingDivergedError(step, "parameters became non-finite")
            step += 1
        lr *= spec.lr_decay


def save_net(net: NeuralNet, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    c = net.config
    manifest = {
        "format": "irrnn-net", "version": 1, "byte_order": "little",
        "element_type": "float64",
        "config": {"input_dim": c.input_dim, "hidden_layers": c.hidden_layers,
                   "hidden_width": c.hidden_width, "output_dim": c.output_dim,
                   "activation": c.activation, "seed": c.seed},
        "layers": [{"weight": list(W.shape), "bias": list(b.shape)}
                   for W, b in zip(net.weights, net.biases)],
        "arrays": {"params": write_array(path, "params", net.parameters())},
    }
    write_manifest(path, manifest)


def load_net(path) -> NeuralNet:
    path = Path(path)
    m = read_manifest(path, "irrnn-net")
    try:
        config = NetConfig(**m["config"])
    except (KeyError, TypeError, InvalidArgumentError) as exc:
        raise FormatError(f"bad network config ({exc})", "config") from exc
    net = init_net(config)
    expected = [{"weight": list(W.shape), "bias": list(b.shape)}
                for W, b in zip(net.weights, net.biases)]
    if m.get("layers") != expected:
        raise FormatError("layer shapes disagree with config", "layers")
    n_params = sum(W.size + b.size for W, b in zip(net.weights, net.biases))
    try:
        entry = m["arrays"]["params"]
    except (KeyError, TypeError) as exc:
        raise FormatError("missing params array", "arrays") from exc
    net.set_parameters(read_array(path, entry, "params", (n_params,)))
    return net
