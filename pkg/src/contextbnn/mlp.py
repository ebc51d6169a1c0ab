"""Feed-forward classifier: forward pass, exact gradients, plain training.

Parameters live in one flat float64 vector holding every weight matrix and
bias in layer order (weights row-major, then the bias), which is what the
posterior sampler needs.  Gradients are exact backpropagation of the summed
cross-entropy; the training step uses the batch mean of that gradient so the
learning rate stays comparable across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-300
_LOG_FLOOR = np.log(PROB_FLOOR)


class TrainingDivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameters."""


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(pre):
    return (pre > 0.0).astype(float)


def _tanh_grad(pre):
    return 1.0 - np.tanh(pre) ** 2


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


@dataclass(frozen=True)
class Architecture:
    """Input width plus the sizes of every layer, last entry = class count.

    ``activation`` names the hidden nonlinearity; the rectifier is the
    default, the smooth hyperbolic tangent is available for samplers that
    prefer differentiable energies.
    """

    input_dim: int
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.layer_sizes:
            raise ValueError("need at least one layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        if self.layer_sizes[-1] < 2:
            raise ValueError("last layer is the class count and must be >= 2")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every layer in order."""
        widths = (self.input_dim,) + self.layer_sizes
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims())


@dataclass
class MlpParams:
    """An architecture plus the flat vector of all weights and biases."""

    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        if self.theta.size != self.arch.n_params:
            raise ValueError(
                f"theta has {self.theta.size} entries, architecture needs {self.arch.n_params}"
            )
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta entries must be finite")


def _layer_views(arch: Architecture, theta: np.ndarray):
    """Reshaped (W, b) views into the flat vector, no copies."""
    views = []
    offset = 0
    for fan_in, fan_out in arch.layer_dims():
        w = theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = theta[offset : offset + fan_out]
        offset += fan_out
        views.append((w, b))
    return views


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.init_scale <= 0:
            raise ValueError("learning_rate, batch_size, init_scale must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def init_params(arch: Architecture, init_scale: float = 1.0, seed: int = 0) -> MlpParams:
    """Weights uniform in +-init_scale/sqrt(fan_in) per layer, biases zero."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(arch.n_params)
    for w, b in _layer_views(arch, theta):
        bound = init_scale / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = 0.0
    return MlpParams(arch, theta)


def forward_logits(params: MlpParams, x) -> np.ndarray:
    """Pre-softmax outputs; accepts a single input (d,) or a batch (N, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"input has width {h.shape[-1]}, architecture expects {params.arch.input_dim}"
        )
    act, _ = _ACTIVATIONS[params.arch.activation]
    views = _layer_views(params.arch, params.theta)
    for w, b in views[:-1]:
        h = act(h @ w + b)
    w, b = views[-1]
    z = h @ w + b
    return z[0] if single else z


def softmax(z) -> np.ndarray:
    """Max-shifted softmax along the last axis; safe for +-700 logits."""
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def entropy(probs) -> np.ndarray | float:
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    h = -terms.sum(axis=-1)
    return float(h) if h.ndim == 0 else h


def _forward_raw(arch: Architecture, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    act, _ = _ACTIVATIONS[arch.activation]
    views = _layer_views(arch, theta)
    h = x
    for w, b in views[:-1]:
        h = act(h @ w + b)
    return h @ views[-1][0] + views[-1][1]


def _loss_raw(arch: Architecture, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    logp = log_softmax(_forward_raw(arch, theta, x))
    picked = logp[np.arange(len(y)), y]
    return float(-np.maximum(picked, _LOG_FLOOR).sum())


def _loss_arrays(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    return _loss_raw(params.arch, params.theta, x, y)


def cross_entropy_loss(params: MlpParams, ds) -> float:
    """Summed negative log-probability of the true classes over the dataset.

    The sum (not the mean) is the negative log-likelihood of the whole
    dataset, which is the quantity the posterior needs.  Probabilities are
    floored at 1e-300 before the log so saturated outputs cannot produce
    infinities.
    """
    y = np.asarray(ds.labels)
    if len(y) and y.max() >= params.arch.n_classes:
        raise ValueError("dataset contains labels outside the architecture's classes")
    return _loss_arrays(params, np.asarray(ds.features, dtype=float), y)


def backprop_gradient(params: MlpParams, ds) -> np.ndarray:
    """Exact gradient of :func:`cross_entropy_loss` with respect to theta."""
    x = np.asarray(ds.features, dtype=float)
    y = np.asarray(ds.labels)
    return _gradient_arrays(params, x, y)


def _gradient_arrays(params: MlpParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _gradient_raw(params.arch, params.theta, x, y)


def _gradient_raw(arch: Architecture, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    act, act_grad = _ACTIVATIONS[arch.activation]
    views = _layer_views(arch, theta)

    # forward, keeping the input of each layer and hidden pre-activations
    inputs = [x]
    pres = []
    h = x
    for w, b in views[:-1]:
        pre = h @ w + b
        pres.append(pre)
        h = act(pre)
        inputs.append(h)
    logits = h @ views[-1][0] + views[-1][1]

    # softmax cross-entropy: dL/dz = p - onehot, summed over samples
    delta = softmax(logits)
    delta[np.arange(len(y)), y] -= 1.0

    grad = np.zeros_like(theta)
    grad_views = _layer_views(arch, grad)
    for layer in range(len(views) - 1, -1, -1):
        gw, gb = grad_views[layer]
        gw[...] = inputs[layer].T @ delta
        gb[...] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ views[layer][0].T) * act_grad(pres[layer - 1])
    return grad


def train(arch: Architecture, ds, cfg: TrainConfig, on_epoch=None) -> MlpParams:
    """Mini-batch gradient descent from a seeded random initialization.

    Each step descends the batch-mean gradient of the summed loss.  With
    ``epochs=0`` the initialization is returned untouched.  ``on_epoch``,
    if given, receives (epoch_index, full-dataset loss) after every epoch.
    Raises ``TrainingDivergenceError`` if the loss stops being finite.
    """
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    x = np.asarray(ds.features, dtype=float)
    y = np.asarray(ds.labels)
    rng = np.random.default_rng(cfg.seed)
    theta = init_params(arch, init_scale=cfg.init_scale, seed=cfg.seed).theta.copy()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            g = _gradient_raw(arch, theta, x[idx], y[idx])
            theta -= cfg.learning_rate * (g / len(idx))
        if not np.all(np.isfinite(theta)):
            raise TrainingDivergenceError(
                f"non-finite parameters at epoch {epoch}; lower the learning rate"
            )
        loss = _loss_raw(arch, theta, x, y)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(
                f"non-finite loss at epoch {epoch}; lower the learning rate"
            )
        if on_epoch is not None:
            on_epoch(epoch, loss)
    return MlpParams(arch, theta)


def predict(params: MlpParams, x) -> tuple[int, np.ndarray]:
    """Class with the highest output probability, ties to the lowest index."""
    probs = softmax(forward_logits(params, x))
    if probs.ndim != 1:
        raise ValueError("predict takes a single input; use forward_logits for batches")
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# Checkpoints: a header naming the architecture, then theta one value per
# line at 17 significant digits.
# ---------------------------------------------------------------------------


def _arch_header(arch: Architecture, seed: int | None) -> str:
    layers = ",".join(str(s) for s in arch.layer_sizes)
    seed_part = "" if seed is None else f" seed={seed}"
    return f"# mlp input_dim={arch.input_dim} layers={layers} activation={arch.activation}{seed_part}"


def _parse_arch_header(line: str) -> Architecture:
    fields = dict(part.split("=", 1) for part in line.lstrip("# ").split()[1:])
    return Architecture(
        input_dim=int(fields["input_dim"]),
        layer_sizes=tuple(int(s) for s in fields["layers"].split(",")),
        activation=fields.get("activation", "relu"),
    )


def write_params(fh, params: MlpParams, seed: int | None = None) -> None:
    fh.write(_arch_header(params.arch, seed) + "\n")
    for value in params.theta:
        fh.write(f"{value:.17g}\n")


def read_params(fh) -> MlpParams:
    header = fh.readline()
    if not header.startswith("# mlp"):
        raise ValueError(f"not a checkpoint header: {header!r}")
    arch = _parse_arch_header(header.strip())
    theta = np.array([float(fh.readline()) for _ in range(arch.n_params)])
    return MlpParams(arch, theta)


def save_params(params: MlpParams, path, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_params(fh, params, seed)


def load_params(path) -> MlpParams:
    with open(path, "r", encoding="utf-8") as fh:
        return read_params(fh)
