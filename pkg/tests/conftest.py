"""Shared numeric helpers for the test suite."""

import numpy as np

from contextbnn import mlp


def scaled_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst |fd - grad| / max(1, |grad|); the 1-floor keeps near-zero
    coordinates (dead rectifier paths) from dividing rounding noise by zero."""
    return float(np.max(np.abs(numeric - analytic) / np.maximum(1.0, np.abs(analytic))))


def central_difference(f, theta: np.ndarray, idx, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar f at the given coordinates."""
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        bumped = theta.copy()
        bumped[i] = theta[i] + h
        up = f(bumped)
        bumped[i] = theta[i] - h
        down = f(bumped)
        out[k] = (up - down) / (2.0 * h)
    return out


def random_mlp_setup(rng, max_widths=(16, 8), max_classes=3, activation="relu"):
    """Random small architecture, parameters, and matching data arrays."""
    input_dim = int(rng.integers(2, 7))
    n_classes = int(rng.integers(2, max_classes + 1))
    depth = int(rng.integers(0, len(max_widths) + 1))
    hidden = tuple(int(rng.integers(2, w + 1)) for w in max_widths[:depth])
    arch = mlp.Architecture(input_dim, hidden + (n_classes,), activation=activation)
    theta = 0.5 * rng.standard_normal(arch.n_params)
    params = mlp.MlpParams(arch, theta)
    n = int(rng.integers(3, 13))
    x = rng.uniform(-1, 1, size=(n, input_dim))
    y = rng.integers(0, n_classes, size=n)
    return params, x, y
