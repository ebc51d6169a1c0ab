"""Seeded dataset generation, splitting, and file round-trips.

Two tasks are supported.  The contextuality task draws behaviours uniformly
from the non-disturbing polytope by rejection from [-1, 1]^10 and labels them
with the exact facet check.  The rhombus task samples the square [-1, 1]^2,
optionally with a density-biased box, and labels points by |x| + |y| <= 1.

All generators run on a named numpy PCG64 stream so that a (task, seed,
parameters) triple pins the dataset bit-for-bit.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import ncycle

RNG_ALGORITHM = "pcg64"

_BATCH = 16384
_BALANCED_BATCH = 131072  # contextual rows are ~7.5e-5 of raw draws
_MIN_DRAWS_FOR_GUARD = 1_000_000
_MIN_ACCEPT_RATE = 1e-6


class RejectionRateError(RuntimeError):
    """Rejection sampling accepted almost nothing; the constraints are off."""


class DatasetFormatError(ValueError):
    """A dataset file failed to parse; the message names the offending line."""


@dataclass
class LabeledDataset:
    """Feature matrix, integer class labels, and generation metadata."""

    features: np.ndarray
    labels: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ValueError("need exactly one label per feature row")
        if "n_classes" not in self.meta:
            self.meta["n_classes"] = int(self.labels.max()) + 1 if len(self.labels) else 2
        n_classes = int(self.meta["n_classes"])
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= n_classes):
            raise ValueError(f"labels must lie in [0, {n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.meta.get("n_classes", 2))


@dataclass(frozen=True)
class BiasSpec:
    """Axis-aligned box sampled with a different density than its complement.

    ``density_ratio`` is the sampling density inside the box relative to
    outside; 1/50 reproduces a 50x undersampled region.
    """

    box_lo: tuple[float, ...]
    box_hi: tuple[float, ...]
    density_ratio: float

    def __post_init__(self):
        if len(self.box_lo) != len(self.box_hi):
            raise ValueError("box_lo and box_hi must have equal length")
        if any(lo >= hi for lo, hi in zip(self.box_lo, self.box_hi)):
            raise ValueError("box must have positive extent in every axis")
        if not self.density_ratio > 0:
            raise ValueError("density_ratio must be positive")


def sample_behaviour_dataset(
    n_samples: int, seed: int, class_balance: float | None = None
) -> LabeledDataset:
    """Uniform non-disturbing 5-cycle behaviours with exact labels.

    Candidates are drawn uniformly from [-1, 1]^10 and kept iff every
    reconstructed table probability is non-negative; conditioning on
    acceptance makes the kept rows uniform over the consistent polytope.
    Labels come from the facet inequalities.  Aborts if the acceptance rate
    collapses, which would indicate a broken constraint.

    Under plain rejection only ~0.7% of feasible behaviours are contextual,
    which starves a classifier of positive examples.  ``class_balance``
    (e.g. 0.5) instead fills per-class quotas, keeping each class uniform
    over its own region; the experiment harness uses this mode.  The
    default ``None`` is the unconditioned uniform draw.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if class_balance is not None and not 0.0 < class_balance < 1.0:
        raise ValueError("class_balance must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    if class_balance is None:
        features = _rejection_sample(rng, lambda k: k >= n_samples)[:n_samples]
        labels = ncycle.flat_labels(features)
    else:
        quota1 = int(round(n_samples * class_balance))
        quota1 = min(max(quota1, 1), n_samples - 1)
        quota0 = n_samples - quota1
        features = _rejection_sample_balanced(rng, quota0, quota1)
        labels = ncycle.flat_labels(features)
        order = rng.permutation(n_samples)
        features, labels = features[order], labels[order]
    meta = {
        "task": "kcbs",
        "seed": int(seed),
        "n": int(n_samples),
        "n_classes": 2,
        "rng": RNG_ALGORITHM,
        "domain": [-1.0, 1.0],
        "feasibility_tol": ncycle.DEFAULT_TOL,
        "class_balance": class_balance,
    }
    return LabeledDataset(features, labels, meta)


def _rejection_sample(rng, done) -> np.ndarray:
    """Accumulate feasible uniform draws until ``done(count)`` is true."""
    accepted: list[np.ndarray] = []
    n_accepted = 0
    n_drawn = 0
    while not done(n_accepted):
        batch = rng.uniform(-1.0, 1.0, size=(_BATCH, 10))
        keep = batch[ncycle.flat_nondisturbing(batch)]
        accepted.append(keep)
        n_accepted += len(keep)
        n_drawn += _BATCH
        if n_drawn >= _MIN_DRAWS_FOR_GUARD and n_accepted / n_drawn < _MIN_ACCEPT_RATE:
            raise RejectionRateError(
                f"acceptance rate {n_accepted / n_drawn:.2e} after {n_drawn} draws; "
                "non-disturbance filter looks wrong"
            )
    return np.concatenate(accepted)


def _rejection_sample_balanced(rng, quota0: int, quota1: int) -> np.ndarray:
    """Feasible draws filling per-class quotas (contextual class is rare)."""
    buf0: list[np.ndarray] = []
    buf1: list[np.ndarray] = []
    n0 = n1 = 0
    n_drawn = 0
    while n0 < quota0 or n1 < quota1:
        batch = rng.uniform(-1.0, 1.0, size=(_BALANCED_BATCH, 10))
        keep = batch[ncycle.flat_nondisturbing(batch)]
        labels = ncycle.flat_labels(keep)
        if n0 < quota0:
            rows = keep[labels == 0]
            buf0.append(rows)
            n0 += len(rows)
        if n1 < quota1:
            rows = keep[labels == 1]
            buf1.append(rows)
            n1 += len(rows)
        n_drawn += _BALANCED_BATCH
        if n_drawn >= _MIN_DRAWS_FOR_GUARD * 40 and min(n0, n1) == 0:
            raise RejectionRateError(
                f"no samples for one class after {n_drawn} draws; labeling looks wrong"
            )
    return np.concatenate(
        [np.concatenate(buf0)[:quota0], np.concatenate(buf1)[:quota1]]
    )


def _complement_boxes(lo, hi):
    """Split [-1,1]^2 minus a box into at most four disjoint boxes."""
    boxes = [
        ((-1.0, -1.0), (lo[0], 1.0)),          # left slab
        ((hi[0], -1.0), (1.0, 1.0)),           # right slab
        ((lo[0], -1.0), (hi[0], lo[1])),       # below
        ((lo[0], hi[1]), (hi[0], 1.0)),        # above
    ]
    return [(np.array(a), np.array(b)) for a, b in boxes if all(x < y for x, y in zip(a, b))]


def sample_rhombus_dataset(
    n_samples: int, bias: BiasSpec | None = None, seed: int = 0
) -> LabeledDataset:
    """2-D points in [-1, 1]^2; class 0 inside the unit rhombus |x|+|y| <= 1.

    With a bias, sampling is two-stage: pick a region with probability
    proportional to area x density, then sample uniformly inside it.  The
    bias box keeps exact relative density at O(1) cost per point.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    if bias is None:
        points = rng.uniform(-1.0, 1.0, size=(n_samples, 2))
    else:
        lo = np.asarray(bias.box_lo, dtype=float)
        hi = np.asarray(bias.box_hi, dtype=float)
        if lo.size != 2 or np.any(lo < -1) or np.any(hi > 1):
            raise ValueError("bias box must lie inside [-1, 1]^2")
        regions = [(lo, hi)] + _complement_boxes(lo, hi)
        weights = np.array(
            [np.prod(b - a) * (bias.density_ratio if i == 0 else 1.0)
             for i, (a, b) in enumerate(regions)]
        )
        weights /= weights.sum()
        region_idx = rng.choice(len(regions), size=n_samples, p=weights)
        unit = rng.uniform(0.0, 1.0, size=(n_samples, 2))
        los = np.array([a for a, _ in regions])[region_idx]
        his = np.array([b for _, b in regions])[region_idx]
        points = los + unit * (his - los)
    labels = (np.abs(points).sum(axis=1) > 1.0).astype(np.int64)
    meta = {
        "task": "rhombus",
        "seed": int(seed),
        "n": int(n_samples),
        "n_classes": 2,
        "rng": RNG_ALGORITHM,
        "bias": None
        if bias is None
        else {
            "box_lo": list(bias.box_lo),
            "box_hi": list(bias.box_hi),
            "density_ratio": bias.density_ratio,
        },
    }
    return LabeledDataset(points, labels, meta)


def split(
    ds: LabeledDataset, train_fraction: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Disjoint shuffled partition with sizes (floor(N*f), N - floor(N*f))."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_train = int(len(ds) * train_fraction)
    parts = []
    for name, idx in (("train", order[:n_train]), ("test", order[n_train:])):
        meta = dict(ds.meta)
        meta.update(n=int(len(idx)), split=name, split_seed=int(seed),
                    split_fraction=train_fraction)
        parts.append(LabeledDataset(ds.features[idx], ds.labels[idx], meta))
    return parts[0], parts[1]


# ---------------------------------------------------------------------------
# File format: one comment header, then one CSV row per sample with the
# features printed to 17 significant digits so float64 round-trips exactly.
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(
    r"#\s*task=(?P<task>\S+)\s+d=(?P<d>\d+)\s+C=(?P<C>\d+)\s+seed=(?P<seed>-?\d+)\s+n=(?P<n>\d+)\s*$"
)


def format_dataset(ds: LabeledDataset) -> str:
    """Render a dataset in the line format used by :func:`write_dataset`."""
    out = io.StringIO()
    out.write(
        f"# task={ds.meta.get('task', 'unknown')} d={ds.dim} C={ds.n_classes} "
        f"seed={ds.meta.get('seed', 0)} n={len(ds)}\n"
    )
    for row, label in zip(ds.features, ds.labels):
        fields = [f"{x:.17g}" for x in row]
        fields.append(str(int(label)))
        out.write(",".join(fields) + "\n")
    return out.getvalue()


def write_dataset(ds: LabeledDataset, path) -> None:
    """Write header plus CSV rows; UTF-8, LF line endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_dataset(ds))


def read_dataset(path) -> LabeledDataset:
    """Inverse of :func:`write_dataset`; empty files give an empty dataset."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return LabeledDataset(np.empty((0, 0)), np.empty(0, dtype=np.int64), {"n": 0})
    lines = text.splitlines()
    match = _HEADER_RE.match(lines[0])
    if match is None:
        raise DatasetFormatError(f"{path}:1: malformed header line {lines[0]!r}")
    dim = int(match["d"])
    features, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != dim + 1:
            raise DatasetFormatError(
                f"{path}:{lineno}: expected {dim + 1} fields, got {len(fields)}"
            )
        try:
            features.append([float(x) for x in fields[:-1]])
            labels.append(int(fields[-1]))
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
    meta = {
        "task": match["task"],
        "seed": int(match["seed"]),
        "n": len(labels),
        "n_classes": int(match["C"]),
    }
    declared = int(match["n"])
    if declared != len(labels):
        raise DatasetFormatError(
            f"{path}: header declares n={declared} but file has {len(labels)} rows"
        )
    return LabeledDataset(
        np.asarray(features, dtype=float).reshape(len(labels), dim),
        np.asarray(labels, dtype=np.int64),
        meta,
    )
