"""Predictive uncertainty: entropy decomposition and calibration statistics.

For an ensemble, the total uncertainty is the entropy of the averaged output
distribution, the aleatoric part is the average entropy of the member
outputs, and the epistemic part is their difference (non-negative by
concavity of entropy).  A single point-estimate network has no ensemble
spread, so its entropy is reported undecomposed.

Misclassification-vs-uncertainty curves and histograms work on normalized
or raw entropies as noted per function; every estimator here is a plain
empirical frequency with undefined bins reported as NaN, never as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bayes import PosteriorEnsemble
from .mlp import MlpParams, entropy, forward_logits, softmax

_EPISTEMIC_CLIP = 1e-12


@dataclass(frozen=True)
class PredictiveOutput:
    """Class probabilities of one input plus its uncertainty split (nats).

    ``total == aleatoric + epistemic`` always; ``decomposed`` is False for
    point-estimate networks, whose entropy cannot be split and is recorded
    as aleatoric with zero epistemic part.
    """

    probs: np.ndarray
    predicted_class: int
    total: float
    aleatoric: float
    epistemic: float
    decomposed: bool = True


@dataclass
class CalibrationCurve:
    """Empirical misclassification rates above and below each threshold.

    ``p_mis_high[i]`` estimates P(wrong | U > alphas[i]) from ``n_high[i]``
    samples, ``p_mis_low[i]`` the strict < counterpart; a NaN rate marks an
    empty (undefined) conditioning set.  Samples with U exactly equal to a
    threshold belong to neither side.
    """

    alphas: np.ndarray
    p_mis_high: np.ndarray
    n_high: np.ndarray
    p_mis_low: np.ndarray
    n_low: np.ndarray

    def __post_init__(self):
        lengths = {len(self.alphas), len(self.p_mis_high), len(self.n_high),
                   len(self.p_mis_low), len(self.n_low)}
        if len(lengths) != 1:
            raise ValueError("calibration sequences must have equal length")


def decompose_probs(member_probs: np.ndarray) -> tuple[np.ndarray, float, float, float]:
    """Split uncertainty given the member output distributions of one input.

    ``member_probs`` has shape (m, C).  Returns (mean_probs, total,
    aleatoric, epistemic) with epistemic = total - aleatoric, clipped to 0
    when it is negative by less than 1e-12 of rounding noise.
    """
    member_probs = np.asarray(member_probs, dtype=float)
    mean_probs = member_probs.mean(axis=0)
    total = float(entropy(mean_probs))
    aleatoric = float(np.mean(entropy(member_probs)))
    epistemic = total - aleatoric
    if -_EPISTEMIC_CLIP <= epistemic < 0.0:
        epistemic = 0.0
    return mean_probs, total, aleatoric, epistemic


def decompose(ensemble: PosteriorEnsemble, x) -> PredictiveOutput:
    """Predictive output of the ensemble on one input, uncertainty split."""
    member_probs = np.stack(
        [softmax(forward_logits(ensemble.member(i), x)) for i in range(len(ensemble))]
    )
    if member_probs.ndim != 2:
        raise ValueError("decompose takes a single input; use decompose_batch for batches")
    mean_probs, total, aleatoric, epistemic = decompose_probs(member_probs)
    return PredictiveOutput(
        probs=mean_probs,
        predicted_class=int(np.argmax(mean_probs)),
        total=total,
        aleatoric=aleatoric,
        epistemic=epistemic,
    )


def decompose_batch(ensemble: PosteriorEnsemble, xs) -> list[PredictiveOutput]:
    """Vectorized :func:`decompose` over a batch of inputs."""
    xs = np.asarray(xs, dtype=float)
    n, c = xs.shape[0], ensemble.arch.n_classes
    mean_probs = np.zeros((n, c))
    mean_ent = np.zeros(n)
    for i in range(len(ensemble)):
        probs = softmax(forward_logits(ensemble.member(i), xs))
        mean_probs += probs
        mean_ent += entropy(probs)
    mean_probs /= len(ensemble)
    mean_ent /= len(ensemble)
    outputs = []
    for row, aleatoric in zip(mean_probs, mean_ent):
        total = float(entropy(row))
        epistemic = total - float(aleatoric)
        if -_EPISTEMIC_CLIP <= epistemic < 0.0:
            epistemic = 0.0
        outputs.append(
            PredictiveOutput(
                probs=row,
                predicted_class=int(np.argmax(row)),
                total=total,
                aleatoric=float(aleatoric),
                epistemic=epistemic,
            )
        )
    return outputs


def nn_uncertainty(params: MlpParams, x) -> PredictiveOutput:
    """Output entropy of a point-estimate network, flagged as undecomposed."""
    probs = softmax(forward_logits(params, x))
    if probs.ndim != 1:
        raise ValueError("nn_uncertainty takes a single input")
    total = float(entropy(probs))
    return PredictiveOutput(
        probs=probs,
        predicted_class=int(np.argmax(probs)),
        total=total,
        aleatoric=total,
        epistemic=0.0,
        decomposed=False,
    )


def nn_uncertainty_batch(params: MlpParams, xs) -> list[PredictiveOutput]:
    probs = softmax(forward_logits(params, np.asarray(xs, dtype=float)))
    return [
        PredictiveOutput(
            probs=row,
            predicted_class=int(np.argmax(row)),
            total=float(entropy(row)),
            aleatoric=float(entropy(row)),
            epistemic=0.0,
            decomposed=False,
        )
        for row in probs
    ]


def normalized_uncertainty(
    outputs: Sequence[PredictiveOutput], kind: str = "total"
) -> np.ndarray:
    """Entropy values rescaled by ln C so thresholds live on [0, 1]."""
    if kind not in ("total", "epistemic", "aleatoric"):
        raise ValueError(f"unknown uncertainty kind {kind!r}")
    values = np.array([getattr(o, kind) for o in outputs])
    n_classes = len(outputs[0].probs) if outputs else 2
    return values / np.log(n_classes)


def misclassification_curve(
    outputs: Sequence[PredictiveOutput],
    labels,
    alphas,
    kind: str = "total",
) -> CalibrationCurve:
    """Misclassification rate conditioned on uncertainty beyond thresholds.

    Uncertainty is the normalized entropy of ``kind`` so the thresholds are
    comparable across class counts.  Both conditioning events are strict
    (U > alpha and U < alpha); empty events give NaN rates with count 0.
    """
    labels = np.asarray(labels)
    if len(outputs) != len(labels):
        raise ValueError("need one label per output")
    if len(outputs) == 0:
        raise ValueError("cannot build a calibration curve from no outputs")
    alphas = np.asarray(alphas, dtype=float)
    u = normalized_uncertainty(outputs, kind=kind)
    wrong = np.array([o.predicted_class for o in outputs]) != labels

    p_high = np.full(len(alphas), np.nan)
    p_low = np.full(len(alphas), np.nan)
    n_high = np.zeros(len(alphas), dtype=np.int64)
    n_low = np.zeros(len(alphas), dtype=np.int64)
    for i, alpha in enumerate(alphas):
        hi = u > alpha
        lo = u < alpha
        n_high[i] = hi.sum()
        n_low[i] = lo.sum()
        if n_high[i]:
            p_high[i] = wrong[hi].mean()
        if n_low[i]:
            p_low[i] = wrong[lo].mean()
    return CalibrationCurve(alphas, p_high, n_high, p_low, n_low)


def uncertainty_histogram(
    outputs: Sequence[PredictiveOutput],
    select=None,
    bins: int = 20,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-width counts of total entropy over [0, ln C].

    ``select`` is an optional boolean mask (e.g. the wrong predictions);
    values at exactly ln C land in the top bin.  Returns (edges, counts).
    """
    n_classes = len(outputs[0].probs) if outputs else 2
    top = np.log(n_classes)
    values = np.array([o.total for o in outputs])
    if select is not None:
        values = values[np.asarray(select, dtype=bool)]
    values = np.clip(values, 0.0, top)
    counts, edges = np.histogram(values, bins=bins, range=(0.0, top))
    return edges, counts


# ---------------------------------------------------------------------------
# CSV emitters; all floats at 17 significant digits for byte-stable reruns.
# ---------------------------------------------------------------------------


def write_histogram_csv(path, edges, counts_all, counts_wrong) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bin_lo,bin_hi,count_all,count_wrong\n")
        for lo, hi, c_all, c_wrong in zip(edges[:-1], edges[1:], counts_all, counts_wrong):
            fh.write(f"{lo:.17g},{hi:.17g},{int(c_all)},{int(c_wrong)}\n")


def write_calibration_csv(path, curve: CalibrationCurve) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("alpha,p_mis_high,n_high,p_mis_low,n_low\n")
        for a, ph, nh, pl, nl in zip(
            curve.alphas, curve.p_mis_high, curve.n_high, curve.p_mis_low, curve.n_low
        ):
            fh.write(f"{a:.17g},{ph:.17g},{int(nh)},{pl:.17g},{int(nl)}\n")


def write_predictions_csv(path, outputs: Sequence[PredictiveOutput], labels) -> None:
    n_classes = len(outputs[0].probs) if outputs else 2
    prob_cols = ",".join(f"p{c}" for c in range(n_classes))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"id,label,pred,{prob_cols},total,aleatoric,epistemic\n")
        for i, (out, label) in enumerate(zip(outputs, labels)):
            probs = ",".join(f"{p:.17g}" for p in out.probs)
            fh.write(
                f"{i},{int(label)},{out.predicted_class},{probs},"
                f"{out.total:.17g},{out.aleatoric:.17g},{out.epistemic:.17g}\n"
            )
