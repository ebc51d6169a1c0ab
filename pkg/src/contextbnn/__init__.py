"""Contextuality recognition with standard and Bayesian neural networks.

Core pieces: exact labeling of n-cycle behaviours (``ncycle``), seeded
dataset generation (``dataset``), a from-scratch feed-forward classifier
(``mlp``), Hamiltonian Monte Carlo posterior sampling over its weights
(``bayes``), uncertainty decomposition and calibration statistics
(``uncertainty``), and the experiment CLI (``cli``).
"""

from .ncycle import (
    Behaviour,
    ContextualityLabel,
    ProbabilityTable,
    behaviour_to_table,
    is_nondisturbing,
    kcbs_label,
    lp_membership_oracle,
    noncontextual_vertices,
)
from .dataset import (
    BiasSpec,
    LabeledDataset,
    read_dataset,
    sample_behaviour_dataset,
    sample_rhombus_dataset,
    split,
    write_dataset,
)
from .mlp import Architecture, MlpParams, TrainConfig, predict, train
from .bayes import HmcConfig, PosteriorEnsemble, PriorSpec, hmc_sample, predictive
from .uncertainty import (
    CalibrationCurve,
    PredictiveOutput,
    decompose,
    misclassification_curve,
    nn_uncertainty,
    uncertainty_histogram,
)

__all__ = [
    "Behaviour",
    "ContextualityLabel",
    "ProbabilityTable",
    "behaviour_to_table",
    "is_nondisturbing",
    "kcbs_label",
    "lp_membership_oracle",
    "noncontextual_vertices",
    "BiasSpec",
    "LabeledDataset",
    "read_dataset",
    "sample_behaviour_dataset",
    "sample_rhombus_dataset",
    "split",
    "write_dataset",
    "Architecture",
    "MlpParams",
    "TrainConfig",
    "predict",
    "train",
    "HmcConfig",
    "PosteriorEnsemble",
    "PriorSpec",
    "hmc_sample",
    "predictive",
    "CalibrationCurve",
    "PredictiveOutput",
    "decompose",
    "misclassification_curve",
    "nn_uncertainty",
    "uncertainty_histogram",
]
