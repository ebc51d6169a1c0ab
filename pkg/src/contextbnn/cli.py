"""Experiment command line: generate data, train both models, emit CSVs.

Subcommands: generate, train-nn, train-bnn, accuracy-sweep, histograms,
calibration, rhombus, run-all.  Every command resolves its configuration
from built-in defaults, an optional JSON file (--config), and the override
flags, then writes the resolved snapshot next to its outputs so a run can
be reproduced byte-for-byte from the snapshot alone.  The only
non-deterministic output field is wall_ms inside the metrics JSON.

Exit codes: 0 success, 2 usage error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bayes, dataset, mlp, uncertainty
from .bayes import HmcConfig, PriorSpec
from .dataset import BiasSpec, LabeledDataset
from .mlp import Architecture, TrainConfig

TEST_SEED_OFFSET = 424242  # test sets draw from a stream far from any train seed

# Contextuality experiments train on class-balanced draws (the polytope is
# ~0.7% contextual under plain uniform rejection, which starves both the
# classifiers and every misclassification statistic); the balance is
# recorded in each dataset's meta header.
DEFAULT_CONFIG = {
    "task": "kcbs",
    "seed": 0,
    "out": "runs",
    "model": "both",
    "arch": [64, 32, 8, 2],
    "train_size": 500,
    "test_size": 4000,
    "class_balance": 0.5,
    "train_sizes": [50, 200, 1000, 5000],
    "sweep_archs": [[128, 64, 32, 16, 2], [64, 32, 16, 2], [32, 16, 2]],
    "seeds_per_cell": 3,
    "rhombus_arch": [8, 4, 2],
    "rhombus_train_size": 2000,
    "grid_resolution": 41,
    "bias": {"box_lo": [-1.0, -1.0], "box_hi": [0.0, 0.0], "density_ratio": 0.02},
    "n_alphas": 21,
    "histogram_bins": 20,
    "prior_variance": 1.0,
    "warm_start_epochs": 100,
    "train": {
        "learning_rate": 0.05,
        "epochs": 300,
        "batch_size": 32,
        "init_scale": 1.0,
    },
    "hmc": {
        "step_size": 0.002,
        "n_leapfrog": 15,
        "n_samples": 150,
        "burn_in": 500,
        "thinning": 4,
        "adapt": True,
    },
    "sweep_hmc": {
        "step_size": 0.002,
        "n_leapfrog": 12,
        "n_samples": 100,
        "burn_in": 400,
        "thinning": 2,
        "adapt": True,
    },
    # the 2-D task saturates a well-converged network, which is the
    # overconfidence contrast the biased run is meant to show
    "rhombus_train": {
        "learning_rate": 0.1,
        "epochs": 1000,
        "batch_size": 32,
        "init_scale": 1.0,
    },
    "rhombus_hmc": {
        "step_size": 0.002,
        "n_leapfrog": 15,
        "n_samples": 200,
        "burn_in": 600,
        "thinning": 4,
        "adapt": True,
    },
}


class UsageError(ValueError):
    pass


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = _merge(cfg, json.load(fh))
    for flag in ("seed", "out", "task"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[flag] = value
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: dict) -> None:
    if cfg["task"] not in ("kcbs", "rhombus"):
        raise UsageError(f"unknown task {cfg['task']!r}")
    if cfg["model"] not in ("nn", "bnn", "both"):
        raise UsageError(f"unknown model {cfg['model']!r}")
    sizes = [cfg["train_size"], cfg["test_size"], cfg["rhombus_train_size"], *cfg["train_sizes"]]
    if any(int(s) < 1 for s in sizes):
        raise UsageError("all dataset sizes must be positive")
    if int(cfg["seeds_per_cell"]) < 1 or int(cfg["grid_resolution"]) < 2:
        raise UsageError("seeds_per_cell must be >= 1 and grid_resolution >= 2")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _snapshot(cfg: dict, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    # the output path is implicit in where the snapshot sits; leaving it out
    # keeps snapshots byte-identical across relocated reruns
    recorded = {k: v for k, v in cfg.items() if k != "out"}
    _write_json(out / f"{command}_config.json", recorded)


def _train_config(cfg: dict, seed: int, key: str = "train") -> TrainConfig:
    t = cfg[key]
    return TrainConfig(
        learning_rate=float(t["learning_rate"]),
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        init_scale=float(t["init_scale"]),
        seed=seed,
    )


def _hmc_config(cfg: dict, seed: int, key: str = "hmc") -> HmcConfig:
    h = cfg[key]
    return HmcConfig(
        step_size=float(h["step_size"]),
        n_leapfrog=int(h["n_leapfrog"]),
        n_samples=int(h["n_samples"]),
        burn_in=int(h["burn_in"]),
        thinning=int(h["thinning"]),
        seed=seed,
        adapt=bool(h["adapt"]),
    )


def _bias_spec(cfg: dict) -> BiasSpec | None:
    b = cfg.get("bias")
    if b is None:
        return None
    return BiasSpec(tuple(b["box_lo"]), tuple(b["box_hi"]), float(b["density_ratio"]))


def _make_dataset(cfg: dict, n: int, seed: int, biased: bool = False) -> LabeledDataset:
    if cfg["task"] == "kcbs":
        balance = cfg.get("class_balance")
        return dataset.sample_behaviour_dataset(
            n, seed=seed, class_balance=None if balance is None else float(balance)
        )
    bias = _bias_spec(cfg) if biased else None
    return dataset.sample_rhombus_dataset(n, bias=bias, seed=seed)


def _arch(sizes, input_dim: int) -> Architecture:
    return Architecture(input_dim, tuple(int(s) for s in sizes))


def _arch_tag(arch: Architecture) -> str:
    return "-".join(str(s) for s in arch.layer_sizes)


def _accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    return float((predicted == labels).mean())


def _train_nn(cfg: dict, arch: Architecture, ds: LabeledDataset, seed: int, train_key="train"):
    start = time.perf_counter()
    params = mlp.train(arch, ds, _train_config(cfg, seed, train_key))
    return params, (time.perf_counter() - start) * 1000.0


def _train_bnn(cfg: dict, arch: Architecture, ds: LabeledDataset, seed: int,
               hmc_key="hmc", train_key="train"):
    start = time.perf_counter()
    init_theta = None
    warm = int(cfg["warm_start_epochs"])
    if warm > 0:
        base = _train_config(cfg, seed, train_key)
        warm_cfg = TrainConfig(
            learning_rate=base.learning_rate,
            epochs=warm,
            batch_size=base.batch_size,
            init_scale=base.init_scale,
            seed=seed,
        )
        init_theta = mlp.train(arch, ds, warm_cfg).theta
    ensemble = bayes.hmc_sample(
        arch,
        ds,
        PriorSpec(float(cfg["prior_variance"])),
        _hmc_config(cfg, seed, hmc_key),
        init_theta=init_theta,
    )
    return ensemble, (time.perf_counter() - start) * 1000.0


def _metrics(cfg, arch, n_train, model, accuracy, acceptance_rate, wall_ms):
    return {
        "task": cfg["task"],
        "arch": _arch_tag(arch),
        "n_train": int(n_train),
        "model": model,
        "accuracy": accuracy,
        "acceptance_rate": acceptance_rate,
        "wall_ms": wall_ms,
        "uncertainty_normalization": "entropy_nats/ln(n_classes)",
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: dict) -> None:
    out = Path(cfg["out"])
    _snapshot(cfg, out, "generate")
    seed = int(cfg["seed"])
    train_ds = _make_dataset(cfg, int(cfg["train_size"]), seed)
    test_ds = _make_dataset(cfg, int(cfg["test_size"]), seed + TEST_SEED_OFFSET)
    dataset.write_dataset(train_ds, out / f"{cfg['task']}_train.csv")
    dataset.write_dataset(test_ds, out / f"{cfg['task']}_test.csv")
    _write_json(out / "generate_meta.json", {"train": train_ds.meta, "test": test_ds.meta})


def _load_or_make(cfg, path_arg, n, seed) -> LabeledDataset:
    if path_arg:
        return dataset.read_dataset(path_arg)
    return _make_dataset(cfg, n, seed)


def cmd_train_nn(cfg: dict, data: str | None = None, test_data: str | None = None) -> None:
    out = Path(cfg["out"])
    _snapshot(cfg, out, "train_nn")
    seed = int(cfg["seed"])
    train_ds = _load_or_make(cfg, data, int(cfg["train_size"]), seed)
    test_ds = _load_or_make(cfg, test_data, int(cfg["test_size"]), seed + TEST_SEED_OFFSET)
    arch = _arch(cfg["arch"], train_ds.dim)
    params, wall = _train_nn(cfg, arch, train_ds, seed)
    mlp.save_params(params, out / "nn.ckpt", seed=seed)
    predicted = np.argmax(mlp.forward_logits(params, test_ds.features), axis=1)
    acc = _accuracy(predicted, test_ds.labels)
    _write_json(out / "metrics_nn.json",
                _metrics(cfg, arch, len(train_ds), "nn", acc, None, wall))


def cmd_train_bnn(cfg: dict, data: str | None = None, test_data: str | None = None) -> None:
    out = Path(cfg["out"])
    _snapshot(cfg, out, "train_bnn")
    seed = int(cfg["seed"])
    train_ds = _load_or_make(cfg, data, int(cfg["train_size"]), seed)
    test_ds = _load_or_make(cfg, test_data, int(cfg["test_size"]), seed + TEST_SEED_OFFSET)
    arch = _arch(cfg["arch"], train_ds.dim)
    ensemble, wall = _train_bnn(cfg, arch, train_ds, seed)
    bayes.save_ensemble(ensemble, out / "bnn.ensemble")
    predicted = np.argmax(bayes.predictive(ensemble, test_ds.features), axis=1)
    acc = _accuracy(predicted, test_ds.labels)
    _write_json(out / "metrics_bnn.json",
                _metrics(cfg, arch, len(train_ds), "bnn", acc, ensemble.acceptance_rate, wall))


def cmd_accuracy_sweep(cfg: dict) -> None:
    if cfg["model"] != "both":
        raise UsageError("accuracy-sweep compares both models; set model=both")
    out = Path(cfg["out"])
    _snapshot(cfg, out, "accuracy_sweep")
    seed = int(cfg["seed"])
    test_ds = _make_dataset(cfg, int(cfg["test_size"]), seed + TEST_SEED_OFFSET)
    input_dim = test_ds.dim

    rows = []
    metrics = []
    for arch_sizes in cfg["sweep_archs"]:
        arch = _arch(arch_sizes, input_dim)
        for size in cfg["train_sizes"]:
            for rep in range(int(cfg["seeds_per_cell"])):
                cell_seed = seed + rep
                train_ds = _make_dataset(cfg, int(size), cell_seed)
                params, wall_nn = _train_nn(cfg, arch, train_ds, cell_seed)
                pred_nn = np.argmax(mlp.forward_logits(params, test_ds.features), axis=1)
                acc_nn = _accuracy(pred_nn, test_ds.labels)
                ensemble, wall_bnn = _train_bnn(cfg, arch, train_ds, cell_seed, "sweep_hmc")
                pred_bnn = np.argmax(bayes.predictive(ensemble, test_ds.features), axis=1)
                acc_bnn = _accuracy(pred_bnn, test_ds.labels)
                tag = _arch_tag(arch)
                rows.append((int(size), tag, "nn", acc_nn, cell_seed))
                rows.append((int(size), tag, "bnn", acc_bnn, cell_seed))
                metrics.append(_metrics(cfg, arch, size, "nn", acc_nn, None, wall_nn))
                metrics.append(
                    _metrics(cfg, arch, size, "bnn", acc_bnn, ensemble.acceptance_rate, wall_bnn)
                )
    with open(out / "accuracy_sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("size,arch,model,accuracy,seed\n")
        for size, tag, model, acc, s in rows:
            fh.write(f"{size},{tag},{model},{acc:.17g},{s}\n")
    _write_json(out / "sweep_metrics.json", metrics)


def _contextuality_eval(cfg: dict):
    """Train NN and BNN on the configured train/test split and score the test set."""
    seed = int(cfg["seed"])
    train_ds = _make_dataset(cfg, int(cfg["train_size"]), seed)
    test_ds = _make_dataset(cfg, int(cfg["test_size"]), seed + TEST_SEED_OFFSET)
    arch = _arch(cfg["arch"], train_ds.dim)
    params, wall_nn = _train_nn(cfg, arch, train_ds, seed)
    ensemble, wall_bnn = _train_bnn(cfg, arch, train_ds, seed)
    outputs_nn = uncertainty.nn_uncertainty_batch(params, test_ds.features)
    outputs_bnn = uncertainty.decompose_batch(ensemble, test_ds.features)
    labels = test_ds.labels
    acc_nn = _accuracy(np.array([o.predicted_class for o in outputs_nn]), labels)
    acc_bnn = _accuracy(np.array([o.predicted_class for o in outputs_bnn]), labels)
    metrics = [
        _metrics(cfg, arch, len(train_ds), "nn", acc_nn, None, wall_nn),
        _metrics(cfg, arch, len(train_ds), "bnn", acc_bnn, ensemble.acceptance_rate, wall_bnn),
    ]
    return outputs_nn, outputs_bnn, labels, metrics


def cmd_histograms(cfg: dict, _shared=None) -> None:
    out = Path(cfg["out"])
    _snapshot(cfg, out, "histograms")
    outputs_nn, outputs_bnn, labels, metrics = _shared or _contextuality_eval(cfg)
    bins = int(cfg["histogram_bins"])
    for name, outputs in (("nn", outputs_nn), ("bnn", outputs_bnn)):
        wrong = np.array([o.predicted_class for o in outputs]) != labels
        edges, counts_all = uncertainty.uncertainty_histogram(outputs, bins=bins)
        _, counts_wrong = uncertainty.uncertainty_histogram(outputs, select=wrong, bins=bins)
        uncertainty.write_histogram_csv(out / f"hist_{name}.csv", edges, counts_all, counts_wrong)
        uncertainty.write_predictions_csv(out / f"pred_{name}.csv", outputs, labels)
    _write_json(out / "histograms_metrics.json", metrics)


def cmd_calibration(cfg: dict, _shared=None) -> None:
    out = Path(cfg["out"])
    _snapshot(cfg, out, "calibration")
    outputs_nn, outputs_bnn, labels, metrics = _shared or _contextuality_eval(cfg)
    alphas = np.linspace(0.0, 1.0, int(cfg["n_alphas"]))
    curves = (
        ("nn_total", outputs_nn, "total"),
        ("bnn_total", outputs_bnn, "total"),
        ("bnn_epistemic", outputs_bnn, "epistemic"),
    )
    for name, outputs, kind in curves:
        curve = uncertainty.misclassification_curve(outputs, labels, alphas, kind=kind)
        uncertainty.write_calibration_csv(out / f"calibration_{name}.csv", curve)
    _write_json(out / "calibration_metrics.json", metrics)


def cmd_rhombus(cfg: dict) -> None:
    out = Path(cfg["out"])
    cfg = _merge(cfg, {"task": "rhombus"})
    _snapshot(cfg, out, "rhombus")
    seed = int(cfg["seed"])
    res = int(cfg["grid_resolution"])
    axis = np.linspace(-1.0, 1.0, res)
    gx, gy = np.meshgrid(axis, axis)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    grid_labels = (np.abs(grid).sum(axis=1) > 1.0).astype(np.int64)

    metrics = []
    for variant, biased in (("uniform", False), ("biased", True)):
        train_ds = _make_dataset(cfg, int(cfg["rhombus_train_size"]), seed, biased=biased)
        arch = _arch(cfg["rhombus_arch"], 2)
        params, wall_nn = _train_nn(cfg, arch, train_ds, seed, train_key="rhombus_train")
        ensemble, wall_bnn = _train_bnn(cfg, arch, train_ds, seed,
                                        hmc_key="rhombus_hmc", train_key="rhombus_train")
        outputs_nn = uncertainty.nn_uncertainty_batch(params, grid)
        outputs_bnn = uncertainty.decompose_batch(ensemble, grid)
        acc_nn = _accuracy(np.array([o.predicted_class for o in outputs_nn]), grid_labels)
        acc_bnn = _accuracy(np.array([o.predicted_class for o in outputs_bnn]), grid_labels)
        metrics.append(_metrics(cfg, arch, len(train_ds), f"nn_{variant}", acc_nn, None, wall_nn))
        metrics.append(
            _metrics(cfg, arch, len(train_ds), f"bnn_{variant}", acc_bnn,
                     ensemble.acceptance_rate, wall_bnn)
        )
        with open(out / f"rhombus_{variant}_grid.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("x,y,label,nn_pred,nn_total,bnn_pred,bnn_total,bnn_aleatoric,bnn_epistemic\n")
            for point, label, o_nn, o_bnn in zip(grid, grid_labels, outputs_nn, outputs_bnn):
                fh.write(
                    f"{point[0]:.17g},{point[1]:.17g},{int(label)},"
                    f"{o_nn.predicted_class},{o_nn.total:.17g},"
                    f"{o_bnn.predicted_class},{o_bnn.total:.17g},"
                    f"{o_bnn.aleatoric:.17g},{o_bnn.epistemic:.17g}\n"
                )
    _write_json(out / "rhombus_metrics.json", metrics)


def cmd_run_all(cfg: dict) -> None:
    out = Path(cfg["out"])
    _snapshot(cfg, out, "run_all")
    cmd_generate(_merge(cfg, {"out": str(out / "generate")}))
    cmd_accuracy_sweep(_merge(cfg, {"out": str(out / "sweep")}))
    fig_cfg = _merge(cfg, {"out": str(out / "fig34")})
    shared = _contextuality_eval(fig_cfg)
    cmd_histograms(fig_cfg, _shared=shared)
    cmd_calibration(fig_cfg, _shared=shared)
    cmd_rhombus(_merge(cfg, {"out": str(out / "rhombus")}))


# ---------------------------------------------------------------------------
# Argument parsing and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contextbnn",
        description="Contextuality-recognition experiments with NN and BNN classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, data_flags=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file merged over defaults")
        p.add_argument("--seed", type=int, help="base RNG seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--task", choices=["rhombus", "kcbs"], help="experiment task")
        if data_flags:
            p.add_argument("--data", help="training dataset file (default: generate)")
            p.add_argument("--test-data", dest="test_data", help="test dataset file")
        p.set_defaults(func=func)
        return p

    add("generate", cmd_generate, "write train/test dataset files")
    add("train-nn", cmd_train_nn, "train the standard network", data_flags=True)
    add("train-bnn", cmd_train_bnn, "sample the posterior ensemble", data_flags=True)
    add("accuracy-sweep", cmd_accuracy_sweep, "accuracy vs training-set size for both models")
    add("histograms", cmd_histograms, "uncertainty histograms on the contextuality task")
    add("calibration", cmd_calibration, "misclassification-vs-uncertainty curves")
    add("rhombus", cmd_rhombus, "2-D illustrative task on uniform and biased data")
    add("run-all", cmd_run_all, "full desk-scale experiment suite")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        if args.command in ("train-nn", "train-bnn"):
            args.func(cfg, data=args.data, test_data=args.test_data)
        else:
            args.func(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (mlp.TrainingDivergenceError, bayes.LeapfrogDivergenceError,
            dataset.RejectionRateError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, dataset.DatasetFormatError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
