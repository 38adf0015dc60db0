"""Command-line surface: synth, train, score, tune, eval, bench.

Every command is deterministic for a fixed seed, exits non-zero on any
error with a machine-parseable ``{"error": code, "message": ...}`` line on
stderr, and writes outputs atomically (temp file + rename). Warnings go to
stderr, never into data files. Report files never embed paths or
timestamps, so same-seed runs are byte-identical wherever they run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .baselines import (
    FittedDetector,
    fit_iforest,
    fit_lof,
    fit_mahalanobis,
)
from .core import Rng, ScoreSpec
from .errors import InvalidSpec, MissingArtifact, MloodError
from .harness import (
    LinearModel,
    ToyConfig,
    TrainConfig,
    bce_loss,
    forward,
    gen_task,
    init_model,
    mean_average_precision,
    train,
)
from .metrics import evaluate, roc_points
from .scoring import ScoreData, labelwise_energy, score
from .tuning import synth_validation, tune_mahalanobis, tune_odin

BENCH_METHODS = [
    ("energy", "max"), ("energy", "sum"),
    ("logit", "max"), ("logit", "sum"),
    ("sigmoid_prob", "max"), ("sigmoid_prob", "sum"),
    ("odin_prob", "max"), ("odin_prob", "sum"),
    ("mahalanobis", "max"), ("mahalanobis", "sum"),
    ("msp", None), ("lof", None), ("iforest", None),
]

REPORT_COLUMNS = ["method", "aggregation", "fpr95", "auroc", "aupr",
                  "tau", "n_in", "n_ood"]


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


# ---------------------------------------------------------------- artifacts

def save_task(task_dir: Path, task) -> None:
    task_dir.mkdir(parents=True, exist_ok=True)
    fileio.write_matrix(task_dir / "train_inputs.mat", task.train.inputs)
    fileio.write_matrix(task_dir / "train_labels.mat", task.train.labels)
    fileio.write_matrix(task_dir / "test_in_inputs.mat", task.test_in.inputs)
    fileio.write_matrix(task_dir / "test_in_labels.mat", task.test_in.labels)
    fileio.write_matrix(task_dir / "test_ood_inputs.mat", task.test_ood_inputs)
    fileio.write_matrix(task_dir / "prototypes_in.mat", task.prototypes_in)
    fileio.write_matrix(task_dir / "prototypes_ood.mat", task.prototypes_ood)
    fileio.write_json(task_dir / "task.json", {
        "config": task.config.to_dict(),
        "min_ood_angle_rad": task.min_ood_angle(),
    })


def _load_part(task_dir: Path, name: str) -> np.ndarray:
    return fileio.read_matrix(task_dir / f"{name}.mat")


def load_task_config(task_dir: Path) -> ToyConfig:
    sidecar = fileio.read_json(task_dir / "task.json")
    return ToyConfig.from_dict(sidecar["config"])


def save_model(model_dir: Path, model: LinearModel) -> None:
    model_dir.mkdir(parents=True, exist_ok=True)
    fileio.write_matrix(model_dir / "model_w.mat", model.W)
    fileio.write_matrix(model_dir / "model_b.mat", model.b.reshape(1, -1))


def load_model(model_dir: Path) -> LinearModel:
    return LinearModel(
        W=fileio.read_matrix(model_dir / "model_w.mat"),
        b=fileio.read_matrix(model_dir / "model_b.mat")[0],
    )


# ----------------------------------------------------------------- commands

def cmd_synth(args) -> None:
    cfg = ToyConfig(
        d=args.d, n_labels=args.labels, n_ood_protos=args.ood_protos,
        proto_scale=args.proto_scale, noise_sigma=args.noise_sigma,
        max_positive=args.max_positive, n_train=args.n_train,
        n_test_in=args.n_test_in, n_test_ood=args.n_test_ood, seed=args.seed,
    )
    save_task(Path(args.out_dir), gen_task(cfg))


def cmd_train(args) -> None:
    task_dir = Path(args.task_dir)
    cfg = load_task_config(task_dir)
    train_inputs = _load_part(task_dir, "train_inputs")
    train_labels = _load_part(task_dir, "train_labels")
    from .core import LabeledDataset

    data = LabeledDataset(train_inputs, train_labels)
    hyper = TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch,
                        seed=args.seed)
    model0 = init_model(cfg.n_labels, cfg.d, Rng(args.seed))
    initial_loss = bce_loss(model0, data)
    model = train(model0, data, hyper)
    final_loss = bce_loss(model, data)

    test_in = LabeledDataset(_load_part(task_dir, "test_in_inputs"),
                             _load_part(task_dir, "test_in_labels"))
    out_dir = Path(args.out_dir) if args.out_dir else task_dir
    save_model(out_dir, model)
    fileio.write_json(out_dir / "train_report.json", {
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "map_test_in": mean_average_precision(model, test_in),
        "trainer": {"lr": hyper.lr, "epochs": hyper.epochs,
                    "batch": hyper.batch, "seed": hyper.seed},
    })


def _build_spec(args) -> ScoreSpec:
    aggregator = args.agg
    k = args.k
    if args.base in ("msp", "lof", "iforest"):
        aggregator, k = None, None
    elif aggregator is None:
        raise InvalidSpec(f"base {args.base!r} needs --agg")
    hyper = {}
    if args.temperature is not None:
        hyper["temperature"] = args.temperature
    if args.epsilon is not None:
        hyper["epsilon"] = args.epsilon
    return ScoreSpec(base=args.base, aggregator=aggregator,
                     k=k if aggregator == "topk" else None, hyper=hyper)


def _fit_for_spec(spec: ScoreSpec, features, labels, args) -> FittedDetector:
    if spec.base == "mahalanobis":
        if labels is None:
            raise MissingArtifact("mahalanobis needs fit labels")
        return FittedDetector(mahalanobis=fit_mahalanobis(features, labels))
    if spec.base == "lof":
        return FittedDetector(lof=fit_lof(features, k=args.n_neighbors))
    if spec.base == "iforest":
        return FittedDetector(iforest=fit_iforest(
            features, n_trees=args.n_trees,
            subsample=min(args.subsample, features.shape[0]),
            rng=Rng(args.seed)))
    return FittedDetector()


def cmd_score(args) -> None:
    file_mode = args.logits is not None or args.inputs is not None
    task_mode = args.task_dir is not None
    if file_mode == task_mode:
        raise InvalidSpec("give exactly one input source: files or --task-dir")
    spec = _build_spec(args)

    model = None
    fit_features = None
    fit_labels = None
    if task_mode:
        task_dir = Path(args.task_dir)
        inputs = _load_part(task_dir, f"{args.split}_inputs")
        model_dir = Path(args.model_dir) if args.model_dir else task_dir
        if (model_dir / "model_w.mat").is_file():
            model = load_model(model_dir)
        fit_features = _load_part(task_dir, "train_inputs")
        fit_labels = _load_part(task_dir, "train_labels")
        data = ScoreData(inputs=inputs, features=inputs, model=model)
    else:
        logits = fileio.read_matrix(args.logits) if args.logits else None
        inputs = fileio.read_matrix(args.inputs) if args.inputs else None
        if args.weights:
            model = LinearModel(W=fileio.read_matrix(args.weights),
                                b=fileio.read_matrix(args.bias)[0])
        if args.fit_features:
            fit_features = fileio.read_matrix(args.fit_features)
        if args.fit_labels:
            fit_labels = fileio.read_matrix(args.fit_labels)
        epsilon = float(spec.hyper.get("epsilon", 0.0))
        if spec.base == "odin_prob" and epsilon > 0 and model is None:
            _warn("ODIN perturbation needs a model; forcing epsilon to 0")
            hyper = dict(spec.hyper)
            hyper["epsilon"] = 0.0
            spec = ScoreSpec(spec.base, spec.aggregator, spec.k, hyper)
        data = ScoreData(logits=logits, inputs=inputs, features=inputs, model=model)

    fitted = None
    if spec.base in ("mahalanobis", "lof", "iforest"):
        if fit_features is None:
            raise MissingArtifact(f"{spec.base} needs fit features "
                                  "(--fit-features or a task dir)")
        fitted = _fit_for_spec(spec, fit_features, fit_labels, args)

    values = score(spec, data, fitted)
    fileio.write_matrix(Path(args.out), values.reshape(-1, 1))


def _validation_bundle(train_inputs: np.ndarray, args):
    rng = Rng(args.seed).split("validation")
    val = synth_validation(train_inputs, args.n_per_part, rng)
    gen = Rng(args.seed).split("val-in").generator()
    n_val = min(args.n_val, train_inputs.shape[0])
    in_val = train_inputs[gen.choice(train_inputs.shape[0], n_val, replace=False)]
    return val, in_val


def cmd_tune(args) -> None:
    task_dir = Path(args.task_dir)
    model = load_model(Path(args.model_dir) if args.model_dir else task_dir)
    train_inputs = _load_part(task_dir, "train_inputs")
    val, in_val = _validation_bundle(train_inputs, args)
    if args.method == "odin":
        result = tune_odin(model, val, in_val, tpr_target=args.tpr_target)
    else:
        fitted = fit_mahalanobis(train_inputs, _load_part(task_dir, "train_labels"))
        result = tune_mahalanobis(fitted, model, val, in_val, agg=args.agg,
                                  tpr_target=args.tpr_target)
    fileio.write_json(Path(args.out), result.to_dict())


def _report_row(name: str, aggregation: str, report) -> list:
    return [name, aggregation, report.fpr_at_tpr, report.auroc, report.aupr,
            report.threshold, report.n_in, report.n_ood]


def cmd_eval(args) -> None:
    in_scores = fileio.read_matrix(args.in_scores).reshape(-1)
    ood_scores = fileio.read_matrix(args.ood_scores).reshape(-1)
    report = evaluate(in_scores, ood_scores, tpr_target=args.tpr_target)

    payload = {"method": args.method_name, "aggregation": args.aggregation}
    payload.update(report.to_dict())
    if args.out_json:
        fileio.write_json(Path(args.out_json), payload)
    if args.out_csv:
        fileio.write_csv_rows(Path(args.out_csv), REPORT_COLUMNS,
                              [_report_row(args.method_name, args.aggregation, report)])
    if args.curve:
        points = roc_points(in_scores, ood_scores)
        fileio.write_csv_rows(Path(args.curve), ["fpr", "tpr"],
                              [[float(a), float(b)] for a, b in points])
    if args.hist:
        if not (args.in_logits and args.ood_logits):
            raise MissingArtifact("--hist needs --in-logits and --ood-logits")
        _write_energy_histograms(args)
    if not (args.out_json or args.out_csv or args.curve or args.hist):
        print(json.dumps(payload, sort_keys=True))


def _write_energy_histograms(args) -> None:
    """Per-label energy distributions for in vs OOD data, as histogram
    counts over shared per-label bins."""
    e_in = labelwise_energy(fileio.read_matrix(args.in_logits))
    e_ood = labelwise_energy(fileio.read_matrix(args.ood_logits))
    rows = []
    for label in range(e_in.shape[1]):
        lo = min(e_in[:, label].min(), e_ood[:, label].min())
        hi = max(e_in[:, label].max(), e_ood[:, label].max())
        edges = np.linspace(lo, hi, args.bins + 1)
        count_in, _ = np.histogram(e_in[:, label], bins=edges)
        count_ood, _ = np.histogram(e_ood[:, label], bins=edges)
        for b in range(args.bins):
            rows.append([label, float(edges[b]), float(edges[b + 1]),
                         int(count_in[b]), int(count_ood[b])])
    fileio.write_csv_rows(Path(args.hist),
                          ["label", "bin_lo", "bin_hi", "count_in", "count_ood"],
                          rows)


def cmd_bench(args) -> None:
    task_dir = Path(args.task_dir)
    model = load_model(Path(args.model_dir) if args.model_dir else task_dir)
    train_inputs = _load_part(task_dir, "train_inputs")
    train_labels = _load_part(task_dir, "train_labels")
    test_in = _load_part(task_dir, "test_in_inputs")
    test_ood = _load_part(task_dir, "test_ood_inputs")

    fitted = FittedDetector(
        mahalanobis=fit_mahalanobis(train_inputs, train_labels),
        lof=fit_lof(train_inputs, k=args.n_neighbors),
        iforest=fit_iforest(train_inputs, n_trees=args.n_trees,
                            subsample=min(args.subsample, train_inputs.shape[0]),
                            rng=Rng(args.seed)),
    )

    odin_params = {"temperature": 1.0, "epsilon": 0.0}
    maha_params = {"epsilon": 0.0}
    out_dir = Path(args.out).parent
    if args.tune:
        val, in_val = _validation_bundle(train_inputs, args)
        odin_result = tune_odin(model, val, in_val, tpr_target=args.tpr_target)
        maha_result = tune_mahalanobis(fitted.mahalanobis, model, val, in_val,
                                       agg="max", tpr_target=args.tpr_target)
        odin_params = dict(odin_result.best_params)
        maha_params = {"epsilon": maha_result.best_params["epsilon"]}
        fileio.write_json(out_dir / "tune_odin.json", odin_result.to_dict())
        fileio.write_json(out_dir / "tune_mahalanobis.json", maha_result.to_dict())

    data_in = ScoreData(inputs=test_in, features=test_in, model=model)
    data_ood = ScoreData(inputs=test_ood, features=test_ood, model=model)

    rows = []
    for base, agg in BENCH_METHODS:
        hyper = {}
        if base == "odin_prob":
            hyper = odin_params
        elif base == "mahalanobis":
            hyper = maha_params
        spec = ScoreSpec(base=base, aggregator=agg, hyper=hyper)
        report = evaluate(score(spec, data_in, fitted),
                          score(spec, data_ood, fitted),
                          tpr_target=args.tpr_target)
        rows.append(_report_row(base, agg or "", report))
    rows.sort(key=lambda r: (r[0], r[1]))
    fileio.write_csv_rows(Path(args.out), REPORT_COLUMNS, rows)


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlood",
        description="Multi-label OOD detection toolkit: synthesize tasks, "
                    "train the linear harness model, score, tune, evaluate, "
                    "and benchmark all methods.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate and persist a synthetic task")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--labels", type=int, default=8)
    p.add_argument("--ood-protos", type=int, default=8)
    p.add_argument("--proto-scale", type=float, default=6.0)
    p.add_argument("--noise-sigma", type=float, default=0.5)
    p.add_argument("--max-positive", type=int, default=3)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test-in", type=int, default=1000)
    p.add_argument("--n-test-ood", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the linear model on a task")
    p.add_argument("--task-dir", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="apply one scoring method")
    p.add_argument("--base", required=True,
                   choices=["energy", "logit", "sigmoid_prob", "odin_prob",
                            "mahalanobis", "msp", "lof", "iforest"])
    p.add_argument("--agg", choices=["max", "sum", "topk"], default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--n-neighbors", type=int, default=20)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--subsample", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--logits", default=None)
    p.add_argument("--inputs", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--bias", default=None)
    p.add_argument("--fit-features", default=None)
    p.add_argument("--fit-labels", default=None)
    p.add_argument("--task-dir", default=None)
    p.add_argument("--model-dir", default=None)
    p.add_argument("--split", choices=["train", "test_in", "test_ood"],
                   default="test_in")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("tune", help="grid-search ODIN or Mahalanobis "
                                    "hyperparameters on synthesized validation data")
    p.add_argument("--task-dir", required=True)
    p.add_argument("--model-dir", default=None)
    p.add_argument("--method", required=True, choices=["odin", "mahalanobis"])
    p.add_argument("--agg", choices=["max", "sum"], default="max")
    p.add_argument("--n-per-part", type=int, default=200)
    p.add_argument("--n-val", type=int, default=1000)
    p.add_argument("--tpr-target", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="compute FPR95/AUROC/AUPR from score files")
    p.add_argument("--in-scores", required=True)
    p.add_argument("--ood-scores", required=True)
    p.add_argument("--tpr-target", type=float, default=0.95)
    p.add_argument("--method-name", default="")
    p.add_argument("--aggregation", default="")
    p.add_argument("--out-json", default=None)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--curve", default=None,
                   help="write raw (FPR, TPR) sweep points as CSV")
    p.add_argument("--hist", default=None,
                   help="write per-label energy histogram CSV "
                        "(needs --in-logits/--ood-logits)")
    p.add_argument("--in-logits", default=None)
    p.add_argument("--ood-logits", default=None)
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run every method on one task and emit "
                                     "a combined CSV")
    p.add_argument("--task-dir", required=True)
    p.add_argument("--model-dir", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--tune", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--n-per-part", type=int, default=200)
    p.add_argument("--n-val", type=int, default=1000)
    p.add_argument("--n-neighbors", type=int, default=20)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--subsample", type=int, default=256)
    p.add_argument("--tpr-target", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except MloodError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
