"""Command-line interface: synthesize data, train, evaluate, gradient-check.

Configuration is a flat ``key = value`` schema with documented defaults; a
config file (``--config``) and inline overrides (``--set key=value``) resolve
into one dictionary. Unknown keys are rejected. Exit codes: 0 success,
1 usage/config problems, 2 data/format problems, 3 numeric failures.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .dataset import Dataset, load_dataset, sds_sum_classify
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    FormatError,
    NumericError,
)
from .fusion import bce_loss, init_fusion, predict_subject
from .metrics import roc_curve
from .model import ModelConfig, init_model, load_checkpoint
from .numerics import Tensor, dot
from .numerics.gradcheck import gradcheck
from .plots import line_plot_svg
from .ras import RasConfig, encode_question, init_ras
from .synth import SynthConfig, disagreement_cells, generate
from .trainer import (
    TrainConfig,
    evaluate_metrics,
    evaluate_probs,
    fold_subject_sets,
    load_videos,
    run_fold,
)

__all__ = ["main", "resolve_config", "DEFAULTS", "gradcheck_cases", "run_gradchecks"]

DEFAULTS: dict[str, object] = {
    # synthetic generator
    "n_subjects": 200,
    "fps": 25,
    "height": 110,
    "width": 110,
    "disagreement_rate": 0.2,
    "motif_strength": 0.7,
    "time_median_s": 6.0,
    "time_shift": 1.08,
    "time_sigma": 0.35,
    "time_min_s": 2.0,
    "time_max_s": 21.0,
    "noise_sigma": 0.02,
    "synth_seed": 0,
    # model
    "input_hw": 110,
    "clip_len": 10,
    "base_channels": 16,
    "feature_dim": 128,
    "hidden1": 1024,
    "hidden2": 256,
    "blocks": 5,
    "sigma": 10.0,
    "use_difference": True,
    "use_delta": True,
    "per_block_affinity": False,
    "use_time": True,
    "mode": "full",
    "init_seed": 0,
    # training
    "epochs": 200,
    "batch_size": 2,
    "lr": 1e-3,
    "threshold": 0.5,
    "folds": 5,
    "seed": 0,
}

ABLATIONS = {
    "wo-delta": ("use_delta", False),
    "wo-time": ("use_time", False),
    "fj-term": ("use_difference", False),
    "per-block-affinity": ("per_block_affinity", True),
}


def _coerce(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: {e}") from None


def resolve_config(config_file: str | None = None,
                   overrides: list[str] | None = None) -> dict[str, object]:
    cfg = dict(DEFAULTS)

    def apply(key: str, value: str, where: str) -> None:
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r} ({where})")
        cfg[key] = _coerce(key, value)

    if config_file is not None:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigError(f"config file missing: {path}")
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            apply(key, value, f"{path}:{lineno}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, value = item.partition("=")
        apply(key, value, "--set")
    return cfg


def config_to_text(cfg: dict[str, object]) -> str:
    lines = []
    for key in DEFAULTS:
        value = cfg[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def synth_config_from(cfg: dict[str, object]) -> SynthConfig:
    return SynthConfig(
        n_subjects=cfg["n_subjects"], fps=cfg["fps"],
        height=cfg["height"], width=cfg["width"],
        disagreement_rate=cfg["disagreement_rate"],
        motif_strength=cfg["motif_strength"],
        time_median_s=cfg["time_median_s"], time_shift=cfg["time_shift"],
        time_sigma=cfg["time_sigma"], time_min_s=cfg["time_min_s"],
        time_max_s=cfg["time_max_s"], noise_sigma=cfg["noise_sigma"],
        clip_len=cfg["clip_len"], seed=cfg["synth_seed"],
    )


def model_config_from(cfg: dict[str, object], mode: str | None = None,
                      ablations: list[str] | None = None) -> ModelConfig:
    flags = {
        "use_difference": cfg["use_difference"],
        "use_delta": cfg["use_delta"],
        "per_block_affinity": cfg["per_block_affinity"],
        "use_time": cfg["use_time"],
    }
    for name in ablations or []:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choices: {sorted(ABLATIONS)}")
        key, value = ABLATIONS[name]
        flags[key] = value
    return ModelConfig(
        input_hw=cfg["input_hw"], clip_len=cfg["clip_len"],
        base_channels=cfg["base_channels"], feature_dim=cfg["feature_dim"],
        hidden=(cfg["hidden1"], cfg["hidden2"]),
        blocks=cfg["blocks"], sigma=cfg["sigma"],
        use_difference=flags["use_difference"], use_delta=flags["use_delta"],
        per_block_affinity=flags["per_block_affinity"], use_time=flags["use_time"],
        mode=mode if mode is not None else cfg["mode"],
        init_seed=cfg["init_seed"],
    )


def train_config_from(cfg: dict[str, object]) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        seed=cfg["seed"], threshold=cfg["threshold"], folds=cfg["folds"],
    )


# ---------------------------------------------------------------------------
# commands


def _fmt_float(x: float) -> str:
    return "nan" if np.isnan(x) else repr(float(x))


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, args.set)
    if args.print_config:
        sys.stdout.write(config_to_text(cfg))
        return 0
    synth_cfg = synth_config_from(cfg)
    dataset = generate(synth_cfg, args.out)
    dep_pos, dep_neg, norm_pos, norm_neg = disagreement_cells(dataset)
    print(f"wrote {len(dataset.subjects)} subjects to {args.out}")
    print("                 questionnaire+  questionnaire-")
    print(f"depressed        {dep_pos:>14d}  {dep_neg:>14d}")
    print(f"normal           {norm_pos:>14d}  {norm_neg:>14d}")
    agree = dep_pos + norm_neg
    print(f"questionnaire agreement: {agree}/{len(dataset.subjects)}")
    return 0


def _folds_arg(value: str, k: int) -> list[int]:
    if value == "all":
        return list(range(k))
    try:
        fold = int(value)
    except ValueError:
        raise ConfigError(f"--fold must be an integer or 'all', got {value!r}") from None
    if not 0 <= fold < k:
        raise ConfigError(f"fold {fold} outside 0..{k - 1}")
    return [fold]


def _train_fold_job(data_dir: str, out_dir: str, cfg: dict[str, object],
                    mode: str | None, ablations: list[str], fold: int,
                    resume: bool) -> tuple[int, dict[str, float]]:
    dataset = load_dataset(data_dir)
    model_cfg = model_config_from(cfg, mode, ablations)
    train_cfg = train_config_from(cfg)
    _, metrics = run_fold(dataset, model_cfg, train_cfg, fold, out_dir, resume=resume)
    return fold, metrics


def _write_curves(out_dir: Path, folds: list[int]) -> None:
    series = []
    for fold in folds:
        path = out_dir / f"fold{fold}_history.csv"
        if not path.is_file():
            continue
        epochs, train_acc, val_acc = [], [], []
        for line in path.read_text(encoding="utf-8").strip().splitlines()[1:]:
            e, _, tr, va = line.split(",")
            epochs.append(float(e))
            train_acc.append(float(tr))
            val_acc.append(float(va))
        if epochs:
            series.append((f"fold {fold} train", epochs, train_acc))
            if not any(np.isnan(val_acc)):
                series.append((f"fold {fold} val", epochs, val_acc))
    if series:
        svg = line_plot_svg(series, "Accuracy by epoch", "epoch", "accuracy")
        (out_dir / "training_curves.svg").write_text(svg, encoding="utf-8")


def _print_aggregate(per_fold: dict[int, dict[str, float]]) -> None:
    keys = ("accuracy", "sensitivity", "specificity", "auc")
    for fold in sorted(per_fold):
        row = per_fold[fold]
        cells = ", ".join(f"{k} {row[k]:.4f}" for k in keys)
        print(f"fold {fold}: {cells}")
    if len(per_fold) > 1:
        for k in keys:
            values = np.array([per_fold[f][k] for f in sorted(per_fold)])
            print(f"{k}: {values.mean():.4f} +/- {values.std():.4f}")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, args.set)
    if args.print_config:
        sys.stdout.write(config_to_text(cfg))
        return 0
    train_cfg = train_config_from(cfg)
    folds = _folds_arg(args.fold, train_cfg.folds)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    per_fold: dict[int, dict[str, float]] = {}
    if args.jobs > 1 and len(folds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            jobs = [pool.submit(_train_fold_job, args.data, str(out_dir), cfg,
                                args.mode, args.ablate, fold, args.resume)
                    for fold in folds]
            for job in jobs:
                fold, metrics = job.result()
                per_fold[fold] = metrics
    else:
        for fold in folds:
            fold, metrics = _train_fold_job(args.data, str(out_dir), cfg,
                                            args.mode, args.ablate, fold, args.resume)
            per_fold[fold] = metrics
    _write_curves(out_dir, folds)
    _print_aggregate(per_fold)
    return 0


def _baseline_report(dataset: Dataset, threshold: float) -> int:
    probs = np.array([float(sds_sum_classify(s.choices)) for s in dataset.subjects])
    metrics = evaluate_metrics(probs, dataset.labels, threshold)
    print("questionnaire-sum baseline (threshold 50, whole set):")
    for key in ("accuracy", "sensitivity", "specificity", "auc"):
        print(f"{key}: {metrics[key]:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, args.set)
    if args.print_config:
        sys.stdout.write(config_to_text(cfg))
        return 0
    dataset = load_dataset(args.data)
    train_cfg = train_config_from(cfg)
    if args.baseline == "sds-sum":
        return _baseline_report(dataset, train_cfg.threshold)

    model_cfg = model_config_from(cfg, args.mode, args.ablate)
    folds = _folds_arg(args.fold, train_cfg.folds)
    run_dir = Path(args.run)
    out_dir = Path(args.out) if args.out else run_dir

    per_fold: dict[int, dict[str, float]] = {}
    pooled_probs: list[float] = []
    pooled_labels: list[int] = []
    for fold in folds:
        params = init_model(model_cfg)
        load_checkpoint(run_dir / f"fold{fold}.ckpt", params)
        _, val_subjects = fold_subject_sets(dataset, train_cfg.folds,
                                            train_cfg.seed, fold)
        videos = load_videos(dataset, val_subjects, model_cfg.mode != "mlp")
        probs = evaluate_probs(params, val_subjects, videos)
        labels = np.array([s.label for s in val_subjects])
        per_fold[fold] = evaluate_metrics(probs, labels, train_cfg.threshold)
        pooled_probs.extend(probs.tolist())
        pooled_labels.extend(labels.tolist())

    out_dir.mkdir(parents=True, exist_ok=True)
    keys = ("accuracy", "sensitivity", "specificity", "auc")
    lines = ["fold," + ",".join(keys)]
    for fold in sorted(per_fold):
        lines.append(f"{fold}," + ",".join(_fmt_float(per_fold[fold][k]) for k in keys))
    if len(per_fold) > 1:
        stacked = {k: np.array([per_fold[f][k] for f in sorted(per_fold)]) for k in keys}
        lines.append("mean," + ",".join(_fmt_float(stacked[k].mean()) for k in keys))
        lines.append("sd," + ",".join(_fmt_float(stacked[k].std()) for k in keys))
    (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    try:
        points = roc_curve(np.array(pooled_probs), np.array(pooled_labels))
        roc_lines = ["threshold,fpr,tpr"]
        roc_lines += [f"{_fmt_float(t)},{_fmt_float(x)},{_fmt_float(y)}"
                      for t, x, y in points]
        (out_dir / "roc.csv").write_text("\n".join(roc_lines) + "\n", encoding="utf-8")
        svg = line_plot_svg(
            [("model", [p[1] for p in points], [p[2] for p in points]),
             ("chance", [0.0, 1.0], [0.0, 1.0])],
            "ROC (pooled validation folds)", "false positive rate",
            "true positive rate")
        (out_dir / "roc.svg").write_text(svg, encoding="utf-8")
    except ContractError:
        pass  # single-class pool: no curve to draw
    _print_aggregate(per_fold)
    return 0


# ---------------------------------------------------------------------------
# gradient-check suite


def gradcheck_cases() -> list[tuple[str, object]]:
    """Named builders; each returns (fn, params) for the checker."""

    def encoder_case():
        from .encoder3d import build_plan, encode_clip, init_encoder

        rng = np.random.default_rng(np.random.SeedSequence(11))
        plan = build_plan(20, clip_len=10, base_channels=2, feature_dim=4)
        params = init_encoder(plan, rng)
        x = Tensor(rng.uniform(0.1, 0.9, size=(20, 20, 10, 1)))
        probe = Tensor(rng.normal(size=4))
        named = params.named_parameters()

        def fn():
            return dot(encode_clip(x, params), probe)

        return fn, [t for _, t in named]

    def ras_case():
        rng = np.random.default_rng(np.random.SeedSequence(12))
        config = RasConfig(blocks=2, sigma=4.0)
        params = init_ras(8, config, rng)
        for w in params.omegas:  # nonzero so the blocks actually act
            w.data = rng.normal(scale=0.5, size=8)
        features = [Tensor(rng.normal(size=8)) for _ in range(3)]
        probe = Tensor(rng.normal(size=8))

        def fn():
            return dot(encode_question(features, [1, 2, 3], params, config), probe)

        return fn, [t for _, t in params.named_parameters()]

    def fusion_case():
        from .dataset import QUESTION_COUNT
        from .fusion import encode_score, fuse_question

        rng = np.random.default_rng(np.random.SeedSequence(13))
        params = init_fusion(4, (8, 4), rng)
        vectors = [
            fuse_question(Tensor(rng.normal(size=4)),
                          encode_score(int(rng.integers(1, 5))),
                          float(rng.uniform(2, 20)))
            for _ in range(QUESTION_COUNT)
        ]

        def fn():
            pred = predict_subject(vectors, params)
            return bce_loss(pred.p, 1)

        return fn, [t for _, t in params.named_parameters()]

    def composed_case():
        from .dataset import QUESTION_COUNT, Subject
        from .model import ModelConfig, SubjectVideo, init_model, named_parameters, subject_forward

        rng = np.random.default_rng(np.random.SeedSequence(14))
        config = ModelConfig(input_hw=12, clip_len=4, base_channels=2,
                             feature_dim=4, hidden=(8, 4), blocks=1,
                             sigma=4.0, init_seed=14)
        params = init_model(config)
        for w in params.ras.omegas:
            w.data = rng.normal(scale=0.5, size=4)
        frames = [rng.integers(0, 256, size=(4, 12, 12)).astype(np.uint8)
                  for _ in range(QUESTION_COUNT)]
        video = SubjectVideo(frames=frames)
        subject = Subject(
            "gc0001", 1,
            tuple(int(rng.integers(1, 5)) for _ in range(QUESTION_COUNT)),
            tuple(float(rng.uniform(2, 20)) for _ in range(QUESTION_COUNT)),
            tuple(f"gc_{q}.rasf" for q in range(QUESTION_COUNT)),
        )

        def fn():
            pred = subject_forward(params, subject, video)
            return bce_loss(pred.p, subject.label)

        return fn, [t for _, t in named_parameters(params)]

    return [
        ("encoder-reduced", encoder_case),
        ("attention-stack", ras_case),
        ("fusion-head", fusion_case),
        ("composed-loss", composed_case),
    ]


def run_gradchecks(cases=None, tol: float = 1e-4) -> list[tuple[str, bool, str, float]]:
    results = []
    for name, builder in cases or gradcheck_cases():
        start = time.monotonic()
        try:
            fn, params = builder()
            worst = gradcheck(fn, params, tol=tol)
            results.append((name, True, f"worst rel err {worst:.2e}", time.monotonic() - start))
        except (ContractError, NumericError) as e:
            results.append((name, False, str(e), time.monotonic() - start))
    return results


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradchecks()
    failures = 0
    for name, passed, detail, seconds in results:
        status = "PASS" if passed else "FAIL"
        print(f"{name:<18} {status}  {detail}  ({seconds:.1f}s)")
        failures += 0 if passed else 1
    if failures:
        print(f"{failures} gradient check(s) failed", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sdscreen",
                     description="Depression screening from questionnaires and "
                                 "per-question video.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key")
        p.add_argument("--print-config", action="store_true",
                       help="echo the resolved configuration and exit")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--out", required=True, help="output dataset directory")
    add_config_args(p_synth)
    p_synth.set_defaults(fn=cmd_synth)

    p_train = sub.add_parser("train", help="train with cross-validation")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="run output directory")
    p_train.add_argument("--fold", default="all", help="fold index or 'all'")
    p_train.add_argument("--jobs", type=int, default=1,
                         help="parallel fold processes")
    p_train.add_argument("--resume", action="store_true",
                         help="continue from existing checkpoints")
    p_train.add_argument("--mode", choices=("full", "video", "mlp", "slf"),
                         default=None, help="override the model mode")
    p_train.add_argument("--ablate", action="append", default=[],
                         choices=sorted(ABLATIONS),
                         help="apply an ablation flag (repeatable)")
    add_config_args(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints or baselines")
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--run", default=None, help="directory with fold checkpoints")
    p_eval.add_argument("--out", default=None,
                        help="report directory (default: the run directory)")
    p_eval.add_argument("--fold", default="all", help="fold index or 'all'")
    p_eval.add_argument("--mode", choices=("full", "video", "mlp", "slf"),
                        default=None, help="override the model mode")
    p_eval.add_argument("--ablate", action="append", default=[],
                        choices=sorted(ABLATIONS),
                        help="apply an ablation flag (repeatable)")
    p_eval.add_argument("--baseline", choices=("sds-sum",), default=None,
                        help="report a training-free baseline instead")
    add_config_args(p_eval)
    p_eval.set_defaults(fn=cmd_eval)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    add_config_args(p_gc)
    p_gc.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "eval" and args.baseline is None and args.run is None:
            raise ConfigError("eval needs --run (checkpoints) or --baseline")
        return args.fn(args)
    except (ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FormatError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
