"""Experiment command line: train, compare, gradcheck, synth.

Configs are JSON documents with a schema_version. Every artifact write is
atomic (temp file + rename) so an interrupted run never leaves a truncated
file behind. Exit codes: 0 success, 1 failed checks or runtime failure,
2 configuration or usage errors, 3 numeric blow-ups.
"""

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .data import (SyntheticSpec, generate, load_forecast_csv, load_ucr_tsv,
                   write_ucr_tsv)
from .errors import ConfigError, FormatError, NumericError, ShuffleStitchError
from .layer import ShuffleStackConfig
from .metrics import ComparisonResult
from .models import Model, ModelConfig
from .train import RunReport, TrainConfig, loss_trace_std, train
from . import gradcheck

SCHEMA_VERSION = 1

# hyperparameter values covered by the published sensitivity sweeps; other
# values are allowed only with --allow-nonstandard
PUBLISHED_RANGES = {
    "segments": (2, 4, 8, 16, 24),
    "layers": (1, 2, 3),
    "segment_multiplier": (0.5, 1.0, 2.0),
    "priority_rank": (1, 2, 3),
}

TOP_LEVEL_KEYS = {"schema_version", "task", "data", "model", "train", "output_dir"}
MODEL_KEYS = {"backbone", "hidden", "kernel_size", "seed", "shuffle"}
SHUFFLE_KEYS = {"segments", "layers", "segment_multiplier", "priority_rank"}
DATA_KEYS = {
    "synthetic": {"source", "synthetic"},
    "ucr_tsv": {"source", "path", "normalize", "nan_policy"},
    "forecast_csv": {"source", "path", "context", "horizon", "stride", "normalize"},
}


# ---------------------------------------------------------------------------
# config handling


def _require_keys(block: dict, allowed: set, context: str, required=()):
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(block)
    if missing:
        raise ConfigError(f"{context}: missing keys {sorted(missing)}")


def load_experiment_config(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        config = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    _require_keys(config, TOP_LEVEL_KEYS, str(path),
                  required=("schema_version", "task", "data", "model", "train"))
    if config["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: schema_version {config['schema_version']!r} unsupported, "
            f"expected {SCHEMA_VERSION}"
        )
    if config["task"] not in ("classification", "forecasting"):
        raise ConfigError(f"{path}: unknown task {config['task']!r}")

    data = config["data"]
    source = data.get("source")
    if source not in DATA_KEYS:
        raise ConfigError(f"{path}: data.source must be one of {sorted(DATA_KEYS)}")
    _require_keys(data, DATA_KEYS[source], f"{path}: data")
    if config["task"] == "forecasting" and source != "forecast_csv":
        raise ConfigError(f"{path}: forecasting requires data.source forecast_csv")
    if config["task"] == "classification" and source == "forecast_csv":
        raise ConfigError(f"{path}: classification cannot use forecast_csv data")
    if source != "synthetic":
        if "path" not in data:
            raise ConfigError(f"{path}: data.path is required for source {source}")
        if not Path(data["path"]).exists():
            raise ConfigError(f"{path}: data.path {data['path']} does not exist")

    model = config["model"]
    _require_keys(model, MODEL_KEYS, f"{path}: model", required=("backbone",))
    shuffle = model.get("shuffle")
    if shuffle is not None:
        _require_keys(shuffle, SHUFFLE_KEYS, f"{path}: model.shuffle",
                      required=("segments",))

    _require_keys(config["train"], set(TrainConfig.__dataclass_fields__),
                  f"{path}: train")
    return config


def validate_published_ranges(shuffle: dict, allow_nonstandard: bool) -> None:
    if shuffle is None or allow_nonstandard:
        return
    for key, allowed in PUBLISHED_RANGES.items():
        if key in shuffle and shuffle[key] not in allowed:
            raise ConfigError(
                f"model.shuffle.{key}={shuffle[key]} is outside the published "
                f"range {list(allowed)}; pass --allow-nonstandard to override"
            )


def load_dataset(config: dict):
    """(train, eval) sample lists for the config's data block."""
    data = config["data"]
    source = data["source"]
    if source == "synthetic":
        spec = SyntheticSpec.from_dict(data["synthetic"])
        return generate(spec)
    if source == "ucr_tsv":
        return load_ucr_tsv(data["path"], normalize=data.get("normalize", False),
                            nan_policy=data.get("nan_policy", "reject"))
    splits = load_forecast_csv(
        data["path"], context=data["context"], horizon=data["horizon"],
        stride=data.get("stride", 1), normalize=data.get("normalize", True))
    return splits.train, splits.test


def build_model_from_config(config: dict, train_data: list, eval_data: list) -> Model:
    """Instantiate the model, inferring data-dependent dimensions."""
    model_cfg = config["model"]
    sample = train_data[0]
    if config["task"] == "classification":
        length, channels = sample.values.shape
        labels = {s.label for s in train_data} | {s.label for s in eval_data}
        extra = {"num_classes": max(labels) + 1}
    else:
        length, channels = sample.context.shape
        extra = {"horizon": sample.target.shape[0]}
    shuffle = model_cfg.get("shuffle")
    stack = None if shuffle is None else ShuffleStackConfig(
        segments=shuffle["segments"],
        layers=shuffle.get("layers", 1),
        segment_multiplier=shuffle.get("segment_multiplier", 1.0),
        priority_rank=shuffle.get("priority_rank", 1),
    )
    mc = ModelConfig(
        task=config["task"],
        backbone=model_cfg["backbone"],
        channels=channels,
        input_length=length,
        hidden=model_cfg.get("hidden", 16),
        kernel_size=model_cfg.get("kernel_size", 3),
        shuffle=stack,
        **extra,
    )
    return Model(mc, seed=model_cfg.get("seed", 0))


def run_experiment(config: dict):
    """Load data, build the model, train. Returns (model, report, eval_data)."""
    train_data, eval_data = load_dataset(config)
    model = build_model_from_config(config, train_data, eval_data)
    train_cfg = TrainConfig(**config["train"])
    report = train(model, train_data, train_cfg, eval_data=eval_data)
    return model, report, eval_data


# ---------------------------------------------------------------------------
# artifacts


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_run_artifacts(out_dir, config: dict, report: RunReport, model: Model) -> None:
    """report.json, loss/permutation/stitch-weight traces, checkpoint.npz."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_dir / "report.json", _json_text({
        "schema_version": SCHEMA_VERSION,
        "backend": _kernels.BACKEND,
        "config": config,
        "run": report.to_dict(),
    }))
    _atomic_write_text(out_dir / "loss_trace.csv", _csv_text(
        ("iteration", "loss"),
        ((it, repr(loss)) for it, loss in zip(report.trace_iterations, report.loss_trace)),
    ))
    perm_rows = [row for record in report.permutation_trace for row in record.rows()]
    _atomic_write_text(out_dir / "perm_trace.csv", _csv_text(
        ("step", "layer", "priorities", "order"), perm_rows))
    weight_rows = [
        (entry["step"], entry["layer"],
         ",".join(repr(v) for v in entry["weight_original"]),
         ",".join(repr(v) for v in entry["weight_shuffled"]),
         ",".join(repr(v) for v in entry["bias"]))
        for snapshot in report.stitch_weight_trace for entry in snapshot
    ]
    _atomic_write_text(out_dir / "weights_trace.csv", _csv_text(
        ("step", "layer", "weight_original", "weight_shuffled", "bias"), weight_rows))
    buf = io.BytesIO()
    np.savez(buf, **model.state_dict())
    _atomic_write_bytes(out_dir / "checkpoint.npz", buf.getvalue())


# ---------------------------------------------------------------------------
# subcommands


def _resolve_output_dir(args, config: dict, default: str) -> Path:
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    return Path(config.get("output_dir", default))


def cmd_train(args) -> int:
    config = load_experiment_config(args.config)
    validate_published_ranges(config["model"].get("shuffle"), args.allow_nonstandard)
    model, report, _ = run_experiment(config)
    out_dir = _resolve_output_dir(args, config, "run")
    write_run_artifacts(out_dir, config, report, model)
    print(f"task: {report.task}")
    print(f"final {report.metric_name}: {report.final_metric:.6f}")
    print(f"final loss: {report.final_loss:.6f}")
    print(f"artifacts: {out_dir}")
    return 0


def _strip_for_comparison(config: dict) -> dict:
    trimmed = json.loads(json.dumps(config))
    trimmed.pop("output_dir", None)
    trimmed["model"].pop("shuffle", None)
    return trimmed


def _dict_diff_paths(a, b, prefix="") -> list:
    if not (isinstance(a, dict) and isinstance(b, dict)):
        return [prefix or "<root>"] if a != b else []
    paths = []
    for key in sorted(set(a) | set(b)):
        where = f"{prefix}.{key}" if prefix else key
        if key not in a or key not in b:
            paths.append(where)
        else:
            paths.extend(_dict_diff_paths(a[key], b[key], where))
    return paths


def cmd_compare(args) -> int:
    base_cfg = load_experiment_config(args.base)
    shuf_cfg = load_experiment_config(args.shuffled)
    if base_cfg["model"].get("shuffle") is not None:
        raise ConfigError("baseline config must not set model.shuffle")
    # a shuffle-less second config is allowed: the self-comparison is a
    # sanity case that must report a diff of exactly 0%
    diverging = _dict_diff_paths(_strip_for_comparison(base_cfg),
                                 _strip_for_comparison(shuf_cfg))
    if diverging:
        raise ConfigError(
            "configs differ outside model.shuffle/output_dir at "
            + ", ".join(diverging) + "; a comparison would not be controlled"
        )
    validate_published_ranges(shuf_cfg["model"].get("shuffle"), args.allow_nonstandard)

    base_model, base_report, _ = run_experiment(base_cfg)
    shuf_model, shuf_report, _ = run_experiment(shuf_cfg)
    out_dir = _resolve_output_dir(args, shuf_cfg, "comparison")
    write_run_artifacts(out_dir / "baseline", base_cfg, base_report, base_model)
    write_run_artifacts(out_dir / "shuffled", shuf_cfg, shuf_report, shuf_model)

    if base_report.task == "classification":
        result = ComparisonResult.classification(
            base_report.final_metric, shuf_report.final_metric)
    else:
        result = ComparisonResult.forecasting(
            base_report.final_metric, shuf_report.final_metric)
    base_std = loss_trace_std(base_report.loss_trace)
    shuf_std = loss_trace_std(shuf_report.loss_trace)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_dir / "comparison.json", _json_text({
        "schema_version": SCHEMA_VERSION,
        "backend": _kernels.BACKEND,
        "comparison": result.to_dict(),
        "baseline_loss_std": base_std,
        "shuffled_loss_std": shuf_std,
        "baseline_params": base_report.param_count_total,
        "shuffled_params": shuf_report.param_count_total,
    }))
    print(f"baseline {result.metric_name}: {result.baseline_metric:.6f}")
    print(f"shuffled {result.metric_name}: {result.shuffled_metric:.6f}")
    print(f"diff: {result.diff_percent:+.2f}%")
    print(f"loss std: baseline {base_std:.6f}, shuffled {shuf_std:.6f}")
    print(f"artifacts: {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed, tolerance=args.tolerance)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_rel_error:.3e}  {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed at tolerance {args.tolerance:g}: {', '.join(failed)}")
        return 1
    print(f"all {len(results)} gradient checks passed at tolerance {args.tolerance:g}")
    return 0


def cmd_synth(args) -> int:
    path = Path(args.spec)
    try:
        spec_dict = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    spec = SyntheticSpec.from_dict(spec_dict)
    train_set, test_set = generate(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ucr_tsv(train_set, out_dir / "synth_TRAIN.tsv")
    write_ucr_tsv(test_set, out_dir / "synth_TEST.tsv")
    _atomic_write_text(out_dir / "spec.json", _json_text(spec.to_dict()))
    print(f"wrote {len(train_set)} train / {len(test_set)} test samples to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shufflestitch",
        description="Train and compare segment-shuffling sequence models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model from a config file")
    p_train.add_argument("--config", required=True, help="experiment config JSON")
    p_train.add_argument("--output-dir", help="override the config's output_dir")
    p_train.add_argument("--allow-nonstandard", action="store_true",
                         help="accept shuffle hyperparameters outside published ranges")
    p_train.set_defaults(func=cmd_train)

    p_cmp = sub.add_parser("compare",
                           help="train baseline and shuffled models on identical data")
    p_cmp.add_argument("--base", required=True, help="baseline config JSON")
    p_cmp.add_argument("--shuffled", required=True, help="shuffle-augmented config JSON")
    p_cmp.add_argument("--output-dir", help="override the shuffled config's output_dir")
    p_cmp.add_argument("--allow-nonstandard", action="store_true")
    p_cmp.set_defaults(func=cmd_compare)

    p_gc = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--tolerance", type=float, default=gradcheck.DEFAULT_TOLERANCE)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_synth = sub.add_parser("synth", help="materialize a synthetic dataset as TSV")
    p_synth.add_argument("--spec", required=True, help="dataset spec JSON file")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ShuffleStitchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
