"""Command-line entry points: synth, train, eval, curves, compare.

Every command exits 0 on success and nonzero with a one-line
``error: <category>: <reason>`` on stderr otherwise (2 = config, 3 = data,
4 = numeric). All artifacts land under the run's --out directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import curves as curves_mod
from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigError, DataError, NumericError
from .metrics import EvalReport
from .model import (init_model_params, load_checkpoint, restore_params,
                    save_checkpoint)
from .numerics import make_rng
from .train import (PRESETS, RunConfig, evaluate_model, evaluate_predictions,
                    load_predictions, split_dataset, train)

LR_GRID_DEFAULT = (1e-4, 5e-4, 1e-3)


def _write_metrics_jsonl(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def _write_text(path, text) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def _run_config_from_args(args) -> RunConfig:
    merged: dict = {}
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        merged = _deep_merge(merged, PRESETS[args.preset])
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: invalid JSON: {exc}")
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {args.config} must hold an object")
        merged = _deep_merge(merged, file_cfg)
    for flag in ("optimizer", "lr", "weight_decay", "batch_size", "epochs",
                 "seed", "max_steps"):
        val = getattr(args, flag, None)
        if val is not None:
            merged[flag] = val
    merged["dataset"] = args.dataset
    merged["out_dir"] = args.out
    return RunConfig.from_dict(merged)


def _train_once(records, run: RunConfig, out: Path, echo=True):
    result = train(records, run)
    out.mkdir(parents=True, exist_ok=True)
    if echo:
        cfg_dict = run.to_dict()
        cfg_dict["model"] = dataclasses.asdict(result.model_config)
        _write_text(out / "config.json",
                    json.dumps(cfg_dict, indent=2, sort_keys=True) + "\n")
    _write_metrics_jsonl(result.epoch_rows, out / "metrics.jsonl")
    curves_mod.write_loss_csv(result.epoch_rows, out / "loss_curve.csv")
    _write_text(out / "loss_curve.svg",
                curves_mod.loss_curve_svg(result.epoch_rows))
    save_checkpoint(out / "checkpoint.npz",
                    {**run.to_dict(),
                     "model": dataclasses.asdict(result.model_config)},
                    result.params, result.optimizer, result.rng)
    return result


def _grid_metric(report: EvalReport) -> tuple[str, float]:
    for key in ("MR-mAP-avg", "HD-mAP"):
        if key in report.metrics:
            return key, report.metrics[key]
    raise DataError("report carries no selectable validation metric")


def cmd_train(args) -> int:
    records = load_dataset(args.dataset)
    if not records:
        raise DataError(f"dataset {args.dataset} is empty")
    out = Path(args.out)
    run = _run_config_from_args(args)

    if not args.lr_grid:
        _train_once(records, run, out)
        return 0

    try:
        grid = [float(x) for x in args.lr_grid.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--lr-grid must be comma-separated floats, "
                          f"got {args.lr_grid!r}")
    if not grid:
        raise ConfigError("--lr-grid is empty")
    _, val_recs = split_dataset(records)
    summary = []
    best = None
    for lr in grid:
        sub = dataclasses.replace(run, lr=lr,
                                  out_dir=str(out / f"lr_{lr:g}"))
        result = _train_once(records, sub, out / f"lr_{lr:g}")
        pool = val_recs if val_recs else records
        report = evaluate_model(pool, result.model_config, result.params)
        key, score = _grid_metric(report)
        summary.append({"lr": lr, "metric": key, "value": round(score, 6)})
        if best is None or score > best[0]:
            best = (score, lr, result)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "grid_summary.json",
                json.dumps({"runs": summary, "best_lr": best[1]},
                           indent=2, sort_keys=True) + "\n")
    # re-emit the winning run's artifacts at the run root
    _train_once(records, dataclasses.replace(run, lr=best[1]), out)
    return 0


def cmd_eval(args) -> int:
    records = load_dataset(args.dataset)
    if not records:
        raise DataError(f"dataset {args.dataset} is empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.predictions:
        report = evaluate_predictions(records, load_predictions(args.predictions))
    elif args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        run = RunConfig.from_dict(ckpt["config"])
        params = init_model_params(run.model, make_rng(0))
        restore_params(params, ckpt["params"])
        report = evaluate_model(records, run.model, params)
    else:
        raise ConfigError("eval needs --checkpoint or --predictions")

    _write_text(out / "report.json", report.to_json() + "\n")
    for key in sorted(report.metrics):
        print(f"{key:<14} {report.metrics[key] * 100:6.2f}")
    for warning in sorted(report.warnings):
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        seed=args.seed, n_videos=args.n_videos,
        clips_per_video=args.clips_per_video, d_video=args.d_video,
        d_audio=args.d_audio, d_text=args.d_text,
        moments_per_video=args.moments_per_video,
        signal_strength=args.signal_strength, query_len=args.query_len,
        clip_len=args.clip_len)
    records = generate_synthetic(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(records, args.out)
    print(f"wrote {len(records)} videos to {args.out}")
    return 0


def cmd_curves(args) -> int:
    rows = curves_mod.read_metrics_jsonl(args.metrics)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curves_mod.write_loss_csv(rows, out / "loss_curve.csv")
    _write_text(out / "loss_curve.svg", curves_mod.loss_curve_svg(rows))
    return 0


def cmd_compare(args) -> int:
    """Train Lion and AdamW under identical settings; emit a two-curve report."""
    records = load_dataset(args.dataset)
    if not records:
        raise DataError(f"dataset {args.dataset} is empty")
    out = Path(args.out)
    rows_by_opt = {}
    finals = {}
    for kind in ("lion", "adamw"):
        args.optimizer = kind
        run = _run_config_from_args(args)
        run = dataclasses.replace(run, out_dir=str(out / kind))
        result = _train_once(records, run, out / kind)
        rows_by_opt[kind] = result.epoch_rows
        finals[kind] = {"final_train_loss": result.epoch_rows[-1]["train_loss"],
                        "final_val_loss": result.epoch_rows[-1]["val_loss"],
                        "steps": result.steps}
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,lion_train_loss,lion_val_loss,"
                 "adamw_train_loss,adamw_val_loss\n")
        for lrow, arow in zip(rows_by_opt["lion"], rows_by_opt["adamw"]):
            fh.write(f"{lrow['epoch']},{lrow['train_loss']!r},"
                     f"{lrow['val_loss']!r},{arow['train_loss']!r},"
                     f"{arow['val_loss']!r}\n")
    svg = curves_mod.render_series_svg(
        [("lion", "#1f77b4",
          [(r["epoch"], r["train_loss"]) for r in rows_by_opt["lion"]]),
         ("adamw", "#d62728",
          [(r["epoch"], r["train_loss"]) for r in rows_by_opt["adamw"]])],
        "Optimizer comparison (train loss)")
    _write_text(out / "compare.svg", svg)
    _write_text(out / "compare.json",
                json.dumps(finals, indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vvids",
        description="Joint moment retrieval and highlight detection on "
                    "synchronized video/audio features.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p):
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument("--optimizer", choices=["lion", "adamw"])
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--max-steps", dest="max_steps", type=int)

    p_train = sub.add_parser("train", help="train a model on a JSONL dataset")
    p_train.add_argument("dataset")
    p_train.add_argument("--out", required=True)
    add_train_flags(p_train)
    p_train.add_argument("--lr-grid", dest="lr_grid",
                         help="comma-separated learning rates; the best "
                              "validation mAP wins")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint or a predictions file")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--predictions")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a planted-moment dataset")
    p_synth.add_argument("out")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--n-videos", dest="n_videos", type=int, default=200)
    p_synth.add_argument("--clips-per-video", dest="clips_per_video", type=int,
                         default=20)
    p_synth.add_argument("--d-video", dest="d_video", type=int, default=32)
    p_synth.add_argument("--d-audio", dest="d_audio", type=int, default=32)
    p_synth.add_argument("--d-text", dest="d_text", type=int, default=16)
    p_synth.add_argument("--moments-per-video", dest="moments_per_video",
                         type=int, default=1)
    p_synth.add_argument("--signal-strength", dest="signal_strength",
                         type=float, default=2.0)
    p_synth.add_argument("--query-len", dest="query_len", type=int, default=4)
    p_synth.add_argument("--clip-len", dest="clip_len", type=float, default=2.0)
    p_synth.set_defaults(func=cmd_synth)

    p_curves = sub.add_parser("curves", help="re-render loss curves from a metrics log")
    p_curves.add_argument("metrics")
    p_curves.add_argument("--out", required=True)
    p_curves.set_defaults(func=cmd_curves)

    p_cmp = sub.add_parser("compare", help="train Lion and AdamW side by side")
    p_cmp.add_argument("dataset")
    p_cmp.add_argument("--out", required=True)
    add_train_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
