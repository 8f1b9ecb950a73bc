"""Deterministic training and evaluation driving the model modules.

A run is fully described by a RunConfig (every default echoed back out), and
identical seeds reproduce metrics logs byte-for-byte. The validation split
is a stable 80/20 hash of video ids, independent of record order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import VideoRecord
from .errors import ConfigError, DataError
from .metrics import EvalReport, Span, build_report
from .model import (LossWeights, ModelConfig, ModelParams, init_model_params,
                    named_parameters, predict, record_loss)
from .optim import make_optimizer

__all__ = ["RunConfig", "PRESETS", "TrainResult", "split_dataset", "train",
           "evaluate_model", "evaluate_predictions", "eval_threads"]

PRESETS = {
    # batch 1 for 500 epochs with a single decoder layer suits small sets
    "tvsum-like": {"batch_size": 1, "epochs": 500,
                   "model": {"decoder_layers": 1}},
    # batch 32 for 200 epochs with a deeper decoder suits large sets
    "qvh-like": {"batch_size": 32, "epochs": 200,
                 "model": {"decoder_layers": 3}},
}


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    out_dir: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: str = "lion"
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 1
    epochs: int = 10
    seed: int = 0
    max_steps: int = 0  # 0 means no cap
    grad_clip: float = 1.0  # global-norm clip; 0 disables

    def __post_init__(self):
        if self.optimizer not in ("lion", "adamw"):
            raise ConfigError(f"optimizer must be lion or adamw, got {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"invalid config field(s): {', '.join(unknown)}")
        if "model" in raw and isinstance(raw["model"], dict):
            model_known = {f.name for f in dataclasses.fields(ModelConfig)}
            bad = sorted(set(raw["model"]) - model_known)
            if bad:
                raise ConfigError(f"invalid model config field(s): {', '.join(bad)}")
            raw["model"] = ModelConfig(**raw["model"])
        if "loss" in raw and isinstance(raw["loss"], dict):
            loss_known = {f.name for f in dataclasses.fields(LossWeights)}
            bad = sorted(set(raw["loss"]) - loss_known)
            if bad:
                raise ConfigError(f"invalid loss weight field(s): {', '.join(bad)}")
            raw["loss"] = LossWeights(**raw["loss"])
        return cls(**raw)


def split_dataset(records: list[VideoRecord]):
    """Stable 80/20 train/validation split by video_id hash."""
    train_recs, val_recs = [], []
    for rec in records:
        digest = hashlib.sha1(rec.video_id.encode("utf-8")).hexdigest()
        (val_recs if int(digest, 16) % 5 == 0 else train_recs).append(rec)
    return train_recs, val_recs


def resolve_input_dims(cfg: ModelConfig, records: list[VideoRecord]) -> ModelConfig:
    """Adopt the dataset's feature dims for the input projections."""
    for rec in records:
        if rec.clips:
            return dataclasses.replace(
                cfg,
                d_video_in=rec.clips[0].video_feat.size,
                d_audio_in=rec.clips[0].audio_feat.size,
                d_text_in=rec.query_feat.shape[1])
    raise DataError("dataset has no clips to infer feature dims from")


@dataclass
class TrainResult:
    config: RunConfig
    model_config: ModelConfig
    params: ModelParams
    optimizer: object
    epoch_rows: list[dict]
    rng: np.random.Generator
    steps: int


def _mean_loss(records, cfg, params, weights) -> float:
    if not records:
        return float("nan")
    vals = [record_loss(rec, cfg, params, weights)[0].item() for rec in records]
    return sum(vals) / len(vals)


def _clip_gradients(params: dict, max_norm: float) -> None:
    total = 0.0
    grads = [p.grad for p in params.values() if p.grad is not None]
    for g in grads:
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale


def train(records: list[VideoRecord], run: RunConfig,
          progress=None) -> TrainResult:
    """Train on the 80% split, log per-epoch train/validation loss."""
    if not records:
        raise DataError("cannot train on an empty dataset")
    train_recs, val_recs = split_dataset(records)
    if not train_recs:
        raise DataError("training split is empty")
    model_cfg = resolve_input_dims(run.model, records)

    seeds = np.random.SeedSequence(run.seed).spawn(3)
    init_rng = np.random.Generator(np.random.Philox(seeds[0]))
    order_rng = np.random.Generator(np.random.Philox(seeds[1]))
    drop_rng = np.random.Generator(np.random.Philox(seeds[2]))

    params = init_model_params(model_cfg, init_rng)
    named = named_parameters(params)
    opt = make_optimizer(run.optimizer, named, run.lr, run.weight_decay)

    rows = []
    steps = 0
    capped = False
    for epoch in range(1, run.epochs + 1):
        order = order_rng.permutation(len(train_recs))
        batch_losses = []
        for lo in range(0, len(order), run.batch_size):
            batch = [train_recs[i] for i in order[lo:lo + run.batch_size]]
            opt.zero_grad()
            losses = [record_loss(rec, model_cfg, params, run.loss,
                                  training=True, rng=drop_rng)[0]
                      for rec in batch]
            total = losses[0] if len(losses) == 1 else sum(losses[1:], losses[0])
            total = total * (1.0 / len(losses))
            total.backward()
            if run.grad_clip:
                _clip_gradients(named, run.grad_clip)
            opt.step()
            batch_losses.append(total.item())
            steps += 1
            if run.max_steps and steps >= run.max_steps:
                capped = True
                break
        val_pool = val_recs if val_recs else train_recs
        rows.append({
            "epoch": epoch,
            "train_loss": sum(batch_losses) / len(batch_losses),
            "val_loss": _mean_loss(val_pool, model_cfg, params, run.loss),
        })
        if progress is not None:
            progress(rows[-1])
        if capped:
            break
    return TrainResult(config=run, model_config=model_cfg, params=params,
                       optimizer=opt, epoch_rows=rows, rng=drop_rng, steps=steps)


def eval_threads() -> int:
    """Evaluation parallelism, capped by the VVIDS_THREADS environment var."""
    raw = os.environ.get("VVIDS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"VVIDS_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"VVIDS_THREADS must be >= 1, got {n}")
    return n


def evaluate_model(records: list[VideoRecord], cfg: ModelConfig,
                   params: ModelParams, threads: int | None = None) -> EvalReport:
    """Run the model over a dataset and assemble the metric report.

    Records are processed in file order; with threads > 1 the reduction
    order is still fixed by record index, so results are deterministic.
    """
    if not records:
        raise DataError("cannot evaluate an empty dataset")
    threads = eval_threads() if threads is None else threads

    def one(rec):
        saliency, _, scored = predict(rec, cfg, params)
        return saliency, scored

    if threads == 1:
        results = [one(rec) for rec in records]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, records))

    has_moments = any(rec.moments for rec in records)
    return build_report(
        mr_preds_per_video=[scored for _, scored in results] if has_moments else None,
        mr_gts_per_video=[rec.moments for rec in records] if has_moments else None,
        hd_scores_per_video=[sal for sal, _ in results],
        hd_ratings_per_video=[rec.ratings for rec in records],
        video_ids=[rec.video_id for rec in records])


def load_predictions(path) -> dict:
    """Read an injected-predictions JSONL file: one object per video with
    optional "moments" [{start, end, score}] and "saliency" [floats]."""
    preds = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"predictions line {lineno}: invalid JSON: {exc}")
            vid = obj.get("video_id")
            if not isinstance(vid, str):
                raise DataError(f"predictions line {lineno}: missing video_id")
            preds[vid] = obj
    return preds


def evaluate_predictions(records: list[VideoRecord], preds: dict) -> EvalReport:
    """Metric report for externally supplied predictions.

    Videos absent from the file count as zero-prediction entries (warned).
    Highlight metrics are included only when every video carries saliency
    scores, since a partial ranking protocol would not be comparable.
    """
    if not records:
        raise DataError("cannot evaluate an empty dataset")
    mr_preds, missing_saliency = [], []
    hd_scores = []
    for rec in records:
        entry = preds.get(rec.video_id, {})
        scored = []
        for i, m in enumerate(entry.get("moments", [])):
            try:
                span = Span(float(m["start"]), float(m["end"]))
            except (KeyError, TypeError) as exc:
                raise DataError(
                    f"predictions for {rec.video_id}: moments[{i}]: {exc}")
            scored.append((span, float(m.get("score", 0.0))))
        mr_preds.append(scored)
        saliency = entry.get("saliency")
        if saliency is None or len(saliency) != rec.n_clips:
            missing_saliency.append(rec.video_id)
            hd_scores.append(None)
        else:
            hd_scores.append([float(s) for s in saliency])

    has_moments = any(rec.moments for rec in records)
    include_hd = not missing_saliency
    report = build_report(
        mr_preds_per_video=mr_preds if has_moments else None,
        mr_gts_per_video=[rec.moments for rec in records] if has_moments else None,
        hd_scores_per_video=hd_scores if include_hd else None,
        hd_ratings_per_video=[rec.ratings for rec in records] if include_hd else None,
        video_ids=[rec.video_id for rec in records])
    for vid in missing_saliency:
        report.warn(f"video {vid}: no saliency scores supplied; "
                    f"highlight metrics omitted")
    return report
