"""The full pipeline: uni-modal encoders, cross-modal fusion, a
query-conditioned decoder, and the moment / saliency heads, trained with
DETR-style Hungarian set matching.

Video and audio tokens are projected, pre-dropped, tagged with the 2D
sin-cos positional code, and encoded per modality (those encoders carry the
persistent-memory slots). The fused clip stream feeds both the saliency head
(dot product between projected clips and the attention-pooled text) and the
decoder cross-attention; each decoder query becomes one
(center, width, confidence) span prediction, all normalized by duration.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import attention as attn
from .attention import AttentionConfig
from .data import VideoRecord
from .embeddings import (PosEncodingConfig, grid_width_for, project_and_drop,
                         sequence_encoding)
from .errors import ConfigError, DataError, DimensionError, NumericError, \
    SynchronizationError
from .metrics import POSITIVE_RATING, Span
from .numerics import (Tensor, affine, concat, gradient_check, layer_norm,
                       make_rng, matmul, maximum, minimum, narrow, reshape,
                       sigmoid, softmax, softplus, transpose)

__all__ = [
    "ModelConfig", "ModelParams", "MomentPrediction", "ForwardOutput",
    "LossWeights", "LossTargets", "init_model_params", "named_parameters",
    "forward", "hungarian_match", "compute_loss", "predict",
    "save_checkpoint", "load_checkpoint",
]

WIDTH_FLOOR = 1e-3


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    num_heads: int = 8
    dropout: float = 0.1
    pre_dropout_visual_audio: float = 0.5
    pre_dropout_text: float = 0.3
    encoder_layers_per_modality: int = 1
    cross_modal_layers: int = 1
    decoder_layers: int = 1
    num_queries: int = 10
    memory_slots: int = 16
    d_video_in: int = 32
    d_audio_in: int = 32
    d_text_in: int = 16

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by {self.num_heads} heads")
        if self.d_model % 4 != 0:
            raise ConfigError(
                f"d_model must be a multiple of 4 for the positional code, "
                f"got {self.d_model}")
        for name in ("dropout", "pre_dropout_visual_audio", "pre_dropout_text"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {rate}")
        for name in ("encoder_layers_per_modality", "cross_modal_layers",
                     "decoder_layers", "num_queries"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.memory_slots < 0:
            raise ConfigError("memory_slots must be >= 0")
        for name in ("d_video_in", "d_audio_in", "d_text_in"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def attn_config(self) -> AttentionConfig:
        return AttentionConfig(d_model=self.d_model, num_heads=self.num_heads,
                               memory_slots=self.memory_slots,
                               dropout=self.dropout)


@dataclass(frozen=True)
class MomentPrediction:
    """One candidate moment, all fields normalized by video duration."""
    center: float
    width: float
    confidence: float

    def span(self) -> tuple[float, float]:
        return (max(0.0, self.center - self.width / 2),
                min(1.0, self.center + self.width / 2))


@dataclass
class ForwardOutput:
    saliency: Tensor  # [T]
    moments: Tensor   # [Nq x 3] columns: center, width, confidence

    def moment_predictions(self) -> list[MomentPrediction]:
        return [MomentPrediction(center=float(c), width=float(w), confidence=float(p))
                for c, w, p in self.moments.data]

    def saliency_scores(self) -> list[float]:
        return [float(s) for s in self.saliency.data]


@dataclass
class ModelParams:
    proj_video_w: Tensor
    proj_video_b: Tensor
    proj_audio_w: Tensor
    proj_audio_b: Tensor
    proj_text_w: Tensor
    proj_text_b: Tensor
    enc_video: list
    enc_audio: list
    enc_text: list
    cross: list
    decoder: list
    query_seeds: Tensor
    text_probe: Tensor
    # pooled text is layer-normed before use so it stays commensurate with
    # the query seeds instead of drowning them
    pooled_ln_gain: Tensor
    pooled_ln_bias: Tensor
    sal_vis_w: Tensor
    sal_vis_b: Tensor
    sal_txt_w: Tensor
    sal_txt_b: Tensor
    moment_w: Tensor
    moment_b: Tensor


def init_model_params(cfg: ModelConfig, rng) -> ModelParams:
    acfg = cfg.attn_config()
    d = cfg.d_model

    def w(rows, cols):
        # fan-in scaling keeps projected content on the same footing as the
        # O(1) positional code; the 0.02-std convention stays inside the
        # attention blocks
        return Tensor(rng.normal(0.0, 1.0 / math.sqrt(rows), size=(rows, cols)),
                      requires_grad=True)

    def b(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    return ModelParams(
        proj_video_w=w(cfg.d_video_in, d), proj_video_b=b(d),
        proj_audio_w=w(cfg.d_audio_in, d), proj_audio_b=b(d),
        proj_text_w=w(cfg.d_text_in, d), proj_text_b=b(d),
        enc_video=[attn.init_encoder_layer(acfg, rng)
                   for _ in range(cfg.encoder_layers_per_modality)],
        enc_audio=[attn.init_encoder_layer(acfg, rng)
                   for _ in range(cfg.encoder_layers_per_modality)],
        # Text tokens are encoded without memory slots; the augmentation
        # targets the video and audio paths.
        enc_text=[attn.init_encoder_layer(acfg, rng, memory_slots=0)
                  for _ in range(cfg.encoder_layers_per_modality)],
        cross=[attn.init_cross_modal_layer(acfg, rng)
               for _ in range(cfg.cross_modal_layers)],
        decoder=[attn.init_decoder_layer(acfg, rng)
                 for _ in range(cfg.decoder_layers)],
        query_seeds=Tensor(rng.normal(0.0, 0.5, size=(cfg.num_queries, d)),
                           requires_grad=True),
        text_probe=w(d, 1),
        pooled_ln_gain=Tensor(np.ones(d), requires_grad=True),
        pooled_ln_bias=Tensor(np.zeros(d), requires_grad=True),
        sal_vis_w=w(d, d), sal_vis_b=b(d),
        sal_txt_w=w(d, d), sal_txt_b=b(d),
        # small init keeps the sigmoid heads neutral (spans start near
        # center 0.5, width 0.5, confidence 0.5)
        moment_w=Tensor(rng.normal(0.0, attn.INIT_STD, size=(d, 3)),
                        requires_grad=True),
        moment_b=b(3),
    )


def named_parameters(obj, prefix: str = "") -> dict[str, Tensor]:
    """Flatten nested parameter dataclasses/lists into name -> Tensor."""
    out: dict[str, Tensor] = {}
    if isinstance(obj, Tensor):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            name = f"{prefix}.{f.name}" if prefix else f.name
            out.update(named_parameters(child, name))
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            out.update(named_parameters(child, f"{prefix}.{i}"))
    return out


def attention_pool(tokens: Tensor, probe: Tensor) -> Tensor:
    """Softmax-weighted average of token rows, scored by a learned probe."""
    weights = softmax(matmul(tokens, probe), axis=0)
    return matmul(transpose(weights), tokens)


def forward(video, audio, query, cfg: ModelConfig, params: ModelParams,
            training: bool = False, rng=None) -> ForwardOutput:
    """Run the pipeline on one video's synchronized features.

    video: [T x d_video_in], audio: [T x d_audio_in], query: [L x d_text_in].
    Returns T saliency scores and num_queries moment predictions.
    """
    video = video if isinstance(video, Tensor) else Tensor(video)
    audio = audio if isinstance(audio, Tensor) else Tensor(audio)
    query = query if isinstance(query, Tensor) else Tensor(query)
    if video.shape[0] != audio.shape[0]:
        raise SynchronizationError(
            f"video has {video.shape[0]} clips but audio has {audio.shape[0]}")
    n_clips = video.shape[0]
    if n_clips == 0:
        raise DataError("forward requires at least one clip")
    if query.shape[0] < 1:
        raise DataError("forward requires at least one query token")
    for name, t, want in (("video", video, cfg.d_video_in),
                          ("audio", audio, cfg.d_audio_in),
                          ("query", query, cfg.d_text_in)):
        if t.shape[1] != want:
            raise ConfigError(
                f"{name} features have dim {t.shape[1]} but the model expects {want}")

    acfg = cfg.attn_config()
    pos = sequence_encoding(n_clips, PosEncodingConfig(
        d_model=cfg.d_model, grid_width=grid_width_for(n_clips)))

    v = project_and_drop(video, params.proj_video_w, params.proj_video_b,
                         cfg.pre_dropout_visual_audio, training, rng) + pos
    a = project_and_drop(audio, params.proj_audio_w, params.proj_audio_b,
                         cfg.pre_dropout_visual_audio, training, rng) + pos
    t = project_and_drop(query, params.proj_text_w, params.proj_text_b,
                         cfg.pre_dropout_text, training, rng)

    for layer in params.enc_video:
        v = attn.encoder_layer(v, layer, acfg, training, rng)
    for layer in params.enc_audio:
        a = attn.encoder_layer(a, layer, acfg, training, rng)
    for layer in params.enc_text:
        t = attn.encoder_layer(t, layer, acfg, training, rng)

    fused = v
    for layer in params.cross:
        fused = attn.cross_modal_layer(fused, a, layer, acfg, training, rng)

    pooled = layer_norm(attention_pool(t, params.text_probe),
                        params.pooled_ln_gain, params.pooled_ln_bias)

    queries = params.query_seeds + pooled
    for layer in params.decoder:
        queries = attn.decoder_layer(queries, fused, layer, acfg, training, rng)

    clip_side = affine(fused, params.sal_vis_w, params.sal_vis_b)
    text_side = affine(pooled, params.sal_txt_w, params.sal_txt_b)
    saliency = reshape(matmul(clip_side, transpose(text_side))
                       * (1.0 / math.sqrt(cfg.d_model)), (n_clips,))

    raw = affine(queries, params.moment_w, params.moment_b)
    center = sigmoid(narrow(raw, 1, 0, 1))
    width = WIDTH_FLOOR + (1.0 - WIDTH_FLOOR) * sigmoid(narrow(raw, 1, 1, 1))
    conf = sigmoid(narrow(raw, 1, 2, 1))
    moments = concat([center, width, conf], axis=1)
    return ForwardOutput(saliency=saliency, moments=moments)


# -- set matching and loss -----------------------------------------------------

def hungarian_match(cost: np.ndarray) -> list[tuple[int, int]]:
    """Optimal assignment on an Nq x G cost matrix.

    Returns min(Nq, G) pairs (query_index, gt_index) minimizing total cost,
    sorted by gt index.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DimensionError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise NumericError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: rc[1])
    return [(int(r), int(c)) for r, c in pairs]


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    iou: float = 1.0
    cls: float = 1.0
    saliency: float = 1.0


@dataclass
class LossTargets:
    """Ground truth for one video: normalized moment spans plus clip ratings."""
    moments: list[tuple[float, float]]
    ratings: list[int]

    @classmethod
    def from_record(cls, record: VideoRecord) -> "LossTargets":
        return cls(moments=record.normalized_moments(), ratings=list(record.ratings))


def _span_giou_np(pc, pw, gc, gw):
    ps, pe = pc - 0.5 * pw, pc + 0.5 * pw
    gs, ge = gc - 0.5 * gw, gc + 0.5 * gw
    inter = np.maximum(np.minimum(pe, ge) - np.maximum(ps, gs), 0.0)
    union = pw + gw - inter
    hull = np.maximum(pe, ge) - np.minimum(ps, gs)
    return inter / union - (hull - union) / hull


def _bce_prob(p: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy for probabilities, logs clamped at 1e-12."""
    eps = 1e-12
    t = Tensor(np.asarray(target, dtype=np.float64).reshape(p.shape))
    return -(t * maximum(p, eps).log() + (1.0 - t) * maximum(1.0 - p, eps).log()).mean()


def _bce_logits(x: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy for logits via the softplus identity."""
    t = np.asarray(target, dtype=np.float64).reshape(x.shape)
    return (softplus(-x) + Tensor(1.0 - t) * x).mean()


def compute_loss(preds: ForwardOutput, targets: LossTargets,
                 weights: LossWeights = LossWeights()) -> tuple[Tensor, dict]:
    """Hungarian-matched set loss plus per-clip saliency cross-entropy.

    Matched pairs contribute L1 on (center, width) and a generalized-IoU
    term; every query contributes confidence BCE (matched = 1), and every
    clip contributes saliency BCE (positive iff rating >= 3). The matching
    cost uses the same three span terms, computed on detached values.
    Returns the total and an unweighted per-term breakdown.
    """
    n_clips = preds.saliency.shape[0]
    if n_clips == 0:
        raise DataError("loss needs at least one clip")
    if len(targets.ratings) != n_clips:
        raise DataError(
            f"{len(targets.ratings)} ratings for {n_clips} saliency scores")
    nq = preds.moments.shape[0]

    sal_labels = np.array([1.0 if r >= POSITIVE_RATING else 0.0
                           for r in targets.ratings])
    sal_loss = _bce_logits(preds.saliency, sal_labels)

    conf_target = np.zeros(nq)
    breakdown = {"l1": 0.0, "giou": 0.0}
    total = weights.saliency * sal_loss

    if targets.moments:
        gt = np.asarray(targets.moments, dtype=np.float64)
        gc = (gt[:, 0] + gt[:, 1]) / 2.0
        gw = gt[:, 1] - gt[:, 0]
        if np.any(gw <= 0):
            raise DataError("ground-truth moment with non-positive width")

        pc = preds.moments.data[:, 0]
        pw = preds.moments.data[:, 1]
        conf = preds.moments.data[:, 2]
        l1_cost = np.abs(pc[:, None] - gc[None, :]) + np.abs(pw[:, None] - gw[None, :])
        giou_cost = 1.0 - _span_giou_np(pc[:, None], pw[:, None],
                                        gc[None, :], gw[None, :])
        cost = weights.l1 * l1_cost + weights.iou * giou_cost \
            + weights.cls * (-conf[:, None])
        pairs = hungarian_match(cost)

        rows = concat([narrow(preds.moments, 0, qi, 1) for qi, _ in pairs], axis=0)
        c = narrow(rows, 1, 0, 1)
        w = narrow(rows, 1, 1, 1)
        gcol = Tensor(gc[[gj for _, gj in pairs]].reshape(-1, 1))
        gwcol = Tensor(gw[[gj for _, gj in pairs]].reshape(-1, 1))

        l1 = ((c - gcol).abs() + (w - gwcol).abs()).mean()

        ps, pe = c - 0.5 * w, c + 0.5 * w
        gs, ge = gcol - 0.5 * gwcol, gcol + 0.5 * gwcol
        inter = maximum(minimum(pe, ge) - maximum(ps, gs), 0.0)
        union = w + gwcol - inter
        hull = maximum(pe, ge) - minimum(ps, gs)
        giou = inter / union - (hull - union) / hull
        giou_loss = (1.0 - giou).mean()

        for qi, _ in pairs:
            conf_target[qi] = 1.0
        total = total + weights.l1 * l1 + weights.iou * giou_loss
        breakdown["l1"] = l1.item()
        breakdown["giou"] = giou_loss.item()

    conf_loss = _bce_prob(narrow(preds.moments, 1, 2, 1), conf_target)
    total = total + weights.cls * conf_loss
    breakdown["confidence"] = conf_loss.item()
    breakdown["saliency"] = sal_loss.item()
    breakdown["total"] = total.item()
    return total, breakdown


def record_loss(record: VideoRecord, cfg: ModelConfig, params: ModelParams,
                weights: LossWeights = LossWeights(), training: bool = False,
                rng=None) -> tuple[Tensor, dict]:
    out = forward(record.video_matrix(), record.audio_matrix(),
                  record.query_feat, cfg, params, training, rng)
    return compute_loss(out, LossTargets.from_record(record), weights)


def predict(record: VideoRecord, cfg: ModelConfig, params: ModelParams):
    """Deterministic eval-mode forward returning metric-ready predictions.

    Returns (saliency scores, moment predictions, scored spans in seconds).
    """
    out = forward(record.video_matrix(), record.audio_matrix(),
                  record.query_feat, cfg, params, training=False)
    preds = out.moment_predictions()
    scored = []
    for p in preds:
        lo, hi = p.span()
        if hi > lo:
            scored.append((Span(lo * record.duration, hi * record.duration),
                           p.confidence))
    return out.saliency_scores(), preds, scored


# -- checkpointing -------------------------------------------------------------

def _encode_rng_state(state):
    if isinstance(state, dict):
        return {k: _encode_rng_state(v) for k, v in state.items()}
    if isinstance(state, np.ndarray):
        return {"__array__": state.tolist(), "dtype": str(state.dtype)}
    if isinstance(state, (np.integer,)):
        return int(state)
    return state


def _decode_rng_state(state):
    if isinstance(state, dict):
        if "__array__" in state:
            return np.asarray(state["__array__"], dtype=state["dtype"])
        return {k: _decode_rng_state(v) for k, v in state.items()}
    return state


def save_checkpoint(path, config: dict, params: ModelParams, optimizer=None,
                    rng=None) -> None:
    """Single-file checkpoint: config echo, parameters, optimizer state, RNG."""
    arrays = {}
    for name, tensor in named_parameters(params).items():
        arrays[f"param/{name}"] = tensor.data
    meta = {"config": config}
    if optimizer is not None:
        for name, arr in optimizer.state_arrays():
            arrays[f"opt/{name}"] = arr
        meta["optimizer"] = optimizer.state_dict()
    if rng is not None:
        meta["rng"] = _encode_rng_state(rng.bit_generator.state)
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)


def load_checkpoint(path) -> dict:
    """Inverse of save_checkpoint; arrays round-trip bitwise."""
    with np.load(path, allow_pickle=False) as zf:
        meta = json.loads(zf["meta"].item())
        params = {k[len("param/"):]: zf[k] for k in zf.files if k.startswith("param/")}
        opt = {k[len("opt/"):]: zf[k] for k in zf.files if k.startswith("opt/")}
    out = {"config": meta["config"], "params": params, "opt_arrays": opt}
    if "optimizer" in meta:
        out["optimizer"] = meta["optimizer"]
    if "rng" in meta:
        out["rng_state"] = _decode_rng_state(meta["rng"])
    return out


def restore_params(params: ModelParams, arrays: dict[str, np.ndarray]) -> None:
    named = named_parameters(params)
    missing = sorted(set(named) - set(arrays))
    extra = sorted(set(arrays) - set(named))
    if missing or extra:
        raise ConfigError(
            f"checkpoint does not match the model: missing {missing[:3]}, "
            f"unexpected {extra[:3]}")
    for name, tensor in named.items():
        if tensor.data.shape != arrays[name].shape:
            raise ConfigError(
                f"checkpoint parameter {name} has shape {arrays[name].shape}, "
                f"model expects {tensor.data.shape}")
        tensor.data = arrays[name].astype(np.float64).copy()


def restore_optimizer(optimizer, arrays: dict[str, np.ndarray],
                      meta: dict | None) -> None:
    for key, arr in arrays.items():
        name, _, buf = key.rpartition(".")
        if name in optimizer.state:
            optimizer.state[name][buf] = arr.copy()
    if meta and "steps" in meta:
        optimizer.load_steps(meta["steps"])
