"""Multi-head attention with persistent memory, and the layers built on it.

Persistent memory is a set of learnable per-head key/value slots concatenated
to the projected keys and values of every attention call, so the block stores
context alongside the usual feed-forward layer instead of replacing it.
Memory slots carry no positional encoding and are never queried.

Layers are pre-norm: x + Drop(Attn(LN(x))) followed by x + Drop(FFN(LN(x))),
with the feed-forward hidden width fixed at 4*d_model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyAttentionError, SynchronizationError
from .numerics import (Tensor, affine, concat, dropout, gelu, layer_norm,
                       matmul, narrow, reshape, softmax, transpose)

__all__ = [
    "AttentionConfig", "PersistentMemory", "AttentionParams",
    "EncoderLayerParams", "CrossModalParams", "DecoderLayerParams",
    "pm_attention", "encoder_layer", "cross_modal_layer", "decoder_layer",
    "init_attention_params", "init_encoder_layer", "init_cross_modal_layer",
    "init_decoder_layer",
]

INIT_STD = 0.02


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    num_heads: int = 8
    memory_slots: int = 16
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by {self.num_heads} heads")
        if self.memory_slots < 0:
            raise ConfigError(f"memory_slots must be >= 0, got {self.memory_slots}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads


@dataclass
class PersistentMemory:
    """Learnable [num_heads x M x d_head] key and value slots; M = 0 is legal
    and degenerates the block to standard multi-head attention."""
    mem_keys: Tensor
    mem_values: Tensor

    @property
    def slots(self) -> int:
        return self.mem_keys.shape[1]


@dataclass
class AttentionParams:
    # No key bias: a shared shift on all keys cancels in the row softmax
    # (and with memory present it is absorbed by the learnable memory keys).
    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    memory: PersistentMemory


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class EncoderLayerParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    attn: AttentionParams
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn: FeedForwardParams


@dataclass
class StreamCrossParams:
    """One direction of the fusion layer: this stream queries the other."""
    ln_q_gain: Tensor
    ln_q_bias: Tensor
    ln_kv_gain: Tensor
    ln_kv_bias: Tensor
    attn: AttentionParams
    ln_ffn_gain: Tensor
    ln_ffn_bias: Tensor
    ffn: FeedForwardParams


@dataclass
class CrossModalParams:
    video: StreamCrossParams
    audio: StreamCrossParams


@dataclass
class DecoderLayerParams:
    ln_self_gain: Tensor
    ln_self_bias: Tensor
    self_attn: AttentionParams
    ln_cross_gain: Tensor
    ln_cross_bias: Tensor
    # the fused clip stream is normalized on the key/value side too, or its
    # residual-grown scale saturates the cross-attention softmax
    ln_mem_gain: Tensor
    ln_mem_bias: Tensor
    cross_attn: AttentionParams
    ln_ffn_gain: Tensor
    ln_ffn_bias: Tensor
    ffn: FeedForwardParams


def pm_attention(queries: Tensor, keys: Tensor, values: Tensor,
                 params: AttentionParams, cfg: AttentionConfig) -> Tensor:
    """Multi-head attention over keys/values extended with memory slots.

    Per head, K' = [K_proj; mem_keys] and V' = [V_proj; mem_values]; the
    output is softmax(Q K'^T / sqrt(d_head)) V', heads re-merged through the
    output projection.
    """
    n_keys = keys.shape[0]
    n_mem = params.memory.slots
    if n_keys + n_mem == 0:
        raise EmptyAttentionError("attention over zero keys and zero memory slots")

    q_all = affine(queries, params.wq, params.bq)
    k_all = matmul(keys, params.wk)
    v_all = affine(values, params.wv, params.bv)

    dh = cfg.d_head
    scale = 1.0 / math.sqrt(dh)
    heads = []
    for h in range(cfg.num_heads):
        q = narrow(q_all, 1, h * dh, dh)
        k = narrow(k_all, 1, h * dh, dh)
        v = narrow(v_all, 1, h * dh, dh)
        if n_mem > 0:
            mk = reshape(narrow(params.memory.mem_keys, 0, h, 1), (n_mem, dh))
            mv = reshape(narrow(params.memory.mem_values, 0, h, 1), (n_mem, dh))
            k = concat([k, mk], axis=0)
            v = concat([v, mv], axis=0)
        weights = softmax(matmul(q, transpose(k)) * scale, axis=-1)
        heads.append(matmul(weights, v))
    merged = heads[0] if len(heads) == 1 else concat(heads, axis=1)
    return affine(merged, params.wo, params.bo)


def _ffn(x: Tensor, p: FeedForwardParams) -> Tensor:
    return affine(gelu(affine(x, p.w1, p.b1)), p.w2, p.b2)


def encoder_layer(tokens: Tensor, params: EncoderLayerParams,
                  cfg: AttentionConfig, training: bool = False, rng=None) -> Tensor:
    """Pre-norm self-attention (with memory) then feed-forward, both residual."""
    normed = layer_norm(tokens, params.ln1_gain, params.ln1_bias)
    x = tokens + dropout(pm_attention(normed, normed, normed, params.attn, cfg),
                         cfg.dropout, training, rng)
    x = x + dropout(_ffn(layer_norm(x, params.ln2_gain, params.ln2_bias), params.ffn),
                    cfg.dropout, training, rng)
    return x


def _cross_stream(own: Tensor, other: Tensor, p: StreamCrossParams,
                  cfg: AttentionConfig, training: bool, rng) -> Tensor:
    q = layer_norm(own, p.ln_q_gain, p.ln_q_bias)
    kv = layer_norm(other, p.ln_kv_gain, p.ln_kv_bias)
    x = own + dropout(pm_attention(q, kv, kv, p.attn, cfg), cfg.dropout, training, rng)
    x = x + dropout(_ffn(layer_norm(x, p.ln_ffn_gain, p.ln_ffn_bias), p.ffn),
                    cfg.dropout, training, rng)
    return x


def cross_modal_layer(video_tokens: Tensor, audio_tokens: Tensor,
                      params: CrossModalParams, cfg: AttentionConfig,
                      training: bool = False, rng=None) -> Tensor:
    """Bidirectional cross-attention; the fused output sums both updated streams."""
    if video_tokens.shape[0] != audio_tokens.shape[0]:
        raise SynchronizationError(
            f"video has {video_tokens.shape[0]} clips but audio has "
            f"{audio_tokens.shape[0]}")
    v = _cross_stream(video_tokens, audio_tokens, params.video, cfg, training, rng)
    a = _cross_stream(audio_tokens, video_tokens, params.audio, cfg, training, rng)
    return v + a


def decoder_layer(queries: Tensor, fused: Tensor, params: DecoderLayerParams,
                  cfg: AttentionConfig, training: bool = False, rng=None) -> Tensor:
    """Self-attention over queries, cross-attention to the fused clips, FFN."""
    normed = layer_norm(queries, params.ln_self_gain, params.ln_self_bias)
    x = queries + dropout(
        pm_attention(normed, normed, normed, params.self_attn, cfg),
        cfg.dropout, training, rng)
    normed = layer_norm(x, params.ln_cross_gain, params.ln_cross_bias)
    mem = layer_norm(fused, params.ln_mem_gain, params.ln_mem_bias)
    x = x + dropout(pm_attention(normed, mem, mem, params.cross_attn, cfg),
                    cfg.dropout, training, rng)
    x = x + dropout(_ffn(layer_norm(x, params.ln_ffn_gain, params.ln_ffn_bias),
                         params.ffn),
                    cfg.dropout, training, rng)
    return x


# -- initialization ----------------------------------------------------------

def _weight(rng, rows: int, cols: int) -> Tensor:
    # fan-in scaling, matching the torch Linear default this model family uses
    return Tensor(rng.normal(0.0, 1.0 / math.sqrt(rows), size=(rows, cols)),
                  requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def init_attention_params(cfg: AttentionConfig, rng,
                          memory_slots: int | None = None) -> AttentionParams:
    """Fan-in normal weights, zero biases; memory K/V scaled like projected
    keys/values so the slots neither vanish nor dominate the softmax."""
    d = cfg.d_model
    m = cfg.memory_slots if memory_slots is None else memory_slots
    mem_std = 1.0 / math.sqrt(cfg.d_head)
    mem = PersistentMemory(
        mem_keys=Tensor(rng.normal(0.0, mem_std, size=(cfg.num_heads, m, cfg.d_head)),
                        requires_grad=True),
        mem_values=Tensor(rng.normal(0.0, mem_std, size=(cfg.num_heads, m, cfg.d_head)),
                          requires_grad=True),
    )
    return AttentionParams(
        wq=_weight(rng, d, d), bq=_zeros(d),
        wk=_weight(rng, d, d),
        wv=_weight(rng, d, d), bv=_zeros(d),
        wo=_weight(rng, d, d), bo=_zeros(d),
        memory=mem,
    )


def _init_ffn(cfg: AttentionConfig, rng) -> FeedForwardParams:
    d, hidden = cfg.d_model, 4 * cfg.d_model
    return FeedForwardParams(w1=_weight(rng, d, hidden), b1=_zeros(hidden),
                             w2=_weight(rng, hidden, d), b2=_zeros(d))


def init_encoder_layer(cfg: AttentionConfig, rng,
                       memory_slots: int | None = None) -> EncoderLayerParams:
    d = cfg.d_model
    return EncoderLayerParams(
        ln1_gain=_ones(d), ln1_bias=_zeros(d),
        attn=init_attention_params(cfg, rng, memory_slots),
        ln2_gain=_ones(d), ln2_bias=_zeros(d),
        ffn=_init_ffn(cfg, rng),
    )


def _init_stream(cfg: AttentionConfig, rng) -> StreamCrossParams:
    d = cfg.d_model
    return StreamCrossParams(
        ln_q_gain=_ones(d), ln_q_bias=_zeros(d),
        ln_kv_gain=_ones(d), ln_kv_bias=_zeros(d),
        attn=init_attention_params(cfg, rng),
        ln_ffn_gain=_ones(d), ln_ffn_bias=_zeros(d),
        ffn=_init_ffn(cfg, rng),
    )


def init_cross_modal_layer(cfg: AttentionConfig, rng) -> CrossModalParams:
    return CrossModalParams(video=_init_stream(cfg, rng),
                            audio=_init_stream(cfg, rng))


def init_decoder_layer(cfg: AttentionConfig, rng) -> DecoderLayerParams:
    d = cfg.d_model
    # Decoder attention runs without memory slots; the augmentation targets
    # the modality encoders.
    return DecoderLayerParams(
        ln_self_gain=_ones(d), ln_self_bias=_zeros(d),
        self_attn=init_attention_params(cfg, rng, memory_slots=0),
        ln_cross_gain=_ones(d), ln_cross_bias=_zeros(d),
        ln_mem_gain=_ones(d), ln_mem_bias=_zeros(d),
        cross_attn=init_attention_params(cfg, rng, memory_slots=0),
        ln_ffn_gain=_ones(d), ln_ffn_bias=_zeros(d),
        ffn=_init_ffn(cfg, rng),
    )
