"""Source context vectors: averaging, n-gram, and additive attention.

The word decoder picks one of avg / ngram / single; the pointer decoder
uses additive attention with three query choices (previous decoder hidden,
running tuple summary, or both concatenated).  Mechanisms whose raw
context is wider than d_h (ngram, combo) carry a trainable projection back
to d_h so the downstream LSTM input width never depends on the mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import jere.ndcore as nd
from jere.encoder import EncoderOutput, ModelConfig

NGRAM_MAX = 3


@dataclass
class AttentionOutput:
    context: nd.Tensor                       # (d_h,)
    alpha: nd.Tensor | None = None           # distribution over source positions
    gram_alphas: tuple[nd.Tensor, ...] | None = None


@dataclass
class SingleAttentionParams:
    enc_w: nd.Tensor    # (d_h, d_h)
    query_w: nd.Tensor  # (d_h, query_dim)
    query_b: nd.Tensor  # (d_h,)
    score_v: nd.Tensor  # (d_h,)


def init_single_attention(rng, d_h: int, query_dim: int, store: dict,
                          prefix: str, dtype=np.float32) -> SingleAttentionParams:
    p = SingleAttentionParams(
        enc_w=nd.uniform_init(rng, (d_h, d_h), dtype=dtype),
        query_w=nd.uniform_init(rng, (d_h, query_dim), dtype=dtype),
        query_b=nd.uniform_init(rng, (d_h,), dtype=dtype),
        score_v=nd.uniform_init(rng, (d_h,), dtype=dtype),
    )
    for name in ("enc_w", "query_w", "query_b", "score_v"):
        store[f"{prefix}.{name}"] = getattr(p, name)
    return p


def single_attention_from_store(store: dict, prefix: str) -> SingleAttentionParams:
    return SingleAttentionParams(*[store[f"{prefix}.{n}"]
                                   for n in ("enc_w", "query_w", "query_b", "score_v")])


def project_encoder(enc: EncoderOutput, p: SingleAttentionParams) -> nd.Tensor:
    """Per-sentence precompute of the encoder side of the additive score."""
    return nd.matmul(enc.hiddens, nd.transpose(p.enc_w))


def attend_single(enc: EncoderOutput, enc_proj: nd.Tensor, query: nd.Tensor,
                  p: SingleAttentionParams) -> AttentionOutput:
    """Additive attention: score_i = v . tanh(W_q q + b + W_e h_i)."""
    q = nd.add(nd.matmul(p.query_w, query), p.query_b)
    scores = nd.matmul(nd.tanh(nd.add_rowvec(enc_proj, q)), p.score_v)
    alpha = nd.softmax(scores)
    context = nd.matmul(nd.transpose(enc.hiddens), alpha)
    return AttentionOutput(context=context, alpha=alpha)


def attend_avg(enc: EncoderOutput) -> AttentionOutput:
    return AttentionOutput(context=nd.mean_rows(enc.hiddens))


@dataclass
class NgramAttentionParams:
    score_w: tuple[nd.Tensor, ...]  # bilinear score weight per gram size, (d_h, d_h)
    mix_w: tuple[nd.Tensor, ...]    # per-gram mixing weight, (d_h, d_h)
    proj_w: nd.Tensor               # (d_h, 2*d_h)
    proj_b: nd.Tensor               # (d_h,)


def init_ngram_attention(rng, d_h: int, store: dict, prefix: str,
                         dtype=np.float32) -> NgramAttentionParams:
    score_w, mix_w = [], []
    for g in range(1, NGRAM_MAX + 1):
        score_w.append(nd.uniform_init(rng, (d_h, d_h), dtype=dtype))
        mix_w.append(nd.uniform_init(rng, (d_h, d_h), dtype=dtype))
        store[f"{prefix}.score_w{g}"] = score_w[-1]
        store[f"{prefix}.mix_w{g}"] = mix_w[-1]
    p = NgramAttentionParams(
        score_w=tuple(score_w), mix_w=tuple(mix_w),
        proj_w=nd.uniform_init(rng, (d_h, 2 * d_h), dtype=dtype),
        proj_b=nd.uniform_init(rng, (d_h,), dtype=dtype),
    )
    store[f"{prefix}.proj_w"] = p.proj_w
    store[f"{prefix}.proj_b"] = p.proj_b
    return p


def ngram_attention_from_store(store: dict, prefix: str) -> NgramAttentionParams:
    return NgramAttentionParams(
        score_w=tuple(store[f"{prefix}.score_w{g}"] for g in range(1, NGRAM_MAX + 1)),
        mix_w=tuple(store[f"{prefix}.mix_w{g}"] for g in range(1, NGRAM_MAX + 1)),
        proj_w=store[f"{prefix}.proj_w"],
        proj_b=store[f"{prefix}.proj_b"],
    )


def attend_ngram(enc: EncoderOutput, p: NgramAttentionParams) -> AttentionOutput:
    """Bilinear attention over 1/2/3-gram average pools of the encoder states.

    Gram sizes longer than the sentence contribute nothing.  The raw
    context (last hidden || mixed gram summary) is projected back to d_h.
    """
    n = enc.length
    last = enc.last_hidden
    terms = []
    alphas = []
    for g in range(1, NGRAM_MAX + 1):
        if g > n:
            continue
        grams = nd.avg_pool_rows(enc.hiddens, g)
        query = nd.matmul(nd.transpose(p.score_w[g - 1]), last)
        alpha = nd.softmax(nd.matmul(grams, query))
        pooled = nd.matmul(nd.transpose(grams), alpha)
        terms.append(nd.matmul(p.mix_w[g - 1], pooled))
        alphas.append(alpha)
    raw = nd.concat([last, nd.add_n(terms)])
    context = nd.add(nd.matmul(p.proj_w, raw), p.proj_b)
    return AttentionOutput(context=context, alpha=alphas[0], gram_alphas=tuple(alphas))


@dataclass
class PtrAttentionParams:
    variant: str
    dec_branch: SingleAttentionParams | None
    tup_branch: SingleAttentionParams | None
    proj_w: nd.Tensor | None  # combo only, (d_h, 2*d_h)
    proj_b: nd.Tensor | None


def init_ptr_attention(rng, cfg: ModelConfig, tuple_dim: int, store: dict,
                       prefix: str, dtype=np.float32) -> PtrAttentionParams:
    variant = cfg.ptr_attention
    dec_branch = tup_branch = proj_w = proj_b = None
    if variant in ("dec_hid", "combo"):
        dec_branch = init_single_attention(rng, cfg.d_h, cfg.d_h, store,
                                           f"{prefix}.dec", dtype)
    if variant in ("tup_prev", "combo"):
        tup_branch = init_single_attention(rng, cfg.d_h, tuple_dim, store,
                                           f"{prefix}.tup", dtype)
    if variant == "combo":
        proj_w = nd.uniform_init(rng, (cfg.d_h, 2 * cfg.d_h), dtype=dtype)
        proj_b = nd.uniform_init(rng, (cfg.d_h,), dtype=dtype)
        store[f"{prefix}.proj_w"] = proj_w
        store[f"{prefix}.proj_b"] = proj_b
    return PtrAttentionParams(variant, dec_branch, tup_branch, proj_w, proj_b)


def ptr_attention_from_store(store: dict, variant: str,
                             prefix: str) -> PtrAttentionParams:
    dec_branch = tup_branch = proj_w = proj_b = None
    if variant in ("dec_hid", "combo"):
        dec_branch = single_attention_from_store(store, f"{prefix}.dec")
    if variant in ("tup_prev", "combo"):
        tup_branch = single_attention_from_store(store, f"{prefix}.tup")
    if variant == "combo":
        proj_w = store[f"{prefix}.proj_w"]
        proj_b = store[f"{prefix}.proj_b"]
    return PtrAttentionParams(variant, dec_branch, tup_branch, proj_w, proj_b)


def attend_pndec(enc: EncoderOutput, enc_projs: dict[str, nd.Tensor],
                 h_prev: nd.Tensor, y_prev: nd.Tensor,
                 p: PtrAttentionParams) -> AttentionOutput:
    """Pointer-decoder context: query by h_prev, by y_prev, or both."""
    if p.variant == "dec_hid":
        return attend_single(enc, enc_projs["dec"], h_prev, p.dec_branch)
    if p.variant == "tup_prev":
        return attend_single(enc, enc_projs["tup"], y_prev, p.tup_branch)
    if p.variant == "combo":
        a = attend_single(enc, enc_projs["dec"], h_prev, p.dec_branch)
        b = attend_single(enc, enc_projs["tup"], y_prev, p.tup_branch)
        raw = nd.concat([a.context, b.context])
        context = nd.add(nd.matmul(p.proj_w, raw), p.proj_b)
        return AttentionOutput(context=context, alpha=a.alpha)
    raise ValueError(f"unknown pointer attention variant {p.variant!r}")


def ptr_encoder_projections(enc: EncoderOutput,
                            p: PtrAttentionParams) -> dict[str, nd.Tensor]:
    projs = {}
    if p.dec_branch is not None:
        projs["dec"] = project_encoder(enc, p.dec_branch)
    if p.tup_branch is not None:
        projs["tup"] = project_encoder(enc, p.tup_branch)
    return projs
