"""Token representation (word embedding || char-CNN feature) and Bi-LSTM encoder."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

import jere.ndcore as nd
from jere.data import Vocabulary

ATTENTION_KINDS = ("avg", "ngram", "single")
PTR_ATTENTION_KINDS = ("dec_hid", "tup_prev", "combo")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture dimensions and decoding switches, all overridable."""

    d_w: int = 300            # word embedding
    d_c: int = 50             # char embedding
    d_f: int = 50             # char-CNN feature
    d_h: int = 300            # decoder LSTM hidden (encoder emits d_h/2 per direction)
    d_p: int = 300            # pointer Bi-LSTM hidden per direction
    d_r: int = 300            # relation embedding
    cnn_width: int = 3
    max_word_len: int = 10
    max_sent_len: int = 100
    dropout: float = 0.3
    batch_size: int = 32
    attention: str = "single"          # word decoder: avg | ngram | single
    ptr_attention: str = "combo"       # pointer decoder: dec_hid | tup_prev | combo
    copy_mask: bool = True
    mask_in_training: bool = True      # apply the copy mask to the training softmax too
    dropout_hidden: bool = False       # also drop encoder hidden states
    max_target_len: int = 100          # word decoder generation cap
    max_tuples: int = 10               # pointer decoder generation cap

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith(("d_", "cnn", "max_", "batch")):
                if int(getattr(self, f.name)) < 1:
                    raise ValueError(f"{f.name} must be >= 1")
        if self.d_h % 2 != 0:
            raise ValueError("d_h must be even (split across Bi-LSTM directions)")
        if self.cnn_width % 2 != 1:
            raise ValueError("cnn_width must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}")
        if self.ptr_attention not in PTR_ATTENTION_KINDS:
            raise ValueError(f"ptr_attention must be one of {PTR_ATTENTION_KINDS}")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def tiny_config(**overrides) -> ModelConfig:
    """Small dimensions for tests and gradient checks."""
    base = dict(d_w=8, d_c=4, d_f=6, d_h=8, d_p=4, d_r=6, max_word_len=6,
                dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class EncoderOutput:
    """Per-token vectors and hidden states for one sentence."""

    token_vectors: nd.Tensor  # (n, d_w + d_f)
    hiddens: nd.Tensor        # (n, d_h)
    last_hidden: nd.Tensor    # (d_h,)

    @property
    def length(self) -> int:
        return self.hiddens.data.shape[0]


@dataclass
class EncoderParams:
    word_emb: nd.Tensor
    char_emb: nd.Tensor
    conv_w: nd.Tensor
    conv_b: nd.Tensor
    fwd: nd.LSTMParams
    bwd: nd.LSTMParams


def init_encoder_params(rng: np.random.Generator, vocab: Vocabulary,
                        cfg: ModelConfig, dtype=np.float32,
                        store: dict | None = None,
                        prefix: str = "enc") -> EncoderParams:
    """Fresh uniformly initialized encoder parameters, registered in `store`."""
    if store is None:
        store = {}
    half = cfg.d_h // 2
    d_in = cfg.d_w + cfg.d_f
    p = EncoderParams(
        word_emb=nd.uniform_init(rng, (vocab.n_words, cfg.d_w), dtype=dtype),
        char_emb=nd.uniform_init(rng, (vocab.n_chars, cfg.d_c), dtype=dtype),
        conv_w=nd.uniform_init(rng, (cfg.d_f, cfg.cnn_width * cfg.d_c), dtype=dtype),
        conv_b=nd.uniform_init(rng, (cfg.d_f,), dtype=dtype),
        fwd=nd.lstm_params(rng, d_in, half, dtype=dtype),
        bwd=nd.lstm_params(rng, d_in, half, dtype=dtype),
    )
    store[f"{prefix}.word_emb"] = p.word_emb
    store[f"{prefix}.char_emb"] = p.char_emb
    store[f"{prefix}.conv_w"] = p.conv_w
    store[f"{prefix}.conv_b"] = p.conv_b
    for direction, lp in (("fwd", p.fwd), ("bwd", p.bwd)):
        store[f"{prefix}.{direction}.w_x"] = lp.w_x
        store[f"{prefix}.{direction}.w_h"] = lp.w_h
        store[f"{prefix}.{direction}.b"] = lp.b
    return p


def encoder_params_from_store(store: dict, prefix: str = "enc") -> EncoderParams:
    lstm = lambda d: nd.LSTMParams(store[f"{prefix}.{d}.w_x"],
                                   store[f"{prefix}.{d}.w_h"],
                                   store[f"{prefix}.{d}.b"])
    return EncoderParams(
        word_emb=store[f"{prefix}.word_emb"],
        char_emb=store[f"{prefix}.char_emb"],
        conv_w=store[f"{prefix}.conv_w"],
        conv_b=store[f"{prefix}.conv_b"],
        fwd=lstm("fwd"), bwd=lstm("bwd"),
    )


def embed_tokens(tokens: Sequence[str], p: EncoderParams, vocab: Vocabulary,
                 cfg: ModelConfig, training: bool = False,
                 rng: np.random.Generator | None = None) -> nd.Tensor:
    """Word embedding concatenated with the char-CNN feature, row per token."""
    word_ids = [vocab.word_id(t) for t in tokens]
    word_vecs = nd.rows(p.word_emb, word_ids)
    char_feats = nd.stack([
        nd.char_cnn(vocab.char_ids(t, cfg.max_word_len), p.char_emb, p.conv_w, p.conv_b)
        for t in tokens
    ])
    vecs = nd.concat([word_vecs, char_feats], axis=1)
    return nd.dropout(vecs, cfg.dropout, training, rng)


def encode(token_vectors: nd.Tensor, p: EncoderParams, cfg: ModelConfig,
           training: bool = False,
           rng: np.random.Generator | None = None) -> EncoderOutput:
    """Bi-LSTM over the token vectors; hidden width d_h."""
    n = token_vectors.data.shape[0]
    if n > cfg.max_sent_len:
        raise ValueError(f"sentence too long ({n} > {cfg.max_sent_len})")
    hiddens = nd.bilstm(token_vectors, p.fwd, p.bwd)
    if cfg.dropout_hidden:
        hiddens = nd.dropout(hiddens, cfg.dropout, training, rng)
    return EncoderOutput(token_vectors=token_vectors, hiddens=hiddens,
                         last_hidden=nd.row(hiddens, n - 1))


def encode_sentence(tokens: Sequence[str], p: EncoderParams, vocab: Vocabulary,
                    cfg: ModelConfig, training: bool = False,
                    rng: np.random.Generator | None = None) -> EncoderOutput:
    vecs = embed_tokens(tokens, p, vocab, cfg, training, rng)
    return encode(vecs, p, cfg, training, rng)
