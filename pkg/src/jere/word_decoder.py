"""Word-level target decoder with masked-softmax copying (WDec).

The decoder LSTM consumes the source context vector concatenated with the
previous target word embedding and projects each hidden state onto the
shared vocabulary.  With the copy mask on, the projection softmax only
ranges over the current sentence's tokens, the relation names, the
separators, UNK, and EOS, so entities can only be copied from the source.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

import jere.ndcore as nd
from jere.attention import (
    AttentionOutput,
    attend_avg,
    attend_ngram,
    attend_single,
    init_ngram_attention,
    init_single_attention,
    ngram_attention_from_store,
    project_encoder,
    single_attention_from_store,
)
from jere.data import (
    GenerationDiagnostics,
    Instance,
    Vocabulary,
    build_copy_mask,
    encode_word_target,
    parse_word_target,
)
from jere.encoder import (
    EncoderOutput,
    ModelConfig,
    encode_sentence,
    encoder_params_from_store,
    init_encoder_params,
)


@dataclass
class WordDecodeState:
    h: nd.Tensor
    c: nd.Tensor
    prev_id: int
    step: int = 0


def resolve_unk(tokens: Sequence[str], alpha: np.ndarray) -> str:
    """Source word with the highest attention score; replaces a generated UNK."""
    return tokens[int(np.argmax(alpha))]


class WDecModel:
    kind = "wdec"

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary,
                 rng: np.random.Generator | None = None,
                 store: dict[str, nd.Tensor] | None = None,
                 dtype=np.float32):
        self.cfg = cfg
        self.vocab = vocab
        if store is None:
            if rng is None:
                raise ValueError("need an rng to initialize parameters")
            store = {}
            self.enc = init_encoder_params(rng, vocab, cfg, dtype, store)
            self.lstm = nd.lstm_params(rng, cfg.d_h + cfg.d_w, cfg.d_h, dtype=dtype)
            store["wdec.lstm.w_x"] = self.lstm.w_x
            store["wdec.lstm.w_h"] = self.lstm.w_h
            store["wdec.lstm.b"] = self.lstm.b
            self.proj_w = nd.uniform_init(rng, (vocab.n_words, cfg.d_h), dtype=dtype)
            self.proj_b = nd.uniform_init(rng, (vocab.n_words,), dtype=dtype)
            store["wdec.proj_w"] = self.proj_w
            store["wdec.proj_b"] = self.proj_b
            if cfg.attention == "single":
                self.attn = init_single_attention(rng, cfg.d_h, cfg.d_h, store,
                                                  "wdec.attn", dtype)
            elif cfg.attention == "ngram":
                self.attn = init_ngram_attention(rng, cfg.d_h, store, "wdec.attn", dtype)
            else:
                self.attn = None
        else:
            self.enc = encoder_params_from_store(store)
            self.lstm = nd.LSTMParams(store["wdec.lstm.w_x"], store["wdec.lstm.w_h"],
                                      store["wdec.lstm.b"])
            self.proj_w = store["wdec.proj_w"]
            self.proj_b = store["wdec.proj_b"]
            if cfg.attention == "single":
                self.attn = single_attention_from_store(store, "wdec.attn")
            elif cfg.attention == "ngram":
                self.attn = ngram_attention_from_store(store, "wdec.attn")
            else:
                self.attn = None
        self.params = store

    # -- per-sentence precomputation ------------------------------------

    def _prepare(self, enc: EncoderOutput):
        """Whatever the attention mechanism can hoist out of the step loop."""
        if self.cfg.attention == "single":
            return project_encoder(enc, self.attn)
        if self.cfg.attention == "ngram":
            return attend_ngram(enc, self.attn)  # static context per sentence
        return attend_avg(enc)

    def _context(self, enc: EncoderOutput, pre, h_prev: nd.Tensor) -> AttentionOutput:
        if self.cfg.attention == "single":
            return attend_single(enc, pre, h_prev, self.attn)
        return pre

    # -- core steps ------------------------------------------------------

    def decode_step(self, context: nd.Tensor, y_prev: nd.Tensor,
                    state: WordDecodeState, training: bool,
                    rng: np.random.Generator | None) -> WordDecodeState:
        x = nd.dropout(nd.concat([context, y_prev]), self.cfg.dropout, training, rng)
        h, c = nd.lstm_step(x, state.h, state.c, self.lstm)
        return WordDecodeState(h=h, c=c, prev_id=state.prev_id, step=state.step + 1)

    def _project(self, h: nd.Tensor, mask: np.ndarray | None) -> nd.Tensor:
        logits = nd.add(nd.matmul(self.proj_w, h), self.proj_b)
        return nd.softmax_masked(logits, mask)

    def _initial_state(self, enc: EncoderOutput) -> WordDecodeState:
        c0 = nd.zeros((self.cfg.d_h,), enc.hiddens.dtype)
        return WordDecodeState(h=enc.last_hidden, c=c0, prev_id=self.vocab.sos_id)

    # -- training loss ----------------------------------------------------

    def loss(self, instances: Sequence[Instance], training: bool = True,
             rng: np.random.Generator | None = None) -> nd.Tensor:
        """Teacher-forced mean NLL, normalized per sequence then batch-averaged."""
        if not instances:
            raise ValueError("empty batch")
        per_seq = []
        for inst in instances:
            tokens = inst.sentence.tokens
            enc = encode_sentence(tokens, self.enc, self.vocab, self.cfg, training, rng)
            pre = self._prepare(enc)
            mask = None
            if self.cfg.copy_mask and self.cfg.mask_in_training:
                mask = build_copy_mask(tokens, self.vocab)
            gold_ids = encode_word_target(inst.tuples, self.vocab)
            state = self._initial_state(enc)
            nlls = []
            for gold in gold_ids:
                att = self._context(enc, pre, state.h)
                y_prev = nd.row(self.enc.word_emb, state.prev_id)
                state = self.decode_step(att.context, y_prev, state, training, rng)
                if mask is not None and not mask[gold]:
                    raise ValueError(
                        f"gold token outside copy support: "
                        f"{self.vocab.id_to_word[gold]!r}")
                probs = self._project(state.h, mask)
                nlls.append(nd.scale(nd.log(nd.gather(probs, gold)), -1.0))
                state.prev_id = gold
            per_seq.append(nd.scale(nd.add_n(nlls), 1.0 / len(gold_ids)))
        return nd.scale(nd.add_n(per_seq), 1.0 / len(per_seq))

    # -- inference ---------------------------------------------------------

    def predict(self, tokens: Sequence[str], max_len: int | None = None):
        """Greedy generation, UNK patched to the top-attention source word.

        Returns the parsed surface-tuple set and generation diagnostics.
        A generated UNK is replaced in the output text only; the UNK
        embedding itself is fed to the next step.
        """
        cfg = self.cfg
        max_len = max_len or cfg.max_target_len
        enc = encode_sentence(tokens, self.enc, self.vocab, cfg, training=False)
        pre = self._prepare(enc)
        mask = build_copy_mask(tokens, self.vocab) if cfg.copy_mask else None
        state = self._initial_state(enc)
        out_tokens: list[str] = []
        unk_count = 0
        truncated = True
        for _ in range(max_len):
            att = self._context(enc, pre, state.h)
            y_prev = nd.row(self.enc.word_emb, state.prev_id)
            state = self.decode_step(att.context, y_prev, state, False, None)
            probs = self._project(state.h, mask)
            token_id = int(np.argmax(probs.data))
            if token_id == self.vocab.eos_id:
                truncated = False
                break
            word = self.vocab.id_to_word[token_id]
            if token_id == self.vocab.unk_id:
                alpha = att.alpha.data if att.alpha is not None \
                    else enc.hiddens.data @ state.h.data
                word = resolve_unk(tokens, alpha)
                unk_count += 1
            out_tokens.append(word)
            state.prev_id = token_id
        tuples, diag = parse_word_target(out_tokens, self.vocab)
        diag.unk_replacements = unk_count
        diag.truncated = truncated
        return tuples, diag


def word_loss(model: WDecModel, instances: Sequence[Instance],
              training: bool = True,
              rng: np.random.Generator | None = None) -> nd.Tensor:
    return model.loss(instances, training, rng)
