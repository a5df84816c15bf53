"""Pointer-network decoder emitting one relation tuple per step (PNDec).

Each decode step runs two pointer networks (Bi-LSTMs over the encoder
states conditioned on the decoder hidden) to produce start/end
distributions for both entities, classifies the relation from the
attentive entity vectors, and feeds the summed tuple vectors back so the
decoder knows what it already extracted.  Decoding stops on the reserved
end-of-sequence relation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

import jere.ndcore as nd
from jere.attention import (
    attend_pndec,
    init_ptr_attention,
    ptr_attention_from_store,
    ptr_encoder_projections,
)
from jere.data import (
    GenerationDiagnostics,
    Instance,
    RelationTuple,
    Vocabulary,
    encode_pointer_target,
    make_tuple,
)
from jere.encoder import (
    EncoderOutput,
    ModelConfig,
    encode_sentence,
    encoder_params_from_store,
    init_encoder_params,
)


@dataclass
class PointerStepOutput:
    """Span distributions, pointer-layer hiddens, and entity vectors for one step."""

    s1: nd.Tensor  # (n,)
    e1: nd.Tensor
    s2: nd.Tensor
    e2: nd.Tensor
    hk: nd.Tensor  # (n, 2*d_p) first pointer layer
    hl: nd.Tensor  # (n, 2*d_p) second pointer layer
    a1: nd.Tensor  # (4*d_p,)
    a2: nd.Tensor


@dataclass
class PtrDecodeState:
    h: nd.Tensor
    c: nd.Tensor
    y_prev: nd.Tensor  # running sum of emitted tuple vectors
    step: int = 0


def _best_span(ps: np.ndarray, pe: np.ndarray, n: int,
               block: tuple[int, int] | None = None,
               exclude_full: bool = False) -> tuple[tuple[int, int], float]:
    """Argmax of ps[b] * pe[e] over valid spans b <= e, row-major tie-break."""
    prod = np.outer(ps, pe)
    b_idx = np.arange(n)[:, None]
    e_idx = np.arange(n)[None, :]
    valid = b_idx <= e_idx
    if exclude_full and n > 1:
        valid = valid.copy()
        valid[0, n - 1] = False
    if block is not None:
        valid = valid & ((e_idx < block[0]) | (b_idx > block[1]))
    masked = np.where(valid, prod, -1.0)
    flat = int(masked.argmax())
    b, e = divmod(flat, n)
    return (b, e), float(masked[b, e])


def select_spans(s1: np.ndarray, e1: np.ndarray, s2: np.ndarray, e2: np.ndarray,
                 ) -> tuple[tuple[int, int], tuple[int, int]]:
    """Constrained greedy span pair: two passes, keep the better product.

    Pass one picks the first entity's span maximizing its start*end
    probability, then the second entity over spans disjoint from it; pass
    two repeats with the entities swapped; the pass with the larger
    four-way product wins (ties keep pass one).  The first pick may not
    cover the whole sentence so a disjoint second span always exists.
    """
    n = len(s1)
    if n < 2:
        raise ValueError("no disjoint span pair exists for a sentence of length < 2")
    first_a, v_a1 = _best_span(s1, e1, n, exclude_full=True)
    second_a, v_a2 = _best_span(s2, e2, n, block=first_a)
    first_b, v_b1 = _best_span(s2, e2, n, exclude_full=True)
    second_b, v_b2 = _best_span(s1, e1, n, block=first_b)
    if v_b1 * v_b2 > v_a1 * v_a2:
        return second_b, first_b
    return first_a, second_a


def select_spans_exhaustive(s1: np.ndarray, e1: np.ndarray, s2: np.ndarray,
                            e2: np.ndarray) -> tuple[tuple[int, int], tuple[int, int]]:
    """Global argmax over all disjoint span pairs (study variant, not the
    default two-pass rule)."""
    n = len(s1)
    if n < 2:
        raise ValueError("no disjoint span pair exists for a sentence of length < 2")
    best, best_val = None, -1.0
    for b1 in range(n):
        for f1 in range(b1, n):
            v1 = s1[b1] * e1[f1]
            for b2 in range(n):
                for f2 in range(b2, n):
                    if not (f2 < b1 or b2 > f1):
                        continue
                    val = v1 * s2[b2] * e2[f2]
                    if val > best_val:
                        best, best_val = ((b1, f1), (b2, f2)), val
    return best


class PNDecModel:
    kind = "pndec"

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary,
                 rng: np.random.Generator | None = None,
                 store: dict[str, nd.Tensor] | None = None,
                 dtype=np.float32):
        self.cfg = cfg
        self.vocab = vocab
        self.tuple_dim = 8 * cfg.d_p + cfg.d_r
        if store is None:
            if rng is None:
                raise ValueError("need an rng to initialize parameters")
            store = {}
            self.enc = init_encoder_params(rng, vocab, cfg, dtype, store)
            self.rel_emb = nd.uniform_init(rng, (vocab.n_rels, cfg.d_r), dtype=dtype)
            store["pndec.rel_emb"] = self.rel_emb
            self.lstm = nd.lstm_params(rng, cfg.d_h + self.tuple_dim, cfg.d_h,
                                       dtype=dtype)
            self.ptr1_fwd = nd.lstm_params(rng, 2 * cfg.d_h, cfg.d_p, dtype=dtype)
            self.ptr1_bwd = nd.lstm_params(rng, 2 * cfg.d_h, cfg.d_p, dtype=dtype)
            self.ptr2_fwd = nd.lstm_params(rng, 2 * cfg.d_p + 2 * cfg.d_h, cfg.d_p,
                                           dtype=dtype)
            self.ptr2_bwd = nd.lstm_params(rng, 2 * cfg.d_p + 2 * cfg.d_h, cfg.d_p,
                                           dtype=dtype)
            for name, lp in (("lstm", self.lstm), ("ptr1.fwd", self.ptr1_fwd),
                             ("ptr1.bwd", self.ptr1_bwd), ("ptr2.fwd", self.ptr2_fwd),
                             ("ptr2.bwd", self.ptr2_bwd)):
                store[f"pndec.{name}.w_x"] = lp.w_x
                store[f"pndec.{name}.w_h"] = lp.w_h
                store[f"pndec.{name}.b"] = lp.b
            for name in ("s1", "e1", "s2", "e2"):
                store[f"pndec.{name}_w"] = nd.uniform_init(rng, (2 * cfg.d_p,),
                                                           dtype=dtype)
                store[f"pndec.{name}_b"] = nd.uniform_init(rng, (), dtype=dtype)
            self.rel_w = nd.uniform_init(rng, (vocab.n_rels, 8 * cfg.d_p + cfg.d_h),
                                         dtype=dtype)
            self.rel_b = nd.uniform_init(rng, (vocab.n_rels,), dtype=dtype)
            store["pndec.rel_w"] = self.rel_w
            store["pndec.rel_b"] = self.rel_b
            self.attn = init_ptr_attention(rng, cfg, self.tuple_dim, store,
                                           "pndec.attn", dtype)
        else:
            self.enc = encoder_params_from_store(store)
            self.rel_emb = store["pndec.rel_emb"]
            lstm = lambda name: nd.LSTMParams(store[f"pndec.{name}.w_x"],
                                              store[f"pndec.{name}.w_h"],
                                              store[f"pndec.{name}.b"])
            self.lstm = lstm("lstm")
            self.ptr1_fwd, self.ptr1_bwd = lstm("ptr1.fwd"), lstm("ptr1.bwd")
            self.ptr2_fwd, self.ptr2_bwd = lstm("ptr2.fwd"), lstm("ptr2.bwd")
            self.rel_w = store["pndec.rel_w"]
            self.rel_b = store["pndec.rel_b"]
            self.attn = ptr_attention_from_store(store, cfg.ptr_attention, "pndec.attn")
        self.span_heads = {name: (store[f"pndec.{name}_w"], store[f"pndec.{name}_b"])
                           for name in ("s1", "e1", "s2", "e2")}
        self.params = store

    # -- core steps -------------------------------------------------------

    def decode_step(self, context: nd.Tensor, state: PtrDecodeState, training: bool,
                    rng: np.random.Generator | None) -> PtrDecodeState:
        x = nd.dropout(nd.concat([context, state.y_prev]), self.cfg.dropout,
                       training, rng)
        h, c = nd.lstm_step(x, state.h, state.c, self.lstm)
        return PtrDecodeState(h=h, c=c, y_prev=state.y_prev, step=state.step + 1)

    def _span_head(self, name: str, hidden: nd.Tensor) -> nd.Tensor:
        w, b = self.span_heads[name]
        return nd.softmax(nd.add_scalar(nd.matmul(hidden, w), b))

    def point_entities(self, h_dec: nd.Tensor, enc: EncoderOutput) -> PointerStepOutput:
        """Two pointer networks over the sentence, conditioned on the decoder state."""
        n = enc.length
        dec_rows = nd.tile_row(h_dec, n)
        hk = nd.bilstm(nd.concat([dec_rows, enc.hiddens], axis=1),
                       self.ptr1_fwd, self.ptr1_bwd)
        s1 = self._span_head("s1", hk)
        e1 = self._span_head("e1", hk)
        hl = nd.bilstm(nd.concat([hk, dec_rows, enc.hiddens], axis=1),
                       self.ptr2_fwd, self.ptr2_bwd)
        s2 = self._span_head("s2", hl)
        e2 = self._span_head("e2", hl)
        a1 = nd.concat([nd.matmul(nd.transpose(hk), s1), nd.matmul(nd.transpose(hk), e1)])
        a2 = nd.concat([nd.matmul(nd.transpose(hl), s2), nd.matmul(nd.transpose(hl), e2)])
        return PointerStepOutput(s1=s1, e1=e1, s2=s2, e2=e2, hk=hk, hl=hl, a1=a1, a2=a2)

    def classify_relation(self, step: PointerStepOutput, h_dec: nd.Tensor,
                          gold_rel: int | None = None):
        """Relation distribution, relation embedding, and the tuple vector.

        Teacher forcing substitutes the gold relation's embedding into the
        tuple vector; the predicted distribution is returned either way.
        """
        feats = nd.concat([step.a1, step.a2, h_dec])
        r_probs = nd.softmax(nd.add(nd.matmul(self.rel_w, feats), self.rel_b))
        rel_id = gold_rel if gold_rel is not None else int(np.argmax(r_probs.data))
        z = nd.row(self.rel_emb, rel_id)
        y = nd.concat([step.a1, step.a2, z])
        return r_probs, z, y

    def _initial_state(self, enc: EncoderOutput) -> PtrDecodeState:
        dtype = enc.hiddens.dtype
        return PtrDecodeState(h=enc.last_hidden, c=nd.zeros((self.cfg.d_h,), dtype),
                              y_prev=nd.zeros((self.tuple_dim,), dtype))

    # -- training loss ------------------------------------------------------

    def loss(self, instances: Sequence[Instance], training: bool = True,
             rng: np.random.Generator | None = None) -> nd.Tensor:
        """Relation NLL plus the four pointer NLLs, teacher forced.

        The terminal end-of-sequence record contributes only its relation
        term; no gold spans exist for it.
        """
        if not instances:
            raise ValueError("empty batch")
        per_seq = []
        for inst in instances:
            tokens = inst.sentence.tokens
            n = len(tokens)
            enc = encode_sentence(tokens, self.enc, self.vocab, self.cfg, training, rng)
            projs = ptr_encoder_projections(enc, self.attn)
            records = encode_pointer_target(inst.tuples, self.vocab)
            state = self._initial_state(enc)
            nlls = []
            for rec in records:
                att = attend_pndec(enc, projs, state.h, state.y_prev, self.attn)
                state = self.decode_step(att.context, state, training, rng)
                step = self.point_entities(state.h, enc)
                is_eos = rec.rel_id == self.vocab.eos_rel_id
                r_probs, _, y = self.classify_relation(
                    step, state.h, gold_rel=rec.rel_id)
                terms = [nd.scale(nd.log(nd.gather(r_probs, rec.rel_id)), -1.0)]
                if not is_eos:
                    if max(rec.s1, rec.e1, rec.s2, rec.e2) >= n:
                        raise ValueError(
                            f"gold span index out of range for {n} tokens: {rec}")
                    for dist, idx in ((step.s1, rec.s1), (step.e1, rec.e1),
                                      (step.s2, rec.s2), (step.e2, rec.e2)):
                        terms.append(nd.scale(nd.log(nd.gather(dist, idx)), -1.0))
                nlls.append(nd.add_n(terms))
                state.y_prev = nd.add(state.y_prev, y)
            per_seq.append(nd.scale(nd.add_n(nlls), 1.0 / len(records)))
        return nd.scale(nd.add_n(per_seq), 1.0 / len(per_seq))

    # -- inference -----------------------------------------------------------

    def predict(self, tokens: Sequence[str], max_tuples: int | None = None):
        """Greedy tuple extraction until the EOS relation or the cap.

        Sentences shorter than two tokens cannot host two disjoint spans
        and yield an empty set.
        """
        max_tuples = max_tuples or self.cfg.max_tuples
        diag = GenerationDiagnostics()
        if len(tokens) < 2:
            return frozenset(), diag
        enc = encode_sentence(tokens, self.enc, self.vocab, self.cfg, training=False)
        projs = ptr_encoder_projections(enc, self.attn)
        state = self._initial_state(enc)
        out: set[RelationTuple] = set()
        truncated = True
        for _ in range(max_tuples):
            att = attend_pndec(enc, projs, state.h, state.y_prev, self.attn)
            state = self.decode_step(att.context, state, False, None)
            step = self.point_entities(state.h, enc)
            r_probs, _, y = self.classify_relation(step, state.h)
            rel_id = int(np.argmax(r_probs.data))
            if rel_id == self.vocab.eos_rel_id:
                truncated = False
                break
            span1, span2 = select_spans(step.s1.data, step.e1.data,
                                        step.s2.data, step.e2.data)
            tup = make_tuple(tokens, span1, span2, self.vocab.id_to_rel[rel_id])
            if tup in out:
                diag.duplicate_tuples += 1
            else:
                out.add(tup)
            state.y_prev = nd.add(state.y_prev, y)
        diag.truncated = truncated
        return frozenset(out), diag


def ptr_loss(model: PNDecModel, instances: Sequence[Instance],
             training: bool = True,
             rng: np.random.Generator | None = None) -> nd.Tensor:
    return model.loss(instances, training, rng)
