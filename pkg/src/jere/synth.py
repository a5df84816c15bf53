"""Deterministic synthetic corpora for desk-scale training and verification.

Sentences are built from templated segments.  A segment spells out one
tuple as `E1 <cue-token> E2`, where each relation owns a distinctive cue
token, so both decoders have a learnable signal.  Overlap classes are
produced by construction:

  NEO  independent segments, all entities distinct
  EPO  one entity pair with several cue tokens between the two entities
  SEO  an entity chain `A cue B cue C ...`, adjacent tuples sharing one entity
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from jere.data import EPO, Instance, NEO, SEO, Sentence, classify_overlap, make_tuple


@dataclass(frozen=True)
class SynthConfig:
    n_neo: int = 100
    n_epo: int = 50
    n_seo: int = 50
    n_relations: int = 4
    entity_tokens: int = 30
    filler_tokens: int = 8
    entity_len: tuple[int, int] = (1, 2)
    max_tuples: int = 5
    # probability of a sentence carrying 1..max_tuples tuples; EPO/SEO
    # sentences redraw until the count is >= 2 (a single tuple cannot overlap)
    tuple_mix: tuple[float, ...] = (0.50, 0.22, 0.14, 0.09, 0.05)
    valid_fraction: float = 0.0

    def __post_init__(self):
        if self.n_neo < 0 or self.n_epo < 0 or self.n_seo < 0:
            raise ValueError("negative sentence counts")
        if self.n_neo + self.n_epo + self.n_seo == 0:
            raise ValueError("empty corpus requested")
        if self.n_relations < 1:
            raise ValueError("need at least one relation")
        if self.n_epo > 0 and self.n_relations < 2:
            raise ValueError("EPO sentences need at least two relations")
        lo, hi = self.entity_len
        if not 1 <= lo <= hi:
            raise ValueError(f"bad entity length range {self.entity_len}")
        if len(self.tuple_mix) != self.max_tuples:
            raise ValueError("tuple_mix length must equal max_tuples")
        if any(p < 0 for p in self.tuple_mix) or abs(sum(self.tuple_mix) - 1.0) > 1e-6:
            raise ValueError("tuple_mix must be a distribution")
        if (self.n_epo > 0 or self.n_seo > 0) and sum(self.tuple_mix[1:]) <= 0:
            raise ValueError("tuple_mix gives no mass to multi-tuple sentences")
        if self.entity_tokens < 2 * self.max_tuples * hi:
            raise ValueError("entity token pool too small for the requested tuples")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ValueError("valid_fraction must be in [0, 1)")

    def relations(self) -> list[str]:
        return [f"/syn/rel{i}" for i in range(self.n_relations)]


def _draw_count(rng: np.random.Generator, mix, minimum: int) -> int:
    while True:
        k = int(rng.choice(len(mix), p=np.asarray(mix) / sum(mix))) + 1
        if k >= minimum:
            return k


def _draw_entities(rng: np.random.Generator, pool: list[str], span: tuple[int, int],
                   count: int) -> list[list[str]]:
    """Distinct multi-token entity names; token sets disjoint across entities."""
    lengths = [int(rng.integers(span[0], span[1] + 1)) for _ in range(count)]
    toks = rng.choice(len(pool), size=sum(lengths), replace=False)
    out, at = [], 0
    for length in lengths:
        out.append([pool[i] for i in toks[at:at + length]])
        at += length
    return out


class _Builder:
    """Accumulates tokens and records tuple spans as segments are appended."""

    def __init__(self):
        self.tokens: list[str] = []
        self.pending: list[tuple[int, int, int, int, str]] = []

    def append_entity(self, name: list[str]) -> tuple[int, int]:
        start = len(self.tokens)
        self.tokens.extend(name)
        return (start, len(self.tokens) - 1)

    def append(self, *toks: str) -> None:
        self.tokens.extend(toks)

    def tuple_at(self, e1: tuple[int, int], e2: tuple[int, int], rel: str) -> None:
        self.pending.append((*e1, *e2, rel))

    def build(self) -> Instance:
        tuples = [make_tuple(self.tokens, (a, b), (c, d), rel)
                  for a, b, c, d, rel in self.pending]
        return Instance(Sentence(tuple(self.tokens)), frozenset(tuples))


def _gen_neo(rng, cfg: SynthConfig, pools) -> Instance:
    entities_pool, fillers, cues, rels = pools
    k = _draw_count(rng, cfg.tuple_mix, 1)
    names = _draw_entities(rng, entities_pool, cfg.entity_len, 2 * k)
    b = _Builder()
    b.append(fillers[int(rng.integers(len(fillers)))])
    for seg in range(k):
        if seg:
            b.append(",")
        r = int(rng.integers(cfg.n_relations))
        sp1 = b.append_entity(names[2 * seg])
        b.append(cues[r])
        sp2 = b.append_entity(names[2 * seg + 1])
        b.tuple_at(sp1, sp2, rels[r])
    b.append(".")
    return b.build()


def _gen_epo(rng, cfg: SynthConfig, pools) -> Instance:
    entities_pool, fillers, cues, rels = pools
    k = min(_draw_count(rng, cfg.tuple_mix, 2), cfg.n_relations)
    names = _draw_entities(rng, entities_pool, cfg.entity_len, 2)
    chosen = rng.choice(cfg.n_relations, size=k, replace=False)
    b = _Builder()
    b.append(fillers[int(rng.integers(len(fillers)))])
    sp1 = b.append_entity(names[0])
    for r in chosen:
        b.append(cues[int(r)])
    sp2 = b.append_entity(names[1])
    for r in chosen:
        b.tuple_at(sp1, sp2, rels[int(r)])
    b.append(".")
    return b.build()


def _gen_seo(rng, cfg: SynthConfig, pools) -> Instance:
    entities_pool, fillers, cues, rels = pools
    k = _draw_count(rng, cfg.tuple_mix, 2)
    names = _draw_entities(rng, entities_pool, cfg.entity_len, k + 1)
    b = _Builder()
    b.append(fillers[int(rng.integers(len(fillers)))])
    spans = [b.append_entity(names[0])]
    for step in range(k):
        r = int(rng.integers(cfg.n_relations))
        b.append(cues[r])
        spans.append(b.append_entity(names[step + 1]))
        b.tuple_at(spans[step], spans[step + 1], rels[r])
    b.append(".")
    return b.build()


_EXPECTED = {NEO: frozenset({NEO}), EPO: frozenset({EPO}), SEO: frozenset({SEO})}


def generate_synthetic(cfg: SynthConfig, seed: int) -> list[Instance]:
    """Template-generated corpus; deterministic given (config, seed)."""
    rng = np.random.default_rng(seed)
    rels = cfg.relations()
    pools = (
        [f"e{i:03d}" for i in range(cfg.entity_tokens)],
        [f"w{i:02d}" for i in range(cfg.filler_tokens)],
        [f"cue{i}" for i in range(cfg.n_relations)],
        rels,
    )
    plan = [(NEO, _gen_neo)] * cfg.n_neo + [(EPO, _gen_epo)] * cfg.n_epo \
        + [(SEO, _gen_seo)] * cfg.n_seo
    out = []
    for target, gen in plan:
        inst = gen(rng, cfg, pools)
        got = classify_overlap(inst.tuples)
        if got != _EXPECTED[target]:
            raise AssertionError(f"generator produced {set(got)} for a {target} template")
        out.append(inst)
    return out


def stratified_split(instances: Sequence[Instance],
                     valid_fraction: float) -> tuple[list[Instance], list[Instance]]:
    """Deterministic split keeping every overlap class in both parts.

    Within each class bucket every round(1/fraction)-th instance goes to
    the validation side, so no extra randomness is involved.
    """
    if not 0.0 <= valid_fraction < 1.0:
        raise ValueError("valid_fraction must be in [0, 1)")
    train: list[Instance] = []
    valid: list[Instance] = []
    if valid_fraction == 0.0:
        return list(instances), []
    stride = max(2, round(1.0 / valid_fraction))
    counters: dict[frozenset, int] = {}
    for inst in instances:
        key = classify_overlap(inst.tuples)
        k = counters.get(key, 0)
        counters[key] = k + 1
        (valid if k % stride == stride - 1 else train).append(inst)
    return train, valid
