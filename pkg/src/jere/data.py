"""Datasets, vocabulary, target representations, copy masks, overlap classes.

The on-disk dataset format is UTF-8 JSON lines, one sentence per line:

    {"tokens": ["..."], "tuples": [{"e1": [s, e], "e2": [s, e], "rel": "..."}]}

Spans are 0-based inclusive token indexes; entity surface strings are always
derived from the spans, never stored.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SOS = "<sos>"
EOS = "<eos>"
UNK = "<unk>"
SEP = ";"
TUPLE_SEP = "|"
EOS_RELATION = "<eos>"
CHAR_PAD = "\x00"
CHAR_UNK = "\x01"

MAX_SENT_LEN = 100

SurfaceTriple = tuple[str, str, str]


class DatasetError(ValueError):
    """Raised for unrecoverable dataset problems (strict mode, bad construction)."""


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]

    def __post_init__(self):
        n = len(self.tokens)
        if not 1 <= n <= MAX_SENT_LEN:
            raise DatasetError(f"sentence length {n} outside 1..{MAX_SENT_LEN}")
        if any(not t for t in self.tokens):
            raise DatasetError("empty token in sentence")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class RelationTuple:
    """Two entity token spans plus a relation label; the unit of prediction."""

    e1_span: tuple[int, int]
    e2_span: tuple[int, int]
    e1_text: str
    e2_text: str
    relation: str

    @property
    def surface(self) -> SurfaceTriple:
        return (self.e1_text, self.e2_text, self.relation)


def make_tuple(tokens: Sequence[str], e1_span, e2_span, relation: str) -> RelationTuple:
    """Validated construction; entity texts derived from the spans."""
    n = len(tokens)
    spans = []
    for name, span in (("e1", e1_span), ("e2", e2_span)):
        s, e = int(span[0]), int(span[1])
        if s > e:
            raise DatasetError(f"{name} span start > end: ({s}, {e})")
        if s < 0 or e >= n:
            raise DatasetError(f"{name} span ({s}, {e}) out of range for {n} tokens")
        spans.append((s, e))
    (s1, e1), (s2, e2) = spans
    if not (e1 < s2 or s1 > e2):
        raise DatasetError(f"overlapping entity spans ({s1},{e1}) and ({s2},{e2})")
    return RelationTuple(
        e1_span=(s1, e1), e2_span=(s2, e2),
        e1_text=" ".join(tokens[s1:e1 + 1]),
        e2_text=" ".join(tokens[s2:e2 + 1]),
        relation=relation,
    )


@dataclass(frozen=True)
class Instance:
    sentence: Sentence
    tuples: frozenset[RelationTuple]


@dataclass
class LoadReport:
    errors: list[tuple[int, str]] = field(default_factory=list)
    rejected_lines: int = 0
    rejected_tuples: int = 0

    def add(self, line_no: int, message: str) -> None:
        self.errors.append((line_no, message))


def _parse_line(line_no: int, raw: str, relations, report: LoadReport) -> Instance | None:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        report.add(line_no, f"malformed JSON: {exc.msg}")
        return None
    tokens = obj.get("tokens")
    if not isinstance(tokens, list) or not tokens or not all(
            isinstance(t, str) and t for t in tokens):
        report.add(line_no, "tokens must be a non-empty list of non-empty strings")
        return None
    if len(tokens) > MAX_SENT_LEN:
        report.add(line_no, f"sentence too long ({len(tokens)} > {MAX_SENT_LEN})")
        return None
    kept: list[RelationTuple] = []
    for spec in obj.get("tuples", []):
        rel = spec.get("rel")
        if relations is not None and rel not in relations:
            report.add(line_no, f"unknown relation {rel!r}")
            return None
        try:
            tup = make_tuple(tokens, spec["e1"], spec["e2"], rel)
        except (DatasetError, KeyError, TypeError, IndexError) as exc:
            report.add(line_no, f"bad tuple: {exc}")
            return None
        # entities holding separator tokens cannot be represented by the
        # word-level target scheme; drop the tuple, keep the sentence
        span_tokens = tokens[tup.e1_span[0]:tup.e1_span[1] + 1] + \
            tokens[tup.e2_span[0]:tup.e2_span[1] + 1]
        if SEP in span_tokens or TUPLE_SEP in span_tokens:
            report.add(line_no, "entity contains a separator token; tuple dropped")
            report.rejected_tuples += 1
            continue
        kept.append(tup)
    return Instance(Sentence(tuple(tokens)), frozenset(kept))


def load_dataset(path, *, relations: Iterable[str] | None = None,
                 strict: bool = False) -> tuple[list[Instance], LoadReport]:
    """Read a JSONL dataset; invalid lines are reported with line numbers."""
    relations = set(relations) if relations is not None else None
    report = LoadReport()
    instances: list[Instance] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            before = len(report.errors)
            inst = _parse_line(line_no, raw, relations, report)
            if inst is None:
                report.rejected_lines += 1
            else:
                instances.append(inst)
            if strict and len(report.errors) > before:
                no, msg = report.errors[-1]
                raise DatasetError(f"line {no}: {msg}")
    return instances, report


def save_dataset(instances: Iterable[Instance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            obj = {
                "tokens": list(inst.sentence.tokens),
                "tuples": [
                    {"e1": list(t.e1_span), "e2": list(t.e2_span), "rel": t.relation}
                    for t in sorted(inst.tuples,
                                    key=lambda t: (t.e1_span, t.e2_span, t.relation))
                ],
            }
            fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    """Shared word vocabulary, character alphabet, and relation set.

    Words include the source tokens, every relation name, the separators,
    and SOS/EOS/UNK.  Relations live in their own id namespace and include
    the end-of-sequence relation as the final id.
    """

    id_to_word: tuple[str, ...]
    id_to_char: tuple[str, ...]
    id_to_rel: tuple[str, ...]
    min_freq: int = 1

    def __post_init__(self):
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        self.char_to_id = {c: i for i, c in enumerate(self.id_to_char)}
        self.rel_to_id = {r: i for i, r in enumerate(self.id_to_rel)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise DatasetError("duplicate word entries")
        if self.id_to_rel[-1] != EOS_RELATION:
            raise DatasetError("relation ids must end with the EOS relation")

    @property
    def n_words(self) -> int:
        return len(self.id_to_word)

    @property
    def n_chars(self) -> int:
        return len(self.id_to_char)

    @property
    def n_rels(self) -> int:
        return len(self.id_to_rel)

    @property
    def relations(self) -> tuple[str, ...]:
        return self.id_to_rel[:-1]

    @property
    def sos_id(self) -> int:
        return self.word_to_id[SOS]

    @property
    def eos_id(self) -> int:
        return self.word_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.word_to_id[UNK]

    @property
    def eos_rel_id(self) -> int:
        return len(self.id_to_rel) - 1

    def word_id(self, token: str) -> int:
        return self.word_to_id.get(token, self.word_to_id[UNK])

    def char_ids(self, token: str, max_len: int) -> list[int]:
        """Pad (right) or truncate the token to exactly max_len char ids."""
        unk = self.char_to_id[CHAR_UNK]
        ids = [self.char_to_id.get(c, unk) for c in token[:max_len]]
        pad = self.char_to_id[CHAR_PAD]
        ids.extend([pad] * (max_len - len(ids)))
        return ids

    def digest(self) -> str:
        """Hash of the sorted vocabulary entries, for checkpoint compatibility."""
        h = hashlib.sha256()
        entries = sorted(
            [f"w\t{w}\t{i}" for w, i in self.word_to_id.items()]
            + [f"c\t{c}\t{i}" for c, i in self.char_to_id.items()]
            + [f"r\t{r}\t{i}" for r, i in self.rel_to_id.items()]
        )
        h.update("\n".join(entries).encode("utf-8"))
        return h.hexdigest()

    def to_json(self) -> dict:
        return {
            "words": list(self.id_to_word),
            "chars": list(self.id_to_char),
            "rels": list(self.id_to_rel),
            "min_freq": self.min_freq,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(tuple(obj["words"]), tuple(obj["chars"]), tuple(obj["rels"]),
                   obj.get("min_freq", 1))


def build_vocab(instances: Sequence[Instance], min_freq: int = 1,
                relations: Iterable[str] | None = None) -> Vocabulary:
    """Vocabulary from a training split; words below min_freq map to UNK."""
    if not instances:
        raise DatasetError("cannot build a vocabulary from an empty split")
    counts: Counter[str] = Counter()
    chars: set[str] = set()
    rels: set[str] = set(relations or ())
    for inst in instances:
        for tok in inst.sentence.tokens:
            counts[tok] += 1
            chars.update(tok)
        for tup in inst.tuples:
            rels.add(tup.relation)
    rel_list = sorted(rels)
    words = [SOS, EOS, UNK, SEP, TUPLE_SEP] + rel_list
    seen = set(words)
    for tok in sorted(counts):
        if counts[tok] >= min_freq and tok not in seen:
            words.append(tok)
            seen.add(tok)
    char_list = [CHAR_PAD, CHAR_UNK] + sorted(chars)
    return Vocabulary(tuple(words), tuple(char_list), tuple(rel_list + [EOS_RELATION]),
                      min_freq)


# ---------------------------------------------------------------------------
# target representations


def _sorted_tuples(tuples: Iterable[RelationTuple], vocab: Vocabulary) -> list[RelationTuple]:
    # fixed target order: by first-entity start, second-entity start, relation id
    return sorted(tuples, key=lambda t: (t.e1_span[0], t.e2_span[0],
                                         vocab.rel_to_id.get(t.relation, -1)))


def encode_word_target(tuples: Iterable[RelationTuple], vocab: Vocabulary,
                       as_tokens: bool = False):
    """Token-id sequence `e1 ; e2 ; rel | ... <eos>`; SOS is fed by the decoder."""
    tuples = list(tuples)
    if not tuples:
        raise DatasetError("cannot encode an empty tuple set as a word target")
    parts: list[str] = []
    for k, tup in enumerate(_sorted_tuples(tuples, vocab)):
        if tup.relation not in vocab.rel_to_id or tup.relation == EOS_RELATION:
            raise DatasetError(f"relation {tup.relation!r} not in vocabulary")
        if k:
            parts.append(TUPLE_SEP)
        parts.extend(tup.e1_text.split(" "))
        parts.append(SEP)
        parts.extend(tup.e2_text.split(" "))
        parts.append(SEP)
        parts.append(tup.relation)
    if as_tokens:
        return parts
    return [vocab.word_id(tok) for tok in parts] + [vocab.eos_id]


@dataclass
class GenerationDiagnostics:
    """Counts of everything dropped or patched while decoding one sentence."""

    unk_replacements: int = 0
    malformed_fragments: int = 0
    duplicate_tuples: int = 0
    same_entity_tuples: int = 0
    invalid_relation_tuples: int = 0
    truncated: bool = False


def parse_word_target(tokens: Sequence[str], vocab: Vocabulary):
    """Recover surface tuples from generated tokens, tolerating any junk.

    Splits on `|` then `;`; drops fragments without exactly three parts,
    duplicates, same-entity tuples, and unknown relations.  Returns the
    tuple set plus a diagnostics record of what was dropped.
    """
    diag = GenerationDiagnostics()
    out: set[SurfaceTriple] = set()
    fragment: list[list[str]] = [[]]

    def flush(fragment):
        groups: list[list[str]] = [[]]
        for tok in fragment:
            if tok == SEP:
                groups.append([])
            else:
                groups[-1].append(tok)
        if len(groups) != 3 or not all(groups):
            diag.malformed_fragments += 1
            return
        e1 = " ".join(groups[0])
        e2 = " ".join(groups[1])
        rel_tokens = groups[2]
        if len(rel_tokens) != 1:
            diag.malformed_fragments += 1
            return
        rel = rel_tokens[0]
        if e1 == e2:
            diag.same_entity_tuples += 1
            return
        if rel == EOS_RELATION or rel not in vocab.rel_to_id:
            diag.invalid_relation_tuples += 1
            return
        triple = (e1, e2, rel)
        if triple in out:
            diag.duplicate_tuples += 1
            return
        out.add(triple)

    pieces: list[str] = []
    for tok in tokens:
        if tok == EOS:
            break
        if tok == TUPLE_SEP:
            flush(pieces)
            pieces = []
        else:
            pieces.append(tok)
    flush(pieces)
    return frozenset(out), diag


@dataclass(frozen=True)
class PointerRecord:
    s1: int
    e1: int
    s2: int
    e2: int
    rel_id: int


def encode_pointer_target(tuples: Iterable[RelationTuple],
                          vocab: Vocabulary) -> list[PointerRecord]:
    """One (s1, e1, s2, e2, rel) record per tuple plus the terminal EOS record."""
    records = []
    for tup in _sorted_tuples(tuples, vocab):
        (s1, e1), (s2, e2) = tup.e1_span, tup.e2_span
        if not (e1 < s2 or s1 > e2):
            raise DatasetError("overlapping e1/e2 spans within one tuple")
        if tup.relation not in vocab.rel_to_id or tup.relation == EOS_RELATION:
            raise DatasetError(f"relation {tup.relation!r} not in vocabulary")
        records.append(PointerRecord(s1, e1, s2, e2, vocab.rel_to_id[tup.relation]))
    records.append(PointerRecord(0, 0, 0, 0, vocab.eos_rel_id))
    return records


# ---------------------------------------------------------------------------
# overlap taxonomy

NEO = "NEO"
EPO = "EPO"
SEO = "SEO"


def overlap_classes_from_pairs(pairs: Sequence[tuple[str, str]]) -> frozenset[str]:
    """Overlap classes for a list of (entity1, entity2) surface pairs."""
    if not pairs:
        return frozenset()
    epo = seo = any_share = False
    for i in range(len(pairs)):
        a1, a2 = pairs[i]
        for j in range(i + 1, len(pairs)):
            b1, b2 = pairs[j]
            both = (a1 == b1 and a2 == b2) or (a1 == b2 and a2 == b1)
            shared = {a1, a2} & {b1, b2}
            if both:
                epo = True
            elif shared:
                seo = True
            if shared:
                any_share = True
    if not any_share:
        return frozenset({NEO})
    classes = set()
    if epo:
        classes.add(EPO)
    if seo:
        classes.add(SEO)
    return frozenset(classes)


def classify_overlap(tuples: Iterable[RelationTuple]) -> frozenset[str]:
    """NEO / EPO / SEO membership; entities compared by surface string."""
    return overlap_classes_from_pairs([(t.e1_text, t.e2_text) for t in tuples])


# ---------------------------------------------------------------------------
# copy mask


def build_copy_mask(tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    """Boolean keep-mask over the word vocabulary for one sentence.

    Keeps the in-vocabulary source tokens, every relation name, both
    separators, UNK, and EOS; everything else (including SOS) is masked.
    """
    keep = np.zeros(vocab.n_words, dtype=bool)
    for tok in tokens:
        wid = vocab.word_to_id.get(tok)
        if wid is not None:
            keep[wid] = True
    for rel in vocab.relations:
        keep[vocab.word_to_id[rel]] = True
    for special in (SEP, TUPLE_SEP, UNK, EOS):
        keep[vocab.word_to_id[special]] = True
    keep[vocab.sos_id] = False
    return keep


# ---------------------------------------------------------------------------
# prediction files: dataset-shaped JSONL, tuples by surface text and/or spans


def write_predictions(path, sentences: Sequence[Sequence[str]],
                      predictions: Sequence[Iterable]) -> None:
    """One line per sentence; tuples carry surface texts, spans when known."""
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, tuples in zip(sentences, predictions):
            recs = []
            for t in tuples:
                if isinstance(t, RelationTuple):
                    recs.append({"e1": list(t.e1_span), "e2": list(t.e2_span),
                                 "e1_text": t.e1_text, "e2_text": t.e2_text,
                                 "rel": t.relation})
                else:
                    e1, e2, rel = t
                    recs.append({"e1_text": e1, "e2_text": e2, "rel": rel})
            recs.sort(key=lambda r: (r["e1_text"], r["e2_text"], r["rel"]))
            fh.write(json.dumps({"tokens": list(tokens), "tuples": recs}) + "\n")


def read_predictions(path) -> tuple[list[tuple[str, ...]], list[frozenset[SurfaceTriple]]]:
    """Read a prediction (or gold dataset) file into surface-triple sets."""
    sentences: list[tuple[str, ...]] = []
    triples: list[frozenset[SurfaceTriple]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                tokens = obj["tokens"]
                out = set()
                for rec in obj.get("tuples", []):
                    if "e1_text" in rec:
                        out.add((rec["e1_text"], rec["e2_text"], rec["rel"]))
                    else:
                        tup = make_tuple(tokens, rec["e1"], rec["e2"], rec["rel"])
                        out.add(tup.surface)
            except (json.JSONDecodeError, KeyError, TypeError, DatasetError) as exc:
                raise DatasetError(f"line {line_no}: {exc}") from exc
            sentences.append(tuple(tokens))
            triples.append(frozenset(out))
    return sentences, triples


# ---------------------------------------------------------------------------
# corpus statistics


def dataset_stats(instances: Sequence[Instance]) -> dict:
    """Relation/sentence/tuple counts, overlap-class counts, tuple histogram."""
    rels: set[str] = set()
    n_tuples = 0
    overlap = {NEO: 0, EPO: 0, SEO: 0}
    histogram = {"1": 0, "2": 0, "3": 0, "4": 0, "5+": 0}
    for inst in instances:
        k = len(inst.tuples)
        n_tuples += k
        for tup in inst.tuples:
            rels.add(tup.relation)
        for cls in classify_overlap(inst.tuples):
            overlap[cls] += 1
        if k:
            histogram["5+" if k >= 5 else str(k)] += 1
    return {
        "relations": len(rels),
        "sentences": len(instances),
        "tuples": n_tuples,
        "overlap": overlap,
        "tuples_per_sentence": histogram,
    }
