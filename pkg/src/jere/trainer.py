"""Training loop, checkpointing, multi-run orchestration, ensembling.

Checkpoint file layout (little-endian):

    magic b"JERE" | version u32 | tensor count u64
    per tensor (sorted by name):
        name length u32 | UTF-8 name | rank u32 | dims u64 each | raw f32 data
    trailer: JSON length u64 | UTF-8 JSON
        {"model_kind", "model_config", "vocab", "vocab_digest", "metadata"}
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

import jere.ndcore as nd
from jere.data import Instance, SurfaceTriple, Vocabulary, as_surface_sets, build_vocab
from jere.encoder import ModelConfig
from jere.evaluation import ScoreReport, as_triple_set, score
from jere.pointer_decoder import PNDecModel
from jere.word_decoder import WDecModel

MODEL_KINDS = ("wdec", "pndec")
CHECKPOINT_MAGIC = b"JERE"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered; carries epoch/batch diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    model: str = "wdec"
    epochs_max: int = 30
    patience: int = 5
    learning_rate: float = 1e-3
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.patience <= self.epochs_max:
            raise ValueError("patience must be in [0, epochs_max]")
        if self.epochs_max < 1:
            raise ValueError("epochs_max must be >= 1")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def build_model(kind: str, cfg: ModelConfig, vocab: Vocabulary,
                rng: np.random.Generator | None = None,
                store: dict | None = None, dtype=np.float32):
    if kind == "wdec":
        return WDecModel(cfg, vocab, rng=rng, store=store, dtype=dtype)
    if kind == "pndec":
        return PNDecModel(cfg, vocab, rng=rng, store=store, dtype=dtype)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    model_kind: str
    model_config: ModelConfig
    vocab: Vocabulary
    metadata: dict = field(default_factory=dict)

    def build(self):
        store = {name: nd.Tensor(arr.copy(), requires_grad=True)
                 for name, arr in self.params.items()}
        return build_model(self.model_kind, self.model_config, self.vocab, store=store)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names = sorted(ckpt.params)
    trailer = json.dumps({
        "model_kind": ckpt.model_kind,
        "model_config": ckpt.model_config.to_json(),
        "vocab": ckpt.vocab.to_json(),
        "vocab_digest": ckpt.vocab.digest(),
        "metadata": ckpt.metadata,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(names)))
        for name in names:
            arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes())
        fh.write(struct.pack("<Q", len(trailer)))
        fh.write(trailer)


def _read_exact(fh, size: int, what: str) -> bytes:
    buf = fh.read(size)
    if len(buf) != size:
        raise CheckpointError(f"truncated {what}")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "header") != CHECKPOINT_MAGIC:
            raise CheckpointError("bad magic: not a checkpoint file")
        version, = struct.unpack("<I", _read_exact(fh, 4, "header"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        count, = struct.unpack("<Q", _read_exact(fh, 8, "header"))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            name_len, = struct.unpack("<I", _read_exact(fh, 4, "tensor name"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            rank, = struct.unpack("<I", _read_exact(fh, 4, f"tensor '{name}'"))
            dims = [struct.unpack("<Q", _read_exact(fh, 8, f"tensor '{name}'"))[0]
                    for _ in range(rank)]
            n_bytes = 4 * int(np.prod(dims, dtype=np.int64)) if dims else 4
            raw = _read_exact(fh, n_bytes, f"tensor '{name}'")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        trailer_len, = struct.unpack("<Q", _read_exact(fh, 8, "trailer"))
        trailer = json.loads(_read_exact(fh, trailer_len, "trailer").decode("utf-8"))
    vocab = Vocabulary.from_json(trailer["vocab"])
    if vocab.digest() != trailer["vocab_digest"]:
        raise CheckpointError("vocabulary digest mismatch: checkpoint is corrupt "
                              "or was edited")
    return Checkpoint(
        params=params,
        model_kind=trailer["model_kind"],
        model_config=ModelConfig.from_json(trailer["model_config"]),
        vocab=vocab,
        metadata=trailer.get("metadata", {}),
    )


def ensure_same_vocab(checkpoints: Sequence[Checkpoint]) -> None:
    digests = {c.vocab.digest() for c in checkpoints}
    if len(digests) > 1:
        raise CheckpointError(
            "vocabulary digest mismatch across checkpoints; these runs were "
            "trained on different vocabularies and cannot be combined")


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[dict]
    model: object

    @property
    def best_f1(self) -> float:
        return self.checkpoint.metadata["val_f1"]


def _gold_surfaces(instances: Sequence[Instance]) -> list[frozenset[SurfaceTriple]]:
    return [frozenset(t.surface for t in inst.tuples) for inst in instances]


def validate(model, instances: Sequence[Instance]) -> ScoreReport:
    preds = [as_triple_set(model.predict(inst.sentence.tokens)[0])
             for inst in instances]
    return score(preds, _gold_surfaces(instances))


def train(train_split: Sequence[Instance], valid_split: Sequence[Instance],
          model_cfg: ModelConfig, train_cfg: TrainConfig,
          vocab: Vocabulary | None = None) -> TrainResult:
    """Adam training with per-epoch validation F1 model selection.

    The best-F1 parameter snapshot is kept; training stops early after
    `patience` non-improving epochs.  A non-finite loss aborts.
    """
    if not train_split or not valid_split:
        raise ValueError("empty train or validation split")
    overlap = set(train_split) & set(valid_split)
    if overlap:
        raise ValueError(f"train/validation splits share {len(overlap)} instance(s)")
    if vocab is None:
        vocab = build_vocab(train_split)
    rng = np.random.default_rng(train_cfg.seed)
    model = build_model(train_cfg.model, model_cfg, vocab, rng=rng)
    adam = nd.AdamState(learning_rate=train_cfg.learning_rate)
    params = model.params

    best_f1 = -1.0
    best_epoch = 0
    best_params: dict[str, np.ndarray] = {n: t.data.copy() for n, t in params.items()}
    metrics: list[dict] = []
    for epoch in range(1, train_cfg.epochs_max + 1):
        order = rng.permutation(len(train_split))
        epoch_loss = 0.0
        n_batches = 0
        for at in range(0, len(order), train_cfg.batch_size):
            batch = [train_split[i] for i in order[at:at + train_cfg.batch_size]]
            nd.zero_grads(params.values())
            with nd.Graph() as graph:
                loss = model.loss(batch, training=True, rng=rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {n_batches} "
                    f"(seed {train_cfg.seed}, lr {train_cfg.learning_rate})")
            nd.backward(graph, loss, params.values())
            nd.adam_step(params, {n: t.grad for n, t in params.items()}, adam)
            epoch_loss += value
            n_batches += 1
        report = validate(model, valid_split)
        row = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(1, n_batches),
            "val_precision": report.precision,
            "val_recall": report.recall,
            "val_f1": report.f1,
            "best": bool(report.f1 > best_f1),
        }
        metrics.append(row)
        if report.f1 > best_f1:
            best_f1 = report.f1
            best_epoch = epoch
            best_params = {n: t.data.copy() for n, t in params.items()}
        elif epoch - best_epoch >= train_cfg.patience:
            break
    ckpt = Checkpoint(
        params=best_params,
        model_kind=train_cfg.model,
        model_config=model_cfg,
        vocab=vocab,
        metadata={"epoch": best_epoch, "val_f1": best_f1, "seed": train_cfg.seed,
                  "train_config": train_cfg.to_json()},
    )
    return TrainResult(checkpoint=ckpt, metrics=metrics, model=ckpt.build())


def _train_run(args) -> tuple[Checkpoint, list[dict]]:
    train_split, valid_split, model_cfg, cfg_json, vocab_json = args
    train_cfg = TrainConfig(**cfg_json)
    vocab = Vocabulary.from_json(vocab_json)
    result = train(train_split, valid_split, model_cfg, train_cfg, vocab)
    return result.checkpoint, result.metrics


def worker_count() -> int:
    """Worker cap from JERE_THREADS (default 1 = sequential)."""
    try:
        return max(1, int(os.environ.get("JERE_THREADS", "1")))
    except ValueError:
        return 1


def train_runs(train_split: Sequence[Instance], valid_split: Sequence[Instance],
               model_cfg: ModelConfig, train_cfg: TrainConfig,
               n_runs: int) -> list[tuple[Checkpoint, list[dict]]]:
    """Independently seeded runs (seed, seed+1, ...) for ensembling.

    Runs execute in parallel processes when JERE_THREADS allows; results
    are ordered by run index either way, so the output is deterministic.
    """
    vocab = build_vocab(train_split)
    jobs = []
    for k in range(n_runs):
        cfg_json = dict(train_cfg.to_json(), seed=train_cfg.seed + k)
        jobs.append((list(train_split), list(valid_split), model_cfg, cfg_json,
                     vocab.to_json()))
    workers = min(worker_count(), n_runs)
    if workers <= 1:
        return [_train_run(job) for job in jobs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_run, jobs))


# ---------------------------------------------------------------------------
# ensembling


def ensemble(run_outputs: Sequence[Sequence[Iterable]], threshold: int = 3,
             ) -> list[frozenset[SurfaceTriple]]:
    """Majority voting: keep tuples appearing in >= threshold of the runs."""
    if not run_outputs:
        raise ValueError("need at least one run")
    lengths = {len(run) for run in run_outputs}
    if len(lengths) != 1:
        raise ValueError(f"runs disagree on sentence count: {sorted(lengths)}")
    out = []
    for per_sentence in zip(*run_outputs):
        counts: dict[SurfaceTriple, int] = {}
        for run_tuples in per_sentence:
            for triple in as_triple_set(run_tuples):
                counts[triple] = counts.get(triple, 0) + 1
        out.append(frozenset(t for t, c in counts.items() if c >= threshold))
    return out
