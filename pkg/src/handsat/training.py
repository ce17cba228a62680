"""Joint objective, Adam training loop, early stopping, and the checkpoint
container.

The loop is deterministic under a fixed seed: initialization, batch order,
and dropout each draw from their own stream spawned from the seed, and all
per-batch reductions run in a fixed order.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nm
from .corpus import Dialogue, HandoffLabel, SatisfactionLabel, Vocabulary, build_vocab
from .errors import CheckpointError, ConfigError, CorpusError
from .metrics import evaluate_model
from .model import Model, ModelConfig
from .numerics import Tensor

LOG_EPS = 1e-12


@dataclass
class TrainConfig:
    """Model dimensions plus optimization settings; one flat record so a run
    is fully described by one file.

    embed_dim defaults to a desk-scale width; corpora with external word
    vectors conventionally use 200 (set embed_dim to the vector file's
    dimension, which the loader validates)."""
    # model
    embed_dim: int = 32
    hidden_size: int = 32
    dense_size: int = 32
    attention_units: int = 32
    max_dialogue_len: int = 64
    heads: int = 4
    ff_mult: int = 2
    activation: str = "relu"
    interaction_mode: str = "full"
    aggregate_mode: str = "attention"
    dropout: float = 0.2
    # optimization
    eta: float = 0.5            # satisfaction loss weight
    delta: float = 1e-4         # L2 penalty weight
    learning_rate: float = 1.5e-3
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 10
    grad_clip: float = 5.0
    min_freq: int = 1
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.eta < 1.0:
            raise ConfigError("eta must lie in [0, 1)")
        if self.delta < 0.0:
            raise ConfigError("delta must be >= 0")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        for name in ("batch_size", "max_epochs", "patience", "min_freq"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.grad_clip <= 0.0:
            raise ConfigError("grad_clip must be positive")
        if self.aggregate_mode == "voting":
            raise ConfigError(
                "voting aggregation is not differentiable; train with another "
                "mode and select voting at evaluation time")
        # dimension/mode checks are shared with the model config
        self.model_config(vocab_size=2).validate()

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            embed_dim=self.embed_dim,
            hidden_size=self.hidden_size,
            dense_size=self.dense_size,
            attention_units=self.attention_units,
            max_dialogue_len=self.max_dialogue_len,
            heads=self.heads,
            ff_mult=self.ff_mult,
            activation=self.activation,
            interaction_mode=self.interaction_mode,
            aggregate_mode=self.aggregate_mode,
            dropout=self.dropout,
        )

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def handoff_loss(probs: Tensor, golds: Sequence[HandoffLabel]) -> Tensor:
    """Mean per-utterance cross-entropy; log clamped at 1e-12."""
    length = probs.data.shape[0]
    if len(golds) != length:
        raise ConfigError(f"{len(golds)} labels for {length} predictions")
    onehot = np.zeros((length, 2))
    for t, lab in enumerate(golds):
        onehot[t, 1 if lab is HandoffLabel.TRANSFERABLE else 0] = 1.0
    ce = nm.mul(nm.constant(onehot), nm.log_clamped(probs, LOG_EPS))
    return nm.scale(nm.sum_all(ce), -1.0 / length)


def satisfaction_loss(probs: Tensor, gold: SatisfactionLabel) -> Tensor:
    """Dialogue-level cross-entropy; log clamped at 1e-12."""
    onehot = np.zeros(3)
    onehot[gold.index] = 1.0
    ce = nm.mul(nm.constant(onehot), nm.log_clamped(probs, LOG_EPS))
    return nm.scale(nm.sum_all(ce), -1.0)


def regularization(blocks: dict[str, Tensor], delta: float) -> Tensor | None:
    if delta == 0.0:
        return None
    total = None
    for t in blocks.values():
        term = nm.sum_all(nm.square(t))
        total = term if total is None else nm.add(total, term)
    return nm.scale(total, delta)


def joint_loss(l1: Tensor, l2: Tensor, blocks: dict[str, Tensor],
               eta: float, delta: float) -> Tensor:
    """l1 + eta * l2 + delta * sum of squared parameters."""
    loss = nm.add(l1, nm.scale(l2, eta))
    reg = regularization(blocks, delta)
    return loss if reg is None else nm.add(loss, reg)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Standard defaults (beta1 0.9, beta2 0.999, eps 1e-8); missing grads
    count as zero, so untouched blocks stay put."""

    def __init__(self, blocks: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.blocks = blocks
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in blocks.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in blocks.items()}
        self.t = 0

    def clip_grads(self, max_norm: float) -> float:
        total = 0.0
        for t in self.blocks.values():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        norm = total ** 0.5
        if norm > max_norm:
            factor = max_norm / norm
            for t in self.blocks.values():
                if t.grad is not None:
                    t.grad *= factor
        return norm

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, t in self.blocks.items():
            g = t.grad if t.grad is not None else 0.0
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            t.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    vocab: Vocabulary
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_selection: float = float("-inf")
    diverged: bool = False
    message: str = ""


def _selection_metric(report) -> float:
    return report.mhch["macro_f1"] + report.ssa["macro_f1"]


def train(
    train_corpus: Sequence[Dialogue],
    dev_corpus: Sequence[Dialogue],
    config: TrainConfig,
    vocab: Vocabulary | None = None,
    embedding: np.ndarray | None = None,
) -> TrainResult:
    """Mini-batch Adam on the joint objective with per-epoch dev evaluation
    and patience-based early stopping on the summed macro F1 of both tasks.

    Sentiment labels are stripped before anything else touches the data;
    they are evaluation-only.
    """
    config.validate()
    if not train_corpus or not dev_corpus:
        raise CorpusError("training requires non-empty train and dev corpora")
    train_corpus = [d.strip_sentiment() for d in train_corpus]
    dev_corpus = [d.strip_sentiment() for d in dev_corpus]
    over = [d.id for d in (*train_corpus, *dev_corpus)
            if len(d) > config.max_dialogue_len]
    if over:
        raise CorpusError(f"dialogues exceed max_dialogue_len: {over[:10]}")

    if vocab is None:
        vocab = build_vocab(train_corpus, min_freq=config.min_freq)
    init_rng, order_rng, dropout_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)]
    model = Model.build(config.model_config(len(vocab)), init_rng,
                        embedding=embedding)
    encoded = [([vocab.encode(u.tokens) for u in d.utterances], d.roles,
                [u.handoff for u in d.utterances], d.satisfaction)
               for d in train_corpus]

    optimizer = Adam(model.blocks, lr=config.learning_rate)
    result = TrainResult(model=model, vocab=vocab)
    best_snapshot: dict[str, np.ndarray] | None = None
    epochs_since_best = 0

    for epoch in range(config.max_epochs):
        order = order_rng.permutation(len(encoded))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            model.zero_grads()
            batch_total = 0.0
            for idx in batch:
                ids, roles, handoffs, satisfaction = encoded[idx]
                out = model.forward(ids, roles, train=True, rng=dropout_rng)
                l1 = handoff_loss(out.handoff_probs, handoffs)
                l2 = satisfaction_loss(out.satisfaction_probs, satisfaction)
                loss = nm.scale(nm.add(l1, nm.scale(l2, config.eta)),
                                1.0 / len(batch))
                batch_total += loss.item() * len(batch)
                loss.backward()
            reg = regularization(model.blocks, config.delta)
            reg_value = 0.0
            if reg is not None:
                reg_value = reg.item()
                reg.backward()
            batch_loss = batch_total / len(batch) + reg_value
            if not np.isfinite(batch_loss):
                if best_snapshot is not None:
                    _restore(model, best_snapshot)
                result.diverged = True
                result.message = (f"non-finite loss in epoch {epoch}; "
                                  f"restored best checkpoint")
                return result
            epoch_losses.append(batch_loss)
            optimizer.clip_grads(config.grad_clip)
            optimizer.step()

        report, _ = evaluate_model(model, vocab, dev_corpus, sections=("mhch", "ssa"))
        selection = _selection_metric(report)
        result.history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "dev_handoff_macro_f1": report.mhch["macro_f1"],
            "dev_handoff_f1": report.mhch["f1_transferable"],
            "dev_satisfaction_macro_f1": report.ssa["macro_f1"],
            "dev_satisfaction_accuracy": report.ssa["accuracy"],
            "dev_selection": selection,
        })
        if selection > result.best_selection:
            result.best_selection = selection
            result.best_epoch = epoch
            best_snapshot = {k: t.data.copy() for k, t in model.blocks.items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    if best_snapshot is not None:
        _restore(model, best_snapshot)
    return result


def _restore(model: Model, snapshot: dict[str, np.ndarray]) -> None:
    for name, data in snapshot.items():
        model.blocks[name].data = data.copy()


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------
#
# Byte layout (little-endian):
#   magic   4 bytes  b"HSAT"
#   version u32      currently 1
#   meta    u64 length + UTF-8 JSON:
#           {"model_config": {...}, "vocab": [...], "extra": {...}}
#   count   u32      number of parameter blocks
#   per block:
#     name  u32 length + UTF-8
#     dtype u32 length + UTF-8 (numpy dtype string, always "<f8")
#     ndim  u32, then ndim * u64 dims
#     data  raw C-order bytes
#
# Round-trips are bit-exact: values are written as raw float64.

MAGIC = b"HSAT"
FORMAT_VERSION = 1


def save_checkpoint(model: Model, vocab: Vocabulary, path: str | Path,
                    extra: dict | None = None) -> None:
    path = Path(path)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    meta = json.dumps({
        "model_config": model.config.to_json(),
        "vocab": vocab.to_json(),
        "extra": extra or {},
    }, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(model.blocks)))
    for name, tensor in model.blocks.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        arr = np.ascontiguousarray(tensor.data, dtype="<f8")
        dt = arr.dtype.str.encode("ascii")
        buf.write(struct.pack("<I", len(dt)))
        buf.write(dt)
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint truncated")
    return data


def load_checkpoint(path: str | Path,
                    expected: ModelConfig | None = None
                    ) -> tuple[Model, Vocabulary, dict]:
    """Rebuild the model from a container; shapes are validated block by
    block. A caller-supplied expected config must match the stored one's
    shapes exactly (the first offending block is named)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"{path} is not a handsat checkpoint "
                                  "(bad magic bytes)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        try:
            meta = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
            config = ModelConfig.from_json(meta["model_config"])
            vocab = Vocabulary.from_json(meta["vocab"])
            extra = meta.get("extra", {})
        except (KeyError, ValueError, ConfigError) as e:
            raise CheckpointError(f"invalid checkpoint metadata: {e}") from None
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        stored: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (dt_len,) = struct.unpack("<I", _read_exact(fh, 4))
            dtype = np.dtype(_read_exact(fh, dt_len).decode("ascii"))
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0]
                          for _ in range(ndim))
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            stored[name] = np.frombuffer(_read_exact(fh, nbytes),
                                         dtype=dtype).reshape(shape).copy()

    model = Model.build(config, np.random.default_rng(0))
    missing = set(model.blocks) - set(stored)
    surplus = set(stored) - set(model.blocks)
    if missing or surplus:
        raise CheckpointError(
            f"block mismatch: missing {sorted(missing)}, surplus {sorted(surplus)}")
    for name, tensor in model.blocks.items():
        if stored[name].shape != tensor.data.shape:
            raise CheckpointError(
                f"block {name!r}: stored shape {stored[name].shape} != "
                f"configured {tensor.data.shape}")
        tensor.data = stored[name]
    if expected is not None:
        reference = Model.build(expected, np.random.default_rng(0))
        for name, tensor in reference.blocks.items():
            if name not in model.blocks or \
                    model.blocks[name].data.shape != tensor.data.shape:
                raise CheckpointError(
                    f"block {name!r} does not match the requested configuration")
    return model, vocab, extra
