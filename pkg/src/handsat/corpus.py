"""Dialogue data model, JSONL ingestion, statistics, splitting, vocabulary,
and external embedding loading.

File schema (one dialogue per line, UTF-8 JSON):

    {"id": "...",
     "satisfaction": "well_satisfied" | "met" | "unsatisfied",
     "utterances": [
        {"role": "customer" | "agent",
         "tokens": ["...", ...],
         "handoff": "normal" | "transferable",
         "sentiment": "positive" | "neutral" | "negative"}]}

"sentiment" is optional, allowed on customer utterances only, and is never
read by any training path. Tokens must arrive pre-segmented; splitting raw
text is out of scope here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, CorpusError
from .numerics import glorot_uniform


class Role(str, Enum):
    CUSTOMER = "customer"
    AGENT = "agent"


class HandoffLabel(str, Enum):
    NORMAL = "normal"
    TRANSFERABLE = "transferable"


class SatisfactionLabel(str, Enum):
    """Dialogue-level rating; index order is fixed everywhere."""
    WELL_SATISFIED = "well_satisfied"
    MET = "met"
    UNSATISFIED = "unsatisfied"

    @property
    def index(self) -> int:
        return _SATISFACTION_ORDER.index(self)


_SATISFACTION_ORDER = (SatisfactionLabel.WELL_SATISFIED, SatisfactionLabel.MET,
                       SatisfactionLabel.UNSATISFIED)
SATISFACTION_CLASSES = _SATISFACTION_ORDER
NUM_SATISFACTION = 3
NUM_HANDOFF = 2


class SentimentLabel(str, Enum):
    """Evaluation-only utterance label; never used in training."""
    POSITIVE = "positive"
    NEUTRAL = "neutral"
    NEGATIVE = "negative"


SENTIMENT_CLASSES = (SentimentLabel.POSITIVE, SentimentLabel.NEUTRAL,
                     SentimentLabel.NEGATIVE)

# satisfaction index -> sentiment polarity used by the mapping evaluation
SATISFACTION_TO_SENTIMENT = {
    SatisfactionLabel.WELL_SATISFIED: SentimentLabel.POSITIVE,
    SatisfactionLabel.MET: SentimentLabel.NEUTRAL,
    SatisfactionLabel.UNSATISFIED: SentimentLabel.NEGATIVE,
}


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]
    role: Role
    handoff: HandoffLabel | None = None
    sentiment: SentimentLabel | None = None

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise CorpusError("utterance with empty token sequence")
        if self.sentiment is not None and self.role is not Role.CUSTOMER:
            raise CorpusError("sentiment label on a non-customer utterance")


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: tuple[Utterance, ...]
    satisfaction: SatisfactionLabel

    def __post_init__(self):
        if len(self.utterances) == 0:
            raise CorpusError(f"dialogue {self.id!r} has no utterances")

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def roles(self) -> list[Role]:
        return [u.role for u in self.utterances]

    def strip_sentiment(self) -> "Dialogue":
        return replace(self, utterances=tuple(
            replace(u, sentiment=None) for u in self.utterances))


def _parse_enum(cls, raw, what: str, line_no: int | None = None):
    try:
        return cls(raw)
    except ValueError:
        where = f" (line {line_no})" if line_no is not None else ""
        valid = ", ".join(m.value for m in cls)
        raise CorpusError(f"unknown {what} {raw!r}{where}; expected one of: {valid}")


def parse_utterance(obj: dict, line_no: int | None = None,
                    require_handoff: bool = True) -> Utterance:
    if not isinstance(obj, dict):
        raise CorpusError(f"utterance record is not an object (line {line_no})")
    role = _parse_enum(Role, obj.get("role"), "role", line_no)
    tokens = obj.get("tokens")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens) \
            or len(tokens) == 0:
        raise CorpusError(f"utterance tokens must be a non-empty list of strings"
                          f" (line {line_no})")
    handoff = obj.get("handoff")
    if handoff is None:
        if require_handoff:
            raise CorpusError(f"missing handoff label (line {line_no})")
    else:
        handoff = _parse_enum(HandoffLabel, handoff, "handoff label", line_no)
    sentiment = obj.get("sentiment")
    if sentiment is not None:
        sentiment = _parse_enum(SentimentLabel, sentiment, "sentiment label", line_no)
    try:
        return Utterance(tokens=tuple(tokens), role=role, handoff=handoff,
                         sentiment=sentiment)
    except CorpusError as e:
        raise CorpusError(f"{e} (line {line_no})") from None


def parse_dialogue(obj: dict, line_no: int | None = None) -> Dialogue:
    if not isinstance(obj, dict):
        raise CorpusError(f"dialogue record is not an object (line {line_no})")
    did = obj.get("id")
    if not isinstance(did, str) or not did:
        raise CorpusError(f"missing or invalid dialogue id (line {line_no})")
    if "satisfaction" not in obj or obj["satisfaction"] is None:
        raise CorpusError(f"dialogue {did!r} missing satisfaction (line {line_no})")
    satisfaction = _parse_enum(SatisfactionLabel, obj["satisfaction"],
                               "satisfaction label", line_no)
    utts = obj.get("utterances")
    if not isinstance(utts, list) or len(utts) == 0:
        raise CorpusError(f"dialogue {did!r} has no utterances (line {line_no})")
    utterances = tuple(parse_utterance(u, line_no) for u in utts)
    return Dialogue(id=did, utterances=utterances, satisfaction=satisfaction)


def dialogue_to_json(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "satisfaction": d.satisfaction.value,
        "utterances": [
            {k: v for k, v in (
                ("role", u.role.value),
                ("tokens", list(u.tokens)),
                ("handoff", u.handoff.value if u.handoff else None),
                ("sentiment", u.sentiment.value if u.sentiment else None),
            ) if v is not None}
            for u in d.utterances
        ],
    }


def load_corpus(path: str | Path, max_dialogue_len: int) -> list[Dialogue]:
    """Parse a JSONL corpus. Over-length dialogues are rejected (not silently
    truncated: truncation would corrupt the dialogue-level supervision)."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    dialogues: list[Dialogue] = []
    too_long: list[str] = []
    no_customer: list[str] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"malformed JSON on line {line_no}: {e.msg}")
            d = parse_dialogue(obj, line_no)
            if d.id in seen_ids:
                raise CorpusError(f"duplicate dialogue id {d.id!r} (line {line_no})")
            seen_ids.add(d.id)
            if len(d) > max_dialogue_len:
                too_long.append(d.id)
                continue
            if not any(u.role is Role.CUSTOMER for u in d.utterances):
                no_customer.append(d.id)
                continue
            dialogues.append(d)
    if too_long:
        raise CorpusError(
            f"{len(too_long)} dialogue(s) exceed max length {max_dialogue_len}: "
            + ", ".join(too_long[:20]))
    if no_customer:
        raise CorpusError(
            f"{len(no_customer)} dialogue(s) have no customer utterance (the "
            f"satisfaction estimate is undefined for them): "
            + ", ".join(no_customer[:20]))
    return dialogues


def save_corpus(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_json(d), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass
class CorpusStats:
    num_dialogues: int
    satisfaction_counts: dict[str, int]
    handoff_counts: dict[str, int]
    mean_utterances_per_dialogue: float
    mean_tokens_per_utterance: float

    def to_json(self) -> dict:
        return {
            "num_dialogues": self.num_dialogues,
            "satisfaction_counts": self.satisfaction_counts,
            "handoff_counts": self.handoff_counts,
            "mean_utterances_per_dialogue": self.mean_utterances_per_dialogue,
            "mean_tokens_per_utterance": self.mean_tokens_per_utterance,
        }


def corpus_stats(corpus: Sequence[Dialogue]) -> CorpusStats:
    if len(corpus) == 0:
        raise CorpusError("cannot compute statistics of an empty corpus")
    sat = {label.value: 0 for label in SatisfactionLabel}
    hand = {label.value: 0 for label in HandoffLabel}
    n_utts = 0
    n_tokens = 0
    for d in corpus:
        sat[d.satisfaction.value] += 1
        n_utts += len(d)
        for u in d.utterances:
            n_tokens += len(u.tokens)
            if u.handoff is not None:
                hand[u.handoff.value] += 1
    return CorpusStats(
        num_dialogues=len(corpus),
        satisfaction_counts=sat,
        handoff_counts=hand,
        mean_utterances_per_dialogue=round(n_utts / len(corpus), 2),
        mean_tokens_per_utterance=round(n_tokens / n_utts, 2),
    )


def handoff_position_hist(corpus: Sequence[Dialogue], bins: int) -> dict[str, list[float]]:
    """Per-rating normalized histogram of relative positions t/L of
    transferable utterances. Ratings with no transfers get all-zero bins."""
    if bins < 1:
        raise ContractError("bins must be >= 1")
    counts = {label.value: np.zeros(bins) for label in SatisfactionLabel}
    for d in corpus:
        length = len(d)
        for t, u in enumerate(d.utterances, start=1):
            if u.handoff is HandoffLabel.TRANSFERABLE:
                rel = t / length
                b = min(int(rel * bins), bins - 1)
                counts[d.satisfaction.value][b] += 1
    out = {}
    for key, arr in counts.items():
        total = arr.sum()
        out[key] = (arr / total if total > 0 else arr).tolist()
    return out


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_corpus(
    corpus: Sequence[Dialogue],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[Dialogue], list[Dialogue], list[Dialogue]]:
    """Deterministic shuffled partition; floor-sized dev/test, remainder to
    train."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios {ratios} do not sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    n = len(corpus)
    n_dev = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    n_train = n - n_dev - n_test
    shuffled = [corpus[i] for i in order]
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_dev],
            shuffled[n_train + n_dev:])


# ---------------------------------------------------------------------------
# vocabulary and embeddings
# ---------------------------------------------------------------------------

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1


@dataclass
class Vocabulary:
    token_to_index: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.token_to_index)

    def lookup(self, token: str) -> int:
        return self.token_to_index.get(token, UNK_INDEX)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def to_json(self) -> dict:
        return {"tokens": sorted(self.token_to_index, key=self.token_to_index.get)}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls({tok: i for i, tok in enumerate(obj["tokens"])})


def build_vocab(train: Sequence[Dialogue], min_freq: int = 1) -> Vocabulary:
    """Index tokens seen >= min_freq times in the training split only."""
    if len(train) == 0:
        raise CorpusError("cannot build a vocabulary from an empty training set")
    freq: dict[str, int] = {}
    for d in train:
        for u in d.utterances:
            for tok in u.tokens:
                freq[tok] = freq.get(tok, 0) + 1
    mapping = {PAD_TOKEN: PAD_INDEX, UNK_TOKEN: UNK_INDEX}
    for tok in sorted(freq):
        if freq[tok] >= min_freq and tok not in mapping:
            mapping[tok] = len(mapping)
    return Vocabulary(mapping)


@dataclass
class EmbeddingLoad:
    table: np.ndarray  # (|V|, n); padding row zero
    coverage: float    # fraction of vocabulary rows found in the file


def init_embeddings(vocab: Vocabulary, dim: int, rng: np.random.Generator) -> np.ndarray:
    table = glorot_uniform((len(vocab), dim), rng)
    table[PAD_INDEX] = 0.0
    return table


def load_embeddings(path: str | Path, vocab: Vocabulary, dim: int,
                    rng: np.random.Generator | None = None) -> EmbeddingLoad:
    """Read word2vec text format ("count dim" header then "token v1 .. vn"
    lines); vocabulary tokens not in the file are random-initialized."""
    rng = rng or np.random.default_rng(0)
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"embedding file not found: {path}")
    table = init_embeddings(vocab, dim, rng)
    covered = 0
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(p.isdigit() for p in header):
            raise CorpusError("embedding file missing 'count dim' header")
        file_dim = int(header[1])
        if file_dim != dim:
            raise CorpusError(
                f"embedding dimension {file_dim} does not match configured {dim}")
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise CorpusError(f"malformed embedding line {line_no}")
            tok = parts[0]
            idx = vocab.token_to_index.get(tok)
            if idx is not None and idx not in (PAD_INDEX,):
                table[idx] = [float(v) for v in parts[1:]]
                covered += 1
    table[PAD_INDEX] = 0.0
    denom = max(len(vocab) - 2, 1)  # pad/unk are not expected in files
    return EmbeddingLoad(table=table, coverage=covered / denom)
