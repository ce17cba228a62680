"""Command-line surface.

Machine-readable results go to stdout as JSON / JSON lines; human-readable
progress goes to stderr, so pipelines can consume the output directly.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .corpus import (Role, Utterance, corpus_stats, handoff_position_hist,
                     load_corpus, load_embeddings, parse_utterance, save_corpus)
from .errors import (CheckpointError, ConfigError, ContractError, CorpusError,
                     HandsatError, UnimplementedParameterError)
from .metrics import SECTIONS, evaluate_model
from .model import Model
from .synth import GeneratorSpec, load_generator_spec, synthesize_corpus
from .training import (TrainConfig, handoff_loss, joint_loss, load_checkpoint,
                       satisfaction_loss, save_checkpoint, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj: dict) -> None:
    print(json.dumps(obj), flush=True)


@dataclass
class RunConfig:
    train: TrainConfig
    train_corpus: str
    dev_corpus: str
    test_corpus: str | None = None
    embeddings: str | None = None
    checkpoint_dir: str = "runs"

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e.msg}")
        unknown = set(obj) - {"train", "paths"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        train_cfg = TrainConfig.from_json(obj.get("train", {}))
        paths = obj.get("paths", {})
        known_paths = {"train_corpus", "dev_corpus", "test_corpus",
                       "embeddings", "checkpoint_dir"}
        unknown = set(paths) - known_paths
        if unknown:
            raise ConfigError(f"unknown path keys: {sorted(unknown)}")
        for need in ("train_corpus", "dev_corpus"):
            if need not in paths:
                raise ConfigError(f"paths.{need} is required")
        return cls(train=train_cfg, **paths)

    def to_json(self) -> dict:
        return {"train": self.train.to_json(),
                "paths": {k: v for k, v in (
                    ("train_corpus", self.train_corpus),
                    ("dev_corpus", self.dev_corpus),
                    ("test_corpus", self.test_corpus),
                    ("embeddings", self.embeddings),
                    ("checkpoint_dir", self.checkpoint_dir)) if v is not None}}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    _log("resolved config: " + json.dumps(run.to_json(), sort_keys=True))
    cfg = run.train
    train_set = load_corpus(run.train_corpus, cfg.max_dialogue_len)
    dev_set = load_corpus(run.dev_corpus, cfg.max_dialogue_len)

    vocab = None
    embedding = None
    if run.embeddings:
        from .corpus import build_vocab
        vocab = build_vocab([d.strip_sentiment() for d in train_set],
                            min_freq=cfg.min_freq)
        loaded = load_embeddings(run.embeddings, vocab, cfg.embed_dim,
                                 rng=np.random.default_rng(cfg.seed))
        embedding = loaded.table
        _log(f"embedding coverage: {loaded.coverage:.3f}")

    result = train(train_set, dev_set, cfg, vocab=vocab, embedding=embedding)
    for line in result.history:
        _emit(line)

    ckpt_dir = Path(run.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = ckpt_dir / "model.ckpt"
    save_checkpoint(result.model, result.vocab, ckpt_path,
                    extra={"train_config": cfg.to_json(),
                           "best_epoch": result.best_epoch})
    history_path = ckpt_dir / "history.jsonl"
    with history_path.open("w", encoding="utf-8") as fh:
        for line in result.history:
            fh.write(json.dumps(line) + "\n")
    _log(f"checkpoint written to {ckpt_path}")
    if result.diverged:
        _log(f"training diverged: {result.message}")
        return EXIT_NUMERIC
    _log(f"best epoch {result.best_epoch} "
         f"(selection {result.best_selection:.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    sections = tuple(s.strip() for s in args.sections.split(",") if s.strip())
    for s in sections:
        if s not in SECTIONS:
            raise ConfigError(f"unknown section {s!r}; choose from {SECTIONS}")
    model, vocab, _ = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus, model.config.max_dialogue_len)
    report, per_dialogue = evaluate_model(model, vocab, corpus,
                                          sections=sections,
                                          aggregate=args.aggregate)
    _emit(report.to_json())
    if args.per_dialogue:
        with open(args.per_dialogue, "w", encoding="utf-8") as fh:
            for row in per_dialogue:
                fh.write(json.dumps(row) + "\n")
        _log(f"per-dialogue breakdown written to {args.per_dialogue}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, vocab, _ = load_checkpoint(args.checkpoint)
    stream = open(args.input, "r", encoding="utf-8") if args.input else sys.stdin
    utterances: list[Utterance] = []
    try:
        for line_no, line in enumerate(stream, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"malformed utterance on line {line_no}: {e.msg}")
            utterances.append(parse_utterance(obj, line_no, require_handoff=False))
            if len(utterances) > model.config.max_dialogue_len:
                raise CorpusError(
                    f"stream exceeds max dialogue length "
                    f"{model.config.max_dialogue_len}")
            ids = [vocab.encode(u.tokens) for u in utterances]
            roles = [u.role for u in utterances]
            out = model.forward(ids, roles, require_customer=False)
            has_customer = any(r is Role.CUSTOMER for r in roles)
            _emit({
                "position": len(utterances),
                "handoff_probs": out.handoff_probs.data[-1].tolist(),
                "satisfaction_estimate": (out.satisfaction_probs.data.tolist()
                                          if has_customer else None),
            })
    finally:
        if args.input:
            stream.close()
    if not utterances:
        return EXIT_OK
    roles = [u.role for u in utterances]
    if not any(r is Role.CUSTOMER for r in roles):
        raise CorpusError("stream contained no customer utterance; "
                          "satisfaction is undefined")
    ids = [vocab.encode(u.tokens) for u in utterances]
    out = model.forward(ids, roles)
    trace = out.trace(roles, model.config.interaction_mode,
                      model.config.aggregate_mode)
    _emit({"satisfaction_probs": out.satisfaction_probs.data.tolist(),
           "trace": trace.to_json()})
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = load_generator_spec(args.spec) if args.spec else GeneratorSpec()
    dialogues, report = synthesize_corpus(spec, seed=args.seed)
    save_corpus(dialogues, args.out)
    _log(f"wrote {len(dialogues)} dialogues to {args.out}")
    _emit(report.to_json())
    return EXIT_OK


def cmd_stats(args) -> int:
    corpus = load_corpus(args.corpus, max_dialogue_len=args.max_len)
    stats = corpus_stats(corpus)
    hist = handoff_position_hist(corpus, bins=args.bins)
    _emit({"stats": stats.to_json(), "handoff_position_hist": hist})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    """Full-model gradient fidelity check on a tiny synthetic batch
    (double precision, dropout off)."""
    spec = GeneratorSpec(num_dialogues=args.dialogues, min_len=3,
                         max_len=args.max_len, complaint_rate=0.4)
    dialogues, _ = synthesize_corpus(spec, seed=args.seed)
    from .corpus import build_vocab
    vocab = build_vocab(dialogues)
    cfg = TrainConfig(embed_dim=args.size, hidden_size=args.size,
                      dense_size=args.size, attention_units=args.size,
                      max_dialogue_len=args.max_len, heads=2, dropout=0.1,
                      batch_size=2, seed=args.seed)
    model = Model.build(cfg.model_config(len(vocab)),
                        np.random.default_rng(args.seed))
    encoded = [([vocab.encode(u.tokens) for u in d.utterances], d.roles,
                [u.handoff for u in d.utterances], d.satisfaction)
               for d in dialogues]

    def loss():
        total = None
        for ids, roles, handoffs, satisfaction in encoded:
            out = model.forward(ids, roles, train=False)
            piece = nm.scale(
                nm.add(handoff_loss(out.handoff_probs, handoffs),
                       nm.scale(satisfaction_loss(out.satisfaction_probs,
                                                  satisfaction), cfg.eta)),
                1.0 / len(encoded))
            total = piece if total is None else nm.add(total, piece)
        return joint_loss(total, nm.constant(np.array(0.0)), model.blocks,
                          eta=0.0, delta=cfg.delta)

    report = nm.grad_check(loss, model.blocks, eps=1e-5, tol=args.tol,
                           samples_per_block=args.samples,
                           rng=np.random.default_rng(args.seed))
    _emit(report.to_json())
    if report.aborted:
        _log(f"gradient check aborted: {report.message}")
        return EXIT_NUMERIC
    _log(f"max relative error {report.max_rel_error:.3e} "
         f"({'PASS' if report.passed else 'FAIL'} at tol {args.tol:g})")
    return EXIT_OK if report.passed else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handsat",
        description="Joint chatbot-to-human handoff prediction and dialogue "
                    "satisfaction estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config file")
    p.add_argument("config", help="JSON run config (train settings + paths)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled corpus")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("--sections", default="mhch,ssa",
                   help="comma list from: mhch,ssa,sentiment")
    p.add_argument("--aggregate", default=None,
                   choices=["attention", "average", "voting", "last"],
                   help="override the satisfaction aggregation mode")
    p.add_argument("--per-dialogue", default=None,
                   help="optional path for the per-dialogue JSONL breakdown")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict",
                       help="stream utterances (JSON per line) through a model")
    p.add_argument("checkpoint")
    p.add_argument("--input", default=None,
                   help="utterance JSONL file (default: stdin)")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("synth", help="generate a planted-rule synthetic corpus")
    p.add_argument("out", help="output corpus path (JSONL)")
    p.add_argument("--spec", default=None, help="generator spec JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("stats", help="corpus statistics and handoff position "
                                     "histograms per rating")
    p.add_argument("corpus")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--max-len", type=int, default=512)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("gradcheck",
                       help="verify model gradients against finite differences")
    p.add_argument("--size", type=int, default=8,
                   help="hidden/dense/attention width")
    p.add_argument("--dialogues", type=int, default=2)
    p.add_argument("--max-len", type=int, default=6)
    p.add_argument("--samples", type=int, default=8,
                   help="sampled entries per parameter block")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractError, UnimplementedParameterError) as e:
        _log(f"config error: {e}")
        return EXIT_CONFIG
    except (CorpusError, CheckpointError) as e:
        _log(f"data error: {e}")
        return EXIT_DATA
    except HandsatError as e:
        _log(f"error: {e}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
