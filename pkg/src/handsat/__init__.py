"""handsat: joint chatbot-to-human handoff prediction and dialogue
satisfaction estimation, with a self-contained differentiable numeric core."""

from .corpus import (Dialogue, HandoffLabel, Role, SatisfactionLabel,
                     SentimentLabel, Utterance, Vocabulary, build_vocab,
                     load_corpus, save_corpus, split_corpus)
from .metrics import MetricsReport, evaluate_model
from .model import Model, ModelConfig
from .synth import GeneratorSpec, synthesize_corpus
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Dialogue", "HandoffLabel", "Role", "SatisfactionLabel", "SentimentLabel",
    "Utterance", "Vocabulary", "build_vocab", "load_corpus", "save_corpus",
    "split_corpus", "MetricsReport", "evaluate_model", "Model", "ModelConfig",
    "GeneratorSpec", "synthesize_corpus", "TrainConfig", "load_checkpoint",
    "save_checkpoint", "train", "__version__",
]
