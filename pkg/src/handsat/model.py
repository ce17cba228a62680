"""Full model: configuration, parameter construction, forward pass, trace.

Parameter blocks are registered once under stable dotted names; the flat
name -> tensor mapping is what the optimizer, the checkpoint container, and
the gradient checker all operate on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nm
from .corpus import Dialogue, Role, Vocabulary
from .decoders import (AGGREGATE_MODES, HandoffDecoderParams,
                       SatisfactionDecoderParams, TransformerParams,
                       aggregate_variant, decode_handoff, decode_satisfaction)
from .encoder import EncoderParams, shared_encode
from .errors import ConfigError, ContractError
from .interaction import INTERACTION_MODES, InteractionParams, interact
from .numerics import LstmParams, Tensor


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 200          # word embedding width
    hidden_size: int = 64         # LSTM hidden units (k)
    dense_size: int = 64          # task projection width (d)
    attention_units: int = 64     # importance scorer width (z)
    max_dialogue_len: int = 64
    heads: int = 4                # transformer heads
    ff_mult: int = 2              # transformer feed-forward width = ff_mult * k
    activation: str = "relu"
    interaction_mode: str = "full"
    aggregate_mode: str = "attention"
    layer_norm_eps: float = 1e-5
    dropout: float = 0.1

    def validate(self) -> None:
        for name in ("vocab_size", "embed_dim", "hidden_size", "dense_size",
                     "attention_units", "max_dialogue_len", "heads", "ff_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must cover padding and unknown tokens")
        if self.hidden_size % self.heads != 0:
            raise ConfigError("hidden_size must be divisible by heads")
        if self.activation not in ("relu", "tanh", "linear"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.interaction_mode not in INTERACTION_MODES:
            raise ConfigError(f"unknown interaction mode {self.interaction_mode!r}")
        if self.aggregate_mode not in AGGREGATE_MODES:
            raise ConfigError(f"unknown aggregation mode {self.aggregate_mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        unknown = set(obj) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg


@dataclass
class ForwardResult:
    """Everything one dialogue's forward pass produced, still on the tape."""
    handoff_probs: Tensor         # (L, 2)
    satisfaction_probs: Tensor    # (3,)
    local_satisfaction: Tensor    # (L, 3)
    importance: Tensor            # (L,)
    attn_sat_to_handoff: Tensor   # (L, L)
    attn_handoff_to_sat: Tensor   # (L, L)
    position_weights: np.ndarray  # (L, L)
    handoff_view: Tensor
    satisfaction_view: Tensor
    handoff_fused: Tensor
    satisfaction_fused: Tensor
    shared: Tensor

    def trace(self, roles: Sequence[Role], interaction_mode: str,
              aggregate_mode: str) -> "ForwardTrace":
        return ForwardTrace(
            roles=[r.value for r in roles],
            interaction_mode=interaction_mode,
            aggregate_mode=aggregate_mode,
            handoff_probs=self.handoff_probs.data.copy(),
            satisfaction_probs=self.satisfaction_probs.data.copy(),
            local_satisfaction=self.local_satisfaction.data.copy(),
            importance=self.importance.data.copy(),
            attn_sat_to_handoff=self.attn_sat_to_handoff.data.copy(),
            attn_handoff_to_sat=self.attn_handoff_to_sat.data.copy(),
            position_weights=self.position_weights.copy(),
        )


@dataclass
class ForwardTrace:
    """Numpy snapshot of a forward pass, serializable for inspection."""
    roles: list[str]
    interaction_mode: str
    aggregate_mode: str
    handoff_probs: np.ndarray
    satisfaction_probs: np.ndarray
    local_satisfaction: np.ndarray
    importance: np.ndarray
    attn_sat_to_handoff: np.ndarray
    attn_handoff_to_sat: np.ndarray
    position_weights: np.ndarray

    def to_json(self) -> dict:
        return {
            "roles": self.roles,
            "interaction_mode": self.interaction_mode,
            "aggregate_mode": self.aggregate_mode,
            "handoff_probs": self.handoff_probs.tolist(),
            "satisfaction_probs": self.satisfaction_probs.tolist(),
            "local_satisfaction": self.local_satisfaction.tolist(),
            "importance": self.importance.tolist(),
            "attn_sat_to_handoff": self.attn_sat_to_handoff.tolist(),
            "attn_handoff_to_sat": self.attn_handoff_to_sat.tolist(),
            "position_weights": self.position_weights.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ForwardTrace":
        return cls(
            roles=list(obj["roles"]),
            interaction_mode=obj["interaction_mode"],
            aggregate_mode=obj["aggregate_mode"],
            handoff_probs=np.asarray(obj["handoff_probs"]),
            satisfaction_probs=np.asarray(obj["satisfaction_probs"]),
            local_satisfaction=np.asarray(obj["local_satisfaction"]),
            importance=np.asarray(obj["importance"]),
            attn_sat_to_handoff=np.asarray(obj["attn_sat_to_handoff"]),
            attn_handoff_to_sat=np.asarray(obj["attn_handoff_to_sat"]),
            position_weights=np.asarray(obj["position_weights"]),
        )


class Model:
    """Parameter container plus the forward pass."""

    def __init__(self, config: ModelConfig, encoder: EncoderParams,
                 interaction_params: InteractionParams,
                 handoff_decoder: HandoffDecoderParams,
                 satisfaction_decoder: SatisfactionDecoderParams):
        config.validate()
        self.config = config
        self.encoder = encoder
        self.interaction = interaction_params
        self.handoff_decoder = handoff_decoder
        self.satisfaction_decoder = satisfaction_decoder
        self.blocks: dict[str, Tensor] = {}
        self._register_all()

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, config: ModelConfig, rng: np.random.Generator,
              embedding: np.ndarray | None = None) -> "Model":
        """Glorot-uniform weights, zero biases, unit layer-norm gains. An
        explicit embedding table (e.g. externally loaded vectors) overrides
        the random one; its padding row must be zero."""
        config.validate()
        n, k, d, z = (config.embed_dim, config.hidden_size, config.dense_size,
                      config.attention_units)
        shared_width = config.max_dialogue_len + 2 * k
        ff = config.ff_mult * k

        def w(shape):
            return nm.parameter(nm.glorot_uniform(shape, rng))

        def b(size):
            return nm.parameter(np.zeros(size))

        def lstm(input_size, hidden):
            return LstmParams(w=w((4 * hidden, input_size)),
                              u=w((4 * hidden, hidden)), b=b(4 * hidden))

        if embedding is None:
            table = nm.glorot_uniform((config.vocab_size, n), rng)
            table[0] = 0.0
        else:
            table = np.asarray(embedding, dtype=np.float64)
            if table.shape != (config.vocab_size, n):
                raise ConfigError(
                    f"embedding shape {table.shape} != {(config.vocab_size, n)}")

        encoder = EncoderParams(embedding=nm.parameter(table),
                                fwd=lstm(n, k), bwd=lstm(n, k))
        inter = InteractionParams(
            handoff_w=w((d, shared_width)), handoff_b=b(d),
            satisfaction_w=w((d, shared_width)), satisfaction_b=b(d),
            fusion_w=w((d, 2 * d)), fusion_b=b(d),
            norm_gain=nm.parameter(np.ones(d)), norm_bias=b(d),
        )
        handoff_dec = HandoffDecoderParams(cell=lstm(d, k), out_w=w((2, k)),
                                           out_b=b(2))
        trans = TransformerParams(
            wq=w((k, k)), bq=b(k), wk=w((k, k)),
            wv=w((k, k)), bv=b(k), wo=w((k, k)), bo=b(k),
            ff1_w=w((ff, k)), ff1_b=b(ff), ff2_w=w((k, ff)), ff2_b=b(k),
            ln1_gain=nm.parameter(np.ones(k)), ln1_bias=b(k),
            ln2_gain=nm.parameter(np.ones(k)), ln2_bias=b(k),
        )
        sat_dec = SatisfactionDecoderParams(
            proj_w=w((k, d)), proj_b=b(k), transformer=trans,
            local_w=w((3, k)), local_b=b(3),
            attn_w=w((z, k)), attn_b=b(z), query=w((z,)),
        )
        return cls(config, encoder, inter, handoff_dec, sat_dec)

    def _register_all(self) -> None:
        reg = self.blocks

        def put(name: str, t: Tensor) -> None:
            if name in reg:
                raise ContractError(f"duplicate parameter block {name!r}")
            reg[name] = t

        put("embedding", self.encoder.embedding)
        for tag, cell in (("enc.fwd", self.encoder.fwd),
                          ("enc.bwd", self.encoder.bwd),
                          ("dec_h.cell", self.handoff_decoder.cell)):
            put(f"{tag}.w", cell.w)
            put(f"{tag}.u", cell.u)
            put(f"{tag}.b", cell.b)
        for name in ("handoff_w", "handoff_b", "satisfaction_w", "satisfaction_b",
                     "fusion_w", "fusion_b", "norm_gain", "norm_bias"):
            put(f"inter.{name}", getattr(self.interaction, name))
        put("dec_h.out_w", self.handoff_decoder.out_w)
        put("dec_h.out_b", self.handoff_decoder.out_b)
        sd = self.satisfaction_decoder
        for name in ("proj_w", "proj_b", "local_w", "local_b", "attn_w", "attn_b",
                     "query"):
            put(f"dec_s.{name}", getattr(sd, name))
        for name in ("wq", "bq", "wk", "wv", "bv", "wo", "bo",
                     "ff1_w", "ff1_b", "ff2_w", "ff2_b",
                     "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            put(f"dec_s.tf.{name}", getattr(sd.transformer, name))

    def zero_grads(self) -> None:
        for t in self.blocks.values():
            t.grad = None

    # -- forward -----------------------------------------------------------

    def forward(self, token_ids: list[list[int]], roles: Sequence[Role],
                train: bool = False,
                rng: np.random.Generator | None = None,
                require_customer: bool = True) -> ForwardResult:
        """Run one dialogue. token_ids holds one vocabulary-encoded id list
        per utterance. Dropout fires only when train=True. With
        require_customer=False a customer-free (prefix) dialogue yields an
        all-zero satisfaction distribution instead of an error."""
        cfg = self.config
        if len(token_ids) != len(roles):
            raise ContractError("token_ids and roles length mismatch")
        if len(token_ids) == 0:
            raise ContractError("cannot run an empty dialogue")
        is_customer = np.array([r is Role.CUSTOMER for r in roles], dtype=bool)
        dropout = cfg.dropout if train else 0.0

        shared = shared_encode(token_ids, self.encoder, cfg.max_dialogue_len,
                               dropout=dropout, rng=rng)
        inter = interact(shared.features, is_customer, self.interaction,
                         mode=cfg.interaction_mode, activation=cfg.activation,
                         eps=cfg.layer_norm_eps)
        handoff_probs = decode_handoff(inter.handoff_fused, self.handoff_decoder)
        overall, local, importance = decode_satisfaction(
            inter.satisfaction_fused, is_customer, self.satisfaction_decoder,
            heads=cfg.heads, eps=cfg.layer_norm_eps,
            allow_no_customer=not require_customer)
        if cfg.aggregate_mode != "attention" and is_customer.any():
            overall = aggregate_variant(local, is_customer, cfg.aggregate_mode,
                                        importance=importance)
        return ForwardResult(
            handoff_probs=handoff_probs,
            satisfaction_probs=overall,
            local_satisfaction=local,
            importance=importance,
            attn_sat_to_handoff=inter.attn_sat_to_handoff,
            attn_handoff_to_sat=inter.attn_handoff_to_sat,
            position_weights=inter.position_weights,
            handoff_view=inter.handoff_view,
            satisfaction_view=inter.satisfaction_view,
            handoff_fused=inter.handoff_fused,
            satisfaction_fused=inter.satisfaction_fused,
            shared=shared.features,
        )

    def forward_dialogue(self, dialogue: Dialogue, vocab: Vocabulary,
                         train: bool = False,
                         rng: np.random.Generator | None = None) -> ForwardResult:
        ids = [vocab.encode(u.tokens) for u in dialogue.utterances]
        return self.forward(ids, dialogue.roles, train=train, rng=rng)
