import numpy as np
import pytest

from handsat import numerics as nm
from handsat import training as tr
from handsat.corpus import Role, build_vocab
from handsat.errors import ConfigError
from handsat.model import ForwardTrace, Model, ModelConfig
from handsat.synth import GeneratorSpec, synthesize_corpus


def tiny_config(vocab_size, **overrides):
    base = dict(vocab_size=vocab_size, embed_dim=6, hidden_size=4, dense_size=4,
                attention_units=4, max_dialogue_len=8, heads=2, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def setup():
    dialogues, _ = synthesize_corpus(
        GeneratorSpec(num_dialogues=12, min_len=4, max_len=7), seed=3)
    vocab = build_vocab(dialogues)
    model = Model.build(tiny_config(len(vocab)), np.random.default_rng(0))
    return model, vocab, dialogues


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_config(10, hidden_size=5).validate()  # not divisible by heads
    with pytest.raises(ConfigError):
        tiny_config(10, interaction_mode="bogus").validate()
    with pytest.raises(ConfigError):
        ModelConfig.from_json({"vocab_size": 10, "bad_key": 1})


def test_every_block_registered_once(setup):
    model, _, _ = setup
    names = list(model.blocks)
    assert len(names) == len(set(names))
    ids = [id(t) for t in model.blocks.values()]
    assert len(ids) == len(set(ids))
    assert np.all(model.blocks["embedding"].data[0] == 0.0)  # padding row


def test_forward_distributions(setup):
    model, vocab, dialogues = setup
    for d in dialogues[:6]:
        out = model.forward_dialogue(d, vocab)
        L = len(d)
        np.testing.assert_allclose(out.handoff_probs.data.sum(axis=1),
                                   np.ones(L), atol=1e-9)
        assert out.satisfaction_probs.data.sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(out.local_satisfaction.data.sum(axis=1),
                                   np.ones(L), atol=1e-9)
        assert out.importance.data.sum() == pytest.approx(1.0, abs=1e-9)
        is_customer = np.array([r is Role.CUSTOMER for r in d.roles])
        assert np.all(out.importance.data[~is_customer] == 0.0)
        assert np.all(out.attn_sat_to_handoff.data[:, ~is_customer] == 0.0)


def test_prefix_causality_bit_exact(setup):
    model, vocab, dialogues = setup
    for d in dialogues[:6]:
        full = model.forward_dialogue(d, vocab).handoff_probs.data
        for t in range(1, len(d) + 1):
            ids = [vocab.encode(u.tokens) for u in d.utterances[:t]]
            prefix = model.forward(ids, d.roles[:t]).handoff_probs.data
            assert np.array_equal(full[:t], prefix), (d.id, t)


def test_forward_deterministic_in_eval_mode(setup):
    model, vocab, dialogues = setup
    d = dialogues[0]
    a = model.forward_dialogue(d, vocab)
    b = model.forward_dialogue(d, vocab)
    np.testing.assert_array_equal(a.handoff_probs.data, b.handoff_probs.data)
    np.testing.assert_array_equal(a.satisfaction_probs.data,
                                  b.satisfaction_probs.data)


def test_trace_json_roundtrip(setup):
    model, vocab, dialogues = setup
    d = dialogues[0]
    trace = model.forward_dialogue(d, vocab).trace(
        d.roles, model.config.interaction_mode, model.config.aggregate_mode)
    back = ForwardTrace.from_json(trace.to_json())
    np.testing.assert_array_equal(trace.handoff_probs, back.handoff_probs)
    np.testing.assert_array_equal(trace.position_weights, back.position_weights)
    assert back.roles == [r.value for r in d.roles]


def test_ablation_no_interact_exact_passthrough(setup):
    _, vocab, dialogues = setup
    cfg = tiny_config(len(vocab), interaction_mode="no_interact")
    model = Model.build(cfg, np.random.default_rng(1))
    d = dialogues[0]
    out = model.forward_dialogue(d, vocab)
    assert out.handoff_fused is out.handoff_view
    assert out.satisfaction_fused is out.satisfaction_view


def test_full_model_grad_check(setup):
    model, vocab, dialogues = setup
    batch = dialogues[:2]
    encoded = [([vocab.encode(u.tokens) for u in d.utterances], d.roles,
                [u.handoff for u in d.utterances], d.satisfaction)
               for d in batch]

    def loss():
        total = None
        for ids, roles, handoffs, satisfaction in encoded:
            out = model.forward(ids, roles, train=False)
            l1 = tr.handoff_loss(out.handoff_probs, handoffs)
            l2 = tr.satisfaction_loss(out.satisfaction_probs, satisfaction)
            piece = nm.scale(nm.add(l1, nm.scale(l2, 0.5)), 1.0 / len(encoded))
            total = piece if total is None else nm.add(total, piece)
        return tr.joint_loss(total, nm.constant(np.array(0.0)), model.blocks,
                             eta=0.5, delta=1e-4)

    report = nm.grad_check(loss, model.blocks, samples_per_block=4,
                           rng=np.random.default_rng(5))
    assert report.passed, report.to_json()
