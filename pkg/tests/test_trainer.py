"""Training loops at miniature scale: sequence assembly, freeze contracts,
early stopping, masking audits, and order-independent adapter training."""

import json

import numpy as np
import pytest
from numpy.random import default_rng

from adapterbot.adapters import adapter_init
from adapterbot.backbone import Backbone, FrozenBackboneError, ModelConfig
from adapterbot.corpus import build_tokenizer, synth_suite
from adapterbot.engine import serialize_input
from adapterbot.tensor import Tensor
from adapterbot.trainer import (
    IsolationError,
    TrainConfig,
    TrainLog,
    _audit_masking,
    _sequence_batches,
    dialogue_sequence,
    pretrain_backbone,
    probe_outputs,
    routing_examples,
    row_sequence,
    skill_seed,
    train_adapter,
    train_all,
    train_styles,
)

SUITE = {
    "seed": 5,
    "n_dialogues": 30,
    "pools": {"topic": ["paint", "rest"]},
    "function_words": ["the", "a", "and", "is", "i", "me"],
    "generic_followups": ["tell me more", "go on"],
    "shared_prompts": ["how are you"],
    "skills": [
        {
            "name": "alpha", "family": "style",
            "turn1": [
                {"user": "paint the sunset", "system": "canvas glows orange"},
                {"user": "sketch a harbor", "system": "brushes sweep blue"},
            ],
            "turn2_user": ["more color talk"],
            "turn2_system": ["palette swirls bright", "pigment dances softly"],
        },
        {
            "name": "beta", "family": "empathetic",
            "turn1": [
                {"user": "rough shift today", "system": "sounds heavy friend"},
                {"user": "long week again", "system": "take gentle care"},
            ],
            "turn2_user": ["still tired now"],
            "turn2_system": ["rest easy soon", "breathe slow tonight"],
        },
    ],
}


@pytest.fixture(scope="module")
def tiny():
    """Pretrained-and-frozen tiny backbone over the two-skill suite."""
    datasets = synth_suite(SUITE)
    tok = build_tokenizer(SUITE)
    model = Backbone(
        ModelConfig(vocab_size=tok.vocab_size, hidden_dim=32, n_heads=4,
                    max_seq_len=48, bottleneck_default=8),
        seed=1,
    )
    log = pretrain_backbone(
        model, datasets, tok, TrainConfig(lr=3e-3, batch_size=8, seed=3),
        max_epochs=2,
    )
    return datasets, tok, model, log


def _cfg(**over):
    base = dict(lr=6e-3, batch_size=8, max_epochs=6, patience=2, seed=5)
    base.update(over)
    return TrainConfig(**base)


# -- sequence assembly -----------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def test_dialogue_sequence_layout(tiny):
    _, tok, _, _ = tiny
    ids = dialogue_sequence(tok, [("user", "paint the sunset"), ("system", "canvas glows orange")])
    expect = (
        [tok.sep_usr_id] + tok.encode("paint the sunset")
        + [tok.sep_sys_id] + tok.encode("canvas glows orange") + [tok.eos_id]
    )
    assert ids == expect


def test_row_sequence_layout(tiny):
    datasets, tok, model, _ = tiny
    row = datasets["alpha"].rows[0]
    ids, prompt_len = row_sequence(tok, row, model.config.max_seq_len)
    resp = tok.encode(row.gold_response)
    prompt = serialize_input(
        tok, row.dialogue_history(), row.meta, model.config.max_seq_len,
        reserve=len(resp) + 2,
    ) + [tok.sep_sys_id]
    assert ids == prompt + resp + [tok.eos_id]
    assert prompt_len == len(prompt)
    assert ids[prompt_len - 1] == tok.sep_sys_id
    assert ids[-1] == tok.eos_id


def test_sequence_batches_weights_and_padding():
    seqs = [([4, 5, 6, 7, 8], 3), ([9, 10, 11], 1)]
    batches = list(_sequence_batches(seqs, 2, default_rng(0), pad_id=0))
    assert len(batches) == 1
    batch, weights = batches[0]
    assert batch.shape == (2, 5) and weights.shape == (2, 4)
    for ids, start in seqs:
        r = next(i for i in range(2) if batch[i, : len(ids)].tolist() == ids)
        assert batch[r, len(ids):].tolist() == [0] * (5 - len(ids))
        want = np.zeros(4)
        want[start - 1: len(ids) - 1] = 1.0
        assert weights[r].tolist() == want.tolist()


def test_sequence_batches_shuffle_is_seeded():
    seqs = [([i, i + 1], 1) for i in range(20)]
    a = [b[0].tolist() for b, _ in _sequence_batches(seqs, 4, default_rng(7), 0)]
    b = [b[0].tolist() for b, _ in _sequence_batches(seqs, 4, default_rng(7), 0)]
    c = [b[0].tolist() for b, _ in _sequence_batches(seqs, 4, default_rng(8), 0)]
    assert a == b
    assert a != c


def test_audit_masking_catches_context_gradient():
    logits = Tensor(np.zeros((1, 3, 4)))
    logits.grad = np.ones((1, 3, 4), dtype=np.float32)
    weights = np.zeros((1, 2), dtype=np.float32)
    with pytest.raises(AssertionError, match="context"):
        _audit_masking(logits, weights, (1, 3))


# -- pretraining -----------------------------------------------------------------


def test_pretrain_freezes_and_logs(tiny):
    _, _, model, log = tiny
    assert model.frozen
    assert log.summary["task"] == "pretrain"
    assert log.summary["frozen_hash"] == model.hash
    assert log.summary["val_ppl"] == log.evals[-1][1]
    assert log.steps and log.stopping_step == log.steps[-1][0]
    # the model actually learned something
    assert log.summary["val_ppl"] < model.config.vocab_size / 2


def test_pretrain_rejects_frozen_model(tiny):
    datasets, tok, model, _ = tiny
    with pytest.raises(FrozenBackboneError):
        pretrain_backbone(model, datasets, tok, _cfg())


# -- adapter training --------------------------------------------------------------


def test_train_adapter_requires_frozen_backbone(tiny):
    datasets, tok, _, _ = tiny
    fresh = Backbone(
        ModelConfig(vocab_size=tok.vocab_size, hidden_dim=32, n_heads=4,
                    max_seq_len=48, bottleneck_default=8),
        seed=2,
    )
    stack = adapter_init(fresh.config)
    with pytest.raises(FrozenBackboneError):
        train_adapter(fresh, stack, datasets["alpha"], tok, _cfg())


def test_train_adapter_rejects_sealed_stack(tiny):
    datasets, tok, model, _ = tiny
    stack = adapter_init(model.config).seal()
    with pytest.raises(ValueError, match="sealed"):
        train_adapter(model, stack, datasets["alpha"], tok, _cfg())


def test_train_adapter_improves_and_seals(tiny):
    datasets, tok, model, _ = tiny
    ds = datasets["alpha"]
    stack = adapter_init(model.config, seed=9, name="alpha")
    log = train_adapter(model, stack, ds, tok, _cfg())
    assert stack.sealed
    assert stack.provenance["corpus"] == "alpha"
    assert log.summary["best_val_ppl"] == min(v for _, v in log.evals)
    # sealed weights really are the best epoch's weights
    from adapterbot.trainer import _eval_seqs
    val = _eval_seqs(
        row_sequence(tok, r, model.config.max_seq_len) for r in ds.split("valid")
    )
    ppl = model.perplexity(val, adapter=stack, pad_id=tok.pad_id)
    assert abs(ppl - log.summary["best_val_ppl"]) < 1e-6 * ppl
    # and they beat the bare backbone
    assert ppl < model.perplexity(val, pad_id=tok.pad_id)


def test_train_adapter_detects_backbone_drift(tiny, monkeypatch):
    datasets, tok, _, _ = tiny
    model = Backbone(
        ModelConfig(vocab_size=tok.vocab_size, hidden_dim=32, n_heads=4,
                    max_seq_len=48, bottleneck_default=8),
        seed=6,
    )
    model.freeze()
    stack = adapter_init(model.config, seed=3)
    orig = Backbone.perplexity

    def drifting(self, *args, **kwargs):
        self.tok_emb.data[0, 0] += np.float32(0.5)
        return orig(self, *args, **kwargs)

    monkeypatch.setattr(Backbone, "perplexity", drifting)
    with pytest.raises(IsolationError, match="backbone changed"):
        train_adapter(model, stack, datasets["alpha"], tok,
                      _cfg(max_epochs=1), audit=False)


def test_skill_seed_is_stable_and_distinct():
    assert skill_seed(0, "alpha") == skill_seed(0, "alpha")
    assert skill_seed(0, "alpha") != skill_seed(0, "beta")
    assert skill_seed(0, "alpha") != skill_seed(1, "alpha")


def test_train_all_order_permutation(tiny):
    """Training the same skills in either order yields identical weights."""
    datasets, tok, model, _ = tiny
    cfg = _cfg(max_epochs=3)
    forward = dict(datasets)
    backward = dict(reversed(list(datasets.items())))
    set_fwd, logs_fwd = train_all(model, tok, forward, cfg)
    set_bwd, logs_bwd = train_all(model, tok, backward, cfg)
    by_name_fwd = {s.name: s for _, s in set_fwd.items()}
    by_name_bwd = {s.name: s for _, s in set_bwd.items()}
    assert set(by_name_fwd) == {"alpha", "beta"}
    for name in by_name_fwd:
        assert by_name_fwd[name].content_hash() == by_name_bwd[name].content_hash()
    # ids follow registration order
    assert by_name_fwd["alpha"].skill_id == 1 and by_name_bwd["alpha"].skill_id == 2
    for name in ("alpha", "beta"):
        assert logs_fwd[name].summary["best_val_ppl"] == pytest.approx(
            logs_bwd[name].summary["best_val_ppl"], rel=1e-9
        )


def test_probe_outputs_are_stable(tiny):
    datasets, tok, model, _ = tiny
    stack = adapter_init(model.config, seed=3, name="alpha")
    train_adapter(model, stack, datasets["alpha"], tok, _cfg(max_epochs=2))
    a = probe_outputs(model, tok, stack, datasets["alpha"])
    b = probe_outputs(model, tok, stack, datasets["alpha"])
    assert a == b
    n_valid = sum(1 for r in datasets["alpha"].split("valid") if r.turn_index == 1)
    assert len(a) == min(3, n_valid) >= 1
    assert all(isinstance(p, tuple) for p in a)


# -- routing + styles ---------------------------------------------------------------


def test_routing_examples_carry_skill_ids(tiny):
    datasets, _, _, _ = tiny
    ids = {"alpha": 1, "beta": 2}
    examples = routing_examples(datasets, ids, which="train")
    labels = {ex.label for ex in examples}
    assert labels == {1, 2}
    n_train = sum(len(ds.split("train")) for ds in datasets.values())
    assert len(examples) == n_train


def test_train_styles_covers_style_family_only(tiny):
    datasets, _, _, _ = tiny
    ids = {"alpha": 1, "beta": 2}
    families = {"alpha": "style", "beta": "empathetic"}
    styles = train_styles(datasets, ids, families, seed=0)
    assert list(styles) == [1]
    clf, acc = styles[1]
    assert clf.style_id == 1
    assert acc == 1.0  # disjoint vocabularies separate perfectly
    alpha_text = datasets["alpha"].rows[0].gold_response
    beta_text = datasets["beta"].rows[0].gold_response
    assert clf.score(alpha_text) > 0.5 > clf.score(beta_text)


# -- logs ---------------------------------------------------------------------------


def test_train_log_save_is_jsonl(tiny, tmp_path):
    _, _, _, log = tiny
    path = tmp_path / "log.jsonl"
    log.save(path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert lines[0]["kind"] == "summary"
    assert lines[0]["task"] == "pretrain"
    kinds = {l["kind"] for l in lines[1:]}
    assert kinds == {"step", "eval"}
