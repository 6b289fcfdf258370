"""Candidate scoring and selection: argmax contract, monotone features,
classifier training, and the rerank decode loop."""

import numpy as np
import pytest
from numpy.random import default_rng

from adapterbot.adapters import AdapterSet, adapter_init
from adapterbot.backbone import Backbone, ModelConfig
from adapterbot.dialogue import (
    DecodeParams,
    DialogueHistory,
    MetaKnowledge,
    RerankParams,
    Utterance,
)
from adapterbot.engine import Engine
from adapterbot.reranker import (
    ScoredResponse,
    StyleClassifier,
    choose,
    rerank,
    train_style_classifier,
)
from adapterbot.tokenizer import Tokenizer


def _clf(style_id=7):
    vocab = {"yo": 0, "ho": 1, "yo ho": 2}
    return StyleClassifier(style_id, vocab, [1.0, 1.0, 2.0], bias=-1.0)


# -- choose ---------------------------------------------------------------------


def test_choose_argmax_1000_trials():
    rng = default_rng(99)
    for trial in range(1000):
        n = int(rng.integers(1, 9))
        scores = rng.integers(0, 4, size=n) / 4.0  # coarse grid forces ties
        cands = [
            ScoredResponse(text=f"t{i}", tokens=[], style_scores={0: float(s)})
            for i, s in enumerate(scores)
        ]
        out = choose(cands)
        chosen = [i for i, c in enumerate(out) if c.chosen]
        want = max(range(n), key=lambda i: (scores[i], -i))  # ties -> lowest index
        assert chosen == [want], f"trial {trial}"


def test_choose_does_not_mutate_inputs():
    cands = [ScoredResponse(text="a", tokens=["a"], style_scores={0: 0.1})]
    out = choose(cands)
    assert not cands[0].chosen
    assert out[0].chosen


def test_choose_uses_best_style_score():
    cands = [
        ScoredResponse(text="a", tokens=[], style_scores={0: 0.6, 1: 0.2}),
        ScoredResponse(text="b", tokens=[], style_scores={0: 0.1, 1: 0.9}),
    ]
    out = choose(cands)
    assert out[1].chosen


def test_choose_empty_scores_count_as_zero():
    cands = [
        ScoredResponse(text="a", tokens=[], style_scores={}),
        ScoredResponse(text="b", tokens=[], style_scores={0: 0.01}),
    ]
    assert choose(cands)[1].chosen


def test_choose_rejects_empty():
    with pytest.raises(ValueError):
        choose([])


# -- classifier -----------------------------------------------------------------


def test_featurize_counts_raw_ngrams():
    clf = _clf()
    x = clf.featurize("yo ho yo")
    assert x.tolist() == [2.0, 1.0, 1.0]  # yo, ho, "yo ho" ("ho yo" unseen)


def test_score_monotone_in_positive_ngrams():
    clf = _clf()
    base = "plain words here"
    grown = base
    prev = clf.score(base)
    for _ in range(4):
        grown += " yo ho"
        cur = clf.score(grown)
        assert cur > prev
        prev = cur


def test_score_is_sigmoid_of_logit():
    clf = _clf()
    # "yo" once: z = 1 - 1 = 0 -> 0.5
    assert abs(clf.score("yo") - 0.5) < 1e-12
    assert abs(clf.score("nothing matches") - 1 / (1 + np.exp(1))) < 1e-12


def test_train_separable_classes():
    positive = ["arr matey yo ho", "yo ho the sails", "arr the ship yo"]
    negative = ["indeed quite proper", "most certainly indeed", "quite so friend"]
    clf, acc = train_style_classifier(positive * 4, negative * 4, style_id=3, seed=0)
    assert clf.style_id == 3
    for t in positive:
        assert clf.score(t) > 0.5
    for t in negative:
        assert clf.score(t) < 0.5
    assert acc == 1.0


def test_train_is_deterministic():
    pos, neg = ["a b"] * 6, ["c d"] * 6
    a, _ = train_style_classifier(pos, neg, seed=5)
    b, _ = train_style_classifier(pos, neg, seed=5)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_train_rejects_empty_class():
    with pytest.raises(ValueError):
        train_style_classifier([], ["x"])
    with pytest.raises(ValueError):
        train_style_classifier(["x"], [])


def test_train_warns_on_identical_classes():
    with pytest.warns(UserWarning):
        train_style_classifier(["same text"] * 5, ["same text"] * 5)


def test_classifier_save_load(tmp_path):
    clf, _ = train_style_classifier(
        ["arr yo ho"] * 5, ["quite so indeed"] * 5, style_id=2, seed=1
    )
    path = tmp_path / "style.ckpt"
    clf.save(path)
    loaded = StyleClassifier.load(path)
    assert loaded.style_id == 2
    assert loaded.vocab == clf.vocab
    for t in ("arr yo ho", "quite so indeed", "unrelated words"):
        assert abs(loaded.score(t) - clf.score(t)) < 1e-5


# -- rerank loop ------------------------------------------------------------------


class _StubEngine:
    """Text depends only on decode.seed; records every decode it sees."""

    def __init__(self, clf, texts):
        self.style_classifiers = {clf.style_id: clf}
        self.texts = texts
        self.calls = []

    def respond(self, history, meta, skill_id, decode):
        self.calls.append(decode)
        return Utterance("system", self.texts[decode.seed], skill_id=skill_id), None


def test_rerank_sub_seeds_and_selection():
    eng = _StubEngine(_clf(), {100: "plain words", 101: "yo ho yo", 102: "nothing"})
    out = rerank(eng, None, None, 1, 7, 3, DecodeParams(mode="greedy", seed=100))
    assert [d.seed for d in eng.calls] == [100, 101, 102]
    assert all(d.rerank is None for d in eng.calls)
    # greedy is coerced to sampled decoding so candidates can differ
    assert all(d.mode == "top_k" and d.k >= 3 for d in eng.calls)
    assert [c.chosen for c in out] == [False, True, False]
    assert out[1].tokens == ["yo", "ho", "yo"]


def test_rerank_keeps_explicit_top_k():
    eng = _StubEngine(_clf(), {5: "a", 6: "b"})
    rerank(eng, None, None, 1, 7, 2, DecodeParams(mode="top_k", k=8, seed=5))
    assert all(d.k == 8 for d in eng.calls)


def test_rerank_validates_inputs():
    eng = _StubEngine(_clf(), {0: "x"})
    with pytest.raises(ValueError):
        rerank(eng, None, None, 1, 7, 0, DecodeParams())
    with pytest.raises(KeyError):
        rerank(eng, None, None, 1, 99, 2, DecodeParams())


def test_engine_respond_with_rerank_param():
    tok = Tokenizer("hello there yo ho plain".split())
    cfg = ModelConfig(
        vocab_size=tok.vocab_size, n_layers=2, hidden_dim=32, n_heads=4,
        max_seq_len=32, bottleneck_default=8,
    )
    model = Backbone(cfg, seed=0)
    model.freeze()
    adapters = AdapterSet()
    adapters.register(adapter_init(cfg, seed=1).seal())
    eng = Engine(model, tok, adapters, style_classifiers={0: _clf(0)})
    history = DialogueHistory([Utterance("user", "hello there")])
    decode = DecodeParams(
        mode="top_k", k=3, seed=5, max_new_tokens=6,
        rerank=RerankParams(style_id=0, n_candidates=4),
    )
    utt, scored = eng.respond(history, MetaKnowledge.none(), 1, decode)
    assert len(scored) == 4
    assert sum(c.chosen for c in scored) == 1
    assert utt.text == next(c.text for c in scored if c.chosen)
