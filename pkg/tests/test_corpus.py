"""Synthetic corpus: determinism, split hygiene, lexical guarantees,
grounding invariants, and file round-trips."""

import json

import pytest

from adapterbot.corpus import (
    FAMILIES,
    MAX_VOCAB,
    Row,
    SuiteError,
    load_rows,
    load_suite,
    load_suite_def,
    make_serve_artifacts,
    save_suite,
    split_of,
    suite_vocabulary,
    synth_skill,
    synth_suite,
)
from adapterbot.knowledge import load_documents, load_fixture, load_graph

DEFAULT_SKILLS = ["verse", "baker", "care", "forecast", "league", "wildlife"]


def _mini_suite(**over):
    base = {
        "seed": 5,
        "n_dialogues": 12,
        "pools": {"topic": ["paint", "rest"]},
        "function_words": ["the", "a", "and", "is", "i", "me"],
        "generic_followups": ["tell me more", "go on"],
        "shared_prompts": ["how are you"],
        "skills": [
            {
                "name": "alpha", "family": "persona",
                "turn1": [{"user": "paint the sunset", "system": "canvas glows orange"}],
                "turn2_user": ["more color talk"],
                "turn2_system": ["palette swirls bright"],
            },
            {
                "name": "beta", "family": "empathetic",
                "turn1": [{"user": "rough shift today", "system": "sounds heavy friend"}],
                "turn2_user": ["still tired now"],
                "turn2_system": ["rest easy soon"],
            },
        ],
    }
    base.update(over)
    return base


# -- determinism ----------------------------------------------------------------


def test_synth_is_deterministic(mini_datasets):
    again = synth_suite(n_dialogues=40)
    assert list(again) == list(mini_datasets)
    for name in again:
        a = [r.to_dict() for r in again[name].rows]
        b = [r.to_dict() for r in mini_datasets[name].rows]
        assert a == b


def test_single_skill_matches_full_suite(mini_datasets):
    suite = load_suite_def()
    sd = next(s for s in suite["skills"] if s["name"] == "forecast")
    alone = synth_skill(suite, sd, n_dialogues=40)
    assert [r.to_dict() for r in alone.rows] == [
        r.to_dict() for r in mini_datasets["forecast"].rows
    ]


def test_default_suite_composition(mini_datasets):
    assert list(mini_datasets) == DEFAULT_SKILLS
    assert [ds.family for ds in mini_datasets.values()] == list(FAMILIES)
    for ds in mini_datasets.values():
        assert len(ds.rows) == 80  # two rows per dialogue
        assert {r.turn_index for r in ds.rows} == {1, 3}


def test_extras_only_on_request():
    suite = load_suite_def()
    with_extras = synth_suite(suite, include_extras=True, n_dialogues=4)
    extra_names = set(with_extras) - set(DEFAULT_SKILLS)
    assert extra_names == {"pirate", "robot"}
    for name in extra_names:
        assert with_extras[name].family == "style"


# -- splits -----------------------------------------------------------------------


def test_split_of_is_stable_and_partitioned():
    seen = {"train": 0, "valid": 0, "test": 0}
    for skill in ("verse", "forecast"):
        for k in range(1000):
            s = split_of(skill, k)
            assert s == split_of(skill, k)
            seen[s] += 1
    total = sum(seen.values())
    assert 0.76 < seen["train"] / total < 0.84
    assert 0.06 < seen["valid"] / total < 0.14
    assert 0.06 < seen["test"] / total < 0.14


def test_split_keeps_dialogues_whole(mini_datasets):
    for ds in mini_datasets.values():
        by_dialogue = {}
        for r in ds.rows:
            by_dialogue.setdefault(r.dialogue_id, set()).add(
                split_of(r.skill, r.dialogue_id)
            )
        assert all(len(s) == 1 for s in by_dialogue.values())


def test_split_filter_partitions_rows(mini_datasets):
    ds = mini_datasets["verse"]
    parts = [ds.split(w) for w in ("train", "valid", "test")]
    assert sum(map(len, parts)) == len(ds.rows)
    assert len(parts[0]) > len(parts[1]) and len(parts[0]) > len(parts[2])


# -- lexical guarantees ------------------------------------------------------------


def test_default_vocabulary_under_budget(mini_datasets):
    vocab = set()
    for ds in mini_datasets.values():
        for r in ds.rows:
            for _, text in r.history:
                vocab.update(text.lower().split())
            vocab.update(r.gold_response.lower().split())
    assert len(vocab) <= MAX_VOCAB


def test_suite_vocabulary_sorted_and_bounded():
    vocab = suite_vocabulary()
    assert vocab == sorted(vocab)
    assert len(vocab) == len(set(vocab))
    assert len(vocab) <= MAX_VOCAB + 10  # extras ride on a small surcharge


def test_vocab_budget_enforced():
    words = " ".join(f"z{i}" for i in range(MAX_VOCAB + 5))
    suite = _mini_suite()
    suite["skills"][0]["turn1"] = [{"user": words, "system": "canvas glows orange"}]
    with pytest.raises(SuiteError, match="vocabulary"):
        synth_suite(suite)


def test_separability_enforced():
    suite = _mini_suite()
    clone = dict(suite["skills"][0], name="beta", family="empathetic")
    suite["skills"][1] = clone
    with pytest.raises(SuiteError, match="share too much"):
        synth_suite(suite)


def test_mini_suite_passes_checks():
    out = synth_suite(_mini_suite())
    assert set(out) == {"alpha", "beta"}
    assert all(len(ds.rows) == 24 for ds in out.values())


def test_template_with_unknown_slot():
    suite = _mini_suite()
    suite["skills"][0]["turn2_system"] = ["{missing} everywhere"]
    with pytest.raises(SuiteError, match="undefined slot"):
        synth_suite(suite)


def test_unknown_family_rejected():
    suite = _mini_suite()
    suite["skills"][0]["family"] = "galactic"
    with pytest.raises(SuiteError, match="unknown family"):
        synth_suite(suite)


# -- dialogue structure --------------------------------------------------------------


def test_rows_alternate_and_shape(mini_datasets):
    for ds in mini_datasets.values():
        for r in ds.rows:
            speakers = [s for s, _ in r.history]
            if r.turn_index == 1:
                assert speakers == ["user"]
            else:
                assert speakers == ["user", "system", "user"]
            assert all(t.strip() for _, t in r.history)
            assert r.gold_response.strip()


def test_dialogues_are_four_turns(mini_datasets):
    ds = mini_datasets["care"]
    dialogues = ds.dialogues()
    assert len(dialogues) == 40
    for d in dialogues:
        assert [s for s, _ in d] == ["user", "system", "user", "system"]


def test_row_dialogue_history(mini_datasets):
    r = next(r for r in mini_datasets["verse"].rows if r.turn_index == 3)
    h = r.dialogue_history()
    h.require_user_last()
    assert len(h) == 3


# -- grounding invariants --------------------------------------------------------------


def test_table_rows_carry_slots_and_entities(mini_datasets):
    for r in mini_datasets["forecast"].rows:
        assert r.meta.kind == "table"
        assert [s for s, _ in r.meta.rows] == ["weather", "high", "low"]
        assert r.gold_entities, "every forecast gold mentions a drawn value"
        values = {v for _, v in r.meta.rows}
        toks = set(r.gold_response.split())
        assert set(r.gold_entities) <= values & toks


def test_graph_rows_first_order_invariant(mini_datasets):
    for r in mini_datasets["league"].rows:
        assert r.meta.kind == "graph"
        heads = {h.lower() for h, _, _ in r.meta.triples}
        tails = {t for _, _, t in r.meta.triples}
        final_user = set(r.history[-1][1].lower().split())
        assert heads & final_user, "user turn must mention the team"
        assert set(r.gold_entities) <= tails


def test_text_rows_have_paragraph_knowledge(mini_datasets):
    for r in mini_datasets["wildlife"].rows:
        assert r.meta.kind == "text"
        assert r.meta.paragraph
        assert r.gold_entities


def test_ungrounded_rows_have_no_knowledge(mini_datasets):
    for name in ("verse", "baker", "care"):
        for r in mini_datasets[name].rows:
            assert r.meta.kind == "none"
            assert r.gold_entities == []


# -- persistence -------------------------------------------------------------------


def test_suite_round_trip(tmp_path, mini_datasets):
    path = tmp_path / "corpus.jsonl"
    save_suite(mini_datasets, path)
    loaded = load_suite(path)
    assert set(loaded) == set(mini_datasets)
    for name in mini_datasets:
        assert loaded[name].family == mini_datasets[name].family
        assert [r.to_dict() for r in loaded[name].rows] == [
            r.to_dict() for r in mini_datasets[name].rows
        ]


def test_load_rows_line_errors(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"oops": true}\n', encoding="utf-8")
    with pytest.raises(SuiteError, match=r"bad\.jsonl:1"):
        load_rows(p)
    p.write_text("not json at all\n", encoding="utf-8")
    with pytest.raises(SuiteError, match=r"bad\.jsonl:1"):
        load_rows(p)


def test_load_suite_unknown_skill(tmp_path, mini_datasets):
    path = tmp_path / "corpus.jsonl"
    row = mini_datasets["verse"].rows[0]
    mutated = Row.from_dict({**row.to_dict(), "skill": "mystery"})
    path.write_text(json.dumps(mutated.to_dict()) + "\n", encoding="utf-8")
    with pytest.raises(SuiteError, match="mystery"):
        load_suite(path)
    loaded = load_suite(path, families={"mystery": "persona"})
    assert loaded["mystery"].family == "persona"


# -- serve artifacts ----------------------------------------------------------------


def test_make_serve_artifacts(tmp_path):
    paths = make_serve_artifacts(tmp_path / "a")
    suite = load_suite_def()
    docs = load_documents(paths["docs"])
    assert len(docs) == len(suite["pools"]["animal"])
    assert [d["title"] for d in docs] == suite["pools"]["animal"]
    for d in docs:
        assert d["first_paragraph"] and d["full_text"]
    graph = load_graph(paths["graph"])
    assert len(graph.triples) == 3 * len(suite["pools"]["team"])
    for team in suite["pools"]["team"]:
        rels = {r for h, r, _ in graph.triples if h == team}
        assert rels == {"coach", "city", "captain"}
    fixture = load_fixture(paths["fixture"])
    assert fixture.default_location == suite["pools"]["city"][0]
    assert [loc for loc, _ in fixture.rows] == suite["pools"]["city"]


def test_serve_artifacts_deterministic(tmp_path):
    p1 = make_serve_artifacts(tmp_path / "one")
    p2 = make_serve_artifacts(tmp_path / "two")
    for key in p1:
        with open(p1[key], "rb") as a, open(p2[key], "rb") as b:
            assert a.read() == b.read()
