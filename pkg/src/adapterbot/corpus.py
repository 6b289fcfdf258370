"""Deterministic synthetic multi-skill dialogue corpus.

Six default skills, one per knowledge family, defined by a human-editable
suite file (templates + word pools) packaged as ``data/reference_suite.json``;
two extra style skills (flagged ``extra``) exercise continual registration.

Every dialogue is four turns (user, system, user, system) and yields two
rows, one per system turn. Grounded families draw fresh knowledge values
per dialogue and embed them in the gold response, so entity metrics and
knowledge-reading are meaningful. Splits are 80/10/10 by dialogue-id hash.
"""

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .dialogue import DialogueError, MetaKnowledge, Utterance, linearize_knowledge

FAMILIES = (
    "style", "persona", "empathetic",
    "table_grounded", "graph_grounded", "text_grounded",
)

MAX_VOCAB = 250
MIN_UNIQUE_FRACTION = 0.30


class SuiteError(ValueError):
    pass


@dataclass
class Row:
    skill: str
    dialogue_id: int
    turn_index: int
    history: list  # [(speaker, text), ...]
    meta: MetaKnowledge
    gold_response: str
    gold_entities: list

    def to_dict(self):
        return {
            "skill": self.skill,
            "dialogue_id": self.dialogue_id,
            "turn_index": self.turn_index,
            "history": [[s, t] for s, t in self.history],
            "meta": self.meta.to_dict(),
            "gold_response": self.gold_response,
            "gold_entities": list(self.gold_entities),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            skill=d["skill"], dialogue_id=d["dialogue_id"],
            turn_index=d["turn_index"],
            history=[(s, t) for s, t in d["history"]],
            meta=MetaKnowledge.from_dict(d["meta"]),
            gold_response=d["gold_response"],
            gold_entities=list(d["gold_entities"]),
        )

    def dialogue_history(self):
        from .dialogue import DialogueHistory
        return DialogueHistory([Utterance(s, t) for s, t in self.history])


def split_of(skill, dialogue_id):
    digest = hashlib.sha1(f"{skill}:{dialogue_id}".encode()).digest()
    bucket = int.from_bytes(digest[:8], "big") % 10
    if bucket < 8:
        return "train"
    return "valid" if bucket == 8 else "test"


@dataclass
class SkillDataset:
    name: str
    family: str
    rows: list = field(default_factory=list)

    def split(self, which):
        return [r for r in self.rows if split_of(r.skill, r.dialogue_id) == which]

    def dialogues(self):
        """Full 4-turn dialogues (history + gold of the turn-3 row)."""
        out = []
        for r in self.rows:
            if r.turn_index == 3:
                out.append(r.history + [("system", r.gold_response)])
        return out


def load_suite_def(path=None):
    if path is None:
        ref = resources.files("adapterbot").joinpath("data/reference_suite.json")
        return json.loads(ref.read_text(encoding="utf-8"))
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _fill(template, slots):
    try:
        return template.format_map(slots)
    except (KeyError, IndexError) as e:
        raise SuiteError(f"template {template!r} references undefined slot: {e}")


_TEXT_FACT = "{animal} are {trait} animals that live in {habitat} and eat {diet}"


def _draw(rng, pool):
    return pool[int(rng.integers(len(pool)))]


def _knowledge_for(family, pools, rng):
    """Per-dialogue knowledge draw: (slots dict, MetaKnowledge, value tokens)."""
    if family == "table_grounded":
        slots = {
            "city": _draw(rng, pools["city"]),
            "weather": _draw(rng, pools["weather"]),
            "high": _draw(rng, pools["high"]),
            "low": _draw(rng, pools["low"]),
        }
        meta = MetaKnowledge.table([
            ("weather", slots["weather"]),
            ("high", slots["high"]),
            ("low", slots["low"]),
        ])
        return slots, meta, [slots["weather"], slots["high"], slots["low"]]
    if family == "graph_grounded":
        slots = {
            "team": _draw(rng, pools["team"]),
            "coach": _draw(rng, pools["coach"]),
            "city": _draw(rng, pools["city"]),
            "captain": _draw(rng, pools["captain"]),
        }
        meta = MetaKnowledge.graph([
            (slots["team"], "coach", slots["coach"]),
            (slots["team"], "city", slots["city"]),
            (slots["team"], "captain", slots["captain"]),
        ])
        return slots, meta, [slots["coach"], slots["city"], slots["captain"]]
    if family == "text_grounded":
        slots = {
            "animal": _draw(rng, pools["animal"]),
            "trait": _draw(rng, pools["trait"]),
            "habitat": _draw(rng, pools["habitat"]),
            "diet": _draw(rng, pools["diet"]),
        }
        meta = MetaKnowledge.text(_fill(_TEXT_FACT, slots))
        return slots, meta, [slots["trait"], slots["habitat"], slots["diet"]]
    return {"topic": _draw(rng, pools["topic"])}, MetaKnowledge.none(), []


def _entities_in(response, values):
    toks = response.split()
    return [v for v in values if v in toks]


def synth_skill(suite, skill_def, n_dialogues=None):
    """Generate one skill's dataset; deterministic per (suite seed, skill)."""
    name = skill_def["name"]
    family = skill_def["family"]
    if family not in FAMILIES:
        raise SuiteError(f"unknown family {family!r} for skill {name!r}")
    n = n_dialogues if n_dialogues is not None else suite["n_dialogues"]
    pools = suite["pools"]
    generic_rate = skill_def.get(
        "generic_followup_rate", suite.get("generic_followup_rate", 0.0)
    )
    shared_rate = skill_def.get("shared_prompt_rate", 0.0)
    if shared_rate > 0 and not skill_def["shared_response"]:
        raise SuiteError(f"skill {name!r} uses shared prompts but has no responses")
    if shared_rate < 1.0 and not skill_def["turn1"]:
        raise SuiteError(f"skill {name!r} needs turn1 templates")

    rows = []
    for k in range(n):
        rng = np.random.default_rng([suite["seed"], _stable_int(name), k])
        slots, meta, values = _knowledge_for(family, pools, rng)

        def turn_slots():
            s = dict(slots)
            for key, pool in skill_def.get("fillers", {}).items():
                s[key] = _draw(rng, pool)
            return s

        if rng.random() < shared_rate:
            u1 = _fill(_draw(rng, suite["shared_prompts"]), turn_slots())
            s1 = _fill(_draw(rng, skill_def["shared_response"]), turn_slots())
        else:
            pair = _draw(rng, skill_def["turn1"])
            ts = turn_slots()
            u1, s1 = _fill(pair["user"], ts), _fill(pair["system"], ts)
        if rng.random() < generic_rate or not skill_def["turn2_user"]:
            u2 = _draw(rng, suite["generic_followups"])
        else:
            u2 = _fill(_draw(rng, skill_def["turn2_user"]), turn_slots())
        s2 = _fill(_draw(rng, skill_def["turn2_system"]), turn_slots())

        rows.append(Row(name, k, 1, [("user", u1)], meta, s1,
                        _entities_in(s1, values)))
        rows.append(Row(name, k, 3,
                        [("user", u1), ("system", s1), ("user", u2)],
                        meta, s2, _entities_in(s2, values)))
    _check_alternation(rows)
    if family == "table_grounded":
        for r in rows:
            if r.turn_index == 1 and not r.gold_entities:
                raise SuiteError("table response missing its drawn slot value")
    if family == "graph_grounded":
        _check_graph_neighbors(rows)
    return SkillDataset(name, family, rows)


def _stable_int(name):
    return int.from_bytes(hashlib.sha1(name.encode()).digest()[:4], "big")


def _check_alternation(rows):
    for r in rows:
        speakers = [s for s, _ in r.history] + ["system"]
        for a, b in zip(speakers, speakers[1:]):
            if a == b:
                raise SuiteError("generated dialogue does not alternate speakers")


def _check_graph_neighbors(rows):
    for r in rows:
        final_user = r.history[-1][1].split()
        heads = {h.lower() for h, _, _ in r.meta.triples}
        if not heads & set(final_user):
            raise SuiteError("graph example final user turn mentions no entity")
        tails = {t for _, _, t in r.meta.triples}
        for e in r.gold_entities:
            if e not in tails:
                raise SuiteError("gold entity is not a first-order neighbor")


def synth_suite(suite=None, include_extras=False, n_dialogues=None):
    """Generate the full suite; returns ordered dict name -> SkillDataset.

    Asserts the corpus-level guarantees for the default (non-extra) skills:
    total vocabulary <= 250 words and pairwise lexical separability.
    """
    if suite is None:
        suite = load_suite_def()
    out = {}
    for skill_def in suite["skills"]:
        if skill_def.get("extra") and not include_extras:
            continue
        out[skill_def["name"]] = synth_skill(suite, skill_def, n_dialogues)
    defaults = {
        name: ds for name, ds in out.items()
        if not _skill_def(suite, name).get("extra")
    }
    _check_vocab_budget(defaults)
    _check_separability(defaults, set(suite["function_words"]))
    return out


def _skill_def(suite, name):
    for sd in suite["skills"]:
        if sd["name"] == name:
            return sd
    raise SuiteError(f"unknown skill {name!r}")


def _texts_of(ds):
    for r in ds.rows:
        for _, text in r.history:
            yield text
        yield r.gold_response
        if r.meta.kind != "none":
            yield linearize_knowledge(r.meta)


def _check_vocab_budget(datasets):
    vocab = set()
    for ds in datasets.values():
        for text in _texts_of(ds):
            vocab.update(text.lower().split())
    if len(vocab) > MAX_VOCAB:
        raise SuiteError(f"suite vocabulary {len(vocab)} exceeds {MAX_VOCAB}")


def _check_separability(datasets, function_words):
    content = {}
    for name, ds in datasets.items():
        words = set()
        for text in _texts_of(ds):
            words.update(text.lower().split())
        content[name] = words - function_words
    for a in content:
        for b in content:
            if a == b:
                continue
            unique = len(content[a] - content[b]) / max(len(content[a]), 1)
            if unique < MIN_UNIQUE_FRACTION:
                raise SuiteError(
                    f"skills {a!r} and {b!r} share too much vocabulary "
                    f"({unique:.0%} unique)"
                )


def suite_vocabulary(suite=None):
    """All corpus words including extra skills and knowledge text, sorted."""
    if suite is None:
        suite = load_suite_def()
    vocab = set()
    for ds in synth_suite(suite, include_extras=True).values():
        for text in _texts_of(ds):
            vocab.update(text.lower().split())
    return sorted(vocab)


def build_tokenizer(suite=None):
    from .tokenizer import Tokenizer
    return Tokenizer(suite_vocabulary(suite))


def save_rows(rows, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def load_rows(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append(Row.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, DialogueError) as e:
                raise SuiteError(f"{path}:{lineno}: bad corpus record: {e}") from e
    return rows


def save_suite(datasets, path):
    rows = [r for ds in datasets.values() for r in ds.rows]
    save_rows(rows, path)


def make_serve_artifacts(outdir, suite=None):
    """Static knowledge sources for the chat service: a document per animal,
    a graph with one triple set per team, and a weather fixture with one
    row per city.  Draws are seeded per entity so the files are stable."""
    import os
    if suite is None:
        suite = load_suite_def()
    pools = suite["pools"]
    seed = suite["seed"]
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "docs": os.path.join(outdir, "docs.jsonl"),
        "graph": os.path.join(outdir, "graph.tsv"),
        "fixture": os.path.join(outdir, "fixture.jsonl"),
    }
    with open(paths["docs"], "w", encoding="utf-8") as f:
        for i, animal in enumerate(pools["animal"]):
            rng = np.random.default_rng([seed, _stable_int("doc"), i])
            slots = {"animal": animal,
                     "trait": _draw(rng, pools["trait"]),
                     "habitat": _draw(rng, pools["habitat"]),
                     "diet": _draw(rng, pools["diet"])}
            para = _fill(_TEXT_FACT, slots)
            f.write(json.dumps({
                "id": i, "title": animal,
                "first_paragraph": para, "full_text": para,
            }, sort_keys=True) + "\n")
    with open(paths["graph"], "w", encoding="utf-8") as f:
        for i, team in enumerate(pools["team"]):
            rng = np.random.default_rng([seed, _stable_int("graph"), i])
            f.write(f"{team}\tcoach\t{_draw(rng, pools['coach'])}\n")
            f.write(f"{team}\tcity\t{_draw(rng, pools['city'])}\n")
            f.write(f"{team}\tcaptain\t{_draw(rng, pools['captain'])}\n")
    with open(paths["fixture"], "w", encoding="utf-8") as f:
        f.write(json.dumps({
            "name": "weather", "default_location": pools["city"][0],
        }, sort_keys=True) + "\n")
        for i, city in enumerate(pools["city"]):
            rng = np.random.default_rng([seed, _stable_int("fixture"), i])
            f.write(json.dumps({"location": city, "slots": {
                "weather": _draw(rng, pools["weather"]),
                "high": _draw(rng, pools["high"]),
                "low": _draw(rng, pools["low"]),
            }}, sort_keys=True) + "\n")
    return paths


def load_suite(path, families=None):
    """Rebuild name -> SkillDataset from a corpus file."""
    datasets = {}
    fam = dict(families or {})
    if not fam:
        suite = load_suite_def()
        fam = {sd["name"]: sd["family"] for sd in suite["skills"]}
    for r in load_rows(path):
        if r.skill not in datasets:
            if r.skill not in fam:
                raise SuiteError(f"unknown skill {r.skill!r} in {path}")
            datasets[r.skill] = SkillDataset(r.skill, fam[r.skill])
        datasets[r.skill].rows.append(r)
    return datasets
