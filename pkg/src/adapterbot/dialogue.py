"""Dialogue data model: utterances, histories, knowledge variants, decoding."""

from dataclasses import dataclass, field
from typing import Optional


class DialogueError(ValueError):
    pass


@dataclass
class Utterance:
    speaker: str  # "user" | "system"
    text: str
    skill_id: Optional[int] = None  # populated on generated system turns

    def __post_init__(self):
        if self.speaker not in ("user", "system"):
            raise DialogueError(f"bad speaker {self.speaker!r}")
        if not self.text or not self.text.strip():
            raise DialogueError("utterance text must be nonempty")


class DialogueHistory:
    """Ordered alternating turns; last turn must be a user turn when a
    response is requested."""

    def __init__(self, turns=None):
        self.turns = []
        for t in turns or []:
            self.append(t)

    def append(self, turn):
        if self.turns and self.turns[-1].speaker == turn.speaker:
            raise DialogueError("speakers must alternate")
        self.turns.append(turn)

    def require_user_last(self):
        if not self.turns or self.turns[-1].speaker != "user":
            raise DialogueError("a response requires the last turn to be the user's")

    def __len__(self):
        return len(self.turns)

    def __iter__(self):
        return iter(self.turns)


class MetaKnowledge:
    """Tagged knowledge variant: none | text | table | graph."""

    __slots__ = ("kind", "paragraph", "rows", "triples")

    def __init__(self, kind, paragraph=None, rows=None, triples=None):
        self.kind = kind
        self.paragraph = paragraph
        self.rows = rows
        self.triples = triples

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def text(cls, paragraph):
        if not paragraph or not paragraph.strip():
            raise DialogueError("text knowledge must be nonempty")
        return cls("text", paragraph=paragraph)

    @classmethod
    def table(cls, rows):
        rows = [(str(s), str(v)) for s, v in rows]
        slots = [s for s, _ in rows]
        if len(set(slots)) != len(slots):
            raise DialogueError("table slots must be unique")
        return cls("table", rows=rows)

    @classmethod
    def graph(cls, triples):
        triples = [tuple(t) for t in triples]
        for t in triples:
            if len(t) != 3 or not all(isinstance(x, str) and x for x in t):
                raise DialogueError(f"malformed triple {t!r}")
        return cls("graph", triples=triples)

    def to_dict(self):
        if self.kind == "text":
            return {"variant": "text", "paragraph": self.paragraph}
        if self.kind == "table":
            return {"variant": "table", "rows": [list(r) for r in self.rows]}
        if self.kind == "graph":
            return {"variant": "graph", "triples": [list(t) for t in self.triples]}
        return {"variant": "none"}

    @classmethod
    def from_dict(cls, d):
        v = d["variant"]
        if v == "text":
            return cls.text(d["paragraph"])
        if v == "table":
            return cls.table([tuple(r) for r in d["rows"]])
        if v == "graph":
            return cls.graph([tuple(t) for t in d["triples"]])
        if v == "none":
            return cls.none()
        raise DialogueError(f"unknown knowledge variant {v!r}")

    def __eq__(self, other):
        return isinstance(other, MetaKnowledge) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"MetaKnowledge({self.to_dict()!r})"


@dataclass
class RerankParams:
    style_id: int
    n_candidates: int = 8


@dataclass
class DecodeParams:
    mode: str = "greedy"  # "greedy" | "top_k"
    k: int = 1
    temperature: float = 1.0
    max_new_tokens: int = 24
    seed: int = 0
    rerank: Optional[RerankParams] = None

    def __post_init__(self):
        if self.mode not in ("greedy", "top_k"):
            raise DialogueError(f"bad decode mode {self.mode!r}")
        if self.k < 1 or self.temperature <= 0 or self.max_new_tokens < 1:
            raise DialogueError("bad decode parameters")


def linearize_knowledge(meta):
    """Render knowledge as plain text; clauses joined by ' ; '."""
    if meta.kind == "none":
        return ""
    if meta.kind == "text":
        return meta.paragraph
    if meta.kind == "table":
        return " ; ".join(f"{s} is {v}" for s, v in meta.rows)
    return " ; ".join(f"{h} {r} {t}" for h, r, t in meta.triples)
