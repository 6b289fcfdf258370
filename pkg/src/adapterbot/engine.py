"""Composition of backbone, adapters, manager and reranker into the full
response function, plus the input serialization convention.

Serialized layout: ``[<know> knowledge-clauses] (<usr>|<sys> turn-tokens)*``
— knowledge first so truncation (oldest turns dropped) never removes it.
Generation appends ``<sys>`` and decodes until ``<eos>``.
"""

from dataclasses import dataclass
from typing import Optional

from .dialogue import DialogueError, Utterance, linearize_knowledge


class KnowledgeTooLargeError(ValueError):
    pass


class UnknownSkillError(KeyError):
    pass


class ManagerUntrainedError(RuntimeError):
    pass


def serialize_input(tok, history, meta, n_max, reserve=0):
    """Token ids for (history, knowledge); truncates oldest turns first.

    ``reserve`` positions are kept free (for the response during training /
    generation). The knowledge block and the last turn always survive; if
    they alone overflow, that's a KnowledgeTooLargeError.
    """
    know = []
    if meta.kind != "none":
        know = [tok.sep_know_id] + tok.encode(linearize_knowledge(meta))
    turns = []
    for u in history:
        sep = tok.sep_usr_id if u.speaker == "user" else tok.sep_sys_id
        turns.append([sep] + tok.encode(u.text))
    budget = n_max - reserve
    if not turns:
        if len(know) > budget:
            raise KnowledgeTooLargeError(
                f"knowledge block ({len(know)} tokens) exceeds budget {budget}"
            )
        return list(know)
    keep = [turns[-1]]
    used = len(know) + len(turns[-1])
    if used > budget:
        raise KnowledgeTooLargeError(
            f"knowledge block + last turn ({used} tokens) exceed budget {budget}"
        )
    for t in reversed(turns[:-1]):
        if used + len(t) > budget:
            break
        keep.append(t)
        used += len(t)
    ids = list(know)
    for t in reversed(keep):
        ids.extend(t)
    return ids


@dataclass
class RoutedResponse:
    utterance: Utterance
    skill_id: int
    confidence: float


class Engine:
    """Frozen backbone + sealed adapter set (+ optional manager & style
    classifiers). Immutable at serve time; respond calls are pure."""

    def __init__(self, backbone, tok, adapter_set, manager=None, style_classifiers=None):
        self.backbone = backbone
        self.tok = tok
        self.adapters = adapter_set
        self.manager = manager
        self.style_classifiers = dict(style_classifiers or {})

    def prompt_ids(self, history, meta, reserve=None):
        history.require_user_last()
        if reserve is None:
            reserve = 0
        ids = serialize_input(
            self.tok, history, meta, self.backbone.config.max_seq_len,
            reserve=reserve,
        )
        return ids + [self.tok.sep_sys_id]

    def respond(self, history, meta, skill_id, decode, trace=None):
        """Generate the system turn with adapter ``skill_id`` active."""
        if skill_id not in self.adapters:
            raise UnknownSkillError(f"unknown skill_id {skill_id}")
        if decode.rerank is not None:
            from .reranker import rerank
            scored = rerank(
                self, history, meta, skill_id,
                decode.rerank.style_id, decode.rerank.n_candidates, decode,
            )
            chosen = next(c for c in scored if c.chosen)
            if trace is not None:
                trace(skill_id)
            return Utterance("system", chosen.text, skill_id=skill_id), scored
        stack = self.adapters.get(skill_id)
        ids = self.prompt_ids(history, meta, reserve=decode.max_new_tokens)
        out = self.backbone.generate(ids, stack, decode, eos_id=self.tok.eos_id)
        text = self.tok.decode(out)
        if not text:
            text = self.tok.token(self.tok.unk_id)
        if trace is not None:
            trace(skill_id)
        return Utterance("system", text, skill_id=skill_id), None

    def respond_auto(self, history, meta, decode, mode="multi_turn", trace=None):
        if self.manager is None or not self.manager.trained:
            raise ManagerUntrainedError("auto mode requires a trained manager")
        skill_id, probs = self.manager.predict(history, mode=mode)
        utt, scored = self.respond(history, meta, skill_id, decode, trace=trace)
        return RoutedResponse(utt, skill_id, float(probs[skill_id])), scored
