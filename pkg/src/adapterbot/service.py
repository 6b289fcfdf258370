"""HTTP chat service: in-memory sessions over a read-only runtime of
trained checkpoints, per-family knowledge retrieval, manual/auto routing,
and a block-list response filter applied exactly once per turn.
"""

import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, field

from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse

from . import corpus as corpus_mod
from .adapters import AdapterSet, AdapterStack
from .backbone import Backbone
from .dialogue import DecodeParams, DialogueHistory, RerankParams, Utterance
from .engine import Engine
from .knowledge import (
    DocumentIndex,
    api_query,
    kg_neighbors,
    load_documents,
    load_fixture,
    load_graph,
    tfidf_retrieve,
)
from .manager import ManagerModel
from .reranker import StyleClassifier
from .tokenizer import Tokenizer

MAX_TURNS = 40
MAX_TEXT_CHARS = 512
FALLBACK_TEXT = "sorry, that reply was withheld."

# knowledge family -> MetaKnowledge kind surfaced to clients
FAMILY_KINDS = {
    "style": "none", "persona": "none", "empathetic": "none",
    "table_grounded": "table", "graph_grounded": "graph",
    "text_grounded": "text",
}


class ServiceError(Exception):
    def __init__(self, status, detail):
        super().__init__(detail)
        self.status = status
        self.detail = detail


class BlockListFilter:
    """Substring-on-word-boundary block list; stands in for a trained
    offensive-response scorer (any callable text -> bool works)."""

    def __init__(self, words=()):
        self.words = {w.strip().lower() for w in words if w.strip()}

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls(f.read().split())

    def __call__(self, text):
        return bool(self.words.intersection(text.lower().split()))


@dataclass
class Session:
    session_id: str
    mode: str = "auto"
    skill_id: int | None = None
    style_id: int | None = None
    utterances: list = field(default_factory=list)  # Utterance
    annotations: list = field(default_factory=list)  # per-utterance dict
    created: float = field(default_factory=time.time)
    updated: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def append(self, utt, annotation):
        self.utterances.append(utt)
        self.annotations.append(annotation)
        if len(self.utterances) > MAX_TURNS:
            drop = len(self.utterances) - MAX_TURNS
            drop += drop % 2  # keep user-first alternation
            self.utterances = self.utterances[drop:]
            self.annotations = self.annotations[drop:]
        self.updated = time.time()

    def history(self):
        return DialogueHistory(self.utterances)

    def transcript(self):
        return [
            {"speaker": u.speaker, "text": u.text, **ann}
            for u, ann in zip(self.utterances, self.annotations)
        ]


class SessionStore:
    def __init__(self):
        self._lock = threading.Lock()
        self._sessions = {}

    def create(self):
        s = Session(session_id=secrets.token_hex(16))
        with self._lock:
            self._sessions[s.session_id] = s
        return s

    def get(self, session_id):
        with self._lock:
            s = self._sessions.get(session_id)
        if s is None:
            raise ServiceError(404, f"unknown session {session_id!r}")
        return s

    def delete(self, session_id):
        with self._lock:
            if self._sessions.pop(session_id, None) is None:
                raise ServiceError(404, f"unknown session {session_id!r}")

    def __len__(self):
        with self._lock:
            return len(self._sessions)


class Runtime:
    """Read-only bundle of everything a chat turn needs."""

    def __init__(self, engine, managers, skill_ids, families,
                 doc_index=None, graph=None, fixture=None):
        self.engine = engine
        self.managers = managers  # mode -> ManagerModel
        self.skill_ids = skill_ids  # name -> id
        self.families = families  # name -> family
        self.doc_index = doc_index
        self.graph = graph
        self.fixture = fixture
        self._swap_lock = threading.Lock()

    @classmethod
    def load(cls, artifacts_dir):
        """Load every checkpoint written by ``trainer.save_system``; serve-time
        knowledge files are generated alongside if missing."""
        p = lambda name: os.path.join(artifacts_dir, name)
        with open(p("system.json"), encoding="utf-8") as f:
            meta = json.load(f)
        skill_ids = {k: int(v) for k, v in meta["skill_ids"].items()}
        families = meta["families"]
        tok = Tokenizer.load(p("tokenizer.json"))
        model = Backbone.load(p("backbone.ckpt"))
        adapters = AdapterSet()
        for name, sid in sorted(skill_ids.items(), key=lambda kv: kv[1]):
            adapters.register(AdapterStack.load(p(f"adapter_{name}.ckpt")))
        managers = {
            mode: ManagerModel.load(p(f"manager_{mode}.ckpt"), tok)
            for mode in ("multi_turn", "single_turn")
            if os.path.exists(p(f"manager_{mode}.ckpt"))
        }
        styles = {}
        for name, sid in skill_ids.items():
            sp = p(f"style_{sid}.ckpt")
            if os.path.exists(sp):
                styles[sid] = StyleClassifier.load(sp)
        engine = Engine(model, tok, adapters,
                        manager=managers.get("multi_turn"),
                        style_classifiers=styles)
        if not os.path.exists(p("docs.jsonl")):
            corpus_mod.make_serve_artifacts(artifacts_dir)
        doc_index = DocumentIndex(load_documents(p("docs.jsonl")))
        graph = load_graph(p("graph.tsv"))
        fixture = load_fixture(p("fixture.jsonl"))
        return cls(engine, managers, skill_ids, families,
                   doc_index, graph, fixture)

    def family_of(self, skill_id):
        for name, sid in self.skill_ids.items():
            if sid == skill_id:
                return self.families[name]
        return None

    def knowledge_for(self, skill_id, text):
        """Retrieve per the skill's knowledge family from the user text."""
        family = self.family_of(skill_id)
        from .dialogue import MetaKnowledge
        if family == "table_grounded" and self.fixture is not None:
            return api_query(self.fixture, text)
        if family == "graph_grounded" and self.graph is not None:
            return kg_neighbors(self.graph, text)
        if family == "text_grounded" and self.doc_index is not None:
            hits = tfidf_retrieve(self.doc_index, text, top_k=1)
            if hits:
                doc = self.doc_index.get(hits[0][0])
                return MetaKnowledge.text(doc["first_paragraph"])
        return MetaKnowledge.none()

    def register_skill(self, stack):
        """Atomically swap in an engine that also serves ``stack``."""
        with self._swap_lock:
            new_set = AdapterSet()
            for _, s in self.engine.adapters.items():
                new_set.register(s)
            sid = new_set.register(stack)
            self.engine = Engine(
                self.engine.backbone, self.engine.tok, new_set,
                manager=self.engine.manager,
                style_classifiers=self.engine.style_classifiers,
            )
            self.skill_ids[stack.name] = sid
            self.families[stack.name] = "style"
            return sid


def _error(status, detail):
    return JSONResponse(status_code=status, content={"detail": detail})


def create_app(runtime=None, response_filter=None, decode_defaults=None):
    app = FastAPI(title="adapterbot", docs_url=None, redoc_url=None)
    app.state.runtime = runtime
    app.state.sessions = SessionStore()
    app.state.filter = response_filter or BlockListFilter()
    app.state.decode = decode_defaults or DecodeParams(
        mode="greedy", max_new_tokens=24,
    )

    @app.exception_handler(ServiceError)
    async def _service_error(request, exc):
        return _error(exc.status, exc.detail)

    def require_runtime():
        rt = app.state.runtime
        if rt is None:
            raise ServiceError(503, "engine loading")
        return rt

    @app.get("/api/skills")
    def skills():
        rt = require_runtime()
        out = []
        for sid, stack in rt.engine.adapters.items():
            family = rt.families.get(stack.name, "style")
            out.append({
                "skill_id": sid, "name": stack.name, "family": family,
                "knowledge": FAMILY_KINDS.get(family, "none"),
            })
        return out

    @app.get("/api/session/{session_id}")
    def get_session(session_id: str):
        s = app.state.sessions.get(session_id)
        with s.lock:
            return {
                "session_id": s.session_id, "mode": s.mode,
                "skill_id": s.skill_id, "style_id": s.style_id,
                "transcript": s.transcript(),
            }

    @app.delete("/api/session/{session_id}")
    def delete_session(session_id: str):
        app.state.sessions.delete(session_id)
        return {"deleted": session_id}

    @app.post("/api/chat")
    def chat(payload: dict = Body(...)):
        rt = require_runtime()
        text = payload.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ServiceError(400, "text must be a nonempty string")
        if len(text) > MAX_TEXT_CHARS:
            raise ServiceError(400, f"text exceeds {MAX_TEXT_CHARS} chars")
        mode = payload.get("mode")
        if mode is not None and mode not in ("manual", "auto"):
            raise ServiceError(400, f"unknown mode {mode!r}")
        session_id = payload.get("session_id")
        if session_id is None:
            session = app.state.sessions.create()
        else:
            session = app.state.sessions.get(session_id)
        with session.lock:
            if mode is not None:
                session.mode = mode
            if payload.get("skill_id") is not None:
                skill_id = payload["skill_id"]
                if not isinstance(skill_id, int) or skill_id not in rt.engine.adapters:
                    raise ServiceError(400, f"unknown skill_id {skill_id!r}")
                session.skill_id = skill_id
            if payload.get("style_id") is not None:
                style_id = payload["style_id"]
                if style_id not in rt.engine.style_classifiers:
                    raise ServiceError(400, f"unknown style_id {style_id!r}")
                session.style_id = style_id
            if session.mode == "manual" and session.skill_id is None:
                raise ServiceError(400, "manual mode requires skill_id")
            return _chat_turn(app, rt, session, text)

    def _chat_turn(app, rt, session, text):
        user = Utterance("user", text.strip().lower())
        history = DialogueHistory(session.utterances + [user])
        confidence = None
        if session.mode == "manual":
            skill_id = session.skill_id
        else:
            mgr = rt.managers.get("multi_turn") or rt.engine.manager
            if mgr is None:
                raise ServiceError(503, "router unavailable")
            skill_id, probs = mgr.predict(history)
            confidence = float(probs[skill_id])
        meta = rt.knowledge_for(skill_id, user.text)
        decode = app.state.decode
        if session.style_id is not None:
            decode = DecodeParams(
                mode=decode.mode, k=decode.k, temperature=decode.temperature,
                max_new_tokens=decode.max_new_tokens, seed=decode.seed,
                rerank=RerankParams(style_id=session.style_id),
            )
        utt, scored = rt.engine.respond(history, meta, skill_id, decode)
        blocked = app.state.filter(utt.text)
        out_text = FALLBACK_TEXT if blocked else utt.text
        session.append(user, {"skill_id": None, "knowledge": None})
        session.append(
            Utterance("system", out_text, skill_id=skill_id),
            {"skill_id": skill_id, "knowledge": meta.to_dict()},
        )
        resp = {
            "session_id": session.session_id,
            "text": out_text,
            "skill_id": skill_id,
            "confidence": confidence,
            "knowledge": meta.to_dict(),
            "candidates": None,
            "filtered": blocked,
        }
        if scored is not None:
            resp["candidates"] = [
                {"text": c.text, "score": max(c.style_scores.values()),
                 "chosen": c.chosen}
                for c in scored
            ]
        return resp

    return app


@dataclass
class ServeConfig:
    artifacts: str = "artifacts"
    listen: str = "127.0.0.1:8730"
    blocklist: str | None = None
    decode_mode: str = "greedy"
    max_new_tokens: int = 24

    @classmethod
    def resolve(cls, config_path=None, **flags):
        """defaults < config file < explicit flags"""
        values = {}
        if config_path:
            with open(config_path, encoding="utf-8") as f:
                loaded = json.load(f)
            unknown = set(loaded) - set(cls.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            values.update(loaded)
        values.update({k: v for k, v in flags.items() if v is not None})
        return cls(**values)


def build_server(cfg):
    runtime = Runtime.load(cfg.artifacts)
    filt = (BlockListFilter.from_file(cfg.blocklist)
            if cfg.blocklist else BlockListFilter())
    decode = DecodeParams(mode=cfg.decode_mode, max_new_tokens=cfg.max_new_tokens)
    return create_app(runtime=runtime, response_filter=filt,
                      decode_defaults=decode)
