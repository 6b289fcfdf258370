"""Knowledge retrieval: tf-idf document search, knowledge-graph first-order
neighbors, and a fixture-backed slot API.

All three are pure and deterministic; ties break toward the lowest id.
"""

import json
import math
import string

from .dialogue import MetaKnowledge

_PUNCT = str.maketrans("", "", string.punctuation)


def _words(text):
    return [w for w in text.lower().translate(_PUNCT).split() if w]


def _ngrams(words):
    grams = list(words)
    grams.extend(f"{a} {b}" for a, b in zip(words, words[1:]))
    return grams


class DocumentIndex:
    """tf-idf index over unigrams+bigrams of title + body.

    tf = 1 + ln(count); idf = ln((N+1)/(df+1)) + 1; vectors L2-normalized.
    """

    def __init__(self, documents):
        self.documents = list(documents)
        df = {}
        raw = []
        for doc in self.documents:
            counts = {}
            for g in _ngrams(_words(doc["title"] + " " + doc["full_text"])):
                counts[g] = counts.get(g, 0) + 1
            raw.append(counts)
            for g in counts:
                df[g] = df.get(g, 0) + 1
        n = len(self.documents)
        self.idf = {g: math.log((n + 1) / (c + 1)) + 1.0 for g, c in df.items()}
        self.doc_vectors = []
        for counts in raw:
            vec = {g: (1.0 + math.log(c)) * self.idf[g] for g, c in counts.items()}
            norm = math.sqrt(sum(w * w for w in vec.values()))
            if norm > 0:
                vec = {g: w / norm for g, w in vec.items()}
            self.doc_vectors.append(vec)

    def query_vector(self, query):
        counts = {}
        for g in _ngrams(_words(query)):
            if g in self.idf:
                counts[g] = counts.get(g, 0) + 1
        vec = {g: (1.0 + math.log(c)) * self.idf[g] for g, c in counts.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        if norm > 0:
            vec = {g: w / norm for g, w in vec.items()}
        return vec

    def get(self, doc_id):
        for doc in self.documents:
            if doc["id"] == doc_id:
                return doc
        raise KeyError(f"unknown document id {doc_id!r}")


def tfidf_retrieve(index, query, top_k=1):
    """Top-k (doc id, score) by dot product; empty when the query shares no
    term with the vocabulary."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    q = index.query_vector(query)
    if not q:
        return []
    scored = []
    for doc, vec in zip(index.documents, index.doc_vectors):
        s = 0.0
        for g, w in q.items():
            if g in vec:
                s += w * vec[g]
        scored.append((doc["id"], s))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:top_k]


def load_documents(path):
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                docs.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad document record: {e}") from e
    return docs


class KnowledgeGraph:
    def __init__(self, triples):
        self.triples = [tuple(t) for t in triples]
        self.entities = set()
        self.adjacency = {}
        for i, (h, r, t) in enumerate(self.triples):
            if not (h and r and t):
                raise ValueError(f"malformed triple at index {i}")
            for e in (h, t):
                self.entities.add(e)
                self.adjacency.setdefault(e.lower(), []).append(i)
        for e in self.entities:
            assert e.lower() in self.adjacency, "adjacency incomplete"

    @property
    def max_entity_words(self):
        return max((len(e.split()) for e in self.entities), default=0)


def load_graph(path):
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            triples.append(tuple(parts))
    return KnowledgeGraph(triples)


def match_entities(graph, utterance):
    """Case-insensitive longest-match over contiguous token spans."""
    words = _words(utterance)
    matched = []
    i = 0
    while i < len(words):
        found = None
        for span in range(min(graph.max_entity_words, len(words) - i), 0, -1):
            cand = " ".join(words[i:i + span])
            if cand in graph.adjacency:
                found = (cand, span)
                break
        if found:
            matched.append(found[0])
            i += found[1]
        else:
            i += 1
    return matched


def kg_neighbors(graph, utterance):
    """All triples incident to any matched entity, deduplicated, graph order."""
    matched = match_entities(graph, utterance)
    if not matched:
        return MetaKnowledge.none()
    ids = set()
    for e in matched:
        ids.update(graph.adjacency[e])
    return MetaKnowledge.graph([graph.triples[i] for i in sorted(ids)])


class ApiFixture:
    def __init__(self, name, rows, default_location):
        # rows: list of {"location": str, "slots": {slot: value}} in file order
        self.name = name
        self.rows = [(r["location"], list(r["slots"].items())) for r in rows]
        self.default_location = default_location
        locations = [loc for loc, _ in self.rows]
        if default_location not in locations:
            raise ValueError(f"default location {default_location!r} not in fixture")

    def row_for(self, location):
        for loc, slots in self.rows:
            if loc == location:
                return slots
        raise KeyError(location)


def load_fixture(path):
    rows = []
    name = "api"
    default = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad fixture record: {e}") from e
            if "default_location" in rec:
                name = rec.get("name", name)
                default = rec["default_location"]
            else:
                rows.append(rec)
    if default is None:
        raise ValueError(f"{path}: missing default_location record")
    return ApiFixture(name, rows, default)


def api_query(fixture, utterance):
    """Row of the first fixture location mentioned, else the default row."""
    low = utterance.lower()
    for loc, slots in fixture.rows:
        if loc.lower() in low:
            return MetaKnowledge.table(slots)
    return MetaKnowledge.table(fixture.row_for(fixture.default_location))
