"""Sample-and-rerank: draw several candidate responses, score each with a
per-style logistic classifier over raw 1–2 gram counts, return the best.

Raw (unnormalized) counts keep the score monotone in strongly weighted
n-grams: appending a positively weighted n-gram can only raise the logit.
"""

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import checkpoint
from .tensor import Tensor


def _grams(text):
    words = text.lower().split()
    out = list(words)
    out.extend(f"{a} {b}" for a, b in zip(words, words[1:]))
    return out


@dataclass
class ScoredResponse:
    text: str
    tokens: list
    style_scores: dict
    chosen: bool = False


class StyleClassifier:
    def __init__(self, style_id, vocab, weights, bias):
        self.style_id = style_id
        self.vocab = dict(vocab)  # ngram -> feature index
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)
        self.trained = True

    def featurize(self, text):
        x = np.zeros(len(self.vocab), dtype=np.float64)
        for g in _grams(text):
            j = self.vocab.get(g)
            if j is not None:
                x[j] += 1.0
        return x

    def score(self, text):
        z = float(self.weights @ self.featurize(text)) + self.bias
        return 1.0 / (1.0 + math.exp(-z))

    def save(self, path):
        order = sorted(self.vocab, key=self.vocab.get)
        checkpoint.save_tensors(
            path,
            {"style_id": self.style_id, "bias": self.bias, "ngrams": order},
            {"weights": self.weights.astype(np.float32)},
        )

    @classmethod
    def load(cls, path):
        cfg, tensors = checkpoint.load_tensors(path)
        vocab = {g: i for i, g in enumerate(cfg["ngrams"])}
        return cls(cfg["style_id"], vocab, tensors["weights"], cfg["bias"])


def train_style_classifier(positive, negative, style_id=0, seed=0,
                           lr=0.5, epochs=300, l2=1e-4):
    """Full-batch logistic regression; deterministic per seed.

    Returns (classifier, held-out accuracy) on a seeded 90/10 split.
    """
    if not positive or not negative:
        raise ValueError("both classes must be nonempty")
    if set(positive) == set(negative):
        warnings.warn("style classes fully overlap; training anyway")
    texts = list(positive) + list(negative)
    labels = np.array([1.0] * len(positive) + [0.0] * len(negative))
    vocab = {}
    for t in texts:
        for g in _grams(t):
            if g not in vocab:
                vocab[g] = len(vocab)
    X = np.zeros((len(texts), len(vocab)), dtype=np.float64)
    for i, t in enumerate(texts):
        for g in _grams(t):
            X[i, vocab[g]] += 1.0

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(texts))
    n_holdout = max(1, len(texts) // 10)
    hold, train = order[:n_holdout], order[n_holdout:]
    if len({labels[i] for i in train}) < 2:  # tiny inputs: keep both classes
        hold, train = order[:0], order
    w = np.zeros(len(vocab), dtype=np.float64)
    b = 0.0
    for _ in range(epochs):
        z = X[train] @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        err = p - labels[train]
        w -= lr * (X[train].T @ err / len(train) + l2 * w)
        b -= lr * float(err.mean())
    clf = StyleClassifier(style_id, vocab, w, b)
    if len(hold):
        preds = np.array([clf.score(texts[i]) >= 0.5 for i in hold])
        acc = float((preds == labels[hold].astype(bool)).mean())
    else:
        acc = float("nan")
    return clf, acc


def choose(scored):
    """Mark the argmax-score candidate chosen (ties -> lowest index)."""
    if not scored:
        raise ValueError("no candidates to choose from")
    scores = [max(c.style_scores.values()) if c.style_scores else 0.0 for c in scored]
    best = int(np.argmax(np.asarray(scores)))
    out = [replace(c, chosen=(i == best)) for i, c in enumerate(scored)]
    return out


def rerank(engine, history, meta, skill_id, style_id, n, decode):
    """Generate n candidates with sub-seeds seed+0..n-1, score, pick argmax."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if style_id not in engine.style_classifiers:
        raise KeyError(f"no classifier for style_id {style_id}")
    clf = engine.style_classifiers[style_id]
    base = replace(decode, rerank=None)
    if base.mode == "greedy":
        base = replace(base, mode="top_k", k=max(base.k, 3))
    candidates = []
    for i in range(n):
        sub = replace(base, seed=decode.seed + i)
        utt, _ = engine.respond(history, meta, skill_id, sub)
        candidates.append(ScoredResponse(
            text=utt.text,
            tokens=utt.text.split(),
            style_scores={style_id: clf.score(utt.text)},
        ))
    return choose(candidates)
