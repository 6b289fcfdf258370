"""Automatic response-quality metrics and the evaluation report container.

Metric tokenization is whitespace splitting on lowercased text. BLEU is
corpus-level with add-0 clipping and brevity penalty; entity F1 scores gold
entities only (a candidate is never penalized for extra entities, so
per-case precision is 1 whenever anything is found).
"""

import json
import math
from collections import Counter
from dataclasses import dataclass, field


def metric_tokens(text):
    return text.lower().split()


def _as_corpus(x):
    if not x:
        return []
    if isinstance(x[0], str):
        return [list(x)]
    return [list(t) for t in x]


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, max_n=4):
    """Corpus-level BLEU; accepts one token list per side or parallel lists."""
    cands, refs = _as_corpus(candidates), _as_corpus(references)
    if len(cands) != len(refs):
        raise ValueError("candidate/reference counts differ")
    cand_len = sum(len(c) for c in cands)
    ref_len = sum(len(r) for r in refs)
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched = 0
        total = 0
        for c, r in zip(cands, refs):
            cc = _ngram_counts(c, n)
            rc = _ngram_counts(r, n)
            matched += sum(min(k, rc[g]) for g, k in cc.items())
            total += max(len(c) - n + 1, 0)
        if total == 0 or matched == 0:
            return 0.0
        log_sum += math.log(matched / total) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum)


def avg_bleu(candidates, references):
    """Mean of BLEU-1, BLEU-2 and BLEU-3."""
    return sum(bleu(candidates, references, n) for n in (1, 2, 3)) / 3.0


def unigram_f1(candidate, reference):
    """Multiset unigram overlap F1 between two token lists."""
    c, r = Counter(candidate), Counter(reference)
    overlap = sum(min(k, r[w]) for w, k in c.items())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(c.values())
    recall = overlap / sum(r.values())
    return 2 * precision * recall / (precision + recall)


def _contains_phrase(tokens, phrase_tokens):
    n = len(phrase_tokens)
    if n == 0 or n > len(tokens):
        return False
    return any(tokens[i:i + n] == phrase_tokens for i in range(len(tokens) - n + 1))


def entity_hits(candidate_text, gold_entities):
    """Count gold entities appearing verbatim (case-insensitive) in the text."""
    toks = metric_tokens(candidate_text)
    return sum(
        1 for e in gold_entities if _contains_phrase(toks, metric_tokens(e))
    )


def entity_f1(candidate_text, gold_entities):
    """Per-example F1 over gold entities; None when the gold set is empty."""
    if not gold_entities:
        return None
    h = entity_hits(candidate_text, gold_entities)
    return 2.0 * h / (h + len(gold_entities))


def entity_f1_corpus(cases):
    """Micro-averaged over (candidate_text, gold_entities) pairs; skips
    examples with empty gold sets."""
    hits = 0
    gold = 0
    for text, ents in cases:
        if not ents:
            continue
        hits += entity_hits(text, ents)
        gold += len(ents)
    if gold == 0:
        return 0.0
    return 2.0 * hits / (hits + gold)


def distinct_n(texts, n):
    """Unique / total n-grams pooled over a corpus of token lists."""
    if not texts:
        raise ValueError("distinct_n needs a nonempty corpus")
    seen = set()
    total = 0
    for t in _as_corpus(texts):
        for i in range(len(t) - n + 1):
            seen.add(tuple(t[i:i + n]))
            total += 1
    if total == 0:
        return 0.0
    return len(seen) / total


def perplexity_from_nll(nlls):
    if len(nlls) == 0:
        raise ValueError("no scored tokens")
    return math.exp(sum(nlls) / len(nlls))


@dataclass
class EvalReport:
    corpus_id: str
    model_ids: dict
    config: dict
    metrics: dict = field(default_factory=dict)  # skill name -> {metric: value}
    per_example: list = field(default_factory=list)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            header = {
                "kind": "summary", "corpus_id": self.corpus_id,
                "model_ids": self.model_ids, "config": self.config,
                "metrics": self.metrics,
            }
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for ex in self.per_example:
                f.write(json.dumps({"kind": "example", **ex}, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            header = json.loads(f.readline())
            if header.get("kind") != "summary":
                raise ValueError(f"{path}: missing summary header")
            per_example = []
            for line in f:
                if not line.strip():
                    continue
                rec = json.loads(line)
                rec.pop("kind", None)
                per_example.append(rec)
        return cls(
            corpus_id=header["corpus_id"], model_ids=header["model_ids"],
            config=header["config"], metrics=header["metrics"],
            per_example=per_example,
        )

    def table(self):
        """Human-readable per-skill metric table."""
        if not self.metrics:
            return "(no metrics)"
        cols = sorted({m for row in self.metrics.values() for m in row})
        width = max(len(s) for s in list(self.metrics) + ["skill"]) + 2
        lines = ["skill".ljust(width) + "  ".join(c.rjust(9) for c in cols)]
        for skill in sorted(self.metrics):
            row = self.metrics[skill]
            cells = [
                f"{row[c]:9.4f}" if isinstance(row.get(c), (int, float)) else " " * 9
                for c in cols
            ]
            lines.append(skill.ljust(width) + "  ".join(cells))
        return "\n".join(lines)
