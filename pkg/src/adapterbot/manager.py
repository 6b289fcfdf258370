"""Dialogue manager: maps dialogue history to the skill id of the adapter
that should answer, in either history mode (single_turn = last user
utterance only, multi_turn = full serialized history).

A small from-scratch encoder (token embeddings + one bidirectional
self-attention block + masked mean pooling + linear head) stands in for the
pretrained encoder; it is trained per history mode.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .backbone import sinusoid_table
from .tensor import (
    Tensor, Adam, add, matmul, relu, layer_norm, softmax_rows, reshape,
    transpose, scale, mul, mean_axis, cross_entropy, embedding_lookup,
)

MODES = ("single_turn", "multi_turn")


class DegenerateTrainingError(ValueError):
    pass


class UntrainedManagerError(RuntimeError):
    pass


@dataclass
class RoutingExample:
    history: object  # DialogueHistory
    label: int  # skill_id
    history_mode: str = "multi_turn"


def history_tokens(tok, history, mode, max_len):
    """Token ids the encoder sees for a history under a given mode."""
    if mode not in MODES:
        raise ValueError(f"unknown history mode {mode!r}")
    turns = list(history)
    if mode == "single_turn":
        users = [u for u in turns if u.speaker == "user"]
        if not users:
            raise ValueError("history has no user turn")
        turns = [users[-1]]
    ids = []
    for u in turns:
        sep = tok.sep_usr_id if u.speaker == "user" else tok.sep_sys_id
        ids.extend([sep] + tok.encode(u.text))
    return ids[-max_len:]


class ManagerModel:
    def __init__(self, tok, labels, mode, dim=32, n_heads=2, max_len=64, seed=0):
        if len(labels) < 2:
            raise DegenerateTrainingError(
                "manager needs at least 2 skills; route p=1 without a manager"
            )
        self.tok = tok
        self.labels = sorted(labels)  # class index -> skill_id
        self.mode = mode
        self.dim = dim
        self.n_heads = n_heads
        self.max_len = max_len
        self.seed = seed
        self.trained = False
        rng = np.random.default_rng(seed)
        V, d, p = tok.vocab_size, dim, len(self.labels)

        def w(*shape):
            return Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)

        self.tensors = {
            "emb": w(V, d),
            "ln1_gamma": Tensor(np.ones(d), requires_grad=True),
            "ln1_beta": Tensor(np.zeros(d), requires_grad=True),
            "wq": w(d, d), "wk": w(d, d), "wv": w(d, d), "wo": w(d, d),
            "ln2_gamma": Tensor(np.ones(d), requires_grad=True),
            "ln2_beta": Tensor(np.zeros(d), requires_grad=True),
            "w1": w(d, 4 * d), "b1": Tensor(np.zeros(4 * d), requires_grad=True),
            "w2": w(4 * d, d), "b2": Tensor(np.zeros(d), requires_grad=True),
            "lnf_gamma": Tensor(np.ones(d), requires_grad=True),
            "lnf_beta": Tensor(np.zeros(d), requires_grad=True),
            "head": w(d, p),
            "head_b": Tensor(np.zeros(p), requires_grad=True),
        }
        self.pos = sinusoid_table(max_len, d)

    def parameters(self):
        return list(self.tensors.values())

    def forward(self, ids, pad_mask):
        """ids (B,T) int64, pad_mask (B,T) float 1=real. Returns logits (B,p)."""
        t = self.tensors
        B, T = ids.shape
        d, H = self.dim, self.n_heads
        hd = d // H
        x = add(embedding_lookup(t["emb"], ids), Tensor(self.pos[:T]))
        hn = layer_norm(x, t["ln1_gamma"], t["ln1_beta"])
        q = transpose(reshape(matmul(hn, t["wq"]), (B, T, H, hd)), (0, 2, 1, 3))
        k = transpose(reshape(matmul(hn, t["wk"]), (B, T, H, hd)), (0, 2, 1, 3))
        v = transpose(reshape(matmul(hn, t["wv"]), (B, T, H, hd)), (0, 2, 1, 3))
        key_mask = Tensor(((1.0 - pad_mask) * -1e9)[:, None, None, :])
        scores = add(scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd)),
                     key_mask)
        ctx = reshape(transpose(matmul(softmax_rows(scores), v), (0, 2, 1, 3)),
                      (B, T, d))
        x = add(x, matmul(ctx, t["wo"]))
        hn2 = layer_norm(x, t["ln2_gamma"], t["ln2_beta"])
        ff = matmul(relu(add(matmul(hn2, t["w1"]), t["b1"])), t["w2"])
        x = add(x, add(ff, t["b2"]))
        x = layer_norm(x, t["lnf_gamma"], t["lnf_beta"])
        counts = pad_mask.sum(axis=1, keepdims=True)
        pooled = mul(mean_axis(mul(x, Tensor(pad_mask[:, :, None])), 1),
                     Tensor(T / counts))
        return add(matmul(pooled, t["head"]), t["head_b"])

    def _batch(self, token_lists):
        T = max(len(x) for x in token_lists)
        ids = np.zeros((len(token_lists), T), dtype=np.int64)
        mask = np.zeros((len(token_lists), T), dtype=np.float32)
        for i, x in enumerate(token_lists):
            ids[i, : len(x)] = x
            mask[i, : len(x)] = 1.0
        return ids, mask

    def predict(self, history, mode=None):
        """(skill_id, {skill_id: probability}); argmax ties -> lowest id."""
        if not self.trained:
            raise UntrainedManagerError("manager has not been trained")
        mode = mode or self.mode
        toks = history_tokens(self.tok, history, mode, self.max_len)
        ids, mask = self._batch([toks])
        logits = self.forward(ids, mask).data[0]
        z = logits.astype(np.float64) - logits.max()
        p = np.exp(z)
        p /= p.sum()
        best = int(np.argmax(p))
        return self.labels[best], {s: float(p[i]) for i, s in enumerate(self.labels)}

    def predict_batch(self, histories, mode=None, batch_size=64):
        if not self.trained:
            raise UntrainedManagerError("manager has not been trained")
        mode = mode or self.mode
        out = []
        lists = [history_tokens(self.tok, h, mode, self.max_len) for h in histories]
        for i in range(0, len(lists), batch_size):
            ids, mask = self._batch(lists[i:i + batch_size])
            logits = self.forward(ids, mask).data
            for row in logits:
                out.append(self.labels[int(np.argmax(row))])
        return out

    def snapshot(self):
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def restore(self, snap):
        for k, t in self.tensors.items():
            t.data = snap[k].copy()

    def save(self, path):
        cfg = {
            "labels": self.labels, "mode": self.mode, "dim": self.dim,
            "n_heads": self.n_heads, "max_len": self.max_len,
            "seed": self.seed, "trained": self.trained,
        }
        checkpoint.save_tensors(
            path, cfg, {k: t.data for k, t in self.tensors.items()}
        )

    @classmethod
    def load(cls, path, tok):
        cfg, tensors = checkpoint.load_tensors(path)
        model = cls(tok, cfg["labels"], cfg["mode"], dim=cfg["dim"],
                    n_heads=cfg["n_heads"], max_len=cfg["max_len"],
                    seed=cfg["seed"])
        for k, t in model.tensors.items():
            t.data = tensors[k]
        model.trained = cfg["trained"]
        return model


def train_manager(examples, tok, cfg, mode="multi_turn", dim=32, n_heads=2,
                  max_len=64, holdout_fraction=0.1):
    """Cross-entropy training with early stopping on a held-out split.

    Returns (model, log dict with per-epoch losses and validation accuracy).
    """
    labels = sorted({ex.label for ex in examples})
    if len(labels) < 2:
        raise DegenerateTrainingError("need at least 2 distinct labels")
    model = ManagerModel(tok, labels, mode, dim=dim, n_heads=n_heads,
                         max_len=max_len, seed=cfg.seed)
    class_of = {s: i for i, s in enumerate(labels)}
    data = [
        (history_tokens(tok, ex.history, mode, max_len), class_of[ex.label])
        for ex in examples
    ]
    rng = np.random.default_rng([cfg.seed, 1])
    order = rng.permutation(len(data))
    n_hold = max(1, int(len(data) * holdout_fraction))
    hold = [data[i] for i in order[:n_hold]]
    train = [data[i] for i in order[n_hold:]]
    if len({y for _, y in train}) < 2:
        raise DegenerateTrainingError("training split collapsed to one class")

    opt = Adam(model.parameters(), lr=cfg.lr)
    log = {"epochs": [], "stopped_at": None}
    best_acc = -1.0
    best = None
    bad = 0
    t0 = time.monotonic()
    for epoch in range(cfg.max_epochs):
        erng = np.random.default_rng([cfg.seed, 2, epoch])
        idx = erng.permutation(len(train))
        losses = []
        for s in range(0, len(idx), cfg.batch_size):
            chunk = [train[i] for i in idx[s:s + cfg.batch_size]]
            ids, mask = model._batch([c[0] for c in chunk])
            targets = np.array([c[1] for c in chunk], dtype=np.int64)
            logits = model.forward(ids, mask)
            loss = cross_entropy(logits, targets)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        model.trained = True
        acc = _holdout_accuracy(model, hold)
        log["epochs"].append({
            "epoch": epoch, "train_loss": float(np.mean(losses)), "val_acc": acc,
        })
        if acc > best_acc:
            best_acc, best, bad = acc, model.snapshot(), 0
        else:
            bad += 1
            if bad >= cfg.patience:
                log["stopped_at"] = epoch
                break
    if best is not None:
        model.restore(best)
    model.trained = True
    log["best_val_acc"] = best_acc
    log["wall_clock"] = time.monotonic() - t0
    return model, log


def _holdout_accuracy(model, hold):
    if not hold:
        return float("nan")
    correct = 0
    for s in range(0, len(hold), 64):
        chunk = hold[s:s + 64]
        ids, mask = model._batch([c[0] for c in chunk])
        logits = model.forward(ids, mask).data
        preds = logits.argmax(axis=1)
        correct += int((preds == np.array([c[1] for c in chunk])).sum())
    return correct / len(hold)
