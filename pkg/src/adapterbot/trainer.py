"""Training loops: backbone pretraining (then freeze), per-skill adapter
training over the frozen backbone, manager training, and style-classifier
training; plus the end-to-end pipeline that builds a complete system.

Adapter runs derive all randomness from (seed, skill name), never from
global state or training order, so training skills in any order produces
identical per-skill weights.
"""

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import corpus as corpus_mod
from .adapters import AdapterSet, adapter_init
from .backbone import Backbone, FrozenBackboneError, ModelConfig
from .dialogue import DecodeParams
from .engine import Engine, serialize_input
from .manager import RoutingExample, train_manager
from .reranker import train_style_classifier
from .tensor import Adam, cross_entropy


@dataclass
class TrainConfig:
    lr: float = 6e-4
    batch_size: int = 16
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    eval_every: int = 0  # 0 = once per epoch

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("bad training configuration")


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)   # (step, loss)
    evals: list = field(default_factory=list)   # (step, val_ppl or val_acc)
    stopping_step: int = 0
    wall_clock: float = 0.0
    summary: dict = field(default_factory=dict)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"kind": "summary", **self.summary,
                                "stopping_step": self.stopping_step,
                                "wall_clock": self.wall_clock}) + "\n")
            for step, loss in self.steps:
                f.write(json.dumps({"kind": "step", "step": step,
                                    "loss": loss}) + "\n")
            for step, val in self.evals:
                f.write(json.dumps({"kind": "eval", "step": step,
                                    "value": val}) + "\n")


class IsolationError(RuntimeError):
    pass


def _seed_rng(seed, *names):
    parts = [seed] + [corpus_mod._stable_int(str(n)) for n in names]
    return np.random.default_rng(parts)


# ---------------------------------------------------------------------------
# sequence assembly
# ---------------------------------------------------------------------------

def dialogue_sequence(tok, turns):
    """Plain LM sequence for a full dialogue (no knowledge block)."""
    ids = []
    for speaker, text in turns:
        sep = tok.sep_usr_id if speaker == "user" else tok.sep_sys_id
        ids.extend([sep] + tok.encode(text))
    ids.append(tok.eos_id)
    return ids


def row_sequence(tok, row, n_max):
    """(ids, prompt_len) for one training row: serialized context +
    ``<sys>`` + gold response + ``<eos>``; loss covers the response only."""
    resp = tok.encode(row.gold_response)
    prompt = serialize_input(
        tok, row.dialogue_history(), row.meta, n_max,
        reserve=len(resp) + 2,
    )
    prompt = prompt + [tok.sep_sys_id]
    return prompt + resp + [tok.eos_id], len(prompt)


def _sequence_batches(seqs, batch_size, rng, pad_id):
    """Yield (ids (B,T), target weights (B,T-1)) over shuffled sequences.

    seqs: list of (ids, start) where targets before ``start-1`` get weight 0.
    """
    order = rng.permutation(len(seqs))
    for s in range(0, len(order), batch_size):
        chunk = [seqs[i] for i in order[s:s + batch_size]]
        T = max(len(ids) for ids, _ in chunk)
        batch = np.full((len(chunk), T), pad_id, dtype=np.int64)
        weights = np.zeros((len(chunk), T - 1), dtype=np.float32)
        for r, (ids, start) in enumerate(chunk):
            batch[r, : len(ids)] = ids
            weights[r, max(start - 1, 0): len(ids) - 1] = 1.0
        yield batch, weights


def _lm_loss(model, batch, weights, adapter=None):
    logits = model.forward(batch, adapter)
    B, T, V = logits.data.shape
    from .tensor import reshape
    flat = reshape(logits, (B * T, V))
    # score positions 0..T-2 predicting batch[:,1:]
    targets = np.concatenate([batch[:, 1:], np.zeros((B, 1), dtype=np.int64)], axis=1)
    w = np.concatenate([weights, np.zeros((B, 1), dtype=np.float32)], axis=1)
    return cross_entropy(flat, targets.reshape(-1), w.reshape(-1)), logits


def _eval_seqs(rows_or_dialogs):
    """(ids, mask) pairs for Backbone.perplexity."""
    out = []
    for ids, start in rows_or_dialogs:
        mask = np.zeros(len(ids), dtype=bool)
        mask[start:] = True
        out.append((ids, mask))
    return out


# ---------------------------------------------------------------------------
# backbone pretraining
# ---------------------------------------------------------------------------

def pretrain_backbone(model, datasets, tok, cfg, max_epochs=3):
    """Standard LM training on pooled dialogues without knowledge prefixes;
    freezes and hashes the model on return."""
    if model.frozen:
        raise FrozenBackboneError("backbone is already frozen")
    train_seqs, val_seqs = [], []
    for ds in datasets.values():
        for which, bucket in (("train", train_seqs), ("valid", val_seqs)):
            for row in ds.split(which):
                if row.turn_index != 3:
                    continue
                turns = row.history + [("system", row.gold_response)]
                bucket.append((dialogue_sequence(tok, turns), 1))
    log = TrainLog()
    opt = Adam(model.parameters(), lr=cfg.lr)
    step = 0
    t0 = time.monotonic()
    for epoch in range(max_epochs):
        rng = _seed_rng(cfg.seed, "pretrain", epoch)
        for batch, weights in _sequence_batches(
            train_seqs, cfg.batch_size, rng, tok.pad_id
        ):
            loss, _ = _lm_loss(model, batch, weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            log.steps.append((step, loss.item()))
        val_ppl = model.perplexity(_eval_seqs(val_seqs), pad_id=tok.pad_id)
        log.evals.append((step, val_ppl))
    log.stopping_step = step
    log.wall_clock = time.monotonic() - t0
    frozen_hash = model.freeze()
    log.summary = {
        "task": "pretrain", "val_ppl": log.evals[-1][1],
        "epochs": max_epochs, "frozen_hash": frozen_hash,
    }
    return log


# ---------------------------------------------------------------------------
# adapter training
# ---------------------------------------------------------------------------

def _audit_masking(logits, weights, batch_shape):
    B, T, V = logits.data.shape
    g = logits.grad.reshape(B, T, V)
    w = np.concatenate(
        [weights, np.zeros((B, 1), dtype=np.float32)], axis=1
    )
    ctx = g[w == 0.0]
    if ctx.size and not np.all(ctx == 0.0):
        raise AssertionError("context/knowledge positions received gradient")


def train_adapter(model, stack, dataset, tok, cfg, audit=True):
    """NLL training of one adapter stack over the frozen backbone.

    Response-token loss only; early stopping on validation perplexity with
    best-checkpoint retention; the stack is sealed on return.
    """
    if not model.frozen:
        raise FrozenBackboneError(
            "adapter training requires a frozen backbone"
        )
    if stack.sealed:
        raise ValueError("stack is already sealed")
    hash_before = model.hash
    n_max = model.config.max_seq_len
    train_seqs = [row_sequence(tok, r, n_max) for r in dataset.split("train")]
    val_seqs = _eval_seqs(
        row_sequence(tok, r, n_max) for r in dataset.split("valid")
    )
    log = TrainLog()
    opt = Adam(stack.parameters(), lr=cfg.lr)
    backbone_tensors = model.named_tensors()
    best_ppl = float("inf")
    best = None
    bad = 0
    step = 0
    t0 = time.monotonic()
    stopped = False
    for epoch in range(cfg.max_epochs):
        rng = _seed_rng(cfg.seed, "adapter", dataset.name, epoch)
        first = True
        for batch, weights in _sequence_batches(
            train_seqs, cfg.batch_size, rng, tok.pad_id
        ):
            loss, logits = _lm_loss(model, batch, weights, adapter=stack)
            opt.zero_grad()
            loss.backward()
            if audit and first:
                for name, t in backbone_tensors.items():
                    if t.grad is not None:
                        raise AssertionError(f"backbone tensor {name} got gradient")
                _audit_masking(logits, weights, batch.shape)
                first = False
            opt.step()
            step += 1
            log.steps.append((step, loss.item()))
        val_ppl = model.perplexity(val_seqs, adapter=stack, pad_id=tok.pad_id)
        log.evals.append((step, val_ppl))
        if val_ppl < best_ppl:
            best_ppl = val_ppl
            best = {k: t.data.copy() for k, t in stack.named_tensors().items()}
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                stopped = True
                break
    if best is not None:
        for k, t in stack.named_tensors().items():
            t.data = best[k]
    log.stopping_step = step
    log.wall_clock = time.monotonic() - t0
    if model.content_hash() != hash_before:
        raise IsolationError("backbone changed during adapter training")
    stack.provenance.update({
        "corpus": dataset.name, "seed": cfg.seed,
        "epochs": len(log.evals), "early_stopped": stopped,
    })
    stack.seal()
    log.summary = {
        "task": "adapter", "skill": dataset.name,
        "best_val_ppl": best_ppl, "epochs": len(log.evals),
    }
    return log


def skill_seed(cfg_seed, name):
    """Stable per-skill seed, independent of training order."""
    return int(_seed_rng(cfg_seed, "skill", name).integers(2 ** 31))


def probe_outputs(model, tok, stack, dataset, n_probes=3):
    """Greedy outputs on fixed validation prompts (isolation fingerprint)."""
    rows = [r for r in dataset.split("valid") if r.turn_index == 1][:n_probes]
    decode = DecodeParams(mode="greedy", max_new_tokens=16)
    outs = []
    for row in rows:
        ids = serialize_input(
            tok, row.dialogue_history(), row.meta,
            model.config.max_seq_len, reserve=decode.max_new_tokens,
        ) + [tok.sep_sys_id]
        outs.append(tuple(model.generate(ids, stack, decode, eos_id=tok.eos_id)))
    return outs


def train_all(model, tok, datasets, cfg, audit=True):
    """Train adapters sequentially in suite order with isolation audits.

    Returns (AdapterSet, {skill: TrainLog}).
    """
    adapter_set = AdapterSet()
    logs = {}
    trained = []  # (name, stack, dataset, probes)
    for name, ds in datasets.items():
        stack = adapter_init(
            model.config, seed=skill_seed(cfg.seed, name), name=name,
        )
        per_skill_cfg = TrainConfig(
            lr=cfg.lr, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
            patience=cfg.patience, seed=skill_seed(cfg.seed, name),
        )
        logs[name] = train_adapter(model, stack, ds, tok, per_skill_cfg, audit=audit)
        adapter_set.register(stack)
        for prior_name, prior_stack, prior_ds, prior_probes in trained:
            if probe_outputs(model, tok, prior_stack, prior_ds) != prior_probes:
                raise IsolationError(
                    f"training {name!r} changed probe outputs of {prior_name!r}"
                )
        trained.append((name, stack, ds, probe_outputs(model, tok, stack, ds)))
    return adapter_set, logs


# ---------------------------------------------------------------------------
# manager + styles + full pipeline
# ---------------------------------------------------------------------------

def routing_examples(datasets, skill_ids, which="train"):
    out = []
    for name, ds in datasets.items():
        for row in ds.split(which):
            out.append(RoutingExample(row.dialogue_history(), skill_ids[name]))
    return out


def train_styles(datasets, skill_ids, families, seed=0):
    """One logistic classifier per style-family skill: its gold responses
    against every other skill's."""
    out = {}
    for name, ds in datasets.items():
        if families[name] != "style":
            continue
        pos = [r.gold_response for r in ds.split("train")]
        neg = [
            r.gold_response
            for other, ods in datasets.items() if other != name
            for r in ods.split("train")
        ]
        clf, acc = train_style_classifier(
            pos, neg, style_id=skill_ids[name], seed=seed,
        )
        out[skill_ids[name]] = (clf, acc)
    return out


@dataclass
class BuiltSystem:
    engine: Engine
    datasets: dict
    managers: dict  # mode -> ManagerModel
    logs: dict
    skill_ids: dict
    families: dict


# seed of the reference run all calibrated thresholds were measured at
REFERENCE_SEED = 11


def build_system(cfg=None, suite=None, pretrain_epochs=50, manager_cfg=None):
    """Synthesize the suite and train every component, in memory."""
    cfg = cfg or TrainConfig(seed=REFERENCE_SEED)
    suite = suite or corpus_mod.load_suite_def()
    datasets = corpus_mod.synth_suite(suite)
    tok = corpus_mod.build_tokenizer(suite)
    model = Backbone(ModelConfig(vocab_size=tok.vocab_size), seed=cfg.seed)
    logs = {"pretrain": pretrain_backbone(model, datasets, tok, cfg,
                                          max_epochs=pretrain_epochs)}
    adapter_set, adapter_logs = train_all(model, tok, datasets, cfg)
    logs.update(adapter_logs)
    skill_ids = {
        stack.name: sid for sid, stack in adapter_set.items()
    }
    families = {name: ds.family for name, ds in datasets.items()}
    managers = {}
    mgr_cfg = manager_cfg or TrainConfig(
        lr=3e-3, batch_size=32, max_epochs=12, patience=3, seed=cfg.seed,
    )
    examples = routing_examples(datasets, skill_ids)
    for mode in ("multi_turn", "single_turn"):
        managers[mode], mgr_log = train_manager(examples, tok, mgr_cfg, mode=mode)
        logs[f"manager_{mode}"] = mgr_log
    styles = train_styles(datasets, skill_ids, families, seed=cfg.seed)
    engine = Engine(
        model, tok, adapter_set, manager=managers["multi_turn"],
        style_classifiers={sid: clf for sid, (clf, _) in styles.items()},
    )
    for sid, (_, acc) in styles.items():
        logs[f"style_{sid}"] = acc
    return BuiltSystem(engine, datasets, managers, logs, skill_ids, families)


def save_system(system, outdir):
    """Write every artifact of a built system under ``outdir``."""
    import os
    os.makedirs(outdir, exist_ok=True)
    paths = {"backbone": os.path.join(outdir, "backbone.ckpt"),
             "tokenizer": os.path.join(outdir, "tokenizer.json"),
             "corpus": os.path.join(outdir, "corpus.jsonl")}
    system.engine.backbone.save(paths["backbone"])
    system.engine.tok.save(paths["tokenizer"])
    corpus_mod.save_suite(system.datasets, paths["corpus"])
    for sid, stack in system.engine.adapters.items():
        p = os.path.join(outdir, f"adapter_{stack.name}.ckpt")
        stack.save(p)
        paths[f"adapter_{stack.name}"] = p
    for mode, mgr in system.managers.items():
        p = os.path.join(outdir, f"manager_{mode}.ckpt")
        mgr.save(p)
        paths[f"manager_{mode}"] = p
    for sid, clf in system.engine.style_classifiers.items():
        p = os.path.join(outdir, f"style_{sid}.ckpt")
        clf.save(p)
        paths[f"style_{sid}"] = p
    meta = {
        "skill_ids": system.skill_ids,
        "families": system.families,
    }
    paths["meta"] = os.path.join(outdir, "system.json")
    with open(paths["meta"], "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return paths
