"""Command-line entrypoint: corpus synthesis, training, evaluation, a
terminal chat REPL, and the HTTP service.

Every subcommand prints a reproducibility header (resolved options + seed)
and funnels all randomness through the seed it prints. Exit codes: 0
success, 1 runtime failure, 2 usage/config error.
"""

import json
import sys

import click
import numpy as np

from . import corpus as corpus_mod
from .adapters import adapter_init
from .backbone import Backbone
from .dialogue import DecodeParams, RerankParams
from .manager import train_manager
from .metrics import (EvalReport, avg_bleu, bleu, distinct_n, entity_f1_corpus,
                      metric_tokens, unigram_f1)
from .reranker import train_style_classifier
from .tokenizer import Tokenizer
from .trainer import (TrainConfig, build_system, pretrain_backbone,
                      routing_examples, row_sequence, save_system,
                      train_adapter, _eval_seqs, skill_seed)

KNOWN_METRICS = ("bleu", "avg_bleu", "f1", "entity_f1", "ppl",
                 "distinct_1", "distinct_2")


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise click.UsageError(f"bad config file {path}: {e}")


def _resolve(cfg_file, **flags):
    """Flags win over config file; config file wins over defaults (None)."""
    out = dict(cfg_file)
    for k, v in flags.items():
        if v is not None:
            out[k] = v
    return out


def _header(command, resolved):
    click.echo(f"run-config {command} " +
               json.dumps(resolved, sort_keys=True, default=str))


def _train_config(resolved):
    return TrainConfig(
        lr=float(resolved.get("lr", 6e-4)),
        batch_size=int(resolved.get("batch", 16)),
        max_epochs=int(resolved.get("epochs", 20)),
        patience=int(resolved.get("patience", 3)),
        seed=int(resolved.get("seed", 0)),
    )


@click.group()
def main():
    pass


def _common(f):
    f = click.option("--config", "config_path", type=click.Path(),
                     envvar="ADAPTERBOT_CONFIG", default=None)(f)
    f = click.option("--seed", type=int, envvar="ADAPTERBOT_SEED",
                     default=None)(f)
    return f


@main.command("synth-corpus")
@_common
@click.option("--out", required=True, type=click.Path(), envvar="ADAPTERBOT_OUT")
@click.option("--include-extras", is_flag=True, default=False)
def synth_corpus(config_path, seed, out, include_extras):
    """Generate the reference dialogue suite to a corpus file."""
    resolved = _resolve(_load_config(config_path), seed=seed, out=out,
                        include_extras=include_extras)
    _header("synth-corpus", resolved)
    suite = corpus_mod.load_suite_def()
    if resolved.get("seed") is not None:
        suite = dict(suite, seed=int(resolved["seed"]))
    datasets = corpus_mod.synth_suite(
        suite, include_extras=resolved.get("include_extras", False))
    corpus_mod.save_suite(datasets, resolved["out"])
    n = sum(len(d.rows) for d in datasets.values())
    click.echo(f"wrote {n} rows ({len(datasets)} skills) to {resolved['out']}")


@main.command()
@_common
@click.option("--corpus", "corpus_path", required=True, type=click.Path(),
              envvar="ADAPTERBOT_CORPUS")
@click.option("--out", required=True, type=click.Path(), envvar="ADAPTERBOT_OUT")
@click.option("--lr", type=float, envvar="ADAPTERBOT_LR", default=None)
@click.option("--batch", type=int, envvar="ADAPTERBOT_BATCH", default=None)
@click.option("--epochs", type=int, default=None)
def pretrain(config_path, seed, corpus_path, out, lr, batch, epochs):
    """LM-pretrain the backbone on pooled dialogues, then freeze it."""
    import os
    resolved = _resolve(_load_config(config_path), seed=seed,
                        corpus=corpus_path, out=out, lr=lr, batch=batch,
                        epochs=epochs)
    resolved.setdefault("epochs", 50)
    _header("pretrain", resolved)
    datasets = corpus_mod.load_suite(resolved["corpus"])
    tok = corpus_mod.build_tokenizer()
    cfg = _train_config(dict(resolved, epochs=20))
    from .backbone import ModelConfig
    model = Backbone(ModelConfig(vocab_size=tok.vocab_size), seed=cfg.seed)
    log = pretrain_backbone(model, datasets, tok, cfg,
                            max_epochs=int(resolved["epochs"]))
    os.makedirs(resolved["out"], exist_ok=True)
    model.save(os.path.join(resolved["out"], "backbone.ckpt"))
    tok.save(os.path.join(resolved["out"], "tokenizer.json"))
    log.save(os.path.join(resolved["out"], "pretrain_log.jsonl"))
    click.echo(f"val_ppl {log.summary['val_ppl']:.4f} "
               f"hash {log.summary['frozen_hash'][:12]}")


@main.command("train-adapter")
@_common
@click.option("--corpus", "corpus_path", required=True, type=click.Path(),
              envvar="ADAPTERBOT_CORPUS")
@click.option("--backbone", "backbone_path", required=True, type=click.Path())
@click.option("--tokenizer", "tok_path", required=True, type=click.Path())
@click.option("--skill", required=True, envvar="ADAPTERBOT_SKILL")
@click.option("--out", required=True, type=click.Path(), envvar="ADAPTERBOT_OUT")
@click.option("--lr", type=float, envvar="ADAPTERBOT_LR", default=None)
@click.option("--batch", type=int, envvar="ADAPTERBOT_BATCH", default=None)
def train_adapter_cmd(config_path, seed, corpus_path, backbone_path, tok_path,
                      skill, out, lr, batch):
    """Train one skill adapter over a frozen backbone."""
    resolved = _resolve(_load_config(config_path), seed=seed,
                        corpus=corpus_path, backbone=backbone_path,
                        tokenizer=tok_path, skill=skill, out=out,
                        lr=lr, batch=batch)
    _header("train-adapter", resolved)
    datasets = corpus_mod.load_suite(resolved["corpus"])
    if resolved["skill"] not in datasets:
        raise click.UsageError(f"unknown skill {resolved['skill']!r}")
    model = Backbone.load(resolved["backbone"])
    tok = Tokenizer.load(resolved["tokenizer"])
    cfg = _train_config(resolved)
    stack = adapter_init(model.config,
                         seed=skill_seed(cfg.seed, resolved["skill"]),
                         name=resolved["skill"])
    log = train_adapter(model, stack, datasets[resolved["skill"]], tok, cfg)
    stack.save(resolved["out"])
    click.echo(f"best_val_ppl {log.summary['best_val_ppl']:.4f} "
               f"epochs {log.summary['epochs']}")


@main.command("train-manager")
@_common
@click.option("--corpus", "corpus_path", required=True, type=click.Path(),
              envvar="ADAPTERBOT_CORPUS")
@click.option("--tokenizer", "tok_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(), envvar="ADAPTERBOT_OUT")
@click.option("--history-mode", type=click.Choice(["single_turn", "multi_turn"]),
              default="multi_turn")
def train_manager_cmd(config_path, seed, corpus_path, tok_path, out, history_mode):
    """Train the skill router on the corpus labels."""
    resolved = _resolve(_load_config(config_path), seed=seed,
                        corpus=corpus_path, tokenizer=tok_path, out=out,
                        history_mode=history_mode)
    _header("train-manager", resolved)
    datasets = corpus_mod.load_suite(resolved["corpus"])
    tok = Tokenizer.load(resolved["tokenizer"])
    skill_ids = {name: i + 1 for i, name in enumerate(datasets)}
    examples = routing_examples(datasets, skill_ids)
    cfg = TrainConfig(lr=3e-3, batch_size=32, max_epochs=12, patience=3,
                      seed=int(resolved.get("seed", 0)))
    model, log = train_manager(examples, tok, cfg,
                               mode=resolved["history_mode"])
    model.save(resolved["out"])
    click.echo(f"holdout_acc {log['best_val_acc']:.4f}")


@main.command("train-style")
@_common
@click.option("--corpus", "corpus_path", required=True, type=click.Path(),
              envvar="ADAPTERBOT_CORPUS")
@click.option("--skill", required=True, envvar="ADAPTERBOT_SKILL")
@click.option("--out", required=True, type=click.Path(), envvar="ADAPTERBOT_OUT")
def train_style_cmd(config_path, seed, corpus_path, skill, out):
    """Train the style reranker classifier for one skill."""
    resolved = _resolve(_load_config(config_path), seed=seed,
                        corpus=corpus_path, skill=skill, out=out)
    _header("train-style", resolved)
    datasets = corpus_mod.load_suite(resolved["corpus"])
    if resolved["skill"] not in datasets:
        raise click.UsageError(f"unknown skill {resolved['skill']!r}")
    skill_ids = {name: i + 1 for i, name in enumerate(datasets)}
    pos = [r.gold_response for r in datasets[resolved["skill"]].split("train")]
    neg = [r.gold_response for n, d in datasets.items() if n != resolved["skill"]
           for r in d.split("train")]
    clf, acc = train_style_classifier(pos, neg,
                                      style_id=skill_ids[resolved["skill"]],
                                      seed=int(resolved.get("seed", 0)))
    clf.save(resolved["out"])
    click.echo(f"holdout_acc {acc:.4f}")


@main.command()
@_common
@click.option("--out", required=True, type=click.Path(), envvar="ADAPTERBOT_OUT")
@click.option("--epochs", type=int, default=None)
def build(config_path, seed, out, epochs):
    """Train the complete reference system and write all artifacts."""
    from .trainer import REFERENCE_SEED
    resolved = _resolve(_load_config(config_path), seed=seed, out=out,
                        epochs=epochs)
    resolved.setdefault("seed", REFERENCE_SEED)
    resolved.setdefault("epochs", 50)
    _header("build", resolved)
    cfg = TrainConfig(seed=int(resolved["seed"]))
    system = build_system(cfg=cfg, pretrain_epochs=int(resolved["epochs"]))
    save_system(system, resolved["out"])
    corpus_mod.make_serve_artifacts(resolved["out"])
    click.echo(f"artifacts in {resolved['out']}")


def _generate_all(runtime, rows, decode):
    outs = []
    for r in rows:
        utt, _ = runtime.engine.respond(
            r.dialogue_history(), r.meta,
            runtime.skill_ids[r.skill], decode)
        outs.append(utt.text)
    return outs


@main.command("eval")
@_common
@click.option("--corpus", "corpus_path", required=True, type=click.Path(),
              envvar="ADAPTERBOT_CORPUS")
@click.option("--artifacts", required=True, type=click.Path())
@click.option("--metrics", "metrics_list", envvar="ADAPTERBOT_METRICS",
              default="bleu,avg_bleu,f1,entity_f1,ppl,distinct_1,distinct_2")
@click.option("--split", type=click.Choice(["train", "valid", "test"]),
              default="test")
@click.option("--out", required=True, type=click.Path(), envvar="ADAPTERBOT_OUT")
def eval_cmd(config_path, seed, corpus_path, artifacts, metrics_list, split, out):
    """Per-skill metric table over greedy generations on one split."""
    from .service import Runtime
    resolved = _resolve(_load_config(config_path), seed=seed,
                        corpus=corpus_path, artifacts=artifacts,
                        metrics=metrics_list, split=split, out=out)
    _header("eval", resolved)
    wanted = [m.strip() for m in resolved["metrics"].split(",") if m.strip()]
    unknown = [m for m in wanted if m not in KNOWN_METRICS]
    if unknown:
        raise click.UsageError(f"unknown metrics: {unknown}")
    try:
        runtime = Runtime.load(resolved["artifacts"])
    except OSError as e:
        raise click.UsageError(f"missing checkpoint: {e}")
    datasets = corpus_mod.load_suite(resolved["corpus"])
    decode = DecodeParams(mode="greedy", max_new_tokens=28)
    model, tok = runtime.engine.backbone, runtime.engine.tok
    needs_gen = any(m != "ppl" for m in wanted)  # ppl scores gold tokens only
    per_skill = {}
    per_example = []
    for name, ds in datasets.items():
        rows = ds.split(resolved["split"])
        if not rows:
            click.echo(f"note: {name}: no rows in split "
                       f"{resolved['split']!r}, skipped", err=True)
            continue
        outs = _generate_all(runtime, rows, decode) if needs_gen else None
        golds = [r.gold_response for r in rows]
        if needs_gen:
            hyp = [metric_tokens(o) for o in outs]
            ref = [metric_tokens(g) for g in golds]
        m = {}
        if "bleu" in wanted:
            m["bleu"] = bleu(hyp, ref)
        if "avg_bleu" in wanted:
            m["avg_bleu"] = avg_bleu(hyp, ref)
        if "f1" in wanted:
            m["f1"] = float(np.mean([unigram_f1(c, g) for c, g in zip(hyp, ref)]))
        if "entity_f1" in wanted:
            m["entity_f1"] = entity_f1_corpus(
                zip(outs, (r.gold_entities for r in rows)))
        if "ppl" in wanted:
            seqs = _eval_seqs(
                row_sequence(tok, r, model.config.max_seq_len) for r in rows)
            stack = runtime.engine.adapters.get(runtime.skill_ids[name])
            m["ppl"] = model.perplexity(seqs, adapter=stack, pad_id=tok.pad_id)
        for n in (1, 2):
            if f"distinct_{n}" in wanted:
                m[f"distinct_{n}"] = distinct_n(hyp, n)
        per_skill[name] = m
        if needs_gen:
            per_example.extend(
                {"skill": name, "dialogue_id": r.dialogue_id,
                 "turn_index": r.turn_index, "output": o, "gold": g}
                for r, o, g in zip(rows, outs, golds))
    report = EvalReport(
        corpus_id=f"{resolved['corpus']}:{resolved['split']}",
        model_ids={"backbone": runtime.engine.backbone.hash,
                   **{f"adapter_{s.name}": s.content_hash()
                      for _, s in runtime.engine.adapters.items()}},
        config={"decode": "greedy", "metrics": wanted,
                "seed": resolved.get("seed", 0)},
        metrics=per_skill,
        per_example=per_example,
    )
    report.save(resolved["out"])
    click.echo(report.table())


@main.command()
@_common
@click.option("--artifacts", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["manual", "auto"]),
              envvar="ADAPTERBOT_MODE", default="auto")
@click.option("--skill", type=int, envvar="ADAPTERBOT_SKILL", default=None)
@click.option("--style", type=int, default=None)
@click.option("--replay", "replay_path", type=click.Path(), default=None)
def chat(config_path, seed, artifacts, mode, skill, style, replay_path):
    """Terminal REPL; `/skill N`, `/auto`, `/style N` switch modes."""
    from .service import Runtime
    resolved = _resolve(_load_config(config_path), seed=seed,
                        artifacts=artifacts, mode=mode, skill=skill,
                        style=style, replay=replay_path)
    _header("chat", resolved)
    try:
        runtime = Runtime.load(resolved["artifacts"])
    except OSError as e:
        raise click.UsageError(f"missing checkpoint: {e}")
    if resolved.get("replay"):
        _replay(runtime, resolved["replay"])
        return
    state = {"mode": resolved.get("mode", "auto"),
             "skill": resolved.get("skill"), "style": resolved.get("style")}
    utterances = []
    from .dialogue import DialogueHistory, Utterance
    while True:
        try:
            line = click.prompt("you", prompt_suffix="> ")
        except (EOFError, click.Abort):
            click.echo("bye")
            return
        line = line.strip()
        if not line:
            continue
        if line.startswith("/skill "):
            state["mode"], state["skill"] = "manual", int(line.split()[1])
            click.echo(f"[manual skill {state['skill']}]")
            continue
        if line == "/auto":
            state["mode"], state["skill"] = "auto", None
            click.echo("[auto]")
            continue
        if line.startswith("/style "):
            state["style"] = int(line.split()[1])
            click.echo(f"[style {state['style']}]")
            continue
        user = Utterance("user", line.lower())
        history = DialogueHistory(utterances + [user])
        decode = DecodeParams(mode="greedy", max_new_tokens=28)
        if state["style"] is not None:
            decode = DecodeParams(mode="greedy", max_new_tokens=28,
                                  rerank=RerankParams(style_id=state["style"]))
        conf = None
        if state["mode"] == "manual":
            sid = state["skill"]
        else:
            sid, probs = runtime.managers["multi_turn"].predict(history)
            conf = probs[sid]
        meta = runtime.knowledge_for(sid, user.text)
        utt, _ = runtime.engine.respond(history, meta, sid, decode)
        know = meta.kind
        conf_s = f" conf={conf:.2f}" if conf is not None else ""
        click.echo(f"bot> {utt.text}   [skill {sid}{conf_s} know={know}]")
        utterances.extend([user, utt])


def _replay(runtime, path):
    """Re-generate a saved transcript's system turns and verify greedy match."""
    from .dialogue import DialogueHistory, Utterance
    with open(path, encoding="utf-8") as f:
        saved = json.load(f)
    turns = saved["transcript"] if isinstance(saved, dict) else saved
    utterances = []
    decode = DecodeParams(mode="greedy", max_new_tokens=28)
    mismatches = 0
    for t in turns:
        if t["speaker"] == "user":
            utterances.append(Utterance("user", t["text"]))
            continue
        sid = t.get("skill_id")
        if sid is None:
            sid, _ = runtime.managers["multi_turn"].predict(
                DialogueHistory(utterances))
        meta = runtime.knowledge_for(sid, utterances[-1].text)
        utt, _ = runtime.engine.respond(
            DialogueHistory(utterances), meta, sid, decode)
        ok = utt.text == t["text"]
        mismatches += not ok
        click.echo(("ok   " if ok else "DIFF ") + utt.text)
        utterances.append(Utterance("system", t["text"], skill_id=sid))
    if mismatches:
        click.echo(f"{mismatches} mismatched turns")
        raise SystemExit(1)
    click.echo("replay matched")


@main.command()
@_common
@click.option("--artifacts", type=click.Path(), default=None)
@click.option("--listen", envvar="ADAPTERBOT_LISTEN", default=None)
@click.option("--blocklist", type=click.Path(), default=None)
def serve(config_path, seed, artifacts, listen, blocklist):
    """Run the HTTP chat service."""
    import uvicorn
    from .service import ServeConfig, build_server
    try:
        cfg = ServeConfig.resolve(config_path, artifacts=artifacts,
                                  listen=listen, blocklist=blocklist)
    except (TypeError, ValueError) as e:
        raise click.UsageError(str(e))
    _header("serve", vars(cfg))
    app = build_server(cfg)
    host, _, port = cfg.listen.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))


def run():
    try:
        main(standalone_mode=True)
    except SystemExit:
        raise
    except Exception as e:  # pragma: no cover - defensive
        click.echo(f"error: {e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()
