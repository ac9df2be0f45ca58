"""``gascom`` command line: validate, synth, walk, train, distill, eval, explain, sweep, replay."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .embeddings import words
from .metrics import METRIC_ORDER
from .model import Encoder, forward, token_attention_weights
from .synthetic import SyntheticConfig, synthetic_jsonl
from .training import (EVAL_EPOCH, Runtime, TrainConfig, evaluate, make_scorer, split_instances,
                       train, train_self_distilled)
from .tree import CorpusError, iter_discussions, load_corpus, validate_tree
from .walks import ATTENTION_STRATEGIES, STRATEGIES, select_context

log = logging.getLogger("gascom")


class CLIError(Exception):
    pass


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("GASCOM_SEED", "0"))


def write_manifest(args, outputs: list[str], extra: dict | None = None) -> None:
    """Record everything needed to re-run the command (no timestamps, so reruns match)."""
    path = args.manifest
    if not path:
        file_outputs = [o for o in outputs if o]
        if not file_outputs:
            return
        path = file_outputs[0] + ".manifest.json"
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "manifest", "config")}
    corpus = getattr(args, "corpus", None)
    manifest = {
        "tool": "gascom",
        "version": __version__,
        "command": args.command,
        "args": resolved,
        "seed": resolved.get("seed"),
        "kernel_backend": kernels.active.NAME,
        "corpus_digests": {corpus: _digest(corpus)} if corpus and os.path.exists(corpus) else {},
        "outputs": {o: _digest(o) for o in outputs if o and os.path.exists(o)},
        **(extra or {}),
    }
    Path(path).write_text(_dump(manifest), encoding="utf-8")


# -- config ---------------------------------------------------------------

def train_config(args, base: TrainConfig | None = None) -> TrainConfig:
    """Materialise a TrainConfig from parsed flags; unset flags keep ``base`` values."""
    base = base or TrainConfig()
    names = {f.name for f in fields(TrainConfig)}
    changes = {k: v for k, v in vars(args).items() if k in names and v is not None}
    return replace(base, **changes)


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def config_argv(parser: argparse.ArgumentParser, cfg: dict[str, str]) -> list[str]:
    flags = {}
    for action in parser._actions:
        for opt in action.option_strings:
            flags[opt] = action
    argv = []
    for key, value in cfg.items():
        opt = f"--{key}"
        action = flags.get(opt)
        if action is None:
            raise CLIError(f"config key {key!r} is not an option of this command")
        if isinstance(action, argparse.BooleanOptionalAction):
            on = value.lower() in ("1", "true", "yes", "on")
            argv.append(opt if on else f"--no-{key}")
        else:
            argv += [opt, value]
    return argv


# -- commands -------------------------------------------------------------

def cmd_validate(args) -> int:
    n = 0
    lines = []
    try:
        with open(args.corpus, "rb") as f:
            for d in _iter_lenient(f, lines):
                n += 1
                lines += [f"{d.discussion_id}: {problem}" for problem in validate_tree(d)]
    except OSError as e:
        raise CLIError(str(e)) from None
    print(f"{n} discussions")
    for line in lines:
        print(line)
    print("ok" if not lines else f"{len(lines)} problem(s)")
    write_manifest(args, [])
    return 0 if not lines else 1


def _iter_lenient(f, problems):
    it = iter_discussions(f)
    while True:
        try:
            yield next(it)
        except StopIteration:
            return
        except CorpusError as e:
            problems.append(str(e))


def _find_target(rt: Runtime, target: str, discussion: str | None):
    hits = [did for did, d in sorted(rt.discussions.items())
            if (discussion is None or did == discussion) and target in d.nodes]
    if not hits:
        raise CLIError(f"target {target!r} not found")
    if len(hits) > 1:
        raise CLIError(f"target {target!r} is ambiguous; pass --discussion (one of {', '.join(hits[:5])}...)")
    return hits[0], target


def _scorer_for(args, rt: Runtime, strategy: str, checkpoint_meta: dict | None = None,
                checkpoint_path: str | None = None):
    if strategy not in ATTENTION_STRATEGIES:
        return None
    path = None
    if checkpoint_meta and checkpoint_meta.get("scorer_checkpoint"):
        path = Path(checkpoint_path).parent / checkpoint_meta["scorer_checkpoint"]
    elif getattr(args, "checkpoint", None):
        path = args.checkpoint
    if path is None:
        raise CLIError(f"strategy {strategy} needs --checkpoint with a trained model")
    params, _ = load_checkpoint(path)
    return make_scorer(params, rt)


def cmd_synth(args) -> int:
    syn = SyntheticConfig(discussions=args.discussions, parents_per_root=args.parents_per_root,
                          replies_per_parent=args.replies_per_parent, context_depth=args.context_depth,
                          distractor_rate=args.distractor_rate, seed=_seed(args))
    _emit(synthetic_jsonl(syn), args.out)
    write_manifest(args, [args.out], {"synthetic_config": syn.to_json()})
    return 0


def cmd_walk(args) -> int:
    if args.strategy not in STRATEGIES:
        raise CLIError(f"unknown strategy {args.strategy!r}")
    corpus = load_corpus(args.corpus)
    cfg = train_config(args)
    rt = Runtime(corpus, cfg)
    scorer = _scorer_for(args, rt, args.strategy)
    if args.target:
        keys = [_find_target(rt, args.target, args.discussion)]
    else:
        keys = rt.instances()
    lines = []
    for did, nid in keys:
        sel = select_context(args.strategy, rt.discussions[did], nid, cfg.walk, rt.sim, scorer)
        lines.append(json.dumps({"discussion_id": did, **sel.to_json()}, sort_keys=True))
    _emit("".join(line + "\n" for line in lines), args.out)
    write_manifest(args, [args.out], {"train_config": cfg.to_json()})
    return 0


def _train_common(args, distill: bool) -> int:
    corpus = load_corpus(args.corpus)
    cfg = train_config(args)
    if distill and cfg.strategy not in ATTENTION_STRATEGIES:
        cfg = replace(cfg, strategy="attn-rw")
    rt = Runtime(corpus, cfg)
    result = train_self_distilled(corpus, cfg, rt) if distill else train(corpus, cfg, rt=rt)
    meta = {"train_config": cfg.to_json(), "version": __version__}
    outputs = [args.checkpoint]
    if result.scorer_params is not None:
        scorer_path = args.checkpoint + ".phase1"
        save_checkpoint(scorer_path, result.scorer_params, {"train_config": cfg.to_json(), "phase": 1})
        meta["scorer_checkpoint"] = Path(scorer_path).name
        outputs.append(scorer_path)
    save_checkpoint(args.checkpoint, result.params, meta)
    log_text = _dump({"epochs": result.log, "train_size": len(result.train_keys),
                      "test_size": len(result.test_keys)})
    _emit(log_text, args.log)
    outputs.append(args.log)
    write_manifest(args, outputs, {"feature_dim": cfg.model.d_feat, "train_config": cfg.to_json()})
    return 0


def cmd_train(args) -> int:
    return _train_common(args, distill=False)


def cmd_distill(args) -> int:
    return _train_common(args, distill=True)


def _load_for_eval(args):
    if not args.checkpoint or not os.path.exists(args.checkpoint):
        raise CLIError(f"checkpoint not found: {args.checkpoint}")
    params, meta = load_checkpoint(args.checkpoint)
    base = TrainConfig(**meta["train_config"]) if "train_config" in meta else TrainConfig()
    cfg = train_config(args, base)
    if args.seed is None:
        args.seed = cfg.seed
    if cfg.model.d_feat != params.config.d_feat:
        raise CLIError(f"checkpoint feature dim {params.config.d_feat} does not match config {cfg.model.d_feat}")
    corpus = load_corpus(args.corpus)
    rt = Runtime(corpus, cfg)
    scorer = _scorer_for(args, rt, cfg.strategy, meta, args.checkpoint)
    return params, cfg, rt, scorer


def _parse_asserts(items) -> dict[str, float]:
    out = {}
    for item in items or []:
        key, _, value = item.partition("=")
        if key not in METRIC_ORDER or not value:
            raise CLIError(f"bad --assert {item!r}; use metric=threshold with metric in {METRIC_ORDER}")
        out[key] = float(value)
    return out


def cmd_eval(args) -> int:
    asserts = _parse_asserts(args.assert_)
    params, cfg, rt, scorer = _load_for_eval(args)
    train_keys, test_keys = split_instances(rt, cfg)
    keys = {"test": test_keys, "train": train_keys, "all": rt.instances()}[args.split]
    report, _ = evaluate(params, rt, keys, cfg, scorer)
    print(report.table())
    _emit(_dump({"split": args.split, "strategy": cfg.strategy, "metrics": report.to_json()}), args.out)
    write_manifest(args, [args.out], {"feature_dim": params.config.d_feat, "train_config": cfg.to_json()})
    failed = [k for k, thr in asserts.items() if getattr(report, k) < thr]
    for k in failed:
        print(f"assertion failed: {k}={getattr(report, k):.4f} < {asserts[k]}", file=sys.stderr)
    return 1 if failed else 0


def explain_target(params, cfg: TrainConfig, rt: Runtime, key, scorer=None) -> dict:
    """Attention and similarity breakdown over one target's selected context."""
    did, nid = key
    d = rt.discussions[did]
    ex = rt.example(key, cfg.strategy, params.config, cfg.walk, scorer, EVAL_EPOCH)
    enc = Encoder(params, rt.provider)
    out = forward(params, enc, ex)
    parent = d.parent(nid)
    ref = parent if parent is not None else nid
    E_q = enc.lookup(ex.query)[0]
    ctx = [(c, toks) for c, toks in ex.context]
    joint = token_attention_weights(params, E_q, [enc.lookup(t)[0] for _, t in ctx])
    nodes = []
    for (cid, toks), wts in zip(ctx, joint):
        trace = out.trace.get(cid)
        within = trace.mean(axis=(0, 1)) if trace is not None else np.zeros(0)
        tok_words = words(d.nodes[cid].text, cfg.t_max)
        nodes.append({
            "id": cid,
            "aggregate_attention": float(wts.sum()),
            "similarity_to_parent": rt.sim.similarity(d, ref, cid),
            "tokens": [{"token": w, "weight": float(a), "within_node": float(b)}
                       for w, a, b in zip(tok_words, wts, within)],
        })
    return {"discussion_id": did, "target": nid, "parent": parent, "strategy": cfg.strategy,
            "probs": [float(x) for x in out.probs], "label": d.nodes[nid].label, "nodes": nodes}


def cmd_explain(args) -> int:
    params, cfg, rt, scorer = _load_for_eval(args)
    key = _find_target(rt, args.target, args.discussion)
    _emit(_dump(explain_target(params, cfg, rt, key, scorer)), args.out)
    write_manifest(args, [args.out], {"train_config": cfg.to_json()})
    return 0


def _csv(kind):
    def parse(s):
        return [kind(x) for x in s.split(",") if x.strip()]
    return parse


def run_sweep(corpus, base: TrainConfig, L_values, strategies, tasks=None) -> dict:
    cells = []
    for task in tasks or [base.task]:
        for L in L_values:
            for strategy in strategies:
                cfg = replace(base, L=L, strategy=strategy, task=task)
                rt = Runtime(corpus, cfg)
                if strategy in ATTENTION_STRATEGIES:
                    res = train_self_distilled(corpus, cfg, rt)
                    scorer = make_scorer(res.scorer_params, rt)
                else:
                    res = train(corpus, cfg, rt=rt)
                    scorer = None
                report, _ = evaluate(res.params, rt, res.test_keys, cfg, scorer)
                cells.append({"task": task, "L": L, "strategy": strategy,
                              "metrics": {k: getattr(report, k) for k in METRIC_ORDER}})
    return {"cells": cells, "config": base.to_json()}


def cmd_sweep(args) -> int:
    unknown = [s for s in args.strategies if s not in STRATEGIES]
    if unknown:
        raise CLIError(f"unknown strategies: {unknown}")
    corpus = load_corpus(args.corpus)
    cfg = train_config(args)
    table = run_sweep(corpus, cfg, args.L_values, args.strategies, args.tasks)
    _emit(_dump(table), args.out)
    write_manifest(args, [args.out], {"train_config": cfg.to_json()})
    return 0


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest_file).read_text(encoding="utf-8"))
    ns = argparse.Namespace(**manifest["args"])
    ns.command = manifest["command"]
    ns.func = COMMANDS[ns.command]
    ns.manifest = args.manifest_out
    ns.config = None
    code = ns.func(ns)
    if args.check:
        for path, digest in manifest.get("outputs", {}).items():
            now = _digest(path)
            if now != digest:
                print(f"mismatch: {path}", file=sys.stderr)
                code = code or 1
    return code


COMMANDS = {
    "validate": cmd_validate, "synth": cmd_synth, "walk": cmd_walk, "train": cmd_train,
    "distill": cmd_distill, "eval": cmd_eval, "explain": cmd_explain, "sweep": cmd_sweep,
    "replay": cmd_replay,
}


def _add_common(p, corpus=True):
    p.add_argument("--config", help="flat key = value file; command-line flags override it")
    p.add_argument("--manifest", help="where to write the run manifest")
    p.add_argument("--seed", type=int, help="default: $GASCOM_SEED or 0")
    if corpus:
        p.add_argument("--corpus", required=True)


def _add_model_flags(p, strategy_default=None):
    p.add_argument("--strategy", choices=sorted(STRATEGIES), default=strategy_default)
    p.add_argument("--L", type=int)
    p.add_argument("--p", type=float, help="root bias of the root-seeking walk")
    p.add_argument("--start-at-parent", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--task", choices=["polarity", "hate"])
    p.add_argument("--context", action=argparse.BooleanOptionalAction, default=None,
                   help="--no-context trains on u alone")
    p.add_argument("--embeddings", help="embedding file or 'toy'")
    p.add_argument("--sim-embeddings", help="embedding file or 'toy' for walk similarities")
    p.add_argument("--sim-seed", type=int)
    p.add_argument("--d-model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--warmup-fraction", type=float)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--split-unit", choices=["instance", "discussion"])
    p.add_argument("--phase1-strategy", choices=sorted(STRATEGIES))
    p.add_argument("--jobs", type=int, help="parallel example workers; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gascom", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check corpus structure")
    _add_common(p)

    p = sub.add_parser("synth", help="write a synthetic context-dependent corpus")
    _add_common(p, corpus=False)
    p.add_argument("--out")
    p.add_argument("--discussions", type=int, default=200)
    p.add_argument("--parents-per-root", type=int, default=2)
    p.add_argument("--replies-per-parent", type=int, default=5)
    p.add_argument("--context-depth", type=int, choices=[1, 2], default=2)
    p.add_argument("--distractor-rate", type=float, default=0.3)

    p = sub.add_parser("walk", help="emit context selections as JSON lines")
    _add_common(p)
    _add_model_flags(p, "sim-rw")
    p.add_argument("--target")
    p.add_argument("--discussion")
    p.add_argument("--checkpoint", help="trained model scoring attention-modulated walks")
    p.add_argument("--out")

    for name, helptext in (("train", "train a model"), ("distill", "two-phase self-distilled training")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_model_flags(p)
        p.add_argument("--checkpoint", required=True, help="output checkpoint path")
        p.add_argument("--log", help="epoch log JSON (stdout when omitted)")

    for name in ("eval", "explain"):
        p = sub.add_parser(name, help="evaluate a checkpoint" if name == "eval" else "attention dump")
        _add_common(p)
        _add_model_flags(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out")
        if name == "eval":
            p.add_argument("--split", choices=["test", "train", "all"], default="test")
            p.add_argument("--assert", dest="assert_", action="append", metavar="KEY=THRESHOLD")
        else:
            p.add_argument("--target", required=True)
            p.add_argument("--discussion")

    p = sub.add_parser("sweep", help="train/evaluate a grid of walk lengths and strategies")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--L-values", dest="L_values", type=_csv(int), default=[4, 6])
    p.add_argument("--strategies", type=_csv(str), default=["parent-child", "sim-rw", "attn-rw"])
    p.add_argument("--tasks", type=_csv(str))
    p.add_argument("--out")

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest_file")
    p.add_argument("--check", action="store_true", help="fail if outputs differ from the manifest digests")
    p.add_argument("--manifest-out", help="write the replay's own manifest here")

    for name, func in COMMANDS.items():
        sub.choices[name].set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            extra = config_argv(parser._subparsers._group_actions[0].choices[args.command],
                                read_config_file(args.config))
        except (CLIError, OSError) as e:
            print(f"gascom: error: {e}", file=sys.stderr)
            return 2
        args = parser.parse_args([args.command] + extra + argv[argv.index(args.command) + 1:])
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    # eval/explain inherit the checkpoint's seed unless one is given
    if args.command not in ("replay", "eval", "explain") and args.seed is None:
        args.seed = _seed(args)
    try:
        return args.func(args)
    except (CLIError, CorpusError, ValueError, OSError) as e:
        print(f"gascom: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
