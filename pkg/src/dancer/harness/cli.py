"""``dancer`` command line.

Every subcommand accepts ``--config FILE`` (JSON or flat ``key = value``
text, see :mod:`dancer.harness.config`); keys named like the subcommand's
long options (dashes become underscores) act as defaults that explicit
flags override. Artifacts land under ``--out``; each run merges an entry
into ``manifest.json`` in that directory.

Exit codes: 0 success, 2 usage, 3 configuration error, 4 data error
(including unreadable files), 5 training error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ..corpus import Label, Vocabulary, load_corpus, preprocess, read_encoded, write_encoded, write_splits
from ..errors import ConfigError, DancerError
from ..judge import JudgeModel, pretrain_judge, reconstruction_accuracy
from ..nncore import EncoderDecoderConfig
from ..oracle import NBModel, OracleHandle, evaluate, train_nb
from .attack import AttackRun, load_policy, load_spam, run_attack, select_low_confidence
from .config import AttackConfig, load_config_file
from .report import report

log = logging.getLogger("dancer")


# ------------------------------------------------------------------ helpers

def _out_paths(out: str, default_name: str) -> tuple[Path, Path]:
    """Resolve ``--out`` to (artifact file, directory holding the manifest)."""
    p = Path(out)
    if p.suffix:
        p.parent.mkdir(parents=True, exist_ok=True)
        return p, p.parent
    p.mkdir(parents=True, exist_ok=True)
    return p / default_name, p


def _write_manifest(out_dir: Path, command: str, artifacts, args, extra=None) -> None:
    path = out_dir / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"runs": []}
    entry = {
        "command": command,
        "time": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "artifacts": sorted(set(str(a) for a in artifacts)),
        "arguments": {k: v for k, v in vars(args).items() if k not in ("func",) and _jsonable(v)},
    }
    if extra:
        entry.update(extra)
    manifest["runs"].append(entry)
    path.write_text(json.dumps(manifest, indent=1))


def _jsonable(v) -> bool:
    return isinstance(v, (str, int, float, bool, list, type(None)))


def _vocab_for(data_path: str, explicit: str | None) -> Vocabulary:
    path = Path(explicit) if explicit else Path(data_path).with_name("vocab.txt")
    if not path.exists():
        raise ConfigError(f"vocabulary not found at {path}; pass --vocab")
    return Vocabulary.load(path)


def _dims(text) -> tuple[int, int]:
    if isinstance(text, (list, tuple)):
        e, h = text
        return int(e), int(h)
    try:
        e, h = str(text).split(",")
        return int(e), int(h)
    except ValueError:
        raise ConfigError(f"--dims expects 'embed,hidden', got {text!r}") from None


# ----------------------------------------------------------------- commands

def cmd_preprocess(args) -> None:
    examples = load_corpus(args.input, args.format)
    splits, vocab = preprocess(examples, args.k, args.len, args.seed)
    out = Path(args.out)
    written = write_splits(out, splits, vocab)
    for name, counts in splits.class_counts.items():
        print(f"{name}\t" + "\t".join(f"{k}={v}" for k, v in counts.items()))
    print(f"vocabulary\t{vocab.size} tokens ({vocab.size - 4} from the corpus)")
    _write_manifest(out, "preprocess", written, args, {"class_counts": splits.class_counts, "vocab_size": vocab.size})


def cmd_train_target(args) -> None:
    train = read_encoded(args.train)
    vocab = _vocab_for(args.train, args.vocab)
    model = train_nb(train, vocab.size, args.alpha)
    path, out_dir = _out_paths(args.out, "target.ckpt")
    model.save(path)
    print(f"trained naive Bayes on {len(train)} examples -> {path}")
    _write_manifest(out_dir, "train-target", [path.name], args)


def cmd_eval_target(args) -> None:
    model = NBModel.load(args.model)
    data = read_encoded(args.data)
    metrics = evaluate(model, data)
    if args.query_log:
        oracle = OracleHandle(model)
        with open(args.query_log, "w", encoding="utf-8") as fh:
            oracle.query_log = fh
            for ex in data:
                oracle.classify(ex.ids)
    print(f"accuracy\t{metrics['accuracy']:.4f}\nauc_roc\t{metrics['auc_roc']:.4f}\nn\t{metrics['n']}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "target_metrics.json").write_text(json.dumps(metrics, indent=1))
        _write_manifest(out, "eval-target", ["target_metrics.json"], args)


def cmd_pretrain_judge(args) -> None:
    train = read_encoded(args.train)
    vocab = _vocab_for(args.train, args.vocab)
    embed, hidden = _dims(args.dims)
    length = len(train[0].ids) - 2
    config = EncoderDecoderConfig(vocab_size=vocab.size, embed_dim=embed, hidden_dim=hidden, max_len=length)

    def on_epoch(epoch, loss):
        if epoch % max(1, args.epochs // 20) == 0 or epoch == args.epochs - 1:
            print(f"epoch {epoch}\tloss {loss:.4f}", flush=True)

    judge = pretrain_judge(train, config, args.epochs, args.lr, args.batch, seed=args.seed, on_epoch=on_epoch)
    path, out_dir = _out_paths(args.out, "judge.ckpt")
    judge.save(path, {"seed": args.seed, "lr": args.lr, "batch": args.batch, "epochs": args.epochs})
    acc = reconstruction_accuracy(judge.network, train[:500])
    print(f"greedy reconstruction accuracy (first {min(500, len(train))} train examples)\t{acc:.4f}")
    _write_manifest(out_dir, "pretrain-judge", [path.name], args, {"reconstruction_accuracy": acc})


_ATTACK_FLAGS = {
    "target": "target", "judge": "judge", "attack_set": "attack_set", "eval_set": "eval_set", "vocab": "vocab",
    "lambda_adv": "lambda_adversarial", "lambda_sim": "lambda_similar", "epochs": "epochs", "batch": "batch_size",
    "lr": "lr", "seed": "seed", "curriculum": "curriculum", "fraction": "fraction", "temperature": "oracle_temperature",
    "collapse_threshold": "collapse_threshold", "collapse_window": "collapse_window",
}


def cmd_attack(args) -> None:
    values = dict(args.config_extra)
    for flag, key in _ATTACK_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    if args.no_halt:
        values["halt_on_collapse"] = False
    config = AttackConfig.from_dict(values)
    result = run_attack(config, args.out, resume_from=args.resume)
    for e in result.log.epochs:
        print(f"epoch {e.epoch}\tprobe_combined {e.probe_mean_combined:.4f}\tprobe_q_minus {e.probe_mean_q_minus:.3g}"
              f"\tprobe_similarity {e.probe_mean_similarity:.4f}")
    if result.collapse.flagged:
        print(f"mode collapse flagged at batch {result.collapse.first_flagged_batch}")
    _write_manifest(Path(args.out), "attack", result.artifacts, args,
                    {"best_epoch": result.best_epoch, "halted": result.halted,
                     "collapse_flagged": result.collapse.flagged, "config": config.to_dict()})


def cmd_select_curriculum(args) -> None:
    oracle = OracleHandle(NBModel.load(args.model))
    spam = load_spam(args.data)
    chosen, scores = select_low_confidence(spam, oracle, args.fraction, return_scores=True)
    path, out_dir = _out_paths(args.out, "curriculum.txt")
    write_encoded(path, chosen)
    with open(path.with_suffix(".scores.tsv"), "w", encoding="utf-8") as fh:
        fh.write("rank\tp_spam\n")
        for i, s in enumerate(scores):
            fh.write(f"{i}\t{float(s)!r}\n")
    print(f"selected {len(chosen)} of {len(spam)} spam examples ({oracle.query_count} queries)")
    _write_manifest(out_dir, "select-curriculum", [path.name, path.with_suffix(".scores.tsv").name], args,
                    {"selected": len(chosen), "queries": oracle.query_count})


def cmd_report(args) -> None:
    oracle = OracleHandle(NBModel.load(args.target), temperature=args.temperature)
    judge = JudgeModel.load(args.judge).freeze()
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.attack_dir or ".") / "best.ckpt"
    policy = load_policy(ckpt, judge)
    eval_set = load_spam(args.eval)
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    lam_adv = args.lambda_adv
    result = report(None, oracle, judge, eval_set, policy, (lam_adv, 1.0 - lam_adv), vocab,
                    args.out, args.samples, args.emit_csv)
    for k, v in result.aggregates.items():
        print(f"{k}\t{v}")
    _write_manifest(Path(args.out), "report", result.files, args, {"checkpoint": str(ckpt)})


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dancer", description="Adversarial spam rewriting against a naive Bayes filter.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON or key = value defaults for this command")
        p.set_defaults(func=func)
        return p

    p = add("preprocess", cmd_preprocess, "split, build vocabulary, encode")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("dirs", "tsv"), default="dirs")
    p.add_argument("--k", type=int, default=3000)
    p.add_argument("--len", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("train-target", cmd_train_target, "fit the naive Bayes target")
    p.add_argument("--train", required=True)
    p.add_argument("--vocab")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = add("eval-target", cmd_eval_target, "accuracy and AUC of the target")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query-log")
    p.add_argument("--out")

    p = add("pretrain-judge", cmd_pretrain_judge, "train the autoencoder judge")
    p.add_argument("--train", required=True)
    p.add_argument("--vocab")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--dims", default="32,64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("attack", cmd_attack, "REINFORCE attack run")
    p.add_argument("--target")
    p.add_argument("--judge")
    p.add_argument("--attack-set")
    p.add_argument("--eval-set")
    p.add_argument("--vocab")
    p.add_argument("--lambda-adv", type=float)
    p.add_argument("--lambda-sim", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--curriculum", choices=("full", "low_confidence"))
    p.add_argument("--fraction", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--collapse-threshold", type=float)
    p.add_argument("--collapse-window", type=int)
    p.add_argument("--no-halt", action="store_true", help="train through mode collapse")
    p.add_argument("--resume", help="attack checkpoint to continue from")
    p.add_argument("--out", required=True)

    p = add("select-curriculum", cmd_select_curriculum, "pick the lowest-confidence spam examples")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, default=0.10)
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "held-out before/after metrics and samples")
    p.add_argument("--target", required=True)
    p.add_argument("--judge", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--attack-dir")
    p.add_argument("--eval", required=True)
    p.add_argument("--vocab")
    p.add_argument("--lambda-adv", type=float, default=0.5)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--emit-csv", action="store_true")
    p.add_argument("--out", required=True)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse once to find the subcommand and --config, then reparse with config defaults."""
    subparsers = parser._subparsers._group_actions[0].choices
    required = [a for p in subparsers.values() for a in p._actions if a.required]
    for action in required:
        action.required = False
    args = parser.parse_args(argv)
    for action in required:
        action.required = True
    if not args.config:
        args = parser.parse_args(argv)
        args.config_extra = {}
        return args
    values = load_config_file(args.config)
    subparser = subparsers[args.command]
    dests = {a.dest for a in subparser._actions}
    known = {k.replace("-", "_"): v for k, v in values.items() if k.replace("-", "_") in dests}
    # required options may be satisfied by the config file
    for action in subparser._actions:
        if action.dest in known:
            action.required = False
    subparser.set_defaults(**known)
    args = parser.parse_args(argv)
    rest = {k: v for k, v in values.items() if k.replace("-", "_") not in dests}
    args.config_extra = {}
    if args.command == "attack":
        args.config_extra = rest
    elif rest:
        log.warning("ignoring config keys not used by %s: %s", args.command, ", ".join(sorted(rest)))
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
        args.func(args)
    except DancerError as exc:
        print(f"dancer: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dancer: error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
