"""Command-line interface: generate, train, eval, verify-theory, export-boundary.

Every command resolves its full configuration up front, names its run
directory by a content hash of that configuration, and writes the
resolved config next to its outputs, so reruns either reproduce a run
bit-for-bit or land in a different directory. The run root comes from
``--out-root`` or the ``NSDG_RUN_ROOT`` environment variable
(default ``./runs``).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import datagen, evaluation, theory
from .model import AirlConfig
from .training import TrainConfig, TrainedModel, TrainSpec, train

METHODS = ("airl", "erm", "ld", "ft",
           "ablation:no_lstm", "ablation:no_trans", "ablation:no_inv")


class ConfigError(ValueError):
    """Rejected run configuration (unknown keys, bad values)."""


def _hash_config(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]


def _run_root(args) -> Path:
    return Path(args.out_root or os.environ.get("NSDG_RUN_ROOT", "runs"))


def _data_base(path: str) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".csv", ".json") else p


def _method_name(method: str) -> str:
    return method.split(":", 1)[1] if method.startswith("ablation:") else method


def _load_config_file(path, allowed_keys) -> dict:
    cfg = json.loads(Path(path).read_text())
    unknown = set(cfg) - set(allowed_keys)
    if unknown:
        raise ConfigError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    return cfg


TRAIN_KEYS = ("command", "method", "data", "t_source", "model", "train")
EVAL_KEYS = ("command", "protocol", "method", "data", "k", "seeds", "jobs",
             "model", "train")


def _model_config(seq, entries: dict) -> AirlConfig:
    return AirlConfig(input_dim=seq.feature_dim, n_classes=seq.n_classes,
                      repr_dim=entries["repr_dim"],
                      encoder_layers=entries["encoder_layers"],
                      lstm_hidden=entries["lstm_hidden"],
                      classifier_hidden=entries["classifier_hidden"],
                      attention_softmax=entries["attention_softmax"])


def _merge(file_cfg: dict, key: str, flags: dict) -> dict:
    out = dict(file_cfg.get(key, {}))
    for k, v in flags.items():
        if v is not None:
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    gen = datagen.GENERATORS[args.dataset]
    seq = gen(T_total=args.domains, n_per_domain=args.n, radius=args.radius,
              noise_sigma=args.sigma, seed=args.seed)
    if args.t_source is not None:
        seq = seq.with_t_source(args.t_source)
    base = _data_base(args.out)
    datagen.write_domain_sequence(seq, base)
    total = sum(d.n for d in seq.domains)
    print("wrote %d domains (%d rows) to %s.csv" % (seq.n_domains, total, base))
    return 0


def _resolve_train(args):
    file_cfg = _load_config_file(args.config, TRAIN_KEYS) if args.config else {}
    data = args.data or file_cfg.get("data")
    if data is None:
        raise ConfigError("no dataset given (--data or config 'data')")
    seq = datagen.read_domain_sequence(_data_base(data))
    method = _method_name(args.method or file_cfg.get("method", "airl"))
    t_source = args.t_source or file_cfg.get("t_source") or seq.T_source
    seq = seq.with_t_source(t_source)

    model_entries = _merge(file_cfg, "model", {
        "repr_dim": args.repr_dim, "encoder_layers": args.encoder_layers,
        "lstm_hidden": args.lstm_hidden, "classifier_hidden": args.classifier_hidden,
        "attention_softmax": args.softmax_attention or None})
    defaults_model = {"repr_dim": 32, "encoder_layers": 4, "lstm_hidden": 128,
                      "classifier_hidden": 32, "attention_softmax": False}
    for k, v in defaults_model.items():
        model_entries.setdefault(k, v)
    model_entries.pop("input_dim", None)
    model_entries.pop("n_classes", None)
    model_cfg = _model_config(seq, model_entries)

    train_entries = _merge(file_cfg, "train", {
        "batch_per_domain": args.batch, "epochs": args.epochs, "alpha": args.alpha,
        "lr": args.lr, "seed": args.seed, "early_stop_patience": args.patience,
        "grad_clip": args.grad_clip})
    defaults_train = TrainConfig().to_dict()
    for k, v in defaults_train.items():
        train_entries.setdefault(k, v)
    train_cfg = TrainConfig.from_dict(train_entries)

    resolved = {"command": "train", "method": method, "data": str(_data_base(data)),
                "t_source": t_source, "model": model_cfg.to_dict(),
                "train": train_cfg.to_dict()}
    return resolved, seq, method, model_cfg, train_cfg


def cmd_train(args) -> int:
    try:
        resolved, seq, method, model_cfg, train_cfg = _resolve_train(args)
    except (ConfigError, datagen.DataFormatError, datagen.ParameterError,
            ValueError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    run_dir = _run_root(args) / ("train-%s" % _hash_config(resolved))
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(resolved, indent=2))
    try:
        model = train(method, seq, model_cfg, train_cfg,
                      log_path=run_dir / "train_log.jsonl")
    except Exception as e:
        (run_dir / "error.txt").write_text("%s: %s\n" % (type(e).__name__, e))
        print("training failed: %s (diagnostic in %s)" % (e, run_dir / "error.txt"),
              file=sys.stderr)
        return 1
    model.save(run_dir)
    metrics = {"best_val_acc": model.best_val_acc, "best_epoch": model.best_epoch,
               "epochs_run": model.epochs_run}
    (run_dir / "metrics.json").write_text(json.dumps(metrics, indent=2))
    print(str(run_dir))
    return 0


def _resolve_eval(args):
    file_cfg = _load_config_file(args.config, EVAL_KEYS) if args.config else {}
    data = args.data or file_cfg.get("data")
    if data is None:
        raise ConfigError("no dataset given (--data or config 'data')")
    seq = datagen.read_domain_sequence(_data_base(data))
    method = _method_name(args.method or file_cfg.get("method", "airl"))
    k = args.k if args.k is not None else file_cfg.get("k", 5)
    seeds = args.seeds if args.seeds is not None else file_cfg.get("seeds", [0, 1, 2, 3, 4])
    jobs = args.jobs if args.jobs is not None else file_cfg.get("jobs", 1)

    model_entries = _merge(file_cfg, "model", {
        "repr_dim": args.repr_dim, "encoder_layers": args.encoder_layers,
        "lstm_hidden": args.lstm_hidden, "classifier_hidden": args.classifier_hidden,
        "attention_softmax": args.softmax_attention or None})
    for kd, v in {"repr_dim": 32, "encoder_layers": 4, "lstm_hidden": 128,
                  "classifier_hidden": 32, "attention_softmax": False}.items():
        model_entries.setdefault(kd, v)
    model_entries.pop("input_dim", None)
    model_entries.pop("n_classes", None)
    model_cfg = _model_config(seq, model_entries)

    train_entries = _merge(file_cfg, "train", {
        "batch_per_domain": args.batch, "epochs": args.epochs, "alpha": args.alpha,
        "lr": args.lr, "early_stop_patience": args.patience,
        "grad_clip": args.grad_clip})
    for kd, v in TrainConfig().to_dict().items():
        train_entries.setdefault(kd, v)
    train_cfg = TrainConfig.from_dict(train_entries)

    resolved = {"command": "eval", "protocol": args.protocol, "method": method,
                "data": str(_data_base(data)), "k": k, "seeds": list(seeds),
                "jobs": jobs, "model": model_cfg.to_dict(),
                "train": train_cfg.to_dict()}
    return resolved, seq, method, model_cfg, train_cfg, k, seeds, jobs


def cmd_eval(args) -> int:
    try:
        resolved, seq, method, model_cfg, train_cfg, k, seeds, jobs = _resolve_eval(args)
    except (ConfigError, datagen.DataFormatError, datagen.ParameterError,
            ValueError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    out_dir = Path(args.out) if args.out else _run_root(args) / ("eval-%s" % _hash_config(resolved))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(resolved, indent=2))
    factory = TrainSpec(method, model_cfg, train_cfg)
    try:
        reports = evaluation.run_protocol(factory, seq, args.protocol, k, seeds,
                                          jobs=jobs, method=method)
    except Exception as e:
        (out_dir / "error.txt").write_text("%s: %s\n" % (type(e).__name__, e))
        print("evaluation failed: %s" % e, file=sys.stderr)
        return 1
    summary = evaluation.summarize(reports)

    files = ["config.json"]
    for rep in reports:
        name = "report_seed%d.json" % rep.seed
        (out_dir / name).write_text(rep.to_json())
        files.append(name)
    (out_dir / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2))
    files.append("summary.json")

    dataset_name = seq.metadata.get("generator", "dataset")
    with open(out_dir / "summary.csv", "w") as fh:
        fh.write("dataset,method,ood_avg_mean,ood_avg_std,ood_wrt_mean,ood_wrt_std\n")
        fh.write("%s,%s,%.2f,%.2f,%.2f,%.2f\n" % (
            dataset_name, method, 100 * summary.ood_avg_mean, 100 * summary.ood_avg_std,
            100 * summary.ood_wrt_mean, 100 * summary.ood_wrt_std))
    files.append("summary.csv")

    with open(out_dir / "per_domain.csv", "w") as fh:
        fh.write("seed,train_t,target_domain,accuracy\n")
        for rep in reports:
            for w in rep.windows:
                for dom, acc in w.per_target:
                    fh.write("%d,%d,%d,%r\n" % (rep.seed, w.train_t, dom, acc))
    files.append("per_domain.csv")

    (out_dir / "manifest.json").write_text(json.dumps({"files": files}, indent=2))
    print("%s %s K=%d: ood_avg %.2f (%.2f), ood_wrt %.2f (%.2f) -> %s" % (
        dataset_name, method, k, 100 * summary.ood_avg_mean, 100 * summary.ood_avg_std,
        100 * summary.ood_wrt_mean, 100 * summary.ood_wrt_std, out_dir))
    return 0


def cmd_verify_theory(args) -> int:
    runners = {
        "lemma1": lambda: theory.check_error_transfer(args.trials, seed=args.seed),
        "prop1": lambda: theory.check_reweighting_identity(args.trials, seed=args.seed),
        "pinsker": lambda: theory.check_pinsker(args.trials, seed=args.seed),
    }
    names = list(runners) if args.check == "all" else [args.check]
    reports = [runners[n]() for n in names]
    for r in reports:
        line = "%-8s trials=%d %s" % (r.name, r.trials,
                                      "pass" if r.passed else "FAIL")
        if r.min_slack != float("inf"):
            line += " min_slack=%.3e max_slack=%s" % (
                r.min_slack,
                "inf" if r.max_slack == float("inf") else "%.3e" % r.max_slack)
        if r.max_gap:
            line += " max_gap=%.3e" % r.max_gap
        print(line)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps([r.to_dict() for r in reports], indent=2))
    return 0 if all(r.passed for r in reports) else 1


def cmd_export_boundary(args) -> int:
    try:
        model = TrainedModel.load(args.run)
    except Exception as e:
        print("cannot load run %s: %s" % (args.run, e), file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else Path(args.run) / ("boundary_t%d.csv" % args.target)
    try:
        grid = evaluation.export_boundary(model, args.target, tuple(args.bounds),
                                          args.resolution, out)
    except ValueError as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    print("wrote %d rows to %s" % (grid.pred.size, out))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsdg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic domain-sequence dataset")
    g.add_argument("dataset", choices=sorted(datagen.GENERATORS))
    g.add_argument("--domains", type=_positive_int, default=30)
    g.add_argument("--n", type=_positive_int, default=1000)
    g.add_argument("--radius", type=float, default=1.0)
    g.add_argument("--sigma", type=float, default=0.2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--t-source", type=_positive_int, default=None)
    g.add_argument("--out", required=True, help="output base path (no extension)")
    g.set_defaults(func=cmd_generate, out_root=None)

    def add_model_flags(p):
        p.add_argument("--repr-dim", type=_positive_int, default=None)
        p.add_argument("--encoder-layers", type=_positive_int, default=None)
        p.add_argument("--lstm-hidden", type=_positive_int, default=None)
        p.add_argument("--classifier-hidden", type=_positive_int, default=None)
        p.add_argument("--softmax-attention", action="store_true", default=False)
        p.add_argument("--batch", type=_positive_int, default=None)
        p.add_argument("--epochs", type=_positive_int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--patience", type=_positive_int, default=None)
        p.add_argument("--grad-clip", type=float, default=None)
        p.add_argument("--out-root", default=None)
        p.add_argument("--config", default=None, help="resolved config JSON to replay")

    t = sub.add_parser("train", help="train one model on a dataset's source prefix")
    t.add_argument("method", choices=METHODS)
    t.add_argument("--data", default=None, help="dataset base path from 'generate'")
    t.add_argument("--t-source", type=_positive_int, default=None)
    t.add_argument("--seed", type=int, default=None)
    add_model_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run an evaluation protocol over seeds")
    e.add_argument("protocol", choices=("eval-s", "eval-d"))
    e.add_argument("--data", default=None)
    e.add_argument("--method", choices=METHODS, default=None)
    e.add_argument("--k", type=_positive_int, default=None)
    e.add_argument("--seeds", type=int, nargs="+", default=None)
    e.add_argument("--jobs", type=_positive_int, default=None)
    e.add_argument("--out", default=None)
    add_model_flags(e)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify-theory", help="brute-force checks of the bound pieces")
    v.add_argument("check", choices=("lemma1", "prop1", "pinsker", "all"))
    v.add_argument("--trials", type=_positive_int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify_theory, out_root=None)

    b = sub.add_parser("export-boundary", help="dump a prediction grid for a run")
    b.add_argument("--run", required=True, help="train run directory")
    b.add_argument("--target", type=_positive_int, required=True)
    b.add_argument("--resolution", type=_positive_int, default=100)
    b.add_argument("--bounds", type=float, nargs=4, default=[-1.5, 1.5, -1.5, 1.5],
                   metavar=("X1MIN", "X1MAX", "X2MIN", "X2MAX"))
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_export_boundary, out_root=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
