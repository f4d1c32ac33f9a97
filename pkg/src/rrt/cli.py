"""``rrt`` command line: train, profile, harden, inject, report, dump-hist.

Every subcommand writes fixed file names under ``--out`` and echoes its
effective configuration there as ``config.ini``. ``--config FILE`` reads a
flat ``key = value`` file whose keys are the long flag names; flags given on
the command line win.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
divergence, 4 I/O or file-format error.
"""
import argparse
import configparser
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import hardening, metrics, model
from .activation import ThresholdSet
from .errors import DivergenceError, FormatError, InvalidValueError
from .faultinject import DEFAULT_BERS, CampaignConfig, FaultSpace, plan_faults, run_campaign, trial_seed
from .optim import TrainConfig

log = logging.getLogger("rrt")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
METHODS = ("ranger-lw", "ranger-nw", "ft-clipact", "fitact", "proact")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _existing(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: {path} does not exist")
    return p


def _model_path(path, flag="--model"):
    p = Path(path) if path is not None else None
    if p is not None and p.is_dir():
        p = p / "model"
    if p is None or not (p.exists() or p.with_name(p.name + model.MANIFEST_SUFFIX).exists()
                         or p.with_suffix(model.MANIFEST_SUFFIX).exists()):
        raise UsageError(f"{flag}: no model at {path}")
    return p


def _load_split(args, split):
    directory = _existing(args.data, "--data")
    ds = D.load_dir(directory, split)
    limit = getattr(args, "limit", None)
    return ds.head(limit) if limit else ds


def _profile_split(args, train):
    n = min(args.val_samples, len(train))
    return D.split_validation(train, n, args.seed)[0]


def _train_config(args):
    keys = [f for f in TrainConfig.__dataclass_fields__ if getattr(args, f, None) is not None]
    return TrainConfig(**{k: getattr(args, k) for k in keys})


def _write_metrics(out, rows):
    lines = ["metric,value"] + [f"{k},{v!r}" if isinstance(v, float) else f"{k},{v}" for k, v in rows]
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")


def _echo_config(args, out):
    cp = configparser.ConfigParser(interpolation=None)
    cp["rrt"] = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "config") or v is None:
            continue
        cp["rrt"][k] = " ".join(map(str, v)) if isinstance(v, (list, tuple)) else str(v)
    with open(out / "config.ini", "w") as f:
        cp.write(f)


def read_config(path):
    """Flat ``key = value`` file -> dict; a leading ``[section]`` header is optional."""
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[rrt]\n" + text
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"--config: {exc}") from None
    out = {}
    for section in cp.sections():
        for k, v in cp[section].items():
            out[k.replace("-", "_")] = v
    return out


# ---------------------------------------------------------------- commands


def cmd_train_baseline(args, out):
    train = _load_split(args, "train")
    test = D.load_dir(args.data, "test")
    cfg = _train_config(args)
    net = model.build(args.arch, seed=args.seed)
    trained = model.train_baseline(net, train, cfg)
    model.save_model(trained, out / "model")
    acc = metrics.top1_accuracy(trained, None, test)
    lines = ["epoch,loss"] + [f"{i},{l!r}" for i, l in enumerate(getattr(trained, "history", []))]
    (out / "train_log.csv").write_text("\n".join(lines) + "\n")
    _write_metrics(out, [("test_top1", acc), ("params", trained.param_count)])
    print(f"test top-1 {acc:.4f}")


def cmd_profile(args, out):
    net = model.load_model(_model_path(args.model))
    train = _load_split(args, "train")
    prof = _profile_split(args, train)
    rep = hardening.profile_max(net, prof, neuron_wise=args.neuron_wise)
    doc = {"samples": rep.samples, "layer_max": rep.layer_max.tolist(),
           "neuron_max": {str(i): v.tolist() for i, v in rep.neuron_max.items()}}
    (out / "profile.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print("layer maxima " + " ".join(f"{m:.4g}" for m in rep.layer_max))


def cmd_harden(args, out):
    if args.method not in METHODS:
        raise UsageError(f"--method must be one of {', '.join(METHODS)}")
    net = model.load_model(_model_path(args.model))
    train = _load_split(args, "train")
    test = D.load_dir(args.data, "test")
    prof = _profile_split(args, train)
    cfg = _train_config(args)
    rows = []  # written even if training diverges
    try:
        ts = _run_method(args, net, train, prof, cfg, rows)
    finally:
        (out / "train_log.csv").write_text(hardening.log_csv(rows))
    ts.save(out / "thresholds.json")
    before = metrics.top1_accuracy(net, None, test)
    after = metrics.top1_accuracy(net, ts, test)
    overhead = metrics.memory_overhead(net, ts)
    _write_metrics(out, [("method", args.method), ("top1_before", before), ("top1_after", after),
                         ("memory_overhead", overhead), ("threshold_count", ts.count)])
    print(f"{args.method}: top-1 {before:.4f} -> {after:.4f}, memory overhead {overhead:.3e}")


def _run_method(args, net, train, prof, cfg, rows):
    if args.method in ("ranger-lw", "ranger-nw"):
        rep = hardening.profile_max(net, prof, neuron_wise=args.method == "ranger-nw")
        ts = hardening.harden_ranger(net, rep, "layer" if args.method == "ranger-lw" else "neuron")
    elif args.method == "ft-clipact":
        ts = hardening.search_ftclipact(net, prof, fi_budget=args.fi_budget, grid_size=args.grid_size,
                                        ber=args.search_ber, tolerance=args.tolerance, seed=args.seed)
    elif args.method == "fitact":
        ts = hardening.train_fitact(net, net, train, cfg, profile_data=prof, log_rows=rows)
    else:
        ts = hardening.train_proact(net, net, train, cfg, profile_data=prof, log_rows=rows)
    return ts


def _load_thresholds(path):
    return ThresholdSet.load(_existing(path, "--thresholds")) if path else None


def cmd_inject(args, out):
    mpath = _model_path(args.model)
    net = model.load_model(mpath)
    ts = _load_thresholds(args.thresholds)
    test = _load_split(args, args.split)
    cfg = CampaignConfig(bers=tuple(args.ber), trials=args.trials, seed=args.seed, batch_size=args.batch_size)
    res = run_campaign(net, ts, cfg, test, workers=args.workers, label=args.label)
    (out / "campaign_trials.csv").write_text(res.trials_csv())
    (out / "campaign_summary.csv").write_text(res.summary_csv())
    if res.errors:
        (out / "campaign_errors.csv").write_text(res.errors_csv())
    meta = {"label": args.label, "fault_free_top1": res.fault_free_top1,
            "baseline_top1": metrics.top1_accuracy(net, None, test) if ts is not None else res.fault_free_top1,
            "bers": list(cfg.bers), "trials": cfg.trials, "seed": cfg.seed, "samples": len(test),
            "model": str(mpath.resolve()), "thresholds": str(Path(args.thresholds).resolve()) if args.thresholds else None,
            "failed_trials": len(res.errors), **res.meta}
    (out / "campaign_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    for row in res.summary():
        print(f"ber {row['ber']:.1e}: top-1 {row['mean']:.4f} +/- {row['std']:.4f} ({row['trials']} trials)")
    if res.errors:
        print(f"{len(res.errors)} trial(s) failed, see campaign_errors.csv", file=sys.stderr)


def _read_campaign(directory):
    d = _existing(directory, "--inputs")
    summary, meta = d / "campaign_summary.csv", d / "campaign_meta.json"
    if not summary.exists() or not meta.exists():
        raise UsageError(f"--inputs: {directory} holds no campaign_summary.csv/campaign_meta.json")
    with open(summary, newline="") as f:
        rows = list(csv.DictReader(f))
    return rows, json.loads(meta.read_text())


def cmd_report(args, out):
    if not args.inputs:
        raise UsageError("--inputs needs at least one campaign directory")
    campaigns = [(d, *_read_campaign(d)) for d in args.inputs]
    lines = ["method,ber,mean,std,ci95_lo,ci95_hi,trials,drop"]
    for d, rows, meta in campaigns:
        method = meta.get("label") or Path(d).name
        base = float(meta["baseline_top1"])
        for r in rows:
            drop = base - float(r["mean"])
            lines.append(f"{method},{r['ber']},{r['mean']},{r['std']},{r['ci95_lo']},{r['ci95_hi']},{r['trials']},{drop!r}")
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if args.l2 is not None:
        _report_l2(args, campaigns, out)


def _report_l2(args, campaigns, out):
    """Mean activation L2 distance per method over plans shared by every method."""
    setups = []
    for d, _, meta in campaigns:
        net = model.load_model(meta["model"])
        ts = ThresholdSet.load(meta["thresholds"]) if meta.get("thresholds") else None
        setups.append((meta.get("label") or Path(d).name, net, ts))
    test = _load_split(args, args.split)
    bits = max(FaultSpace(net, ts).total_bits for _, net, ts in setups)
    plans = [plan_faults(bits, args.l2, trial_seed(args.seed, 0, t)) for t in range(args.l2_plans)]
    lines = ["method,ber,plans,mean_l2"]
    for method, net, ts in setups:
        d = np.mean([metrics.l2_activation_distance(net, ts, p, test) for p in plans])
        lines.append(f"{method},{args.l2!r},{len(plans)},{float(d)!r}")
    (out / "l2.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_dump_hist(args, out):
    net = model.load_model(_model_path(args.model))
    ts = _load_thresholds(args.thresholds)
    test = _load_split(args, args.split)
    plan = None
    if args.ber:
        plan = plan_faults(FaultSpace(net, ts), args.ber, trial_seed(args.seed, 0, 0))
    paths = metrics.dump_activation_histogram(net, ts, test, out / "hist", plan=plan, bins=args.bins,
                                              range_split=args.range_split)
    print(f"wrote {len(paths)} histograms to {out / 'hist'}")


# ---------------------------------------------------------------- parser


def _common(p, data=True):
    p.add_argument("--config", help="flat key = value file; command-line flags override it")
    p.add_argument("--out", required=False, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    if data:
        p.add_argument("--data", help="directory with MNIST IDX or CIFAR-10 binary files")
        p.add_argument("--limit", type=int, help="use only the first N samples of the split")


def _train_flags(p):
    d = TrainConfig()
    for name in ("epochs", "epochs_last_layer", "epochs_other_layers", "batch_size", "lr_halving_every"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=int, default=getattr(d, name))
    for name in ("learning_rate", "temperature", "gamma", "slope_k"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=getattr(d, name))
    p.add_argument("--lr", dest="learning_rate", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="rrt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-baseline", help="train a ReLU reference model")
    _common(p)
    p.add_argument("--arch", default="lenet5", choices=sorted(model.ARCHITECTURES))
    _train_flags(p)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("profile", help="profile activation maxima")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--val-samples", dest="val_samples", type=int, default=3000)
    p.add_argument("--neuron-wise", dest="neuron_wise", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("harden", help="compute clipping thresholds")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--method", default="proact")
    p.add_argument("--val-samples", dest="val_samples", type=int, default=3000)
    p.add_argument("--fi-budget", dest="fi_budget", type=int, default=10)
    p.add_argument("--grid-size", dest="grid_size", type=int, default=20)
    p.add_argument("--search-ber", dest="search_ber", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=0.005)
    _train_flags(p)
    p.set_defaults(func=cmd_harden)

    p = sub.add_parser("inject", help="run a bit-flip campaign")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--thresholds")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--ber", type=float, nargs="+", default=list(DEFAULT_BERS))
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=256)
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("report", help="join campaign summaries into one table")
    _common(p)
    p.add_argument("--inputs", nargs="+", default=[])
    p.add_argument("--l2", type=float, help="also report activation L2 distance at this BER")
    p.add_argument("--l2-plans", dest="l2_plans", type=int, default=50)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("dump-hist", help="write per-layer activation histograms")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--thresholds")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--ber", type=float, default=0.0)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--range-split", dest="range_split", type=float, default=1.0)
    p.set_defaults(func=cmd_dump_hist)
    return parser


def _apply_config(parser, argv):
    """Parse once to find the subcommand and --config, then reparse with file values as defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    values = read_config(_existing(args.config, "--config"))
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in values.items():
        if k not in known or k in ("help", "config"):
            raise UsageError(f"--config: unknown key {k!r} for {args.command}")
        action = known[k]
        try:
            if action.nargs in ("+", "*"):
                v = [action.type(x) if action.type else x for x in v.replace(",", " ").split()]
            elif action.const is True:
                v = v.strip().lower() in ("1", "true", "yes", "on")
            elif action.type:
                v = action.type(v)
        except ValueError:
            raise UsageError(f"--config: bad value {v!r} for {k}") from None
        defaults[k] = v
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if not args.out:
            raise UsageError("--out is required")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo_config(args, out)
        args.func(args, out)
    except UsageError as exc:
        print(f"rrt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidValueError as exc:
        print(f"rrt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"rrt: diverged: {exc} (see train_log.csv)", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, OSError) as exc:
        print(f"rrt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
