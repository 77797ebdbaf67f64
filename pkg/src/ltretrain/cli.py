"""Command-line entry point.

    python -m ltretrain <command> [options]

Commands: gen, train, eval, metrics, verify, sweep, grid, compare. Every
command writes into ``--out``; the resolved configuration goes to
``config.resolved.ini`` and timestamps only to ``run.log``. Exit codes are
0 on success, 1 when a run or check fails, and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import time

from . import analysis
from . import losses as L
from .classifier import HEADS, LINEAR, PosthocSpec, load_checkpoint, save_checkpoint
from .data import (
    SyntheticSpec,
    class_stats,
    generate_synthetic,
    load_features,
    load_manifest,
    save_features,
)
from .errors import DivergenceError, IngestionError, InvalidArgument, InvalidDataset, MetricUndefined
from .metrics import metrics_report
from .training import CLASS_BALANCED, SHUFFLE, TrainConfig, train_classifier

log = logging.getLogger("ltretrain")

LOSS_NAMES = {
    "ce": L.CE,
    "lort": L.LORT,
    "focal": L.FOCAL,
    "cb-ce": L.CB_CE,
    "cb-bce": L.CB_BCE,
    "ldam": L.LDAM,
    "bs": L.BALANCED_SOFTMAX,
}
POSTHOC_NAMES = {"none": "None", "taunorm": "TauNorm", "la": "LogitAdjust"}
SAMPLER_NAMES = {"shuffle": SHUFFLE, "balanced": CLASS_BALANCED}


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _name_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _opt_float(text):
    return None if text.lower() in ("none", "") else float(text)


# (dest, type, default, config section, help). Flags are --dest with
# underscores turned into dashes; the same names are valid config keys.
OPTIONS = {
    # data
    "k": (int, 20, "data", "number of classes"),
    "d": (int, 16, "data", "feature dimension"),
    "nmax": (int, 500, "data", "largest class size"),
    "ir": (float, 100.0, "data", "imbalance ratio n_max / n_min"),
    "test_per_class": (int, 50, "data", "balanced test samples per class"),
    "separation": (float, 5.0, "data", "distance between cluster means"),
    "within_std": (float, 1.0, "data", "cluster standard deviation"),
    "train": (str, None, "data", "training feature file (LTFEAT)"),
    "test": (str, None, "data", "evaluation feature file (LTFEAT)"),
    "many_threshold": (int, None, "data", "Many group: count above this"),
    "few_threshold": (int, None, "data", "Few group: count below this"),
    # loss
    "loss": (str, "ce", "loss", "loss: " + ",".join(LOSS_NAMES)),
    "delta": (float, 0.98, "loss", "LORT label smooth value in [0, 1)"),
    "gamma": (_opt_float, None, "loss", "focal / LDAM exponent"),
    "beta": (float, 0.9999, "loss", "class-balanced beta"),
    "c": (_opt_float, None, "loss", "LDAM margin constant (default: calibrated)"),
    "resample": (int, 0, "loss", "1 to draw class-balanced batches"),
    # train
    "head": (str, None, "train", "classifier head: " + ",".join(h.lower() for h in HEADS)),
    "epochs": (int, 20, "train", "training epochs"),
    "batch_size": (int, 128, "train", "mini-batch size"),
    "lr": (float, None, "train", "initial learning rate"),
    "wd": (float, 5e-4, "train", "weight decay on W"),
    "momentum": (float, 0.9, "train", "SGD momentum"),
    "sampler": (str, "shuffle", "train", "shuffle or balanced"),
    "maxnorm": (_opt_float, None, "train", "MaxNorm radius"),
    "cosine_scale": (float, 16.0, "train", "cosine head logit scale"),
    "init": (str, None, "train", "initial checkpoint (LTCLS)"),
    "pretrain": (int, 1, "train", "benchmark mode: finetune from a CE-trained head (1) or from scratch (0)"),
    # posthoc
    "posthoc": (str, "none", "posthoc", "none, taunorm or la"),
    "tau": (float, 1.0, "posthoc", "post-hoc tau"),
    # sweep
    "deltas": (_float_list, [0.0, 0.2, 0.5, 0.8, 0.9, 0.98, 0.99], "sweep", "smooth values"),
    "lrs": (_float_list, [0.003, 0.01, 0.03], "sweep", "grid learning rates"),
    "wds": (_float_list, [0.0, 1e-4, 5e-4], "sweep", "grid weight decays"),
    "methods": (_name_list, ["ce", "lort", "bs", "cb-ce", "ldam", "focal"], "sweep", "methods to compare"),
    "jobs": (int, 1, "sweep", "parallel sweep cells"),
    # verify
    "trials": (int, None, "verify", "cap on randomized trials"),
}

COMMAND_OPTIONS = {
    "gen": ["k", "d", "nmax", "ir", "test_per_class", "separation", "within_std"],
    "train": [
        "train", "test", "many_threshold", "few_threshold", "loss", "delta", "gamma", "beta", "c",
        "resample", "head", "epochs", "batch_size", "lr", "wd", "momentum", "sampler", "maxnorm",
        "cosine_scale", "init", "posthoc", "tau",
    ],
    "eval": ["train", "test", "many_threshold", "few_threshold", "cosine_scale", "posthoc", "tau"],
    "metrics": ["train", "test", "many_threshold", "few_threshold", "cosine_scale", "posthoc", "tau"],
    "verify": ["trials"],
}
_SWEEP_COMMON = [
    "train", "test", "many_threshold", "few_threshold", "separation", "epochs", "batch_size", "lr",
    "wd", "momentum", "sampler", "maxnorm", "cosine_scale", "init", "pretrain", "jobs", "head",
]
COMMAND_OPTIONS["sweep"] = _SWEEP_COMMON + ["deltas"]
COMMAND_OPTIONS["grid"] = _SWEEP_COMMON + ["lrs", "wds", "loss", "delta", "gamma", "beta", "c", "resample"]
COMMAND_OPTIONS["compare"] = _SWEEP_COMMON + ["methods", "delta", "tau"]


def build_parser():
    parser = argparse.ArgumentParser(prog="ltretrain", description="Classifier retraining for long-tailed data.")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in COMMAND_OPTIONS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="key=value config file with [data]/[loss]/[train]/[posthoc]/[sweep] sections")
        p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        for dest in opts:
            typ, default, _, help_ = OPTIONS[dest]
            p.add_argument("--" + dest.replace("_", "-"), dest=dest, type=typ, default=None,
                           help=f"{help_} (default: {default})")
        if cmd in ("eval", "metrics"):
            p.add_argument("--ckpt", required=True, help="classifier checkpoint (LTCLS)")
        if cmd == "verify":
            p.add_argument("--negate-hessian", action="store_true", help=argparse.SUPPRESS)
    return parser


def resolve(args):
    """Merge defaults < config file < explicit flags, rejecting unknown keys."""
    opts = COMMAND_OPTIONS[args.command]
    resolved = {dest: OPTIONS[dest][1] for dest in opts}
    resolved["seed"] = 0
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config, encoding="utf-8"):
            raise UsageError(f"cannot read config file {args.config}")
        for section in cp.sections():
            for key, value in cp.items(section):
                if key == "seed" and section in ("data", "train"):
                    resolved["seed"] = int(value)
                    continue
                if key not in OPTIONS or OPTIONS[key][2] != section:
                    raise UsageError(f"unknown key [{section}] {key}")
                if key not in opts:
                    continue
                try:
                    resolved[key] = OPTIONS[key][0](value)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"bad value for [{section}] {key}: {exc}") from None
    for dest in opts:
        v = getattr(args, dest, None)
        if v is not None:
            resolved[dest] = v
    if args.seed is not None:
        resolved["seed"] = args.seed
    return resolved


def dump_config(cfg, command, path):
    cp = configparser.ConfigParser()
    cp["run"] = {"command": command, "seed": str(cfg["seed"])}
    for dest, value in cfg.items():
        if dest == "seed":
            continue
        section = OPTIONS[dest][2]
        if section not in cp:
            cp[section] = {}
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        cp[section][dest] = "none" if value is None else str(value)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cp.write(fh)


# ---------------------------------------------------------------------------
# option -> object helpers


def loss_spec_from(cfg):
    name = cfg.get("loss", "ce")
    if name not in LOSS_NAMES:
        raise UsageError(f"unknown --loss {name!r}; choose from {', '.join(LOSS_NAMES)}")
    try:
        return L.LossSpec(
            LOSS_NAMES[name],
            delta=cfg["delta"] if name == "lort" else 0.98,
            gamma=cfg.get("gamma"),
            beta=cfg.get("beta", 0.9999),
            C=cfg.get("c"),
            use_resampling=bool(cfg.get("resample", 0)),
        )
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None


def posthoc_from(cfg):
    name = cfg.get("posthoc", "none")
    if name not in POSTHOC_NAMES:
        raise UsageError(f"unknown --posthoc {name!r}")
    try:
        return PosthocSpec(POSTHOC_NAMES[name], cfg.get("tau", 1.0))
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None


def train_config_from(cfg, seed, default_lr):
    sampler = cfg.get("sampler", "shuffle")
    if sampler not in SAMPLER_NAMES:
        raise UsageError(f"unknown --sampler {sampler!r}")
    by_lower = {h.lower(): h for h in HEADS}
    head = by_lower.get((cfg.get("head") or LINEAR).lower())
    if head is None:
        raise UsageError(f"unknown --head {cfg.get('head')!r}; choose from {', '.join(by_lower)}")
    try:
        return TrainConfig(
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            lr0=cfg["lr"] if cfg.get("lr") is not None else default_lr,
            weight_decay=cfg["wd"],
            momentum=cfg["momentum"],
            seed=seed,
            sampler=SAMPLER_NAMES[sampler],
            maxnorm=cfg.get("maxnorm"),
            cosine_scale=cfg["cosine_scale"],
            head=head,
        )
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None


def _stats_for(train, cfg):
    thresholds = load_manifest(cfg["train"]) if cfg.get("train") else {}
    for key in ("many_threshold", "few_threshold"):
        if cfg.get(key) is not None:
            thresholds[key] = cfg[key]
    return class_stats(train, thresholds.get("many_threshold", 100), thresholds.get("few_threshold", 20))


def _load_pair(cfg, need_test=True):
    if not cfg.get("train"):
        raise UsageError("--train is required")
    train = load_features(cfg["train"])
    test = None
    if cfg.get("test"):
        test = load_features(cfg["test"])
    elif need_test:
        raise UsageError("--test is required")
    return train, test


def _workload(cfg):
    """Sweep inputs: user feature files, or the built-in benchmark for --seed."""
    if cfg.get("train"):
        train, test = _load_pair(cfg)
        stats = _stats_for(train, cfg)
        init = load_checkpoint(cfg["init"]) if cfg.get("init") else None
        run_cfg = train_config_from(cfg, cfg["seed"], analysis.FINETUNE_CFG.lr0 if init else 0.1)
        return train, test, stats, init, run_cfg
    sep = cfg.get("separation")
    bm = analysis.benchmark(cfg["seed"], class_separation=sep if sep is not None else 5.0)
    init = bm.pretrained if cfg.get("pretrain", 1) else None
    run_cfg = train_config_from(cfg, bm.finetune.seed, bm.finetune.lr0 if init else 0.1)
    return bm.train, bm.test, bm.stats, init, run_cfg


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg, out, args):
    spec = SyntheticSpec(
        K=cfg["k"], D=cfg["d"], n_max=cfg["nmax"], imbalance_ratio=cfg["ir"],
        test_per_class=cfg["test_per_class"], class_separation=cfg["separation"],
        within_std=cfg["within_std"], seed=cfg["seed"],
    )
    try:
        spec.validate()
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None
    train, test = generate_synthetic(spec)
    save_features(train, os.path.join(out, "train.ltfeat"))
    save_features(test, os.path.join(out, "test.ltfeat"))
    print(f"wrote train (N={train.n}) and test (N={test.n}) to {out}")
    return 0


def _write_metrics(report, out, prefix="metrics"):
    report.write_text(os.path.join(out, f"{prefix}.txt"))
    report.write_csv(os.path.join(out, f"{prefix}.csv"))
    report.write_binned_csv(os.path.join(out, f"{prefix}_binned.csv"))


def cmd_train(cfg, out, args):
    spec = loss_spec_from(cfg)
    posthoc = posthoc_from(cfg)
    train, test = _load_pair(cfg, need_test=False)
    stats = _stats_for(train, cfg)
    init = load_checkpoint(cfg["init"]) if cfg.get("init") else None
    tcfg = train_config_from(cfg, cfg["seed"], 0.1)
    params, hist = train_classifier(train, test, spec, tcfg, init, stats)
    save_checkpoint(params, os.path.join(out, "checkpoint.ltcls"))
    hist.write_csv(os.path.join(out, "history.csv"))
    report = metrics_report(params, posthoc, test if test is not None else train, stats, tcfg.cosine_scale)
    _write_metrics(report, out)
    print(_acc_line(report))
    return 0


def _acc_line(report):
    def f(v):
        return "n/a" if v is None else f"{v:.2f}"

    return f"All {f(report.acc_all)}  Many {f(report.acc_many)}  Medium {f(report.acc_medium)}  Few {f(report.acc_few)}"


def cmd_eval(cfg, out, args):
    params = load_checkpoint(args.ckpt)
    train, test = _load_pair(cfg)
    stats = _stats_for(train, cfg)
    report = metrics_report(params, posthoc_from(cfg), test, stats, cfg["cosine_scale"])
    with open(os.path.join(out, "eval.txt"), "w", encoding="utf-8", newline="\n") as fh:
        for name in ("acc_all", "acc_many", "acc_medium", "acc_few"):
            v = getattr(report, name)
            fh.write(f"{name}={'' if v is None else repr(v)}\n")
    print(_acc_line(report))
    return 0


def cmd_metrics(cfg, out, args):
    params = load_checkpoint(args.ckpt)
    train, test = _load_pair(cfg)
    stats = _stats_for(train, cfg)
    report = metrics_report(params, posthoc_from(cfg), test, stats, cfg["cosine_scale"])
    _write_metrics(report, out)
    print(_acc_line(report))
    return 0


def cmd_verify(cfg, out, args):
    checks = analysis.run_verification(trials=cfg.get("trials"), negate_hessian=args.negate_hessian, seed=cfg["seed"])
    lines = [c.line() for c in checks]
    with open(os.path.join(out, "verify_report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if all(c.passed for c in checks) else 1


def cmd_sweep(cfg, out, args):
    train, test, stats, init, run_cfg = _workload(cfg)
    res = analysis.delta_sweep(train, test, cfg["deltas"], run_cfg, init, stats, jobs=cfg["jobs"])
    res.write_csv(os.path.join(out, "delta_sweep.csv"))
    print(f"wrote {len(res.keys)} rows to delta_sweep.csv")
    return 0


def cmd_grid(cfg, out, args):
    spec = loss_spec_from(cfg)
    train, test, stats, init, run_cfg = _workload(cfg)
    res = analysis.lr_wd_grid(train, test, cfg["lrs"], cfg["wds"], run_cfg, spec, init, stats, jobs=cfg["jobs"])
    res.write_csv(os.path.join(out, "lr_wd_grid.csv"))
    print(f"wrote {len(res.keys)} cells to lr_wd_grid.csv")
    return 0


def cmd_compare(cfg, out, args):
    presets = analysis.method_presets(delta=cfg["delta"], tau=cfg["tau"])
    unknown = [m for m in cfg["methods"] if m not in presets]
    if unknown:
        raise UsageError(f"unknown method(s) {', '.join(unknown)}; choose from {', '.join(presets)}")
    train, test, stats, init, run_cfg = _workload(cfg)
    res = analysis.method_comparison(
        train, test, [presets[m] for m in cfg["methods"]], run_cfg, init, stats, jobs=cfg["jobs"]
    )
    res.write_csv(os.path.join(out, "compare.csv"))
    for (name,), report in zip(res.keys, res.reports):
        if report is not None:
            _write_metrics(report, out, prefix=f"metrics_{name}")
    print(f"wrote {len(res.keys)} methods to compare.csv")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "metrics": cmd_metrics,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        out = args.out
        os.makedirs(out, exist_ok=True)
        handler = logging.FileHandler(os.path.join(out, "run.log"), encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
        try:
            log.info("command=%s argv=%s", args.command, argv if argv is not None else sys.argv[1:])
            dump_config(cfg, args.command, os.path.join(out, "config.resolved.ini"))
            t0 = time.perf_counter()
            code = COMMANDS[args.command](cfg, out, args)
            log.info("finished with exit code %d in %.2fs", code, time.perf_counter() - t0)
            return code
        finally:
            log.removeHandler(handler)
            handler.close()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ltretrain: error: {exc}", file=sys.stderr)
        return 2
    except (IngestionError, InvalidDataset, DivergenceError, MetricUndefined, InvalidArgument) as exc:
        print(f"ltretrain: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ltretrain: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
