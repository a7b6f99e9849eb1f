"""Command-line entry point: ``astgcrn {synth,train,eval,predict,oracle}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (divergence, NaN), 4 checkpoint/dataset incompatibility,
5 oracle suite failure.
"""
import argparse
import json
import os
import sys
from dataclasses import asdict, fields

from . import __version__, kernels
from .data import correlation_adjacency, ingest_adjacency, ingest_csv, split_and_window, synth_series, write_csv
from .errors import (
    CompatibilityError,
    ConfigurationError,
    DegenerateDataError,
    DimensionError,
    IngestionError,
    NumericError,
)
from .model import CHECKPOINT_VERSION, ASTGCRN, ModelConfig, load_checkpoint, save_checkpoint
from .oracles import SUITES, run_suites
from .runtime import test_mode
from .train import Schedule, evaluate, fit, metrics_csv, predict

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_COMPAT, EXIT_ORACLE = 0, 1, 2, 3, 4, 5
MANIFEST_VERSION = 1

RUN_KEYS = {
    "dataset": str,
    "adjacency": str,
    "out": str,
    "interval": str,
}


class UsageError(Exception):
    pass


def _coerce(text):
    low = text.strip().lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text.strip()


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = _coerce(value)
    return out


def _field_names(cls):
    return {f.name for f in fields(cls)}


def build_run_config(args):
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = _coerce(v)
    flag_map = {"seed": "seed", "variant": "variant", "graph": "graph_mode", "out": "out",
                "dataset": "dataset", "epochs": "max_epochs"}
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = val
    known = _field_names(ModelConfig) | _field_names(Schedule) | set(RUN_KEYS)
    unknown = sorted(set(cfg) - known - {"num_nodes"})
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def _model_config(cfg, num_nodes):
    vals = {k: v for k, v in cfg.items() if k in _field_names(ModelConfig)}
    vals["num_nodes"] = num_nodes
    if "seed" not in vals:
        vals["seed"] = 0
    return ModelConfig(**vals)


def _schedule(cfg):
    vals = {k: v for k, v in cfg.items() if k in _field_names(Schedule)}
    vals.setdefault("seed", cfg.get("seed", 0))
    return Schedule(**vals)


def _load_dataset(path, cfg, steps):
    series = ingest_csv(path, interval=cfg.get("interval") or "5 mins")
    return series, split_and_window(series, steps, steps)


# ------------------------------------------------------------------ commands

def cmd_synth(args):
    if args.nodes < 1 or args.steps < 1:
        raise UsageError("--nodes and --steps must be positive")
    values = synth_series(args.nodes, args.steps, args.seed, coupling=args.coupling, noise=args.noise)
    write_csv(args.out, values)
    print(f"wrote {args.steps} x {args.nodes} series to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = build_run_config(args)
    if not cfg.get("dataset"):
        raise UsageError("train needs --dataset (or 'dataset' in the config file)")
    out = cfg.get("out") or "run"
    steps = int(cfg.get("input_steps", 12))
    series, ds = _load_dataset(cfg["dataset"], cfg, steps)
    mcfg = _model_config(cfg, series.num_nodes)
    adjacency = None
    if mcfg.graph_mode == "static":
        if cfg.get("adjacency"):
            adjacency = ingest_adjacency(cfg["adjacency"])
        else:
            a, b = ds.boundaries[0]
            adjacency = correlation_adjacency(series.values[a:b])
    model = ASTGCRN(mcfg, adjacency=adjacency)
    sched = _schedule(cfg)
    os.makedirs(out, exist_ok=True)

    def log(row):
        if not args.quiet:
            print(f"epoch {row['epoch']:4d}  train {row['train_loss']:.5f}  val MAE {row['val_mae']:.5f}",
                  flush=True)

    report = fit(model, ds, sched, log=log)
    extra = {"normalizer": {"mean": ds.normalizer.mean, "std": ds.normalizer.std}}
    save_checkpoint(model, os.path.join(out, "checkpoint.bin"), extra=extra)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out, "report.csv"), "w") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(out, "timing.json"), "w") as fh:
        json.dump({"wall_time": report.wall_time}, fh)
    result = evaluate(model, ds, "test")
    with open(os.path.join(out, "metrics_test.csv"), "w") as fh:
        fh.write(metrics_csv(result))
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "checkpoint_format": CHECKPOINT_VERSION,
        "package_version": __version__,
        "test_mode": test_mode(),
        "kernel_backend": kernels.get_backend(),
        "run_config": {k: cfg[k] for k in sorted(cfg)},
        "model_config": asdict(mcfg),
        "schedule": asdict(sched),
        "dataset": ds.manifest(),
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    ds.write_manifest(os.path.join(out, "dataset_manifest.json"))
    mae, rmse, mape = result["aggregate"]
    print(f"best epoch {report.best_epoch} ({report.stop_reason}); test MAE {mae:.4f} RMSE {rmse:.4f} "
          f"MAPE {mape:.2f}%")
    return EXIT_OK


def _compatible(manifest, series):
    cfg = manifest["config"]
    mismatched = []
    if cfg["num_nodes"] != series.num_nodes:
        mismatched.append(("num_nodes", cfg["num_nodes"], series.num_nodes))
    if mismatched:
        detail = ", ".join(f"{f} (checkpoint {a}, dataset {b})" for f, a, b in mismatched)
        raise CompatibilityError(f"checkpoint and dataset disagree: {detail}", [m[0] for m in mismatched])


def _load_for_eval(args):
    model, manifest = load_checkpoint(args.checkpoint)
    series = ingest_csv(args.dataset)
    _compatible(manifest, series)
    ds = split_and_window(series, model.config.input_steps, model.config.output_steps)
    return model, ds


def cmd_eval(args):
    model, ds = _load_for_eval(args)
    text = metrics_csv(evaluate(model, ds, args.split))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


def cmd_predict(args):
    model, ds = _load_for_eval(args)
    part = ds[args.split]
    pred = predict(model, part, ds.normalizer)[..., 0]  # (M, T, N)
    lines = ["window_start,horizon," + ",".join(f"node_{i}" for i in range(pred.shape[2]))]
    for m, start in enumerate(part.starts):
        for h in range(pred.shape[1]):
            lines.append(f"{int(start)},{h + 1}," + ",".join(repr(float(v)) for v in pred[m, h]))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle(args):
    names = list(SUITES) if args.suite == "all" else [args.suite]
    if args.suite != "all" and args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; available: all, {', '.join(SUITES)}")
    results = run_suites(names)
    width = max(len(r["check"]) for r in results)
    for r in results:
        mark = "PASS" if r["passed"] else "FAIL"
        print(f"{mark}  {r['suite']:10s} {r['check']:{width}s}  {r['detail']}")
    failed = sum(not r["passed"] for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_ORACLE


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="astgcrn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a seeded synthetic multi-node series")
    s.add_argument("--nodes", type=int, default=8)
    s.add_argument("--steps", type=int, default=2016)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--coupling", type=float, default=0.3)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit a model and write checkpoint, report and manifest")
    t.add_argument("--config")
    t.add_argument("--dataset")
    t.add_argument("--seed", type=int)
    t.add_argument("--variant", choices=["none", "mhsa", "transformer", "informer"])
    t.add_argument("--graph", choices=["adaptive", "static"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--out")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, fn, helptext in (("eval", cmd_eval, "per-horizon metrics CSV"),
                               ("predict", cmd_predict, "forecasts in original units")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--dataset", required=True)
        e.add_argument("--split", choices=["train", "val", "test"], default="test")
        e.add_argument("--out")
        e.set_defaults(func=fn)

    o = sub.add_parser("oracle", help="run brute-force equivalence suites")
    o.add_argument("suite", nargs="?", default="all", help=f"all or one of: {', '.join(SUITES)}")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CompatibilityError as exc:
        print(f"incompatible: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (IngestionError, DegenerateDataError, DimensionError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
