"""Command-line entry points: ``cfuad generate|train|eval|roc|baseline``.

Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 numerical failure. Every command writes ``<output>.manifest.json``.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import covdet, evalkit, store
from .neuralnet import Network, TrainConfig, train, write_loss_csv
from .scenario import ConfigError, SystemConfig

log = logging.getLogger("cfuad")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command: str, config: dict | None, seed, inputs: dict,
                   outputs: list, started: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": {str(p): file_digest(p) for p in outputs},
        "wall_clock_s": round(time.time() - started, 3),
        "started_unix": round(started, 3),
    }
    path = Path(f"{out_path}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _open_dataset(path) -> store.Dataset:
    try:
        return store.read_dataset(path)
    except (OSError, store.FormatError) as exc:
        raise DataError(str(exc)) from exc


def _load_model(path) -> Network:
    try:
        return store.load_checkpoint(path)
    except (OSError, store.CheckpointError, ValueError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from exc


def _model_scores(net: Network, ds: store.Dataset) -> tuple[np.ndarray, np.ndarray]:
    x, a = ds.load()
    if x.shape[1:] != net.input_shape:
        raise DataError(f"data tensors {x.shape[1:]} do not fit model input {net.input_shape}")
    return net.predict(x), a


def _baseline_scores(ds: store.Dataset, sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    _, a = ds.load()
    if len(ds) == 0:
        return np.zeros((0, ds.config.num_users)), a
    scores = np.concatenate([
        covdet.baseline_scores(ds.header.pilots, ds.frames(range(i, min(i + 256, len(ds)))),
                               sweeps=sweeps)
        for i in range(0, len(ds), 256)])
    return scores, a


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


# -- commands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    started = time.time()
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    try:
        config = SystemConfig.from_file(args.config) if args.config else SystemConfig()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    bad = [kv for kv in args.set or [] if "=" not in kv]
    if bad:
        raise UsageError(f"--set expects KEY=VALUE, got {bad[0]!r}")
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    if overrides:
        config = SystemConfig.from_dict({**config.to_dict(), **{k.strip(): v.strip()
                                                                for k, v in overrides.items()}})
    store.generate_dataset(config, args.count, args.seed, args.out)
    write_manifest(args.out, "generate", config.to_dict(), args.seed,
                   {"config_file": args.config}, [args.out], started)
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    ds = _open_dataset(args.data)
    cfg = ds.config
    x, a = ds.load()
    x_val = a_val = None
    if args.val:
        val = _open_dataset(args.val)
        if val.header.dims != ds.header.dims or val.header.depth != ds.header.depth:
            raise DataError("validation set dims differ from the training set")
        x_val, a_val = val.load()
    tc = TrainConfig(args.batch or cfg.batch_size,
                     cfg.num_epochs if args.epochs is None else args.epochs,
                     args.lr or cfg.learning_rate)
    n, k, depth = x.shape[1:] if len(x) else (cfg.num_antennas, cfg.num_users, ds.header.depth)
    net = Network(n, k, depth, rng=store.stream(args.seed, 2), dtype=np.dtype(args.dtype),
                  input_transform=args.input_transform)
    if len(x) == 0 and tc.epochs > 0:
        raise DataError("training set is empty")
    if args.keep_best and not args.val:
        raise UsageError("--keep-best needs --val")
    history = []
    if tc.epochs > 0:
        history = train(net, x, a, tc, store.stream(args.seed, 3), x_val, a_val,
                        keep_best=args.keep_best)
        _check_finite(np.array([h[1] for h in history]), "training loss")
    store.save_checkpoint(net, args.out_model)
    loss_csv = args.loss_csv or f"{args.out_model}.loss.csv"
    write_loss_csv(history, loss_csv)
    write_manifest(args.out_model, "train", cfg.to_dict(), args.seed,
                   {"data": args.data, "val": args.val,
                    "train_config": json.dumps(vars(tc)), "keep_best": args.keep_best},
                   [args.out_model, loss_csv], started)
    print(f"saved model to {args.out_model}; loss trace in {loss_csv}")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    net = _load_model(args.model)
    ds = _open_dataset(args.data)
    scores, a = _model_scores(net, ds)
    _check_finite(scores, "model scores")
    if args.threshold is not None:
        thr, note = args.threshold, "given"
    else:
        if args.calib:
            cal_scores, cal_a = _model_scores(net, _open_dataset(args.calib))
        else:
            cal_scores, cal_a = scores, a
        curve = evalkit.roc_sweep(cal_scores, cal_a)
        thr, achieved, ok = evalkit.threshold_for_fa(curve, args.target_fa)
        note = f"calibrated for FA<={args.target_fa} (calibration FA={achieved!r}{'' if ok else ', target unreachable'})"
    counts = evalkit.confusion(scores, a, thr)
    report = (f"threshold={thr!r} ({note})\n"
              f"recall={counts.recall!r}\nfalse_alarm={counts.false_alarm!r}\n"
              f"tp={counts.tp} fp={counts.fp} tn={counts.tn} fn={counts.fn}\n")
    print(report, end="")
    out_csv = args.out_csv or f"{args.data}.eval.csv"
    with open(out_csv, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("threshold,recall,fa,tp,fp,tn,fn\n")
        fh.write(f"{thr!r},{counts.recall!r},{counts.false_alarm!r},"
                 f"{counts.tp},{counts.fp},{counts.tn},{counts.fn}\n")
    Path(f"{out_csv}.txt").write_text(report)
    write_manifest(out_csv, "eval", ds.config.to_dict(), None,
                   {"model": args.model, "data": args.data, "calib": args.calib},
                   [out_csv, f"{out_csv}.txt"], started)
    return 0


def cmd_roc(args) -> int:
    started = time.time()
    ds = _open_dataset(args.data)
    if args.baseline:
        scores, a = _baseline_scores(ds, args.sweeps)
    else:
        scores, a = _model_scores(_load_model(args.model), ds)
    _check_finite(scores, "scores")
    curve = evalkit.roc_sweep(scores, a)
    curve.to_csv(args.out_csv)
    write_manifest(args.out_csv, "roc", ds.config.to_dict(), None,
                   {"model": args.model, "data": args.data,
                    "baseline_sweeps": args.sweeps if args.baseline else None},
                   [args.out_csv], started)
    print(f"auc={curve.auc!r}")
    return 0


def cmd_baseline(args) -> int:
    started = time.time()
    ds = _open_dataset(args.data)
    scores, _ = _baseline_scores(ds, args.sweeps)
    _check_finite(scores, "baseline scores")
    k = ds.config.num_users
    with open(args.out_scores, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("sample," + ",".join(f"user{i}" for i in range(k)) + "\n")
        for i, row in enumerate(scores):
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")
    write_manifest(args.out_scores, "baseline", ds.config.to_dict(), None,
                   {"data": args.data, "sweeps": args.sweeps}, [args.out_scores], started)
    print(f"wrote baseline scores for {len(ds)} samples to {args.out_scores}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfuad", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a dataset")
    g.add_argument("--config", help="key = value config file (defaults: Table I setup)")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the CNN detector")
    t.add_argument("--data", required=True)
    t.add_argument("--val")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    t.add_argument("--input-transform", choices=("log", "none"), default="log")
    t.add_argument("--keep-best", action="store_true",
                   help="keep the weights of the epoch with the lowest validation loss")
    t.add_argument("--out-model", required=True)
    t.add_argument("--loss-csv")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="recall / false alarm at a threshold")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    grp = e.add_mutually_exclusive_group(required=True)
    grp.add_argument("--target-fa", type=float)
    grp.add_argument("--threshold", type=float)
    e.add_argument("--calib", help="calibration split for --target-fa (default: --data)")
    e.add_argument("--out-csv")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("roc", help="full ROC curve and AUC")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--baseline", action="store_true")
    r.add_argument("--data", required=True)
    r.add_argument("--sweeps", type=int, default=15)
    r.add_argument("--out-csv", required=True)
    r.set_defaults(func=cmd_roc)

    b = sub.add_parser("baseline", help="covariance-based detector scores")
    b.add_argument("--data", required=True)
    b.add_argument("--sweeps", type=int, default=15)
    b.add_argument("--out-scores", required=True)
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = contextlib.nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(args.threads)
    try:
        with limiter:
            return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, store.FormatError, store.CheckpointError, evalkit.CalibrationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
