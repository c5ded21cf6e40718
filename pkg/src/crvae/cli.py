"""Command-line entry point: ``crvae simulate | train | generate | eval``.

Every command writes a ``manifest.json`` next to its outputs holding the
argv, the resolved configuration, the seed and SHA-256 hashes of every file
written, so a run can be replayed and checked byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .datagen import (Dataset, gen_henon, gen_lorenz96, gen_var, load_adjacency, load_csv,
                      normalize_minmax, save_adjacency, save_csv)
from .evaluate import DEFAULT_BANDWIDTHS, EvalReport, TstrConfig, auroc, match_counts, mmd, tstr
from .numcore import Rng
from .pipeline import ConfigError, TrainConfig, generate_batch, load_checkpoint, save_checkpoint, train
from .recnet import causal_matrix
from .transfer_entropy import SIGMA_GRID, best_te_auroc

log = logging.getLogger("crvae")


class CommandError(Exception):
    """A runtime failure reported on stderr with exit status 1."""


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, argv, config, seed, inputs, outputs):
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "config": config,
        "seed": seed,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {os.path.relpath(p, out_dir): _sha256(p) for p in outputs},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_series(path, header):
    try:
        return load_csv(path, has_header=header)
    except FileNotFoundError:
        raise CommandError(f"no such file: {path}") from None


# -- simulate -----------------------------------------------------------------


def cmd_simulate(args, argv):
    rng = Rng(args.seed)
    if args.system == "var":
        ds = gen_var(m=args.m, lag=args.lag, T=args.T, density=args.density, rng=rng)
        params = {"m": args.m, "lag": args.lag, "density": args.density}
    elif args.system == "henon":
        ds = gen_henon(k=args.k, T=args.T, e=args.e, rng=rng)
        params = {"k": args.k, "e": args.e}
    else:
        ds = gen_lorenz96(p=args.p, T=args.T, F=args.F, dt=args.dt, rng=rng)
        params = {"p": args.p, "F": args.F, "dt": args.dt}
    if args.normalize:
        ds = normalize_minmax(ds)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "data.csv")
    truth_path = os.path.join(args.out, "truth.csv")
    save_csv(data_path, ds.observations)
    save_adjacency(truth_path, ds.truth)
    config = {"system": args.system, "T": args.T, "normalize": args.normalize,
              "known_lag": ds.known_lag, **params}
    _write_manifest(args.out, "simulate", argv, config, args.seed, [], [data_path, truth_path])
    print(data_path)
    print(truth_path)


# -- train ---------------------------------------------------------------------


def resolve_config(path, overrides: dict) -> TrainConfig:
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise CommandError(f"no such config file: {path}") from None
        except json.JSONDecodeError as exc:
            raise CommandError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise CommandError(f"{path}: config must be a JSON object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(raw)


def cmd_train(args, argv):
    overrides = {"seed": args.seed, "encoder_mode": args.encoder_mode, "cell": args.cell}
    if args.no_compensation:
        overrides["compensation"] = False
    cfg = resolve_config(args.config, overrides)
    ds = _load_series(args.data, args.header)
    obs = ds.observations
    if obs.shape[0] < 2 * cfg.tau + 2:
        raise CommandError(f"{args.data}: {obs.shape[0]} rows, need at least {2 * cfg.tau + 2}")
    log.info("training on %s (%d×%d) with %s", args.data, obs.shape[0], obs.shape[1], cfg)
    result = train(obs, cfg)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.crvae")
    save_checkpoint(ckpt, result.model, cfg, result.history, result.phase)
    adj = os.path.join(args.out, "causal_matrix.csv")
    save_csv(adj, causal_matrix(result.model))
    hist = os.path.join(args.out, "loss_history.csv")
    keys = ["phase", "epoch", "recon", "kl", "convex", "penalty", "total", "comp", "sparsity"]
    with open(hist, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in result.history:
            w.writerow([row[k] if isinstance(row[k], str) else "%.17g" % row[k] for k in keys])
    outputs = [ckpt, adj, hist]
    inputs = [args.data] + ([args.config] if args.config else [])
    if args.truth:
        truth = load_adjacency(args.truth)
        report = EvalReport("auroc", auroc(causal_matrix(result.model), truth), {"truth": args.truth})
        outputs += _write_reports(args.out, [report])
        inputs.append(args.truth)
        print(report.line())
    _write_manifest(args.out, "train", argv, cfg.to_dict(), cfg.seed, inputs, outputs)
    print(ckpt)


# -- generate -------------------------------------------------------------------


def cmd_generate(args, argv):
    try:
        run = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise CommandError(f"no such checkpoint: {args.checkpoint}") from None
    comp = run.config.compensation if run.config else True
    init = run.config.generation_init if run.config else "projected"
    if args.no_compensation:
        comp = False
    series = generate_batch(run.model, args.length, args.count, Rng(args.seed).child("generate"),
                            compensation=comp, init=init)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for i, s in enumerate(series):
        path = os.path.join(args.out, f"synthetic_{i:03d}.csv")
        save_csv(path, s)
        outputs.append(path)
    config = {"length": args.length, "count": args.count, "compensation": comp, "init": init}
    _write_manifest(args.out, "generate", argv, config, args.seed, [args.checkpoint], outputs)
    for p in outputs:
        print(p)


# -- eval ------------------------------------------------------------------------------


def _write_reports(out_dir, reports):
    os.makedirs(out_dir, exist_ok=True)
    txt = os.path.join(out_dir, "report.txt")
    with open(txt, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.line() + "\n")
    summary = os.path.join(out_dir, "summary.json")
    with open(summary, "w", encoding="utf-8") as fh:
        rows = []
        for r in reports:
            d = r.to_dict()
            d.pop("timestamp")
            rows.append(d)
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [txt, summary]


def _synthetic_stack(paths, header):
    arrays = [_load_series(p, header).observations for p in paths]
    lengths = {a.shape for a in arrays}
    if len(lengths) != 1:
        raise CommandError("synthetic files must all have the same shape")
    return np.stack(arrays)


def window_set(arrays, length, count, rng):
    """Windows of ``length`` rows: the files themselves when they all have exactly
    that length, otherwise ``count`` windows at random files and offsets."""
    if all(len(a) == length for a in arrays):
        return np.stack(arrays)
    which = rng.integers(len(arrays), count)
    out = []
    for i in which:
        start = int(rng.integers(len(arrays[i]) - length + 1, 1)[0])
        out.append(arrays[i][start:start + length])
    return np.stack(out)


def cmd_eval(args, argv):
    inputs, config = [], {}
    if args.metric == "causal":
        scores = _load_series(args.scores, False).observations
        if not args.truth:
            raise CommandError("eval causal needs --truth (ground-truth adjacency CSV)")
        truth = load_adjacency(args.truth)
        value = auroc(scores, truth, include_diagonal=not args.exclude_diagonal)
        config = {"include_diagonal": not args.exclude_diagonal}
        inputs = [args.scores, args.truth]
        reports = [EvalReport("auroc", value, config)]
    elif args.metric == "mmd":
        real = _load_series(args.real, args.header).observations
        synth = [_load_series(p, args.header).observations for p in args.synth]
        L = args.window
        if any(len(a) < L for a in [real] + synth):
            raise CommandError(f"every series must have at least {L} rows (the window length)")
        count = args.count or (len(synth) if all(len(a) == L for a in synth) else 100)
        # identical start-index streams, so identical inputs give identical windows
        real_w = window_set([real], L, count, Rng(args.seed).child("windows"))
        synth_w = window_set(synth, L, count, Rng(args.seed).child("windows"))
        real_w, synth_w = match_counts(real_w, synth_w, Rng(args.seed).child("match"))
        bws = tuple(args.bandwidths) if args.bandwidths else DEFAULT_BANDWIDTHS
        value = mmd(real_w, synth_w, bws)
        config = {"bandwidths": list(bws), "window": L, "n": len(real_w), "seed": args.seed}
        inputs = [args.real] + list(args.synth)
        reports = [EvalReport("mmd", value, config)]
    elif args.metric == "tstr":
        real = _load_series(args.real, args.header).observations
        synth = _synthetic_stack(args.synth, args.header)
        tc = TstrConfig(max_epochs=args.max_epochs)
        value = tstr(synth, real, seed=args.seed, cfg=tc)
        config = {"seed": args.seed, **tc.__dict__}
        inputs = [args.real] + list(args.synth)
        reports = [EvalReport("tstr_rmse", value, config)]
        if args.trtr:
            reports.append(EvalReport("trtr_rmse", tstr(real, real, seed=args.seed, cfg=tc), config))
    else:
        truth_path = args.truth
        ds = _load_series(args.data, args.header)
        if not truth_path:
            raise CommandError("eval te needs --truth (ground-truth adjacency CSV)")
        ds = Dataset(ds.observations, load_adjacency(truth_path), args.lag, ds.name)
        sigmas = tuple(args.sigma) if args.sigma else SIGMA_GRID
        value, sigma, scores = best_te_auroc(ds, sigmas=sigmas, alpha=args.alpha, lag=args.lag,
                                             include_diagonal=not args.exclude_diagonal)
        config = {"sigmas": list(sigmas), "best_sigma": sigma, "alpha": args.alpha,
                  "lag": args.lag, "include_diagonal": not args.exclude_diagonal}
        inputs = [args.data, truth_path]
        reports = [EvalReport("te_auroc", value, config)]
        os.makedirs(args.out, exist_ok=True)
        save_csv(os.path.join(args.out, "te_scores.csv"), scores)
    outputs = _write_reports(args.out, reports)
    if args.metric == "te":
        outputs.append(os.path.join(args.out, "te_scores.csv"))
    _write_manifest(args.out, f"eval {args.metric}", argv, config, getattr(args, "seed", None),
                    inputs, outputs)
    for r in reports:
        print(r.line())


# -- parser --------------------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crvae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a benchmark system")
    p.add_argument("system", choices=["var", "henon", "lorenz96"])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=_positive_int, default=2048)
    p.add_argument("--m", type=int, default=10, help="VAR dimension")
    p.add_argument("--lag", type=int, default=3, help="VAR order")
    p.add_argument("--density", type=float, default=0.2, help="VAR off-diagonal density")
    p.add_argument("--k", type=int, default=6, help="number of Hénon maps")
    p.add_argument("--e", type=float, default=0.3, help="Hénon coupling")
    p.add_argument("--p", type=int, default=10, help="Lorenz-96 dimension")
    p.add_argument("--F", type=float, default=10.0, help="Lorenz-96 forcing")
    p.add_argument("--dt", type=float, default=0.05, help="Lorenz-96 RK4 step")
    p.add_argument("--normalize", action="store_true", help="min-max scale columns to [0, 1]")

    p = sub.add_parser("train", help="two-stage training")
    p.add_argument("--data", required=True)
    p.add_argument("--header", action="store_true", help="data CSV has a header row")
    p.add_argument("--truth", help="adjacency CSV; reports AUROC of the learned matrix")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-compensation", action="store_true")
    p.add_argument("--encoder-mode", choices=["unidirectional", "overlap"])
    p.add_argument("--cell", choices=["gru", "vanilla"])

    p = sub.add_parser("generate", help="sample synthetic series from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--length", type=_positive_int, default=20)
    p.add_argument("--count", type=_positive_int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-compensation", action="store_true")

    p = sub.add_parser("eval", help="evaluate causal matrices or synthetic data")
    ev = p.add_subparsers(dest="metric", required=True)
    e = ev.add_parser("causal")
    e.add_argument("--scores", required=True, help="M×M score CSV")
    e.add_argument("--truth")
    e.add_argument("--exclude-diagonal", action="store_true")
    e.add_argument("--out", required=True)
    for name in ("mmd", "tstr"):
        e = ev.add_parser(name)
        e.add_argument("--real", required=True, help="real T×M series CSV")
        e.add_argument("--synth", required=True, nargs="+", help="synthetic L×M CSV files")
        e.add_argument("--header", action="store_true")
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--out", required=True)
        if name == "mmd":
            e.add_argument("--window", type=_positive_int, default=20)
            e.add_argument("--count", type=_positive_int)
            e.add_argument("--bandwidths", type=float, nargs="+")
        else:
            e.add_argument("--max-epochs", type=_positive_int, default=200)
            e.add_argument("--trtr", action="store_true", help="also report train-on-real")
    e = ev.add_parser("te")
    e.add_argument("--data", required=True)
    e.add_argument("--truth")
    e.add_argument("--header", action="store_true")
    e.add_argument("--lag", type=_positive_int, default=2)
    e.add_argument("--alpha", type=float, default=1.01)
    e.add_argument("--sigma", type=float, nargs="+")
    e.add_argument("--exclude-diagonal", action="store_true")
    e.add_argument("--out", required=True)
    return parser


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "generate": cmd_generate,
            "eval": cmd_eval}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args, argv)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"crvae: config error: {problem}", file=sys.stderr)
        return 2
    except (CommandError, ValueError, OSError) as exc:
        print(f"crvae: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
