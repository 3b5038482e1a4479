"""Command-line entry point.

    ealstm synth       write a synthetic data root and a matching config
    ealstm train       train one model per seed, write checkpoints + manifest
    ealstm evaluate    per-seed and ensemble metric reports
    ealstm analyze     sensitivity | robustness | embed | cluster | compare
    ealstm gridsearch  k-fold basin cross-validation over a JSON search space

Exit codes: 0 ok, 2 usage/configuration, 3 data, 4 numeric, 5 I/O.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .analysis import (DEFAULT_SIGMAS, cluster_sweep, compare_models, extract_embedding, kmeans,
                       morris_sensitivity, noise_robustness, variance_reduction)
from .cells import load_checkpoint, save_checkpoint
from .config import TrainingConfig, load_config
from .data import (SYNTHETIC_SPLIT, StandardizationStats, load_data_root, standardize, synth_basins,
                   write_data_root)
from .exceptions import ConfigurationError, DataError, EALSTMError, MetricError
from .metrics import SIGNATURE_NAMES, aggregate, read_report_csv, report_csv, report_json, signatures
from .storage import atomic_open, write_container
from .training import evaluate, grid_search, train

log = logging.getLogger("ealstm")

EXIT_IO = 5
MANIFEST_VERSION = 1
METRIC_COLUMNS = ("basin_id", "n_days", "nse", "alpha_nse", "beta_nse", "fhv", "fms", "flv")


def _write_text(path, text):
    with atomic_open(path, "w") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _table(rows, columns):
    return report_csv(rows, columns)


# ------------------------------------------------------------- config/manifest

def _config_from_args(args):
    if getattr(args, "manifest", None):
        config = TrainingConfig.from_dict(_read_manifest(args.manifest)["config"])
    elif args.config:
        config = load_config(args.config)
    else:
        config = TrainingConfig()
    overrides = {}
    if args.data_root:
        overrides["data_root"] = args.data_root
    if args.out:
        overrides["out_dir"] = args.out
    if args.seeds:
        overrides["seeds"] = args.seeds
    if overrides:
        config = config.replace(**overrides)
    return config


def _read_manifest(path):
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise FileNotFoundError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    manifest["_dir"] = os.path.dirname(os.path.abspath(path))
    manifest["_path"] = os.path.abspath(path)
    return manifest


def _load_run(manifest):
    config = TrainingConfig.from_dict(manifest["config"])
    base = manifest["_dir"]
    with open(os.path.join(base, manifest["stats"])) as fh:
        stats = StandardizationStats.from_dict(json.load(fh))
    raw = load_data_root(config.data_root, schema=config.attributes, layout=config.layout)
    datasets = [stats.apply(ds) for ds in raw]
    models = {}
    for seed, rel in manifest["checkpoints"].items():
        path = os.path.join(base, rel)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing checkpoint {path}")
        models[int(seed)] = load_checkpoint(path)[0]
    return config, stats, raw, datasets, models


def _period(config, name):
    return config.split.interval(name)


# ------------------------------------------------------------------ commands

def cmd_synth(args):
    out = args.out or args.data_root or "synthetic"
    datasets = synth_basins(args.n, seed=args.seed)
    write_data_root(out, datasets)
    config = TrainingConfig(hidden_size=32, sequence_length=30, dropout=0.0, epochs=20,
                            learning_rate=1e-2, train_period=[str(d) for d in SYNTHETIC_SPLIT.train],
                            validation_period=[str(d) for d in SYNTHETIC_SPLIT.validation],
                            data_root=os.path.abspath(out), attributes="synthetic")
    _write_json(os.path.join(out, "config.json"), config.to_dict())
    truth = [{"basin_id": ds.basin_id, "regime": ds.meta["regime"], "k": ds.meta["k"],
              "runoff_coef": ds.meta["runoff_coef"]} for ds in datasets]
    _write_text(os.path.join(out, "truth.csv"), _table(truth, ("basin_id", "regime", "k", "runoff_coef")))
    print(f"wrote {len(datasets)} synthetic basins to {out}")
    return 0


def cmd_train(args):
    config = _config_from_args(args)
    if not config.data_root:
        raise ConfigurationError("config field 'data_root': required (set it or pass --data-root)")
    out = config.out_dir or "run"
    started = time.time()
    raw = load_data_root(config.data_root, schema=config.attributes, layout=config.layout)
    datasets, stats = standardize(raw, config.split)
    _write_json(os.path.join(out, "stats.json"), stats.to_dict())
    checkpoints, logs = {}, {}
    for seed in config.seeds:
        ckpt_rel = os.path.join("checkpoints", f"seed_{seed}.ckpt")
        meta = {"config_variant": config.variant}

        def on_epoch(epoch, params, record, seed=seed, meta=meta):
            if config.save_every and epoch % config.save_every == 0 and epoch < config.epochs:
                save_checkpoint(os.path.join(out, "checkpoints", f"seed_{seed}_epoch{epoch}.ckpt"), params, meta)

        params, tlog = train(datasets, config, seed=seed, on_epoch=on_epoch)
        save_checkpoint(os.path.join(out, ckpt_rel), params, meta)
        log_rel = f"train_log_seed_{seed}.jsonl"
        lines = [json.dumps(r, sort_keys=True) for r in tlog.records]
        lines += [json.dumps({"warning": w}) for w in tlog.warnings]
        _write_text(os.path.join(out, log_rel), "\n".join(lines) + ("\n" if lines else ""))
        checkpoints[str(seed)] = ckpt_rel
        logs[str(seed)] = log_rel
        print(f"seed {seed}: {len(tlog.records)} epochs, checkpoint {ckpt_rel}")
    manifest = {"format_version": MANIFEST_VERSION, "code_version": __version__, "kernel_backend": kernels.BACKEND,
                "config": config.to_dict(), "stats": "stats.json", "checkpoints": checkpoints, "logs": logs,
                "reports": {}, "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
                "wall_clock_seconds": round(time.time() - started, 3)}
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"manifest {os.path.join(out, 'manifest.json')}")
    return 0


def cmd_evaluate(args):
    manifest = _read_manifest(args.manifest)
    config, stats, _, datasets, models = _load_run(manifest)
    out = args.out or manifest["_dir"]
    interval = _period(config, args.period)
    reports, summary = {}, {}
    members = sorted(models)
    runs = [(f"seed_{s}", [models[s]]) for s in members] + [("ensemble", [models[s] for s in members])]
    for name, group in runs:
        rows = evaluate(group, datasets, interval, config.sequence_length, stats)
        rel = f"metrics_{args.period}_{name}.csv"
        _write_text(os.path.join(out, rel), report_csv(rows, METRIC_COLUMNS))
        reports[name] = rel
        summary[name] = aggregate(rows)
    _write_text(os.path.join(out, f"summary_{args.period}.json"), report_json([], summary) + "\n")
    if out == manifest["_dir"]:
        updated = {k: v for k, v in manifest.items() if not k.startswith("_")}
        updated["reports"] = dict(updated.get("reports", {}), **{f"{args.period}/{k}": v for k, v in reports.items()})
        _write_json(manifest["_path"], updated)
    ens = summary["ensemble"]
    print(f"ensemble {args.period}: median NSE {ens['nse_median']:.4f}, mean {ens['nse_mean']:.4f}, "
          f"NSE<=0 in {ens['n_nse_le_0']} basins")
    return 0


def _pick_seed(args, models):
    seed = args.seeds[0] if args.seeds else min(models)
    if seed not in models:
        raise ConfigurationError(f"seed {seed} not in manifest (have {sorted(models)})")
    return seed


def cmd_analyze(args):
    if args.analysis == "compare":
        return _analyze_compare(args)
    if not args.manifest:
        raise ConfigurationError("--manifest is required for this analysis")
    manifest = _read_manifest(args.manifest)
    config, stats, raw, datasets, models = _load_run(manifest)
    out = args.out or manifest["_dir"]
    seed = _pick_seed(args, models)
    params = models[seed]
    interval = _period(config, args.period)
    if args.analysis == "sensitivity":
        table = morris_sensitivity(params, datasets, interval, config.sequence_length)
        _write_text(os.path.join(out, f"sensitivity_seed_{seed}.csv"),
                    report_csv(table.rows(), ("attribute", "score", "rank")))
        per_basin = [dict(basin_id=b, **dict(zip(table.attribute_names, map(float, row))))
                     for b, row in zip(table.basin_ids, table.per_basin)]
        _write_text(os.path.join(out, f"sensitivity_per_basin_seed_{seed}.csv"),
                    report_csv(per_basin, ("basin_id",) + table.attribute_names))
        top = ", ".join(f"{r['attribute']} {r['score']:.2f}" for r in table.rows()[:3])
        print(f"most sensitive: {top}")
    elif args.analysis == "robustness":
        sigmas = [0.0] + list(args.sigmas or DEFAULT_SIGMAS)
        result = noise_robustness(params, datasets, interval, config.sequence_length, sigmas, args.draws,
                                  seed=args.noise_seed, stats=stats)
        rows = []
        for sigma, table in result.items():
            for j in range(table.shape[0]):
                for b, ds in enumerate(datasets):
                    rows.append({"sigma": sigma, "draw": j, "basin_id": ds.basin_id, "nse": float(table[j, b])})
        _write_text(os.path.join(out, f"robustness_seed_{seed}.csv"),
                    report_csv(rows, ("sigma", "draw", "basin_id", "nse")))
        medians = [{"sigma": s, "median_nse": float(np.median(t)), "mean_nse": float(np.mean(t))}
                   for s, t in result.items()]
        _write_text(os.path.join(out, f"robustness_summary_seed_{seed}.csv"),
                    report_csv(medians, ("sigma", "median_nse", "mean_nse")))
        print("median NSE by sigma: " + ", ".join(f"{m['sigma']:.1f}:{m['median_nse']:.3f}" for m in medians))
    elif args.analysis == "embed":
        emb = extract_embedding(params, datasets)
        path = os.path.join(out, f"embedding_seed_{seed}.ckpt")
        index = f"embedding_seed_{seed}.basins.txt"
        write_container(path, {"embedding": emb.values}, {"kind": "embedding", "seed": seed, "basin_index": index})
        _write_text(os.path.join(out, index), "\n".join(emb.basin_ids) + "\n")
        print(f"embedding {emb.values.shape[0]} basins x {emb.values.shape[1]} units -> {path}")
    elif args.analysis == "cluster":
        if args.on == "embedding":
            points = extract_embedding(params, datasets).values
        else:
            points = np.stack([ds.attributes for ds in datasets])
        ks = list(range(args.k_min, args.k_max + 1))
        rows = cluster_sweep(points, ks, restarts=args.restarts, seed=args.cluster_seed)
        try:
            sig_table = {n: [] for n in SIGNATURE_NAMES}
            for ds in raw:
                s = signatures(ds.discharge, ds.forcings[:, 0], ds.dates, strict=False)
                for n in SIGNATURE_NAMES:
                    sig_table[n].append(s[n])
        except MetricError as exc:
            log.warning("signatures unavailable (%s); skipping variance reduction", exc)
            sig_table = None
        for row in rows:
            if sig_table is None:
                continue
            labels = kmeans(points, row["k"], args.restarts, args.cluster_seed).labels
            for n in SIGNATURE_NAMES:
                try:
                    row[f"vr_{n}"] = variance_reduction({n: sig_table[n]}, labels)[n]
                except MetricError:
                    row[f"vr_{n}"] = float("nan")
        columns = ("k", "mean_silhouette", "min_silhouette", "wcss") + (
            tuple(f"vr_{n}" for n in SIGNATURE_NAMES) if sig_table is not None else ())
        _write_text(os.path.join(out, f"cluster_{args.on}_seed_{seed}.csv"), report_csv(rows, columns))
        best = max(rows, key=lambda r: r["mean_silhouette"])
        print(f"{len(rows)} cluster sizes; best mean silhouette k={best['k']} ({best['mean_silhouette']:.3f})")
    return 0


def _analyze_compare(args):
    if not (args.a and args.b):
        raise ConfigurationError("compare needs --a and --b metric reports")
    reports = []
    for path in (args.a, args.b):
        with open(path) as fh:
            rows = read_report_csv(fh.read())
        reports.append({str(r["basin_id"]): r["nse"] for r in rows})
    common = sorted(set(reports[0]) & set(reports[1]))
    if not common:
        raise DataError("the two reports share no basins")
    a = np.array([reports[0][b] for b in common])
    b = np.array([reports[1][b] for b in common])
    keep = np.isfinite(a) & np.isfinite(b)
    res = compare_models(a[keep], b[keep])
    row = {"n_basins": int(keep.sum()), "p_value": res.p_value, "cohens_d": res.effect_size,
           "w_plus": res.statistic, "method": res.method}
    text = report_csv([row], ("n_basins", "p_value", "cohens_d", "w_plus", "method"))
    if args.out:
        _write_text(os.path.join(args.out, "compare.csv"), text)
    sys.stdout.write(text)
    return 0


def cmd_gridsearch(args):
    config = _config_from_args(args)
    if not config.data_root:
        raise ConfigurationError("config field 'data_root': required (set it or pass --data-root)")
    try:
        with open(args.space) as fh:
            space = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{args.space}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(space, dict):
        raise ConfigurationError(f"{args.space}:1: search space must be a JSON object of lists")
    raw = load_data_root(config.data_root, schema=config.attributes, layout=config.layout)
    best, table = grid_search(raw, config, space, k=args.folds or config.folds, seed=config.seeds[0])
    out = config.out_dir or "gridsearch"
    keys = sorted(space)
    _write_text(os.path.join(out, "gridsearch.csv"), report_csv(table, ("candidate", *keys, "median_nse")))
    _write_json(os.path.join(out, "best_config.json"), config.replace(**best).to_dict())
    print(f"best {best} (median NSE {max(r['median_nse'] for r in table):.4f})")
    return 0


# -------------------------------------------------------------------- parser

def _seed_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--data-root", help="data directory (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--seeds", "--seed", type=_seed_list, help="comma-separated seeds")
    common.add_argument("--period", choices=("train", "validation"), default="validation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ealstm", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"ealstm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic data root")
    p.add_argument("--n", type=int, default=8)
    p.set_defaults(func=cmd_synth, seeds=None)

    p = sub.add_parser("train", parents=[common], help="train one model per seed")
    p.add_argument("--manifest", help="re-run the configuration recorded in a manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="metric reports for a trained run")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", parents=[common], help="post-training analyses")
    p.add_argument("analysis", choices=("sensitivity", "robustness", "embed", "cluster", "compare"))
    p.add_argument("--manifest")
    p.add_argument("--sigmas", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--draws", type=int, default=50)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--on", choices=("embedding", "attributes"), default="embedding")
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--cluster-seed", type=int, default=0)
    p.add_argument("--a", help="metric report of model A (compare)")
    p.add_argument("--b", help="metric report of model B (compare)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gridsearch", parents=[common], help="k-fold basin cross-validated grid search")
    p.add_argument("--space", required=True, help="JSON object mapping config fields to value lists")
    p.add_argument("--folds", type=int)
    p.set_defaults(func=cmd_gridsearch)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth" and args.seeds is None:
        args.seed = 0
    elif args.command == "synth":
        args.seed = args.seeds[0]
    try:
        return args.func(args)
    except EALSTMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
