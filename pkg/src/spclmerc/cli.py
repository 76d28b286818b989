"""Command-line entry point: ``spclmerc {generate,train,ablate,sweep}``."""
from __future__ import annotations

import argparse
import csv
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import parse_config, parse_config_text
from .exceptions import ConfigurationError, SPCLError
from .trainer import run

log = logging.getLogger("spclmerc")

OUTPUT_ROOT_ENV = "SPCLMERC_OUTPUT_ROOT"
RUN_FILES = ("config.ini", "run.json", "epochs.csv", "model.npz")

ABLATION_VARIANTS = (
    ("spcl", {"spcl.enabled": "true", "spcl.difficulty_mode": "full"}),
    ("wo_utt_score", {"spcl.enabled": "true", "spcl.difficulty_mode": "conversation"}),
    ("wo_conv_score", {"spcl.enabled": "true", "spcl.difficulty_mode": "utterance"}),
    ("baseline", {"spcl.enabled": "false"}),
)
GRID_KEYS = {"eps": "spcl.epsilon", "epsilon": "spcl.epsilon", "alpha": "spcl.alpha"}


def load_corpus(cfg):
    if cfg.data_path is not None:
        return ds.load_jsonl(cfg.data_path)
    return ds.generate(cfg.synth)


def train_one(cfg, out_dir):
    """Run one training job into ``out_dir`` and check every expected artifact landed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.render(), encoding="utf-8")
    runlog = run(cfg.train, load_corpus(cfg), out, config_text=cfg.source_text)
    missing = [f for f in RUN_FILES if not (out / f).is_file()]
    if missing:
        raise SPCLError(f"run directory {out} is missing {missing}")
    return runlog


def _job(args):
    text, out_dir = args
    runlog = train_one(parse_config_text(text), out_dir)
    return {
        "test": runlog.test,
        "lambda_trace": runlog.lambda_trace,
        "expanding_rate": [r.diagnostics.expanding_rate for r in runlog.records],
    }


def _run_jobs(jobs, workers):
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_job, jobs))
    return [_job(j) for j in jobs]


def _variant(cfg, overrides):
    return parse_config_text(cfg.render(), overrides)


def cmd_generate(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.render(), encoding="utf-8")
    corpus = ds.generate(cfg.synth)
    path = ds.save_jsonl(corpus, out / "corpus.jsonl")
    print(f"wrote {corpus.utterance_count} utterances in {len(corpus)} conversations to {path}")


def cmd_train(args, cfg):
    runlog = train_one(cfg, args.out)
    if runlog.test:
        print(f"test w-F1 {runlog.test['weighted_f1']:.4f}  accuracy {runlog.test['accuracy']:.4f}")
    print(f"artifacts in {args.out}")


def ablation_rows(results, seeds):
    """Per-seed rows with deltas against the no-curriculum baseline, then mean rows."""
    rows = []
    for seed in seeds:
        base = results[(seed, "baseline")]
        for name, _ in ABLATION_VARIANTS:
            t = results[(seed, name)]
            rows.append([seed, name, t["weighted_f1"], t["accuracy"],
                         t["weighted_f1"] - base["weighted_f1"], t["accuracy"] - base["accuracy"]])
    for name, _ in ABLATION_VARIANTS:
        f1 = float(np.mean([results[(s, name)]["weighted_f1"] for s in seeds]))
        acc = float(np.mean([results[(s, name)]["accuracy"] for s in seeds]))
        bf1 = float(np.mean([results[(s, "baseline")]["weighted_f1"] for s in seeds]))
        bacc = float(np.mean([results[(s, "baseline")]["accuracy"] for s in seeds]))
        rows.append(["mean", name, f1, acc, f1 - bf1, acc - bacc])
    return rows


def cmd_ablate(args, cfg):
    out = Path(args.out)
    seeds = args.seeds or [cfg.train.seed]
    jobs, keys = [], []
    for seed in seeds:
        seeded = cfg.with_seed(seed)
        for name, overrides in ABLATION_VARIANTS:
            jobs.append((_variant(seeded, overrides).render(), str(out / f"seed{seed}" / name)))
            keys.append((seed, name))
    results = {k: r["test"] for k, r in zip(keys, _run_jobs(jobs, args.jobs))}
    if any(t is None for t in results.values()):
        raise ConfigurationError("ablation needs a test split")
    out.mkdir(parents=True, exist_ok=True)
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "variant", "test_wf1", "test_acc", "delta_wf1_vs_baseline", "delta_acc_vs_baseline"])
        w.writerows(ablation_rows(results, seeds))
    print(f"ablation table: {out / 'ablation.csv'}")


def parse_grid(text):
    """``"eps=0.4,0.8;alpha=1.1,1.2"`` -> ``{"spcl.epsilon": [...], "spcl.alpha": [...]}``."""
    grid = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigurationError(f"grid entry {part!r} is not name=v1,v2,...")
        name, values = part.split("=", 1)
        key = GRID_KEYS.get(name.strip(), name.strip())
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigurationError(f"grid entry {name!r} has no values")
        grid[key] = vals
    if not grid:
        raise ConfigurationError("grid is empty")
    return grid


def grid_points(grid):
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cmd_sweep(args, cfg):
    out = Path(args.out)
    grid = parse_grid(args.grid)
    seeds = args.seeds or [cfg.train.seed]
    jobs, keys = [], []
    for point in grid_points(grid):
        tag = "_".join(f"{k.split('.')[-1]}{v}" for k, v in point.items())
        for seed in seeds:
            variant = _variant(cfg.with_seed(seed), point)
            jobs.append((variant.render(), str(out / tag / f"seed{seed}")))
            keys.append((tag, seed, point))
    results = _run_jobs(jobs, args.jobs)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seed", *grid, "test_wf1", "test_acc", "first_full_epoch"])
        for (tag, seed, point), res in zip(keys, results):
            full = next((e for e, r in enumerate(res["expanding_rate"]) if r >= 1.0), "")
            t = res["test"] or {}
            w.writerow([tag, seed, *point.values(), t.get("weighted_f1", ""), t.get("accuracy", ""), full])
    with (out / "traces.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seed", "epoch", "lambda", "expanding_rate"])
        for (tag, seed, _), res in zip(keys, results):
            for e, rate in enumerate(res["expanding_rate"]):
                w.writerow([tag, seed, e, repr(res["lambda_trace"][e]), repr(rate)])
    print(f"sweep table: {out / 'sweep.csv'}; traces: {out / 'traces.csv'}")


def _seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="spclmerc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="INI experiment config")
        sp.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<command> or ./runs/<command>)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. train.epochs=3")
        return sp

    common(sub.add_parser("generate", help="write a synthetic corpus as JSONL"))
    common(sub.add_parser("train", help="train one model"))
    ab = common(sub.add_parser("ablate", help="full SPCL vs single-score variants vs baseline"))
    ab.add_argument("--seeds", type=_seeds)
    ab.add_argument("--jobs", type=int, default=1)
    sw = common(sub.add_parser("sweep", help="grid over epsilon and alpha"))
    sw.add_argument("--grid", required=True, help='e.g. "eps=0.4,0.8;alpha=1.1,1.2"')
    sw.add_argument("--seeds", type=_seeds)
    sw.add_argument("--jobs", type=int, default=1)
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "ablate": cmd_ablate, "sweep": cmd_sweep}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.out is None:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        args.out = str(root / args.command)
    try:
        cfg = parse_config(args.config, args.overrides)
        COMMANDS[args.command](args, cfg)
    except SPCLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6
    return 0


if __name__ == "__main__":
    sys.exit(main())
