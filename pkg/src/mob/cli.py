"""Experiment driver.

Subcommands:
  run           one (method, seed) experiment -> summary JSON + step log
  sweep         methods x seeds -> summaries + aggregate report + figures
  dsic-check    simulated truthfulness check of the auction
  inspect-data  print IDX headers, validate checksums when a manifest exists
  report        rebuild the report from a directory of summary files

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import socket
import sys
import time
from pathlib import Path

import numpy as np

from . import auction, data, reporting
from .baselines import BASELINE_KINDS, MOB, run_baseline
from .engine import MobConfig
from .metrics import RunSummary, aggregate
from .runners import LABELFREE, ORACLE, run_mob

log = logging.getLogger("mob")

SCHEMA_VERSION = 1
METHODS = (MOB,) + BASELINE_KINDS

_ENGINE_FIELDS = {f.name for f in dataclasses.fields(MobConfig)}
_DATA_FIELDS = {"data_dir", "per_task_train", "per_task_eval", "full_data"}
_TOP_FIELDS = {"schema_version", "engine", "data", "eval_routing"}


class UsageError(ValueError):
    pass


def load_run_config(path) -> dict:
    """Parse and validate a RunConfig JSON file; unknown fields rejected."""
    raw = json.loads(Path(path).read_text())
    unknown = set(raw) - _TOP_FIELDS
    if unknown:
        raise UsageError(f"unknown config fields: {sorted(unknown)}")
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise UsageError(f"unsupported schema_version "
                         f"{raw.get('schema_version')}")
    engine = raw.get("engine", {})
    bad = set(engine) - _ENGINE_FIELDS
    if bad:
        raise UsageError(f"unknown engine config fields: {sorted(bad)}")
    datacfg = raw.get("data", {})
    bad = set(datacfg) - _DATA_FIELDS
    if bad:
        raise UsageError(f"unknown data config fields: {sorted(bad)}")
    return {"engine": engine, "data": datacfg,
            "eval_routing": raw.get("eval_routing", LABELFREE)}


def resolve_config(args) -> dict:
    cfg = load_run_config(args.config) if args.config else \
        {"engine": {}, "data": {}, "eval_routing": LABELFREE}
    if getattr(args, "data_dir", None):
        cfg["data"]["data_dir"] = args.data_dir
    if getattr(args, "eval_routing", None):
        cfg["eval_routing"] = args.eval_routing
    if getattr(args, "full_data", False):
        cfg["data"]["full_data"] = True
    return cfg


def config_hash(cfg: dict, method: str, seed: int) -> str:
    payload = {"schema_version": SCHEMA_VERSION, "config": cfg,
               "method": method, "seed": seed}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def build_stream(cfg: dict, seed: int):
    d = cfg["data"]
    digits = data.load_digit_data(d.get("data_dir"))
    if d.get("full_data"):
        per_train = int(np.bincount(digits.train_labels, minlength=10)
                        .reshape(5, 2).sum(axis=1).min())
        per_eval = int(np.bincount(digits.test_labels, minlength=10)
                       .reshape(5, 2).sum(axis=1).min())
    else:
        per_train = d.get("per_task_train", 4000)
        per_eval = d.get("per_task_eval", 500)
    engine = cfg["engine"]
    batch_size = engine.get("batch_size", 32)
    return data.build_split_mnist(digits, seed, per_task_train=per_train,
                                  per_task_eval=per_eval,
                                  batch_size=batch_size)


def execute_run(cfg: dict, method: str, seed: int, out_dir: Path):
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {METHODS}")
    mob_config = MobConfig(**{**cfg["engine"], "seed": seed})
    stream = build_stream(cfg, seed)
    h = config_hash(cfg, method, seed)
    if method == MOB:
        result = run_mob(stream, mob_config, eval_routing=cfg["eval_routing"],
                         config_hash=h)
    else:
        result = run_baseline(method, stream, mob_config, config_hash=h)

    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{method}_seed{seed}"
    summary_path = out_dir / f"summary_{stem}.json"
    summary_path.write_text(result.summary.to_json() + "\n")
    if result.step_logs:
        with open(out_dir / f"steplog_{stem}.jsonl", "w") as f:
            for s in result.step_logs:
                f.write(json.dumps(s.to_dict()) + "\n")
    # mutable environment facts live apart so summaries stay deterministic
    meta = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "hostname": socket.gethostname(), "config_hash": h}
    (out_dir / f"runmeta_{stem}.json").write_text(
        json.dumps(meta, indent=2) + "\n")
    return result


def _load_summaries(directory: Path) -> list:
    files = sorted(Path(directory).glob("summary_*.json"))
    return [RunSummary.from_json(p.read_text()) for p in files]


def _write_report(out_dir: Path):
    summaries = _load_summaries(out_dir)
    if not summaries:
        raise UsageError(f"no summary_*.json files in {out_dir}")
    agg = aggregate(summaries)
    (out_dir / "aggregate.json").write_text(
        json.dumps(agg, indent=2, sort_keys=True) + "\n")
    reporting.write_table(agg, out_dir)
    reporting.render_figures(agg, summaries, out_dir)
    return agg


def cmd_run(args):
    cfg = resolve_config(args)
    execute_run(cfg, args.method, args.seed, Path(args.out))
    print(f"summary written to {args.out}")
    return 0


def _parse_seeds(text: str) -> list:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",")]


def cmd_sweep(args):
    cfg = resolve_config(args)
    methods = args.methods.split(",") if args.methods else list(METHODS)
    seeds = _parse_seeds(args.seeds)
    out_dir = Path(args.out)
    failures = []
    for method in methods:
        for seed in seeds:
            try:
                execute_run(cfg, method, seed, out_dir)
                log.info("done: %s seed %d", method, seed)
            except Exception as exc:  # record and keep sweeping
                log.error("failed: %s seed %d: %s", method, seed, exc)
                failures.append({"method": method, "seed": seed,
                                 "error": str(exc)})
    if failures:
        (out_dir / "failures.json").write_text(
            json.dumps(failures, indent=2) + "\n")
    agg = _write_report(out_dir)
    order = reporting._ordered(agg)
    print(f"report written to {out_dir}/report.md "
          f"(best method: {order[0]})")
    return 3 if failures else 0


def cmd_dsic_check(args):
    rng = np.random.default_rng(args.seed)
    if args.trials == 0:
        print("warning: 0 trials requested; trivially clean")
        return 0
    report = auction.check_dsic(args.n_experts, args.trials, rng)
    print(f"random trials: N={args.n_experts} trials={report.trials} "
          f"violations={report.violations}")
    total = report.violations
    if args.grid:
        grid = auction.check_dsic_grid()
        print(f"exhaustive N=2 grid: trials={grid.trials} "
              f"violations={grid.violations}")
        total += grid.violations
    return 3 if total > 0 else 0


def cmd_inspect_data(args):
    path = Path(args.path)
    arr = data.read_idx_file(path)
    magic = data.IMAGES_MAGIC if arr.ndim == 3 else data.LABELS_MAGIC
    print(f"magic=0x{magic:08x} dims={list(arr.shape)}")
    manifest = path.parent / data.MANIFEST_NAME
    if manifest.exists():
        results = data.verify_manifest(path.parent)
        for name, ok in sorted(results.items()):
            print(f"checksum {'ok' if ok else 'MISMATCH'}: {name}")
        if not all(results.values()):
            return 2
    return 0


def cmd_report(args):
    _write_report(Path(args.out))
    print(f"report written to {args.out}/report.md")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="mob",
                                description="auction-routed continual "
                                            "learning experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--data-dir", help="directory with MNIST IDX files "
                                           "(env MOB_DATA_DIR as fallback)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--eval-routing", choices=[LABELFREE, ORACLE])
        sp.add_argument("--full-data", action="store_true",
                        help="use every available example per task")

    sp = sub.add_parser("run", help="one experiment")
    common(sp)
    sp.add_argument("--method", default=MOB, choices=METHODS)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("sweep", help="methods x seeds grid")
    common(sp)
    sp.add_argument("--methods", help="comma list (default: all)")
    sp.add_argument("--seeds", default="0..4", help="A..B or comma list")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("dsic-check", help="auction truthfulness check")
    sp.add_argument("--n-experts", type=int, default=4)
    sp.add_argument("--trials", type=int, default=10000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grid", action="store_true",
                    help="also run the exhaustive 2-bidder integer grid")
    sp.set_defaults(fn=cmd_dsic_check)

    sp = sub.add_parser("inspect-data", help="print IDX file headers")
    sp.add_argument("path")
    sp.set_defaults(fn=cmd_inspect_data)

    sp = sub.add_parser("report", help="rebuild report from summaries")
    sp.add_argument("--out", default="out", help="directory of summaries")
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (data.IdxFormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
