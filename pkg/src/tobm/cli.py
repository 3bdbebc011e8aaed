"""Command-line front end.

Every run writes its CSVs, the resolved config (``config.yaml``), a
provenance log of applied defaults and a ``manifest.json`` into ``--out``.
Passing that manifest back with ``--manifest`` repeats the run exactly.

Exit codes: 0 ok, 2 config error, 3 numeric failure.
"""

import argparse
import hashlib
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__
from .agents import BASELINES, NumericFailure
from .config import ConfigError, InvariantViolation, dump_config, from_dict, parse_config
from .consensus import write_round_log
from .game import REPORT_COLUMNS, analyze
from .harness import (
    AUDIT_COLUMNS, COMPARISON_COLUMNS, METRICS_COLUMNS, THROUGHPUT_COLUMNS, BaselinePolicy, audit,
    consensus_bench, evaluate, load_policy, run_comparison, run_training, workers_from_env, write_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("train", "evaluate", "compare", "consensus-bench", "game-analyze", "audit")
BENCH_COLUMNS = ["scheme", "seeds", "rounds", "mean_latency_s", "accepted_share"]
AUDIT_TOL = 1e-9


def parse_loads(text):
    try:
        a, b, step = (int(x) for x in text.split(":"))
    except ValueError:
        raise InvariantViolation(f"--loads expects a:b:step, got {text!r}", field="loads") from None
    if a < 1 or b < a or step < 1:
        raise InvariantViolation("--loads needs 1 <= a <= b and step >= 1", field="loads")
    return list(range(a, b + 1, step))


def build_parser():
    ap = argparse.ArgumentParser(prog="tobm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"tobm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config; defaults apply when omitted")
        p.add_argument("--manifest", help="repeat the run recorded in this manifest.json")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("--devices", type=int)
        p.add_argument("--schemes", help="comma-separated: por,dpos,pow,none")
        p.add_argument("--loads", help="throughput sweep a:b:step")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("evaluate", "compare"):
            p.add_argument("--eval-episodes", type=int, default=10)
        if name in ("compare", "consensus-bench"):
            p.add_argument("--n-seeds", type=int, default=10)
        if name == "evaluate":
            p.add_argument("--policies", default=",".join(BASELINES))
            p.add_argument("--checkpoint")
        if name == "audit":
            p.add_argument("--policy", default="random", choices=BASELINES)
        if name == "game-analyze":
            p.add_argument("--instances", type=int, default=100)
    return ap


OPTION_KEYS = ("seed", "episodes", "devices", "schemes", "loads", "eval_episodes", "n_seeds",
               "policies", "checkpoint", "policy", "instances")


def resolve_config(args):
    if args.manifest:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        if manifest.get("command") != args.command:
            raise InvariantViolation(f"manifest is for {manifest.get('command')!r}", field="manifest")
        for key, value in manifest["options"].items():
            setattr(args, key, value)
        return from_dict(manifest["config"], log_defaults=False)
    cfg = parse_config(args.config) if args.config else from_dict({})
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.episodes is not None:
        over["episodes"] = args.episodes
    if args.devices is not None:
        over["n_devices"] = args.devices
    sections = {"sim": over} if over else {}
    if args.schemes and args.command in ("train", "evaluate", "audit"):
        sections["consensus"] = {"scheme": args.schemes.split(",")[0]}
    return cfg.replace(**sections) if sections else cfg


def _schemes(args, cfg):
    schemes = args.schemes.split(",") if args.schemes else ["por", "dpos", "pow"]
    bad = [s for s in schemes if s not in ("por", "dpos", "pow", "none")]
    if bad:
        raise InvariantViolation(f"unknown scheme(s) {bad}", field="schemes")
    return schemes


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(out, args, cfg, outputs):
    manifest = {
        "command": args.command,
        "options": {k: getattr(args, k, None) for k in OPTION_KEYS if hasattr(args, k)},
        "seed": cfg.sim.seed,
        "config_digest": cfg.digest(),
        "config": cfg.to_dict(),
        "versions": {"tobm": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "outputs": {name: _sha256(os.path.join(out, name)) for name in sorted(outputs)},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(args):
    out = args.out
    os.makedirs(out, exist_ok=True)
    handler = logging.FileHandler(os.path.join(out, "provenance.log"), mode="w")
    handler.setFormatter(logging.Formatter("%(name)s %(levelname)s %(message)s"))
    cfg_log = logging.getLogger("tobm.config")
    cfg_log.addHandler(handler)
    cfg_log.setLevel(logging.INFO)
    cfg_log.propagate = args.verbose
    try:
        cfg = resolve_config(args)
    finally:
        cfg_log.removeHandler(handler)
        cfg_log.propagate = True
        handler.close()
    with open(os.path.join(out, "config.yaml"), "w") as fh:
        fh.write(dump_config(cfg))
    outputs = dispatch(args, cfg, out)
    status = outputs.pop("__status__", EXIT_OK)
    write_manifest(out, args, cfg, outputs)
    return status


def dispatch(args, cfg, out):
    """Run one subcommand; returns {csv name: None} of files written."""
    p = lambda name: os.path.join(out, name)  # noqa: E731
    seed = cfg.sim.seed
    status = EXIT_OK
    if args.command == "train":
        run_training(cfg, out_dir=out)
        files = ["metrics.csv", "curves.csv", "checkpoint.npz"]
    elif args.command == "evaluate":
        policies = [BaselinePolicy(k) for k in args.policies.split(",") if k]
        if args.checkpoint:
            policies.append(load_policy(cfg, args.checkpoint))
        rows = evaluate(cfg, policies, range(args.eval_episodes))
        write_csv(p("metrics.csv"), METRICS_COLUMNS, rows)
        files = ["metrics.csv"]
    elif args.command == "compare":
        loads = parse_loads(args.loads) if args.loads else list(range(10, 201, 10))
        seeds = list(range(seed, seed + args.n_seeds))
        summary, sweep = run_comparison(cfg, _schemes(args, cfg), seeds, args.eval_episodes, loads,
                                        workers=workers_from_env())
        write_csv(p("comparison.csv"), COMPARISON_COLUMNS, summary)
        write_csv(p("throughput.csv"), THROUGHPUT_COLUMNS, sweep)
        files = ["comparison.csv", "throughput.csv"]
    elif args.command == "consensus-bench":
        seeds = list(range(seed, seed + args.n_seeds))
        schemes = [s for s in _schemes(args, cfg) if s != "none"]
        rounds = consensus_bench(cfg, schemes, seeds)
        write_round_log(p("rounds.csv"), rounds)
        summary = []
        for s in schemes:
            mine = [r for r, _, _ in rounds if r.scheme == s]
            summary.append({"scheme": s, "seeds": len(seeds), "rounds": len(mine),
                            "mean_latency_s": float(np.mean([r.latency for r in mine])),
                            "accepted_share": float(np.mean([r.accepted for r in mine]))})
        write_csv(p("bench.csv"), BENCH_COLUMNS, summary)
        files = ["rounds.csv", "bench.csv"]
    elif args.command == "game-analyze":
        rows = analyze(cfg, args.instances, seed)
        write_csv(p("game.csv"), REPORT_COLUMNS, rows)
        conv = sum(r["converged"] for r in rows)
        print(f"{len(rows)} instances, {conv} converged, "
              f"{sum(r['brd_in_ne_set'] for r in rows)} confirmed as pure NE")
        files = ["game.csv"]
    elif args.command == "audit":
        episodes = args.episodes if args.episodes is not None else 1
        rows = audit(cfg, args.policy, episodes)
        write_csv(p("audit.csv"), AUDIT_COLUMNS, rows)
        worst = max(r["abs_diff"] for r in rows)
        print(f"{len(rows)} slots audited, max |reported - recomputed| = {worst:.3e}")
        if worst > AUDIT_TOL:
            status = EXIT_NUMERIC
        files = ["audit.csv"]
    else:  # pragma: no cover - argparse rejects unknown commands
        raise ValueError(args.command)
    outputs = dict.fromkeys(files + ["config.yaml"])
    outputs["__status__"] = status
    return outputs


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s %(levelname)s %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
