"""Command-line entry point: ``magpo-lab {train,verify,compare,sweep}``.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 runtime fault.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from importlib import metadata
from pathlib import Path

import yaml

from . import evaluation, verify
from .config import ExperimentConfig, load_config
from .envs import ConfigError
from .evaluation import StatsError
from .trainer import run_training

log = logging.getLogger("magpo_lab")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3
MANIFEST_VERSION = 1


def code_version():
    """Package version plus a digest of the installed sources."""
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return {"version": version, "source_sha256": h.hexdigest()}


def run_dir(out, algorithm, env, seed):
    return Path(out) / algorithm / env / f"seed_{seed}"


def _write_manifest(path, cfg: ExperimentConfig, seed, status, checkpoints_done):
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "algorithm": cfg.algorithm,
        "env": cfg.env,
        "seed": seed,
        "status": status,
        "checkpoints_written": checkpoints_done,
        "code": code_version(),
        "config": cfg.with_overrides(seed=seed).to_dict(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _count_lines(path):
    if not path.is_file():
        return 0
    with path.open() as fh:
        return sum(1 for line in fh if line.strip())


def train_experiment(cfg: ExperimentConfig):
    """Run every seed; returns the run directories."""
    dirs = []
    for seed in cfg.seeds:
        d = run_dir(cfg.out, cfg.algorithm, cfg.env, seed)
        try:
            d.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"out: cannot create {d}: {exc}") from exc
        single = cfg.with_overrides(seed=seed)
        (d / "config.yaml").write_text(yaml.safe_dump(single.to_dict(), sort_keys=True))
        _write_manifest(d / "manifest.json", cfg, seed, "partial", 0)
        log.info("training %s on %s, seed %d -> %s", cfg.algorithm, cfg.env, seed, d)
        try:
            run_training(cfg.algorithm, cfg.env, dataclasses.replace(cfg.train, seed=seed),
                         cfg.budget, cfg.checkpoints, out_dir=d, env_kwargs=cfg.env_kwargs,
                         evaluate_guider=cfg.evaluate_guider)
        except BaseException:
            # interrupted or failed: keep what was written, mark it partial
            _write_manifest(d / "manifest.json", cfg, seed, "partial", _count_lines(d / "metrics.jsonl"))
            raise
        _write_manifest(d / "manifest.json", cfg, seed, "complete", _count_lines(d / "metrics.jsonl"))
        dirs.append(d)
    return dirs


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _load(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, out=args.out, budget=args.budget,
                              checkpoints=args.checkpoints)


def _verify_ok(seed):
    results = verify.run_battery(seed=seed)
    for r in results:
        print(r.line())
    return all(r.passed for r in results), results


def cmd_train(args):
    cfg = _load(args)
    if cfg.verify:
        ok, _ = _verify_ok(0)
        if not ok:
            return EXIT_VERIFY
    for d in train_experiment(cfg):
        print(d)
    return EXIT_OK


def cmd_verify(args):
    ok, results = _verify_ok(args.seed if args.seed is not None else 0)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(
            json.dumps([r.to_dict() for r in results], indent=2, sort_keys=True) + "\n")
    print("all checks passed" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_compare(args):
    matrix = evaluation.load_runs(args.runs)
    report = evaluation.build_report(matrix, args.baseline, resamples=args.resamples,
                                     seed=args.seed if args.seed is not None else 0)
    out = Path(args.out or "report")
    for p in evaluation.write_report(report, out):
        print(p)
    for row in report.improvement:
        print(f"P({row['algorithm']} > {row['baseline']}) = {row['poi']:.3f} "
              f"[{row['ci_low']:.3f}, {row['ci_high']:.3f}]")
    for note in report.notes:
        print(f"note: {note}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load(args)
    if cfg.sweep is None:
        raise ConfigError("sweep: the config has no 'sweep' section")
    key = cfg.sweep["key"]
    for value in cfg.sweep["values"]:
        d = cfg.to_dict()
        d.pop("sweep")
        d["train"][key] = value
        d["out"] = str(Path(cfg.out) / f"{key}={value}")
        for rd in train_experiment(ExperimentConfig.from_dict(d)):
            print(rd)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="magpo-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="experiment YAML file (or a run manifest.json)")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--budget", type=int, help="environment steps per run")
        p.add_argument("--checkpoints", type=int, help="number of evaluation checkpoints")

    p = sub.add_parser("train", help="train every seed of an experiment")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run the tabular and gradient check battery")
    p.add_argument("--seed", type=int, help="battery seed (default 0)")
    p.add_argument("--out", help="directory for verify.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="aggregate run directories into report tables")
    p.add_argument("runs", nargs="+", help="run directories or parents of them")
    p.add_argument("--baseline", default="CTDS")
    p.add_argument("--resamples", type=int, default=2000)
    p.add_argument("--seed", type=int, help="bootstrap seed (default 0)")
    p.add_argument("--out", help="report directory (default ./report)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="train over the values of one training key")
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StatsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a fault during the run
        log.debug("fault", exc_info=True)
        print(f"runtime fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
