"""Command line entry point: ``hebbneck {train,evaluate,sweep,verify,replay}``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort (including
a failed ``verify``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import oracles
from .config import ConfigError, ExperimentConfig, load_config
from .envs import make_variation
from .harness import (
    NumericalAbort,
    build_policy,
    eval_seeds,
    evaluate_table,
    mean_rules,
    run_rho_sweep,
    train,
    write_table,
)
from .persist import CheckpointError, atomic_write_text, load_checkpoint
from .rollout import trace_episode

log = logging.getLogger("hebbneck")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _rho(value: str):
    if value == "N":
        return "N"
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"rho must be an integer or N, got {value!r}")


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "held_out", None) is not None:
        changes["held_out"] = args.held_out
    if getattr(args, "baseline", None) is not None:
        changes["baseline"] = args.baseline
    if getattr(args, "generations", None) is not None:
        changes["generations"] = args.generations
    rho = getattr(args, "rho", None)
    if rho is not None and not isinstance(rho, list):
        if rho == "N":
            changes.update(model="single-rule", rho="N", components=None)
        else:
            model = config.model if config.model in ("shared-gmm", "joint-gmm", "fixed-random") else "shared-gmm"
            changes.update(model=model, rho=rho, components=None)
    try:
        return replace(config, **changes) if changes else config
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out_dir or f"runs/{config.label.lower()}")

    def progress(r):
        log.info("gen %d  mean %.2f  max %.2f  lr %.4g", r["generation"], r["fitness_mean"],
                 r["fitness_max"], r["lr"])

    result = train(config, out, workers=args.workers, resume=args.resume, log=progress)
    print(f"trained {config.label} for {result.checkpoint.generation} generations -> {out / 'checkpoint.bin'}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    table = evaluate_table(ckpt, args.episodes, args.workers, args.mean_genotype or None)
    out = Path(args.out_dir or Path(args.checkpoint).parent)
    write_table(table, out)
    print(table.to_text(), end="")
    return 0


def cmd_sweep(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out_dir or "runs/sweep")
    table = run_rho_sweep(config, args.rho, out, workers=args.workers,
                          log=lambda label: log.info("finished %s", label))
    print(table.to_text(), end="")
    for label, msg in table.errors.items():
        print(f"{label}: {msg}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    report = oracles.verify(args.trials, args.seed)
    print(oracles.format_report(report))
    out = Path(args.out_dir or ".")
    oracles.dump_report(report, out / "verify_report.json")
    return 0 if report["passed"] else EXIT_NUMERIC


def cmd_replay(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = ckpt.config
    spec = make_variation(config.task, args.variation, **config.env_overrides())
    g_seed, ep_seed = eval_seeds(config.seed, args.variation, args.episode)
    if args.mean_genotype:
        h = mean_rules(ckpt.model)
    else:
        h = ckpt.model.sample(np.random.default_rng(g_seed)).h
    steps, result = trace_episode(build_policy(config), h, spec, ep_seed)
    if args.out:
        atomic_write_text(args.out, "".join(json.dumps(s) + "\n" for s in steps))
    print(json.dumps({
        "variation": spec.name,
        "episode": args.episode,
        "fitness": result.fitness,
        "steps": result.steps,
        "terminated_early": result.terminated_early,
        "aborted": result.aborted,
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hebbneck", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, rho_many=False):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out-dir")
        sp.add_argument("--held-out", type=int)
        sp.add_argument("--baseline", choices=("hebbian", "static", "recurrent"))
        sp.add_argument("--generations", type=int)
        if rho_many:
            sp.add_argument("--rho", type=_rho, nargs="+", default=[1, 16, 32, 64, 128, 256, "N"])
        else:
            sp.add_argument("--rho", type=_rho)

    sp = sub.add_parser("train", help="meta-train one model")
    common(sp)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint on all five variations")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out-dir")
    sp.add_argument("--mean-genotype", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="train and evaluate baselines plus one model per rho")
    common(sp, rho_many=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="check analytic gradients against finite differences")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("replay", help="replay one evaluation episode step by step")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--variation", type=int, default=1)
    sp.add_argument("--episode", type=int, default=0, help="evaluation episode index")
    sp.add_argument("--mean-genotype", action="store_true")
    sp.add_argument("--out", help="write the per-step trajectory as JSON lines")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
