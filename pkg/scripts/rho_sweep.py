"""Baselines plus one shared-rule model per rho, consolidated into one table."""
import argparse

from hebbneck.cli import _rho
from hebbneck.config import ExperimentConfig
from hebbneck.es import EsConfig
from hebbneck.harness import run_rho_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--task", default="cartpole-var")
    p.add_argument("--rho", type=_rho, nargs="+", default=[1, 32, "N"])
    p.add_argument("--generations", type=int, default=20)
    p.add_argument("--population", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="runs/rho_sweep")
    args = p.parse_args()

    cfg = ExperimentConfig(task=args.task, generations=args.generations, seed=args.seed,
                           es=EsConfig(population_size=args.population))
    table = run_rho_sweep(cfg, args.rho, args.out_dir, workers=args.workers,
                          log=lambda label: print(f"finished {label}"))
    print(table.to_text())
    for label, msg in table.errors.items():
        print(f"{label} failed: {msg}")


if __name__ == "__main__":
    main()
