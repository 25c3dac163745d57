"""Train the per-synapse Hebbian model on cart-pole and compare to the random floor.

Held-out variation 5; defaults match the run used by the acceptance suite.
"""
import argparse
from pathlib import Path

from hebbneck.config import ExperimentConfig
from hebbneck.envs import make_variation, random_policy_floor
from hebbneck.es import EsConfig
from hebbneck.harness import evaluate_table, train, write_table


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--generations", type=int, default=20)
    p.add_argument("--population", type=int, default=128)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="runs/lifetime_cartpole")
    args = p.parse_args()

    cfg = ExperimentConfig(seed=args.seed, generations=args.generations,
                           es=EsConfig(population_size=args.population, learning_rate=0.2))
    out = Path(args.out_dir)
    result = train(cfg, out, workers=args.workers,
                   log=lambda r: print(f"gen {r['generation']:3d}  mean {r['fitness_mean']:7.1f}"))
    table = evaluate_table(result.checkpoint, workers=args.workers)
    write_table(table, out)
    print(table.to_text())
    for vid, cell in enumerate(table.rows[cfg.label], start=1):
        floor = random_policy_floor(make_variation(cfg.task, vid))
        tag = "held-out" if vid == cfg.held_out else "train"
        print(f"variation {vid} ({tag}): {cell.mean:.1f} = {cell.mean / floor:.1f}x random floor {floor:.1f}")


if __name__ == "__main__":
    main()
