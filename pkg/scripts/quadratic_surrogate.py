"""ES on F(h) = -|h - h*|^2 with the per-synapse Gaussian model, over several seeds."""
import argparse

import numpy as np

from hebbneck.es import EsConfig, EsState, es_generation
from hebbneck.genotype import PerSynapseGaussian


def run(seed, shape, generations, population, lr, sigma):
    rng = np.random.default_rng(1000 + seed)
    target = rng.uniform(-1, 1, size=shape)
    target /= np.abs(target).max()
    state = EsState.create(PerSynapseGaussian(np.zeros(shape), sigma),
                           EsConfig(population_size=population, learning_rate=lr, seed=seed))
    for _ in range(generations):
        state, _, _ = es_generation(state, lambda pop: [-np.sum((c.genotype.h - target) ** 2) for c in pop])
    return float(np.abs(state.model.mu - target).max())


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--generations", type=int, default=200)
    p.add_argument("--population", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=0.1)
    args = p.parse_args()
    for seed in range(args.seeds):
        err = run(seed, (args.rows, 5), args.generations, args.population, args.lr, args.sigma)
        print(f"seed {seed}: |mu - h*|inf = {err:.4f}")


if __name__ == "__main__":
    main()
