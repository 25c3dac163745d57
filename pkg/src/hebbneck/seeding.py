"""Counter-based seed derivation.

Every random draw in a run is keyed by ``(base seed, purpose, counters...)``
through ``numpy.random.SeedSequence`` spawn keys, so the stream a candidate or
episode sees depends only on its coordinates and never on evaluation order or
worker count. Distinct purposes give disjoint namespaces; in particular
training and evaluation episodes can never share a seed.
"""
from __future__ import annotations

import numpy as np

PURPOSES = {
    "model-init": 0,
    "population": 1,
    "train-episode": 2,
    "eval-episode": 3,
    "eval-genotype": 4,
    "assignment": 5,
    "random-policy": 6,
}


def seed_sequence(base: int, purpose: str, *counters: int) -> np.random.SeedSequence:
    if purpose not in PURPOSES:
        raise KeyError(f"unknown seed purpose {purpose!r}")
    key = (PURPOSES[purpose],) + tuple(int(c) for c in counters)
    return np.random.SeedSequence(entropy=int(base), spawn_key=key)


def derive_seed(base: int, purpose: str, *counters: int) -> int:
    """A 64-bit integer seed for the given coordinates."""
    return int(seed_sequence(base, purpose, *counters).generate_state(1, np.uint64)[0])


def rng_for(base: int, purpose: str, *counters: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(base, purpose, *counters))


def episode_streams(episode_seed: int) -> tuple[int, int]:
    """Split one episode seed into (environment reset seed, weight init seed)."""
    env_ss, net_ss = np.random.SeedSequence(int(episode_seed)).spawn(2)
    return (int(env_ss.generate_state(1, np.uint64)[0]),
            int(net_ss.generate_state(1, np.uint64)[0]))
