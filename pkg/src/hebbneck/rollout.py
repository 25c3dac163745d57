"""Episode rollouts for Hebbian, static and recurrent policies.

Episodes are simulated in batches: one row per (genotype, environment spec,
episode seed). Every operation in the loop is row-independent, so a batch
of one gives bitwise the same result as the same episode inside a larger
batch, which is what makes results independent of worker count.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .envs import BatchEnv, EnvSpec, EpisodeResult, MetaTask
from .genotype import Genotype
from .plastic import (
    DEFAULT_CLIP,
    DEFAULT_INIT_RANGE,
    RULE_WIDTH,
    RuleAssignment,
    Topology,
    forward,
    hebbian_step,
    init_weights_batch,
    network_from_flat,
)
from .recurrent import LstmPolicy
from .seeding import episode_streams


@dataclass(frozen=True)
class PolicySpec:
    baseline: str
    topology: Topology
    init_range: float = DEFAULT_INIT_RANGE
    clip: float = DEFAULT_CLIP

    @property
    def genotype_shape(self) -> tuple[int, int]:
        if self.baseline == "hebbian":
            return (self.topology.n_synapses, RULE_WIDTH)
        if self.baseline == "static":
            return (self.topology.n_synapses, 1)
        if self.baseline == "recurrent":
            return (LstmPolicy.n_params(self.topology), 1)
        raise ValueError(f"unknown baseline {self.baseline!r}")


class HebbianController:
    def __init__(self, policy: PolicySpec, h: np.ndarray, net_seeds):
        self.net = init_weights_batch(policy.topology, net_seeds, policy.init_range, policy.clip)
        self.rules = RuleAssignment(policy.topology, h)

    def act(self, obs):
        return forward(self.net, obs)

    def learn(self):
        hebbian_step(self.net, self.rules)


class StaticController:
    def __init__(self, policy: PolicySpec, h: np.ndarray, net_seeds=None):
        self.net = network_from_flat(policy.topology, h[..., 0], policy.clip)

    def act(self, obs):
        return forward(self.net, obs)

    def learn(self):
        pass


class RecurrentController:
    def __init__(self, policy: PolicySpec, h: np.ndarray, net_seeds=None):
        self.lstm = LstmPolicy(policy.topology, h[..., 0])

    def act(self, obs):
        return self.lstm.forward(obs)

    def learn(self):
        pass


CONTROLLERS = {
    "hebbian": HebbianController,
    "static": StaticController,
    "recurrent": RecurrentController,
}


def run_episodes(policy: PolicySpec, rule_matrices, specs, episode_seeds) -> list[EpisodeResult]:
    """Roll out one episode per row, all in a single batch."""
    h = np.stack([np.asarray(m, dtype=float) for m in rule_matrices])
    if h.shape[1:] != policy.genotype_shape:
        raise ValueError(f"genotype shape {h.shape[1:]} does not match policy {policy.genotype_shape}")
    streams = [episode_streams(s) for s in episode_seeds]
    env = BatchEnv(specs, [s[0] for s in streams])
    ctrl = CONTROLLERS[policy.baseline](policy, h, [s[1] for s in streams])
    with np.errstate(all="ignore"):
        while not env.done.all():
            env.step(ctrl.act(env.observe()))
            ctrl.learn()
    return env.results()


def rollout(genotype: Genotype | np.ndarray, spec: EnvSpec, episode_seed, policy: PolicySpec) -> EpisodeResult:
    """One episode: fresh weights, then forward / env step / Hebbian step until done."""
    h = genotype.h if isinstance(genotype, Genotype) else genotype
    return run_episodes(policy, [h], [spec], [episode_seed])[0]


def meta_fitness(genotype, meta: MetaTask, episode_seeds, policy: PolicySpec) -> float:
    """Mean fitness over the training variations, one episode each."""
    if len(episode_seeds) != len(meta.train_specs):
        raise ValueError("need one episode seed per training variation")
    h = genotype.h if isinstance(genotype, Genotype) else genotype
    results = run_episodes(policy, [h] * len(meta.train_specs), meta.train_specs, episode_seeds)
    return float(np.mean([r.fitness for r in results]))


@dataclass
class EpisodeJob:
    """A flat list of episodes; evaluated as one batch per chunk."""

    policy: PolicySpec
    matrices: list
    specs: list
    seeds: list


def _run_job(job: EpisodeJob):
    return [r.fitness for r in run_episodes(job.policy, job.matrices, job.specs, job.seeds)]


def run_parallel(policy: PolicySpec, matrices, specs, seeds, workers: int = 1,
                 max_batch: int = 2048) -> np.ndarray:
    """Fitness of every listed episode, in input order.

    Episodes are cut into contiguous chunks (at most ``max_batch`` each,
    at least one per worker) and evaluated in a process pool when
    ``workers > 1``. Output is independent of the chunking.
    """
    n = len(matrices)
    if n == 0:
        return np.zeros(0)
    n_chunks = max(workers, -(-n // max_batch))
    n_chunks = min(n_chunks, n)
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    jobs = [
        EpisodeJob(policy, matrices[a:b], specs[a:b], seeds[a:b])
        for a, b in zip(bounds[:-1], bounds[1:])
        if b > a
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_job, jobs))
    else:
        parts = [_run_job(j) for j in jobs]
    return np.array([f for part in parts for f in part])


def trace_episode(policy: PolicySpec, h, spec: EnvSpec, episode_seed):
    """Replay one episode, returning per-step records and the result.

    Runs the same batched loop with a batch of one, so the final fitness is
    identical to ``rollout``.
    """
    h = np.asarray(h.h if isinstance(h, Genotype) else h, dtype=float)[None]
    env_seed, net_seed = episode_streams(episode_seed)
    env = BatchEnv([spec], [env_seed])
    ctrl = CONTROLLERS[policy.baseline](policy, h, [net_seed])
    steps = []
    with np.errstate(all="ignore"):
        while not env.done.all():
            obs = env.observe()
            action = ctrl.act(obs)
            reward = env.step(action)
            ctrl.learn()
            steps.append({
                "t": int(env.steps[0]),
                "observation": obs[0].tolist(),
                "action": np.asarray(action)[0].tolist(),
                "reward": float(reward[0]) if not env.aborted[0] else None,
            })
    return steps, env.results()[0]
