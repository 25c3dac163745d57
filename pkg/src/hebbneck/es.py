"""Evolution strategies over genotype-model parameters.

One generation: draw a population from the model, score it, shape the
scores, estimate ``E[F(z) grad log p(z | theta)]`` from the sample and take an
ascent step with plain SGD or Adam under an exponential learning-rate decay.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .genotype import Genotype, GenotypeModel, PerSynapseGaussian
from .seeding import derive_seed

SHAPINGS = ("centered-ranks", "raw")
UPDATERS = ("sgd", "adam")


@dataclass(frozen=True)
class EsConfig:
    population_size: int = 64
    learning_rate: float = 0.2
    decay: float = 1.0
    updater: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # None: mirrored sampling for the per-synapse model only.
    antithetic: bool | None = None
    fitness_shaping: str = "centered-ranks"
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.updater not in UPDATERS:
            raise ValueError(f"updater must be one of {UPDATERS}")
        if self.fitness_shaping not in SHAPINGS:
            raise ValueError(f"fitness_shaping must be one of {SHAPINGS}")
        if self.antithetic and self.population_size % 2:
            raise ValueError("antithetic sampling needs an even population size")

    def mirrored(self, model) -> bool:
        if self.antithetic is None:
            return isinstance(model, PerSynapseGaussian) and self.population_size % 2 == 0
        if self.antithetic and not isinstance(model, PerSynapseGaussian):
            raise ValueError("antithetic sampling is only defined for the per-synapse model")
        return self.antithetic


@dataclass
class EsState:
    config: EsConfig
    model: GenotypeModel
    generation: int = 0
    m: dict[str, np.ndarray] | None = None
    v: dict[str, np.ndarray] | None = None

    @classmethod
    def create(cls, model, config: EsConfig) -> "EsState":
        m = v = None
        if config.updater == "adam":
            m = {k: np.zeros_like(a) for k, a in model.theta.items()}
            v = {k: np.zeros_like(a) for k, a in model.theta.items()}
        return cls(config, model, 0, m, v)

    @property
    def theta(self) -> dict[str, np.ndarray]:
        return self.model.theta


@dataclass
class FitnessReport:
    raw: np.ndarray
    shaped: np.ndarray = field(repr=False)


@dataclass
class Candidate:
    genotype: Genotype
    seed: int
    index: int


def current_lr(config: EsConfig, generation: int) -> float:
    if generation < 0:
        raise ValueError("generation must be non-negative")
    return config.learning_rate * config.decay**generation


def sample_population(model, config: EsConfig, generation: int) -> list[Candidate]:
    """Draw ``population_size`` candidates for one generation.

    With mirrored sampling candidates ``2j`` and ``2j + 1`` share the draw of
    pair ``j`` with opposite signs, so their rule matrices are ``mu +/- sigma eps``.
    """
    n = config.population_size
    mirrored = config.mirrored(model)
    out = []
    for i in range(n):
        slot = i // 2 if mirrored else i
        sign = -1.0 if mirrored and i % 2 else 1.0
        seed = derive_seed(config.seed, "population", generation, slot)
        out.append(Candidate(model.sample(np.random.default_rng(seed), sign), seed, i))
    return out


def shape_fitness(raw, mode: str = "centered-ranks") -> np.ndarray:
    """Centered ranks in ``[-0.5, 0.5]`` (ties share their average rank)."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size < 2:
        raise ValueError("need a fitness vector with at least two entries")
    if mode == "raw":
        return raw.copy()
    if mode != "centered-ranks":
        raise ValueError(f"unknown shaping mode {mode!r}")
    ranks = rankdata(raw, method="average") - 1.0
    shaped = ranks / (raw.size - 1) - 0.5
    return shaped - shaped.mean()


def estimate_gradient(population, shaped, model) -> dict[str, np.ndarray]:
    """``(1/n) sum_j shaped_j grad log p(z_j)``, accumulated in candidate order."""
    genotypes = [c.genotype if isinstance(c, Candidate) else c for c in population]
    shaped = np.asarray(shaped, dtype=float)
    if len(genotypes) != shaped.size:
        raise ValueError(f"{len(genotypes)} candidates but {shaped.size} fitness values")
    acc = {k: np.zeros_like(a) for k, a in model.theta.items()}
    for g, f in zip(genotypes, shaped):
        if f == 0.0:
            continue
        for k, gk in model.grad_log_prob(g).items():
            acc[k] += f * gk
    n = len(genotypes)
    return {k: a / n for k, a in acc.items()}


def per_synapse_fast_update(mu, eps_samples, shaped, alpha, sigma) -> np.ndarray:
    """Closed-form mean update ``mu + alpha / sigma * mean_j(F_j eps_j)``."""
    eps = np.asarray(eps_samples, dtype=float)
    shaped = np.asarray(shaped, dtype=float)
    if eps.shape[0] != shaped.size or eps.shape[1:] != np.shape(mu):
        raise ValueError("noise samples do not match mu and fitness vector")
    return mu + alpha / sigma * np.tensordot(shaped, eps, axes=1) / shaped.size


def _check_shapes(state: EsState, grad):
    theta = state.theta
    if set(grad) != set(theta):
        raise ValueError(f"gradient blocks {sorted(grad)} do not match {sorted(theta)}")
    for k, a in theta.items():
        if np.shape(grad[k]) != a.shape:
            raise ValueError(f"gradient block {k} has shape {np.shape(grad[k])}, expected {a.shape}")


def sgd_update(state: EsState, grad) -> EsState:
    _check_shapes(state, grad)
    lr = current_lr(state.config, state.generation)
    theta = {k: a + lr * grad[k] for k, a in state.theta.items()}
    return replace(state, model=state.model.with_theta(theta), generation=state.generation + 1)


def adam_update(state: EsState, grad) -> EsState:
    """Bias-corrected Adam step in the ascent direction."""
    _check_shapes(state, grad)
    if state.m is None or state.v is None:
        raise ValueError("Adam moments missing; build the state with updater='adam'")
    cfg = state.config
    t = state.generation + 1
    lr = current_lr(cfg, state.generation)
    m, v, theta = {}, {}, {}
    for k, a in state.theta.items():
        g = grad[k]
        m[k] = cfg.adam_beta1 * state.m[k] + (1 - cfg.adam_beta1) * g
        v[k] = cfg.adam_beta2 * state.v[k] + (1 - cfg.adam_beta2) * (g * g)
        m_hat = m[k] / (1 - cfg.adam_beta1**t)
        v_hat = v[k] / (1 - cfg.adam_beta2**t)
        theta[k] = a + lr * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    return replace(state, model=state.model.with_theta(theta), generation=t, m=m, v=v)


def apply_update(state: EsState, grad) -> EsState:
    return adam_update(state, grad) if state.config.updater == "adam" else sgd_update(state, grad)


def es_generation(state: EsState, fitness_fn) -> tuple[EsState, FitnessReport, dict]:
    """One full generation with a fitness function over the candidate list.

    ``fitness_fn(candidates) -> raw fitness vector``. Returns the new state,
    the fitness report and the gradient that was applied.
    """
    pop = sample_population(state.model, state.config, state.generation)
    raw = np.asarray(fitness_fn(pop), dtype=float)
    shaped = shape_fitness(raw, state.config.fitness_shaping)
    grad = estimate_gradient(pop, shaped, state.model)
    return apply_update(state, grad), FitnessReport(raw, shaped), grad
