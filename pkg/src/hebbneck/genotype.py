"""Search distributions over per-synapse rule matrices.

Each model is a distribution ``p(z | theta)`` over a genotype ``z``: a rule
matrix ``h`` of shape ``(N, width)`` and, for mixture kinds, the component
index ``k_i`` each row was drawn from. Models expose their trainable
parameters as a ``theta`` dict of arrays and provide sampling, the log
density and its closed-form gradient with respect to ``theta``.

Component indices are 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .plastic import RULE_WIDTH, RuleAssignment, Topology
from .seeding import rng_for

DEFAULT_SIGMA = 0.1
MODEL_KINDS = ("per-synapse", "shared-gmm", "joint-gmm", "single-rule", "fixed-random")


@dataclass
class Genotype:
    h: np.ndarray
    k: np.ndarray | None = None
    # Standard-normal draw behind h for the per-synapse model; lets the
    # score be formed from the exact noise instead of (h - mu) / sigma.
    eps: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        if self.k is not None:
            self.k = np.asarray(self.k, dtype=np.int64)
            if self.k.shape != self.h.shape[:1]:
                raise ValueError("k must hold one component index per row of h")


def rho_to_components(n_synapses: int, rho: int) -> int:
    """Number of mixture components when ``rho`` synapses share a rule.

    Rounds half up.
    """
    if not 1 <= rho <= n_synapses:
        raise ValueError(f"rho must lie in [1, {n_synapses}], got {rho}")
    return max(1, math.floor(n_synapses / rho + 0.5))


def _gauss_logpdf(h: np.ndarray, mu: np.ndarray, sigma: float) -> np.ndarray:
    """Row-wise log N(h | mu, sigma^2 I); broadcasts over leading axes."""
    width = h.shape[-1]
    sq = ((h - mu) ** 2).sum(axis=-1)
    return -0.5 * sq / sigma**2 - width * math.log(sigma * math.sqrt(2 * math.pi))


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


@dataclass
class PerSynapseGaussian:
    """Independent isotropic Gaussian per row: ``h_i ~ N(mu_i, sigma^2 I)``.

    Also used with ``width=1`` for direct weight vectors (static and
    recurrent baselines).
    """

    mu: np.ndarray
    sigma: float = DEFAULT_SIGMA
    kind: str = field(default="per-synapse", init=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        _check_sigma(self.sigma)

    @property
    def n_synapses(self) -> int:
        return self.mu.shape[0]

    @property
    def width(self) -> int:
        return self.mu.shape[1]

    @property
    def theta(self) -> dict[str, np.ndarray]:
        return {"mu": self.mu}

    def with_theta(self, theta) -> "PerSynapseGaussian":
        return replace(self, mu=theta["mu"])

    def sample(self, rng: np.random.Generator, sign: float = 1.0) -> Genotype:
        eps = rng.standard_normal(self.mu.shape)
        if sign < 0:
            eps = -eps
        return Genotype(self.mu + self.sigma * eps, eps=eps)

    def _check(self, g: Genotype):
        if g.h.shape != self.mu.shape:
            raise ValueError(f"genotype shape {g.h.shape} does not match model {self.mu.shape}")

    def log_prob(self, g: Genotype) -> float:
        self._check(g)
        return float(_gauss_logpdf(g.h, self.mu, self.sigma).sum())

    def grad_log_prob(self, g: Genotype) -> dict[str, np.ndarray]:
        self._check(g)
        if g.eps is not None:
            return {"mu": g.eps / self.sigma}
        return {"mu": (g.h - self.mu) / self.sigma**2}


@dataclass
class SharedGmm:
    """Mixture of ``M`` shared rules with per-synapse softmax assignment logits.

    ``p(h | mu, lam) = prod_i sum_k N(h_i | mu_k, sigma^2 I) softmax(lam_i)_k``.
    With ``M == 1`` this is the single-rule model.
    """

    mu: np.ndarray
    lam: np.ndarray
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        _check_sigma(self.sigma)
        if self.mu.ndim != 2 or self.lam.ndim != 2 or self.lam.shape[1] != self.mu.shape[0]:
            raise ValueError(f"incompatible shapes mu {self.mu.shape}, lam {self.lam.shape}")

    @property
    def kind(self) -> str:
        return "single-rule" if self.n_components == 1 else "shared-gmm"

    @property
    def n_synapses(self) -> int:
        return self.lam.shape[0]

    @property
    def n_components(self) -> int:
        return self.mu.shape[0]

    @property
    def width(self) -> int:
        return self.mu.shape[1]

    @property
    def theta(self) -> dict[str, np.ndarray]:
        return {"mu": self.mu, "lam": self.lam}

    def with_theta(self, theta):
        return replace(self, mu=theta["mu"], lam=theta["lam"])

    def assignment_probs(self) -> np.ndarray:
        return softmax(self.lam, axis=1)

    def sample(self, rng: np.random.Generator, sign: float = 1.0) -> Genotype:
        cum = np.cumsum(self.assignment_probs(), axis=1)
        u = rng.random(self.n_synapses)
        k = np.minimum((cum < u[:, None]).sum(axis=1), self.n_components - 1)
        eps = rng.standard_normal((self.n_synapses, self.width))
        return Genotype(self.mu[k] + self.sigma * eps, k=k)

    def _check(self, h):
        if h.shape != (self.n_synapses, self.width):
            raise ValueError(
                f"genotype shape {h.shape} does not match model {(self.n_synapses, self.width)}"
            )

    def _log_joint(self, h) -> np.ndarray:
        """``log N(h_i | mu_k) + log p(k | lam_i)`` as an (N, M) matrix."""
        self._check(h)
        comp = _gauss_logpdf(h[:, None, :], self.mu[None, :, :], self.sigma)
        return comp + log_softmax(self.lam, axis=1)

    def responsibilities(self, h) -> np.ndarray:
        lj = self._log_joint(np.asarray(h, dtype=float))
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def log_prob(self, g: Genotype) -> float:
        return float(logsumexp(self._log_joint(g.h), axis=1).sum())

    def grad_log_prob(self, g: Genotype) -> dict[str, np.ndarray]:
        r = self.responsibilities(g.h)
        grad_mu = (r.T @ g.h - r.sum(axis=0)[:, None] * self.mu) / self.sigma**2
        return {"mu": grad_mu, "lam": r - self.assignment_probs()}


@dataclass
class JointGmm(SharedGmm):
    """Mixture where the individual is ``(h, k)``; no marginalisation over k."""

    @property
    def kind(self) -> str:
        return "joint-gmm"

    def _check_k(self, g: Genotype):
        if g.k is None:
            raise ValueError("joint model needs the component indices k")
        if g.k.shape != (self.n_synapses,) or g.k.min() < 0 or g.k.max() >= self.n_components:
            raise ValueError("component indices out of range")

    def log_prob(self, g: Genotype) -> float:
        self._check(g.h)
        self._check_k(g)
        rows = np.arange(self.n_synapses)
        comp = _gauss_logpdf(g.h, self.mu[g.k], self.sigma)
        return float((comp + log_softmax(self.lam, axis=1)[rows, g.k]).sum())

    def grad_log_prob(self, g: Genotype) -> dict[str, np.ndarray]:
        self._check(g.h)
        self._check_k(g)
        grad_mu = np.zeros_like(self.mu)
        np.add.at(grad_mu, g.k, (g.h - self.mu[g.k]) / self.sigma**2)
        onehot = np.zeros_like(self.lam)
        onehot[np.arange(self.n_synapses), g.k] = 1.0
        return {"mu": grad_mu, "lam": onehot - self.assignment_probs()}


@dataclass
class FixedRandomGmm:
    """Shared rules with a frozen random assignment; only ``mu`` is trained."""

    mu: np.ndarray
    k: np.ndarray
    sigma: float = DEFAULT_SIGMA
    kind: str = field(default="fixed-random", init=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.k = np.asarray(self.k, dtype=np.int64)
        self.k.setflags(write=False)
        _check_sigma(self.sigma)
        if self.k.min() < 0 or self.k.max() >= self.mu.shape[0]:
            raise ValueError("assignment indices out of range")

    @property
    def n_synapses(self) -> int:
        return self.k.shape[0]

    @property
    def n_components(self) -> int:
        return self.mu.shape[0]

    @property
    def width(self) -> int:
        return self.mu.shape[1]

    @property
    def theta(self) -> dict[str, np.ndarray]:
        return {"mu": self.mu}

    def with_theta(self, theta):
        return replace(self, mu=theta["mu"])

    def sample(self, rng: np.random.Generator, sign: float = 1.0) -> Genotype:
        eps = rng.standard_normal((self.n_synapses, self.width))
        return Genotype(self.mu[self.k] + self.sigma * eps, k=self.k.copy())

    def _check(self, g):
        if g.h.shape != (self.n_synapses, self.width):
            raise ValueError("genotype shape does not match model")

    def log_prob(self, g: Genotype) -> float:
        self._check(g)
        return float(_gauss_logpdf(g.h, self.mu[self.k], self.sigma).sum())

    def grad_log_prob(self, g: Genotype) -> dict[str, np.ndarray]:
        self._check(g)
        grad_mu = np.zeros_like(self.mu)
        np.add.at(grad_mu, self.k, (g.h - self.mu[self.k]) / self.sigma**2)
        return {"mu": grad_mu}


GenotypeModel = PerSynapseGaussian | SharedGmm | JointGmm | FixedRandomGmm


def make_model(
    kind: str,
    n_synapses: int,
    *,
    components: int | None = None,
    width: int = RULE_WIDTH,
    sigma: float = DEFAULT_SIGMA,
    mu_init_std: float = 1.0,
    seed: int = 0,
) -> GenotypeModel:
    """Build a freshly initialised model.

    Means are i.i.d. ``N(0, mu_init_std^2)``; assignment logits start at zero
    (uniform mixture). ``fixed-random`` draws its assignment uniformly once.
    """
    rng = rng_for(seed, "model-init")
    if kind == "per-synapse":
        return PerSynapseGaussian(mu_init_std * rng.standard_normal((n_synapses, width)), sigma)
    if kind == "single-rule":
        components = 1
    if components is None:
        raise ValueError(f"{kind} needs a component count")
    if not 1 <= components <= n_synapses:
        raise ValueError(f"components must lie in [1, {n_synapses}], got {components}")
    mu = mu_init_std * rng.standard_normal((components, width))
    if kind in ("shared-gmm", "single-rule"):
        return SharedGmm(mu, np.zeros((n_synapses, components)), sigma)
    if kind == "joint-gmm":
        return JointGmm(mu, np.zeros((n_synapses, components)), sigma)
    if kind == "fixed-random":
        k = rng_for(seed, "assignment").integers(0, components, size=n_synapses)
        return FixedRandomGmm(mu, k, sigma)
    raise ValueError(f"unknown model kind {kind!r}")


def sample(model: GenotypeModel, seed, sign: float = 1.0) -> Genotype:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return model.sample(rng, sign)


def log_prob(model: GenotypeModel, g: Genotype) -> float:
    return model.log_prob(g)


def grad_log_prob(model: GenotypeModel, g: Genotype) -> dict[str, np.ndarray]:
    return model.grad_log_prob(g)


def responsibilities(model: SharedGmm, h) -> np.ndarray:
    return model.responsibilities(h)


def materialize(g: Genotype, topology: Topology) -> RuleAssignment:
    """Bind row ``i`` of ``h`` to synapse ``i`` of the topology."""
    if g.h.shape != (topology.n_synapses, RULE_WIDTH):
        raise ValueError(
            f"genotype of shape {g.h.shape} cannot drive {topology.n_synapses} synapses"
        )
    return RuleAssignment(topology, g.h)
