"""Experiment configuration and its JSON file format.

A config file is a JSON object whose keys are the fields of
``ExperimentConfig``; the nested ``"es"`` object holds ``EsConfig`` fields
except ``seed``, which always comes from the top-level ``seed``. Unknown keys
are rejected. Example::

    {
      "task": "cartpole-var",
      "held_out": 5,
      "baseline": "hebbian",
      "model": "shared-gmm",
      "rho": 32,
      "hidden": [16],
      "generations": 300,
      "seed": 7,
      "es": {"population_size": 128, "learning_rate": 0.2, "updater": "sgd"}
    }

``rho`` may be ``"N"`` (one rule for the whole network). ``components``
sets the mixture size directly and bypasses ``rho``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .envs import TASK_DEFAULTS, TASKS
from .es import EsConfig
from .genotype import MODEL_KINDS, rho_to_components
from .plastic import Topology

RHO_GRID = (1, 16, 32, 64, 128, 256)
BASELINES = ("hebbian", "static", "recurrent")
MIXTURE_KINDS = ("shared-gmm", "joint-gmm", "fixed-random")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "cartpole-var"
    held_out: int = 5
    baseline: str = "hebbian"
    model: str = "per-synapse"
    rho: int | str | None = None
    components: int | None = None
    hidden: tuple[int, ...] = (16,)
    sigma: float = 0.1
    mu_init_std: float = 1.0
    # mean init scale for direct weights (static and recurrent baselines)
    weight_init_std: float = 0.5
    init_range: float = 0.1
    clip: float = 3.0
    generations: int = 100
    eval_episodes: int = 100
    episodes_per_variation: int = 1
    eval_mean_genotype: bool = False
    checkpoint_every: int = 10
    max_steps: int | None = None
    seed: int = 0
    es: EsConfig = field(default_factory=EsConfig)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.es.seed != self.seed:
            object.__setattr__(self, "es", replace(self.es, seed=self.seed))
        self.validate()

    # derived ---------------------------------------------------------------

    @property
    def topology(self) -> Topology:
        dims = TASK_DEFAULTS[self.task]
        return Topology((dims["obs_dim"], *self.hidden, dims["act_dim"]))

    @property
    def n_synapses(self) -> int:
        return self.topology.n_synapses

    @property
    def n_components(self) -> int | None:
        if self.baseline != "hebbian" or self.model == "per-synapse":
            return None
        if self.model == "single-rule":
            return 1
        if self.components is not None:
            return self.components
        rho = self.n_synapses if self.rho == "N" else self.rho
        return rho_to_components(self.n_synapses, rho)

    @property
    def label(self) -> str:
        if self.baseline == "static":
            return "Static"
        if self.baseline == "recurrent":
            return "Recurrent"
        if self.model == "per-synapse":
            return "Hebbian"
        if self.model == "single-rule":
            return "Shared(rho=N)"
        if self.components is not None:
            return f"{self.model}(M={self.components})"
        prefix = {"shared-gmm": "Shared", "joint-gmm": "Joint", "fixed-random": "RandomAssign"}[self.model]
        return f"{prefix}(rho={self.rho})"

    def env_overrides(self) -> dict:
        return {} if self.max_steps is None else {"max_steps": self.max_steps}

    # validation ------------------------------------------------------------

    def validate(self):
        def bad(msg):
            raise ConfigError(msg)

        if self.task not in TASKS:
            bad(f"task must be one of {TASKS}")
        if self.held_out not in range(1, 6):
            bad("held_out must be a variation id in 1..5")
        if self.baseline not in BASELINES:
            bad(f"baseline must be one of {BASELINES}")
        if self.model not in MODEL_KINDS:
            bad(f"model must be one of {MODEL_KINDS}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            bad("hidden must list at least one positive layer size")
        for name in ("sigma", "mu_init_std", "weight_init_std", "init_range", "clip"):
            if not getattr(self, name) > 0:
                bad(f"{name} must be positive")
        if self.generations < 0 or self.eval_episodes < 1 or self.episodes_per_variation < 1:
            bad("generations must be >= 0, eval_episodes and episodes_per_variation >= 1")
        if self.checkpoint_every < 1:
            bad("checkpoint_every must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            bad("max_steps must be positive")
        if self.baseline == "hebbian" and self.model in MIXTURE_KINDS:
            n = self.n_synapses
            if self.components is not None:
                if not 1 <= self.components <= n:
                    bad(f"components must lie in [1, {n}]")
            elif self.rho is None:
                bad(f"model {self.model} needs rho or components")
            elif not (self.rho == "N" or self.rho == n or self.rho in RHO_GRID):
                bad(f"rho must be one of {RHO_GRID}, N or {n}, got {self.rho!r}")
            elif self.rho != "N" and self.rho > n:
                bad(f"rho={self.rho} exceeds the synapse count {n}")

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["es"] = {k: v for k, v in asdict(self.es).items() if k != "seed"}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        es = dict(data.pop("es", {}) or {})
        es_known = {f.name for f in fields(EsConfig)} - {"seed"}
        if set(es) - es_known:
            raise ConfigError(f"unknown es keys: {sorted(set(es) - es_known)}")
        try:
            es_cfg = EsConfig(**es, seed=int(data.get("seed", 0)))
            return cls(**data, es=es_cfg)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def identity_hash(self) -> str:
        """Hash of everything that shapes the trajectory (not the budget)."""
        d = self.to_dict()
        for k in ("generations", "checkpoint_every", "eval_episodes", "eval_mean_genotype"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return ExperimentConfig.from_dict(data)
