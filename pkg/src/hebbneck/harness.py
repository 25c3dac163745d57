"""Training, evaluation and the rho sweep.

Output files of a training run (``out_dir``):

``config.json``
    the resolved configuration, frozen at start.
``history.jsonl``
    one JSON object per generation: ``generation``, ``fitness_mean``,
    ``fitness_max``, ``fitness_min``, ``lr``, ``grad_inf`` (infinity norm per
    parameter block, e.g. ``{"mu": .., "lam": ..}``) and ``seed_namespace``.
``history.csv``
    the same records as columns.
``checkpoint.bin``
    latest model and optimizer state (see ``persist``).

Nothing written depends on wall-clock time or worker count.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .envs import EnvSpec, make_meta_task, make_variation, variation_names
from .es import (
    EsState,
    apply_update,
    current_lr,
    estimate_gradient,
    sample_population,
    shape_fitness,
)
from .genotype import Genotype, make_model
from .persist import Checkpoint, atomic_write_text, load_checkpoint, save_checkpoint
from .rollout import PolicySpec, run_parallel
from .seeding import derive_seed


class NumericalAbort(RuntimeError):
    pass


def build_policy(config: ExperimentConfig) -> PolicySpec:
    return PolicySpec(config.baseline, config.topology, config.init_range, config.clip)


def build_model(config: ExperimentConfig):
    policy = build_policy(config)
    n, width = policy.genotype_shape
    if config.baseline != "hebbian":
        return make_model("per-synapse", n, width=1, sigma=config.sigma,
                          mu_init_std=config.weight_init_std, seed=config.seed)
    return make_model(config.model, n, components=config.n_components, width=width,
                      sigma=config.sigma, mu_init_std=config.mu_init_std, seed=config.seed)


def initial_checkpoint(config: ExperimentConfig) -> Checkpoint:
    return Checkpoint(config, EsState.create(build_model(config), config.es))


def train_episode_seed(base: int, generation: int, candidate: int, variation: int, episode: int) -> int:
    return derive_seed(base, "train-episode", generation, candidate, variation, episode)


def population_fitness(config: ExperimentConfig, candidates, generation: int, workers: int = 1) -> np.ndarray:
    """Meta-fitness of each candidate: mean over training variations and episodes."""
    meta = make_meta_task(config.task, config.held_out, **config.env_overrides())
    policy = build_policy(config)
    reps = config.episodes_per_variation
    matrices, specs, seeds = [], [], []
    for ci, cand in enumerate(candidates):
        for spec in meta.train_specs:
            for e in range(reps):
                matrices.append(cand.genotype.h)
                specs.append(spec)
                seeds.append(train_episode_seed(config.seed, generation, ci, spec.variation_id, e))
    fit = run_parallel(policy, matrices, specs, seeds, workers)
    return fit.reshape(len(candidates), -1).mean(axis=1)


def _finite(theta) -> bool:
    return all(np.all(np.isfinite(a)) for a in theta.values())


def _history_record(generation, raw, lr, grad) -> dict:
    return {
        "generation": generation,
        "fitness_mean": float(np.mean(raw)),
        "fitness_max": float(np.max(raw)),
        "fitness_min": float(np.min(raw)),
        "lr": lr,
        "grad_inf": {k: float(np.max(np.abs(g))) for k, g in grad.items()},
        "seed_namespace": "train-episode",
    }


HISTORY_COLUMNS = ["generation", "fitness_mean", "fitness_max", "fitness_min", "lr"]


def history_csv(records) -> str:
    blocks = sorted({k for r in records for k in r["grad_inf"]})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS + [f"grad_inf_{b}" for b in blocks])
    for r in records:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in HISTORY_COLUMNS]
                   + [repr(r["grad_inf"].get(b, float("nan"))) for b in blocks])
    return buf.getvalue()


def read_history(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)


def train(config: ExperimentConfig, out_dir=None, workers: int = 1, resume=None,
          fitness_fn=None, log=None) -> TrainResult:
    """Run ES generations until ``config.generations``.

    ``fitness_fn(candidates, generation) -> raw fitness`` replaces the
    environment rollouts (used for surrogate objectives). ``resume`` is a
    checkpoint path; the stored config must match ``config`` except for the
    budget fields.
    """
    out = Path(out_dir) if out_dir is not None else None
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config.identity_hash() != config.identity_hash():
            raise ConfigError("checkpoint was produced by a different configuration")
        ckpt = Checkpoint(config, ckpt.state)
    else:
        ckpt = initial_checkpoint(config)
    history = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "config.json", config.to_json())
        history = [r for r in read_history(out / "history.jsonl") if r["generation"] < ckpt.generation]
        atomic_write_text(out / "history.jsonl", "".join(json.dumps(r) + "\n" for r in history))
    if fitness_fn is None:
        def fitness_fn(cands, gen):
            return population_fitness(config, cands, gen, workers)

    state = ckpt.state
    hist_fh = open(out / "history.jsonl", "a") if out is not None else None
    try:
        while state.generation < config.generations:
            gen = state.generation
            pop = sample_population(state.model, state.config, gen)
            raw = np.asarray(fitness_fn(pop, gen), dtype=float)
            shaped = shape_fitness(raw, state.config.fitness_shaping)
            grad = estimate_gradient(pop, shaped, state.model)
            record = _history_record(gen, raw, current_lr(state.config, gen), grad)
            new_state = apply_update(state, grad)
            history.append(record)
            if hist_fh is not None:
                hist_fh.write(json.dumps(record) + "\n")
                hist_fh.flush()
            if log is not None:
                log(record)
            if not _finite(new_state.theta):
                if out is not None:
                    save_checkpoint(out / "diagnostic.bin", Checkpoint(config, state))
                raise NumericalAbort(f"non-finite parameters after generation {gen}")
            state = new_state
            if out is not None and (state.generation % config.checkpoint_every == 0):
                save_checkpoint(out / "checkpoint.bin", Checkpoint(config, state))
    finally:
        if hist_fh is not None:
            hist_fh.close()
    ckpt = Checkpoint(config, state)
    if out is not None:
        save_checkpoint(out / "checkpoint.bin", ckpt)
        atomic_write_text(out / "history.csv", history_csv(history))
    return TrainResult(ckpt, history)


# evaluation -----------------------------------------------------------------

@dataclass
class Cell:
    mean: float
    std: float
    episodes: int


@dataclass
class ResultsTable:
    """Models as rows, variations as columns; one column is the held-out test."""

    task: str
    columns: list[str]
    held_out: int | None
    rows: dict[str, list[Cell | None]] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def add_row(self, label: str, cells):
        self.rows[label] = list(cells)

    def merge(self, other: "ResultsTable"):
        self.rows.update(other.rows)
        self.errors.update(other.errors)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "columns": self.columns,
            "held_out": self.held_out,
            "rows": {
                label: [None if c is None else {"mean": c.mean, "std": c.std, "episodes": c.episodes}
                        for c in cells]
                for label, cells in self.rows.items()
            },
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d) -> "ResultsTable":
        rows = {label: [None if c is None else Cell(**c) for c in cells] for label, cells in d["rows"].items()}
        return cls(d["task"], d["columns"], d["held_out"], rows, d.get("errors", {}))

    def header(self) -> list[str]:
        return [f"*{c}*" if self.held_out == i + 1 else c for i, c in enumerate(self.columns)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model"] + [f"{c} mean" for c in self.columns] + [f"{c} std" for c in self.columns]
                   + ["held_out"])
        for label, cells in self.rows.items():
            w.writerow([label] + ["" if c is None else repr(c.mean) for c in cells]
                       + ["" if c is None else repr(c.std) for c in cells] + [self.held_out])
        return buf.getvalue()

    def to_text(self) -> str:
        """Integer-rounded ``mean ± std`` table; the held-out column is starred."""
        header = ["Model"] + self.header()
        body = []
        for label, cells in self.rows.items():
            row = [label]
            for c in cells:
                row.append("" if c is None else f"{_round_half_up(c.mean)} ± {_round_half_up(c.std)}")
            body.append(row)
        for label, msg in self.errors.items():
            if label not in self.rows:
                body.append([label] + ["failed"] * len(self.columns))
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [header] + body]
        lines.insert(1, "  ".join("-" * w for w in widths))
        if self.held_out is not None:
            lines.append("* held-out test variation")
        return "\n".join(lines) + "\n"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def summarize(fitness) -> Cell:
    """Mean and population standard deviation."""
    f = np.asarray(fitness, dtype=float)
    return Cell(float(f.mean()), float(f.std(ddof=0)), int(f.size))


def eval_seeds(base: int, variation_id: int, episode: int) -> tuple[int, int]:
    """(genotype seed, episode seed) for one evaluation rollout."""
    return (derive_seed(base, "eval-genotype", variation_id, episode),
            derive_seed(base, "eval-episode", variation_id, episode))


def evaluate(checkpoint: Checkpoint, specs: list[EnvSpec], episodes: int | None = None,
             workers: int = 1, mean_genotype: bool | None = None) -> list[Cell]:
    """Mean and std of ``episodes`` rollouts per spec.

    Each rollout samples a fresh genotype from the final model, unless
    ``mean_genotype`` is set, in which case the model mean is used (for
    mixtures, each synapse takes its most probable component's mean).
    """
    config = checkpoint.config
    episodes = config.eval_episodes if episodes is None else episodes
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    if mean_genotype is None:
        mean_genotype = config.eval_mean_genotype
    model = checkpoint.model
    policy = build_policy(config)
    matrices, flat_specs, seeds = [], [], []
    for spec in specs:
        for e in range(episodes):
            g_seed, ep_seed = eval_seeds(config.seed, spec.variation_id, e)
            if mean_genotype:
                h = mean_rules(model)
            else:
                h = model.sample(np.random.default_rng(g_seed)).h
            matrices.append(h)
            flat_specs.append(spec)
            seeds.append(ep_seed)
    fit = run_parallel(policy, matrices, flat_specs, seeds, workers).reshape(len(specs), episodes)
    return [summarize(row) for row in fit]


def mean_rules(model) -> np.ndarray:
    if hasattr(model, "lam"):
        return model.mu[np.argmax(model.lam, axis=1)]
    if hasattr(model, "k"):
        return model.mu[model.k]
    return model.mu.copy()


def evaluate_table(checkpoint: Checkpoint, episodes=None, workers=1, mean_genotype=None) -> ResultsTable:
    config = checkpoint.config
    specs = [make_variation(config.task, i, **config.env_overrides()) for i in range(1, 6)]
    table = ResultsTable(config.task, variation_names(config.task), config.held_out)
    table.add_row(config.label, evaluate(checkpoint, specs, episodes, workers, mean_genotype))
    return table


def write_table(table: ResultsTable, out_dir, stem="results"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / f"{stem}.json", table.to_json())
    atomic_write_text(out / f"{stem}.csv", table.to_csv())
    atomic_write_text(out / f"{stem}.txt", table.to_text())


# sweep ---------------------------------------------------------------------

def sweep_configs(shared: ExperimentConfig, rho_list) -> list[ExperimentConfig]:
    """Baselines first (static, recurrent, per-synapse Hebbian), then one shared-rule model per rho."""
    base = replace(shared, rho=None, components=None, model="per-synapse")
    configs = [
        replace(base, baseline="static"),
        replace(base, baseline="recurrent"),
        replace(base, baseline="hebbian"),
    ]
    n = shared.n_synapses
    for rho in rho_list:
        if rho == "N" or rho == n:
            configs.append(replace(base, model="single-rule", rho="N"))
        else:
            configs.append(replace(base, model="shared-gmm", rho=int(rho)))
    return configs


def run_rho_sweep(shared: ExperimentConfig, rho_list, out_dir, workers: int = 1, log=None) -> ResultsTable:
    """Train and evaluate every sweep row; a failing row is recorded and skipped."""
    out = Path(out_dir)
    table = ResultsTable(shared.task, variation_names(shared.task), shared.held_out)
    specs = [make_variation(shared.task, i, **shared.env_overrides()) for i in range(1, 6)]
    for cfg in sweep_configs(shared, rho_list):
        label = cfg.label
        slug = label.lower().replace("(", "_").replace(")", "").replace("=", "")
        try:
            result = train(cfg, out / slug, workers)
            table.add_row(label, evaluate(result.checkpoint, specs, cfg.eval_episodes, workers))
        except Exception as exc:  # noqa: BLE001 - a row failure must not end the sweep
            table.errors[label] = f"{type(exc).__name__}: {exc}"
        if log is not None:
            log(label)
        write_table(table, out, "sweep")
    return table
