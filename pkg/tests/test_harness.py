import json
import math
from dataclasses import replace

import numpy as np
import pytest

from hebbneck import harness
from hebbneck.config import ConfigError, ExperimentConfig, load_config
from hebbneck.envs import make_variation
from hebbneck.es import EsConfig
from hebbneck.harness import (
    Cell,
    NumericalAbort,
    ResultsTable,
    evaluate,
    evaluate_table,
    initial_checkpoint,
    mean_rules,
    run_rho_sweep,
    summarize,
    sweep_configs,
    train,
)
from hebbneck.persist import (
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)


def small(**kw):
    base = dict(hidden=(4,), max_steps=25, generations=3, eval_episodes=4,
                checkpoint_every=1, es=EsConfig(population_size=6))
    base.update(kw)
    return ExperimentConfig(**base)


# config ----------------------------------------------------------------------------

def test_defaults_and_labels():
    cfg = ExperimentConfig()
    assert cfg.eval_episodes == 100 and cfg.held_out == 5
    assert cfg.label == "Hebbian"
    assert replace(cfg, baseline="static").label == "Static"
    assert replace(cfg, model="shared-gmm", rho=32).label == "Shared(rho=32)"
    assert replace(cfg, model="single-rule", rho="N").label == "Shared(rho=N)"


def test_components_from_rho():
    cfg = ExperimentConfig(hidden=(16,), model="shared-gmm", rho=16)
    assert cfg.n_synapses == 4 * 16 + 16
    assert cfg.n_components == 5
    assert replace(cfg, rho="N").n_components == 1
    assert replace(cfg, rho=None, components=7).n_components == 7


@pytest.mark.parametrize("bad", [
    dict(model="shared-gmm", rho=7),
    dict(model="shared-gmm"),
    dict(model="shared-gmm", rho=256),
    dict(held_out=6),
    dict(baseline="mlp"),
    dict(task="ant"),
    dict(sigma=0.0),
    dict(eval_episodes=0),
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_config_round_trip(tmp_path):
    cfg = small(model="joint-gmm", rho=16, es=EsConfig(updater="adam", decay=0.9931))
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg


def test_unknown_config_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"generations": 3, "popsize": 4}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_identity_hash_ignores_budget():
    cfg = small()
    assert cfg.identity_hash() == replace(cfg, generations=99, eval_episodes=7).identity_hash()
    assert cfg.identity_hash() != replace(cfg, seed=1).identity_hash()


# checkpoints ---------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(),
    dict(model="shared-gmm", rho=16),
    dict(model="joint-gmm", rho=16, es=EsConfig(population_size=6, updater="adam")),
    dict(model="fixed-random", rho=16),
    dict(baseline="recurrent"),
])
def test_checkpoint_round_trip(kw, tmp_path):
    ckpt = initial_checkpoint(small(**kw))
    data = encode_checkpoint(ckpt)
    back = decode_checkpoint(data)
    assert back.config == ckpt.config and back.generation == 0
    for k, v in ckpt.state.theta.items():
        np.testing.assert_array_equal(back.state.theta[k], v)
    assert encode_checkpoint(back) == data
    save_checkpoint(tmp_path / "c.bin", ckpt)
    assert (tmp_path / "c.bin").read_bytes() == data


def test_corrupt_checkpoint_rejected():
    data = bytearray(encode_checkpoint(initial_checkpoint(small())))
    data[40] ^= 0xFF
    with pytest.raises(CheckpointError):
        decode_checkpoint(bytes(data))
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"not a checkpoint at all")


# training --------------------------------------------------------------------------------

def test_zero_generations_is_initialization(tmp_path):
    cfg = small(generations=0)
    result = train(cfg, tmp_path)
    assert encode_checkpoint(result.checkpoint) == encode_checkpoint(initial_checkpoint(cfg))
    assert load_checkpoint(tmp_path / "checkpoint.bin").generation == 0


def test_train_writes_outputs(tmp_path):
    result = train(small(model="shared-gmm", rho=16), tmp_path)
    assert result.checkpoint.generation == 3
    lines = (tmp_path / "history.jsonl").read_text().splitlines()
    assert [json.loads(l)["generation"] for l in lines] == [0, 1, 2]
    assert set(json.loads(lines[0])["grad_inf"]) == {"mu", "lam"}
    header = (tmp_path / "history.csv").read_text().splitlines()[0]
    assert "grad_inf_lam" in header and "grad_inf_mu" in header


@pytest.mark.parametrize("updater", ["sgd", "adam"])
def test_resume_is_bitwise(tmp_path, updater):
    cfg = small(generations=4, es=EsConfig(population_size=6, updater=updater, decay=0.99))
    full = train(cfg, tmp_path / "full")
    train(replace(cfg, generations=2), tmp_path / "part")
    resumed = train(cfg, tmp_path / "part", resume=tmp_path / "part" / "checkpoint.bin")
    assert encode_checkpoint(resumed.checkpoint) == encode_checkpoint(full.checkpoint)
    for name in ("checkpoint.bin", "history.jsonl", "history.csv"):
        assert (tmp_path / "part" / name).read_bytes() == (tmp_path / "full" / name).read_bytes()


def test_resume_rejects_other_config(tmp_path):
    train(small(generations=1), tmp_path)
    with pytest.raises(ConfigError):
        train(small(generations=2, seed=9), tmp_path / "x", resume=tmp_path / "checkpoint.bin")


def test_non_finite_update_aborts(tmp_path):
    def explode(cands, gen):
        return [np.inf if i == 0 else 0.0 for i in range(len(cands))]

    cfg = small(es=EsConfig(population_size=6, fitness_shaping="raw"))
    with pytest.raises(NumericalAbort):
        train(cfg, tmp_path, fitness_fn=explode)
    assert load_checkpoint(tmp_path / "diagnostic.bin").generation == 0


def test_surrogate_objective_improves():
    target = np.full((4, 5), 0.5)
    # a 4-1-1 network has 5 synapses; the objective looks at the first 4 rules
    cfg = small(hidden=(1,), generations=60, es=EsConfig(population_size=32, learning_rate=0.1))

    def fitness(cands, gen):
        return [-np.sum((c.genotype.h[:4] - target) ** 2) for c in cands]

    result = train(cfg, None, fitness_fn=fitness)
    mu = result.checkpoint.model.mu[:4]
    assert np.abs(mu - target).max() < 0.3


# evaluation ---------------------------------------------------------------------------------

def test_summary_uses_population_std():
    cell = summarize([1.0, 2.0, 3.0])
    assert cell.mean == 2.0
    assert cell.std == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
    assert summarize([5.0]).std == 0.0


def test_evaluate_with_stub_fitness(monkeypatch):
    monkeypatch.setattr(harness, "run_parallel", lambda *a, **k: np.array([1.0, 2.0, 3.0]))
    cells = evaluate(initial_checkpoint(small()), [make_variation("cartpole-var", 1)], episodes=3)
    assert cells[0].mean == 2.0
    assert cells[0].std == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
    assert cells[0].episodes == 3


def test_evaluate_single_episode_has_zero_std():
    cells = evaluate(initial_checkpoint(small()), [make_variation("cartpole-var", 2)], episodes=1)
    assert cells[0].std == 0.0 and cells[0].episodes == 1


def test_degenerate_model_on_repeated_seed(monkeypatch):
    monkeypatch.setattr(harness, "eval_seeds", lambda base, vid, ep: (0, 42))
    cfg = small(sigma=1e-12)
    cells = evaluate(initial_checkpoint(cfg), [make_variation("cartpole-var", 1)], episodes=5)
    assert cells[0].std == 0.0


def test_evaluation_seeds_are_shared_across_models():
    a = initial_checkpoint(small(baseline="static"))
    b = initial_checkpoint(small())
    assert harness.eval_seeds(a.config.seed, 1, 0) == harness.eval_seeds(b.config.seed, 1, 0)


def test_mean_rules():
    ckpt = initial_checkpoint(small(model="shared-gmm", rho=16))
    model = ckpt.model
    np.testing.assert_array_equal(mean_rules(model), model.mu[np.argmax(model.lam, axis=1)])


def test_default_evaluation_uses_hundred_episodes():
    cfg = small(eval_episodes=100, max_steps=2)
    table = evaluate_table(initial_checkpoint(cfg))
    assert all(c.episodes == 100 for c in table.rows["Hebbian"])


# tables ------------------------------------------------------------------------------------

def table_fixture():
    t = ResultsTable("cartpole-var", ["A", "B", "C", "D", "E"], 5)
    t.add_row("Static", [Cell(10.5, 2.49, 100), Cell(1.0, 0.0, 100), Cell(2.0, 0.5, 100),
                         Cell(-3.5, 1.5, 100), Cell(7.25, 0.75, 100)])
    t.errors["Shared(rho=N)"] = "RuntimeError: boom"
    return t


def test_text_table_layout():
    text = table_fixture().to_text()
    lines = text.splitlines()
    assert lines[0].split() == ["Model", "A", "B", "C", "D", "*E*"]
    assert "11 ± 2" in lines[2] and "-3 ± 2" in lines[2] and "7 ± 1" in lines[2]
    assert lines[3].split()[0] == "Shared(rho=N)" and "failed" in lines[3]
    assert lines[-1].startswith("*")


def test_machine_output_keeps_full_precision():
    t = table_fixture()
    assert "2.49" in t.to_csv() and "7.25" in t.to_csv()
    back = ResultsTable.from_dict(json.loads(t.to_json()))
    assert back.rows == t.rows and back.held_out == 5


# sweep ---------------------------------------------------------------------------------------

def test_sweep_rows():
    labels = [c.label for c in sweep_configs(small(), [1])]
    assert labels == ["Static", "Recurrent", "Hebbian", "Shared(rho=1)"]
    labels = [c.label for c in sweep_configs(small(), [16, "N"])]
    assert labels[-2:] == ["Shared(rho=16)", "Shared(rho=N)"]
    assert sweep_configs(small(), ["N"])[-1].n_components == 1


def test_sweep_table_shape(tmp_path):
    cfg = small(generations=1, eval_episodes=2, max_steps=5)
    table = run_rho_sweep(cfg, [16, "N"], tmp_path)
    assert len(table.rows) == 2 + 3 and not table.errors
    assert all(len(cells) == 5 for cells in table.rows.values())
    assert (tmp_path / "sweep.txt").exists() and (tmp_path / "sweep.csv").exists()


def test_sweep_records_failed_rows(tmp_path, monkeypatch):
    real = harness.train

    def flaky(cfg, out, workers=1):
        if cfg.label == "Recurrent":
            raise NumericalAbort("diverged")
        return real(cfg, out, workers)

    monkeypatch.setattr(harness, "train", flaky)
    table = run_rho_sweep(small(generations=1, eval_episodes=2, max_steps=5), [], tmp_path)
    assert "Recurrent" in table.errors and "Recurrent" not in table.rows
    assert "Static" in table.rows and "Hebbian" in table.rows
