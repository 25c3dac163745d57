import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from hebbneck.genotype import (
    FixedRandomGmm,
    Genotype,
    JointGmm,
    PerSynapseGaussian,
    SharedGmm,
    make_model,
    materialize,
    rho_to_components,
    sample,
)
from hebbneck.oracles import brute_force_gmm_log_prob, check_gradient, random_instance
from hebbneck.plastic import Topology

LOG_PEAK = 5 * -math.log(0.1 * math.sqrt(2 * math.pi))


def naive_density(h_row, mu_row, sigma):
    d = len(h_row)
    sq = sum((a - b) ** 2 for a, b in zip(h_row, mu_row))
    return math.exp(-0.5 * sq / sigma**2) / (sigma * math.sqrt(2 * math.pi)) ** d


def random_gmm(rng, n, m, width=5, sigma=0.5):
    return SharedGmm(rng.normal(size=(m, width)), rng.normal(size=(n, m)), sigma)


# rho_to_components -----------------------------------------------------------

@pytest.mark.parametrize("n, rho, m", [(1024, 128, 8), (1024, 1, 1024), (1024, 1024, 1), (80, 32, 3), (80, 16, 5)])
def test_rho_to_components(n, rho, m):
    assert rho_to_components(n, rho) == m


@pytest.mark.parametrize("rho", [0, 81])
def test_rho_out_of_range(rho):
    with pytest.raises(ValueError):
        rho_to_components(80, rho)


# sampling ----------------------------------------------------------------------

def test_degenerate_sigma_samples_the_mean():
    mu = np.array([[0.3, -1.2, 0.5, 2.0, -0.1]])
    model = SharedGmm(mu, np.zeros((6, 1)), 1e-12)
    g = sample(model, 5)
    np.testing.assert_allclose(g.h, np.repeat(mu, 6, axis=0), atol=1e-9)
    assert g.k.tolist() == [0] * 6


@pytest.mark.parametrize("kind", ["per-synapse", "shared-gmm", "joint-gmm", "fixed-random", "single-rule"])
def test_sampling_is_deterministic(kind):
    model = make_model(kind, 12, components=3, seed=4)
    a, b = sample(model, 99), sample(model, 99)
    np.testing.assert_array_equal(a.h, b.h)
    if a.k is not None:
        np.testing.assert_array_equal(a.k, b.k)


@pytest.mark.parametrize("logits", [(3.0, -3.0), (0.3, -0.2)])
def test_assignment_frequency(logits):
    model = SharedGmm(np.zeros((2, 5)), np.array([logits]), 0.1)
    rng = np.random.default_rng(12)
    n = 10**4
    hits = sum(int(model.sample(rng).k[0] == 0) for _ in range(n))
    p = math.exp(logits[0]) / (math.exp(logits[0]) + math.exp(logits[1]))
    assert abs(hits / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_antithetic_sign_mirrors_noise():
    model = PerSynapseGaussian(np.full((3, 5), 0.25), 0.1)
    up = model.sample(np.random.default_rng(8), 1.0)
    down = model.sample(np.random.default_rng(8), -1.0)
    np.testing.assert_array_equal(up.eps, -down.eps)
    np.testing.assert_allclose(up.h + down.h, 2 * model.mu, atol=1e-15)


# log_prob ----------------------------------------------------------------------

def test_log_prob_at_mean_single_component():
    mu = np.array([[0.1, 0.2, 0.3, 0.4, 0.5]])
    model = SharedGmm(mu, np.zeros((1, 1)), 0.1)
    assert model.log_prob(Genotype(mu.copy())) == pytest.approx(6.91823, abs=1e-5)
    assert model.log_prob(Genotype(mu.copy())) == pytest.approx(LOG_PEAK, abs=1e-12)


def test_single_component_matches_independent_gaussian():
    rng = np.random.default_rng(2)
    mu = rng.normal(size=(1, 5))
    h = rng.normal(size=(7, 5))
    gmm = SharedGmm(mu, rng.normal(size=(7, 1)), 0.3)
    indep = PerSynapseGaussian(np.repeat(mu, 7, axis=0), 0.3)
    assert gmm.log_prob(Genotype(h)) == pytest.approx(indep.log_prob(Genotype(h)), abs=1e-12)


def test_duplicated_components_match_single():
    rng = np.random.default_rng(3)
    mu = rng.normal(size=(1, 5))
    h = rng.normal(size=(4, 5))
    one = SharedGmm(mu, np.zeros((4, 1)), 0.4)
    two = SharedGmm(np.repeat(mu, 2, axis=0), np.zeros((4, 2)), 0.4)
    assert two.log_prob(Genotype(h)) == pytest.approx(one.log_prob(Genotype(h)), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gmm_log_prob_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    model = random_gmm(rng, n, m, sigma=float(rng.uniform(0.3, 1.0)))
    h = model.sample(rng).h
    ref = brute_force_gmm_log_prob(model.mu, model.lam, model.sigma, h)
    assert model.log_prob(Genotype(h)) == pytest.approx(ref, abs=1e-10)


def test_log_prob_is_stable_far_from_means():
    model = SharedGmm(np.zeros((2, 5)), np.zeros((3, 2)), 0.1)
    value = model.log_prob(Genotype(np.full((3, 5), 50.0)))
    assert np.isfinite(value)


def test_joint_marginalizes_to_shared():
    rng = np.random.default_rng(5)
    for n, m in [(1, 2), (2, 2), (3, 3), (2, 3)]:
        mu, lam = rng.normal(size=(m, 5)), rng.normal(size=(n, m))
        h = rng.normal(size=(n, 5))
        joint, shared = JointGmm(mu, lam, 0.6), SharedGmm(mu, lam, 0.6)
        terms = [joint.log_prob(Genotype(h, k=np.array(k)))
                 for k in itertools.product(range(m), repeat=n)]
        assert logsumexp(terms) == pytest.approx(shared.log_prob(Genotype(h)), abs=1e-10)


# responsibilities ----------------------------------------------------------------

def test_identical_components_give_uniform_responsibilities():
    model = SharedGmm(np.ones((3, 5)), np.zeros((4, 3)), 0.2)
    r = model.responsibilities(np.random.default_rng(0).normal(size=(4, 5)))
    np.testing.assert_allclose(r, np.full((4, 3), 1 / 3), atol=1e-15)


def test_dominant_component():
    mu = np.stack([np.zeros(5), np.full(5, 3.0)])
    model = SharedGmm(mu, np.zeros((1, 2)), 0.1)
    r = model.responsibilities(np.full((1, 5), 1e-4))
    np.testing.assert_allclose(r, [[1.0, 0.0]], atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_responsibilities_match_density_ratio(seed):
    rng = np.random.default_rng(100 + seed)
    n, m = 4, 3
    model = random_gmm(rng, n, m, sigma=0.8)
    h = model.sample(rng).h
    p = np.exp(model.lam) / np.exp(model.lam).sum(axis=1, keepdims=True)
    r = model.responsibilities(h)
    for i in range(n):
        w = [p[i, k] * naive_density(h[i], model.mu[k], model.sigma) for k in range(m)]
        np.testing.assert_allclose(r[i], np.array(w) / sum(w), atol=1e-10)


# gradients -------------------------------------------------------------------------

def test_zero_mu_gradient_at_the_mode():
    mu = np.array([[0.2, -0.4, 1.0, 0.0, 0.3]])
    model = SharedGmm(mu, np.zeros((3, 1)), 0.1)
    grad = model.grad_log_prob(Genotype(np.repeat(mu, 3, axis=0)))
    np.testing.assert_array_equal(grad["mu"], np.zeros_like(mu))


def test_symmetric_components_have_zero_lambda_gradient():
    model = SharedGmm(np.zeros((2, 5)), np.zeros((3, 2)), 0.5)
    h = np.random.default_rng(1).normal(size=(3, 5))
    np.testing.assert_allclose(model.responsibilities(h), 0.5, atol=1e-15)
    np.testing.assert_allclose(model.grad_log_prob(Genotype(h))["lam"], 0.0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lambda_gradient_rows_sum_to_zero(seed):
    rng = np.random.default_rng(seed)
    model = random_gmm(rng, int(rng.integers(1, 9)), int(rng.integers(1, 4)))
    grad = model.grad_log_prob(model.sample(rng))
    np.testing.assert_allclose(grad["lam"].sum(axis=1), 0.0, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-20, 20))
def test_lambda_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    model = random_gmm(rng, 5, 3)
    g = model.sample(rng)
    lam = model.lam.copy()
    lam[2] += shift
    shifted = SharedGmm(model.mu, lam, model.sigma)
    assert shifted.log_prob(g) == pytest.approx(model.log_prob(g), abs=1e-10)
    np.testing.assert_allclose(shifted.grad_log_prob(g)["lam"], model.grad_log_prob(g)["lam"], atol=1e-10)


@pytest.mark.parametrize("kind", ["per-synapse", "shared-gmm", "joint-gmm", "fixed-random"])
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng([2024, len(kind)])
    worst = 0.0
    for _ in range(100):
        model, g = random_instance(kind, rng)
        err, where, nonfinite = check_gradient(model, g)
        assert nonfinite == 0
        worst = max(worst, err)
    assert worst < 1e-4


def test_per_synapse_score_uses_stored_noise():
    model = PerSynapseGaussian(np.zeros((2, 5)), 0.1)
    g = model.sample(np.random.default_rng(0))
    from_eps = model.grad_log_prob(g)["mu"]
    from_h = model.grad_log_prob(Genotype(g.h))["mu"]
    np.testing.assert_array_equal(from_eps, g.eps / 0.1)
    np.testing.assert_allclose(from_eps, from_h, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("kind", ["per-synapse", "shared-gmm", "joint-gmm", "fixed-random"])
def test_score_has_zero_mean(kind):
    rng = np.random.default_rng(31)
    model = make_model(kind, 3, components=2, width=2, sigma=0.7, seed=3)
    if hasattr(model, "lam"):
        model = model.with_theta({"mu": model.mu, "lam": rng.normal(size=model.lam.shape)})
    n = 10**4
    grads = [model.grad_log_prob(model.sample(rng)) for _ in range(n)]
    for name in model.theta:
        arr = np.stack([g[name] for g in grads])
        mean, se = arr.mean(axis=0), arr.std(axis=0) / math.sqrt(n)
        assert np.all(np.abs(mean) <= 5 * se + 1e-12), name


def test_fixed_random_assignment_is_frozen():
    model = make_model("fixed-random", 10, components=3, seed=1)
    assert set(model.theta) == {"mu"}
    with pytest.raises(ValueError):
        model.k[0] = 2
    g = sample(model, 0)
    np.testing.assert_array_equal(g.k, model.k)


def test_make_model_starts_with_uniform_assignment():
    model = make_model("shared-gmm", 20, components=4, seed=0)
    np.testing.assert_allclose(model.assignment_probs(), 0.25)
    assert model.kind == "shared-gmm"
    assert make_model("single-rule", 20, seed=0).kind == "single-rule"


# materialize -----------------------------------------------------------------------

def test_materialize_single_synapse():
    topo = Topology((1, 1))
    rules = materialize(Genotype(np.array([[0.1, 0.2, 0.3, 0.4, 0.5]])), topo)
    assert rules.rule(0).as_array().tolist() == [0.1, 0.2, 0.3, 0.4, 0.5]


def test_materialize_round_trip():
    topo = Topology((4, 3, 2))
    h = np.random.default_rng(0).normal(size=(topo.n_synapses, 5))
    np.testing.assert_array_equal(materialize(Genotype(h), topo).rules, h)


def test_materialize_shape_mismatch():
    with pytest.raises(ValueError):
        materialize(Genotype(np.zeros((5, 5))), Topology((2, 2)))
