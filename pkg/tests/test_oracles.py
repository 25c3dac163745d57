import math

import numpy as np
import pytest

from hebbneck.oracles import (
    InapplicableInstance,
    brute_force_gmm_log_prob,
    finite_diff,
    format_report,
    random_instance,
    rel_error,
    verify,
)


def test_constant_function_has_zero_gradient():
    np.testing.assert_array_equal(finite_diff(lambda t: 3.0, np.ones((2, 3))), np.zeros((2, 3)))


def test_linear_function_is_exact():
    v = np.array([0.5, -2.0, 3.25, 1e-3])
    np.testing.assert_allclose(finite_diff(lambda t: float(t @ v), np.zeros(4)), v, atol=1e-10)


def test_non_finite_evaluations_are_reported():
    grad = finite_diff(lambda t: math.inf if t[0] > 0 else 0.0, np.zeros(2))
    assert np.isnan(grad[0]) and grad[1] == 0.0


def test_relative_error_floor():
    assert rel_error(0.0, 1e-12) == pytest.approx(1e-4)
    assert rel_error(2.0, 1.0) == 0.5


def test_brute_force_peak_value():
    mu = np.zeros((1, 5))
    assert brute_force_gmm_log_prob(mu, np.zeros((1, 1)), 0.1, mu) == pytest.approx(6.91823, abs=1e-5)


def test_brute_force_monotone_toward_mean():
    mu = np.array([[0.3, -0.2, 0.1, 0.0, 0.5]])
    direction = np.array([[1.0, -0.5, 0.2, 0.3, -1.0]])
    values = [brute_force_gmm_log_prob(mu, np.zeros((1, 1)), 0.4, mu + t * direction)
              for t in (1.0, 0.75, 0.5, 0.25, 0.0)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_brute_force_underflow_is_inapplicable():
    with pytest.raises(InapplicableInstance):
        brute_force_gmm_log_prob(np.zeros((1, 5)), np.zeros((1, 1)), 0.1, np.full((1, 5), 100.0))


@pytest.mark.parametrize("kind", ["per-synapse", "shared-gmm", "joint-gmm", "fixed-random"])
def test_random_instances_respect_bounds(kind):
    rng = np.random.default_rng(0)
    for _ in range(50):
        model, g = random_instance(kind, rng)
        assert 1 <= g.h.shape[0] <= 8
        if kind != "per-synapse":
            assert model.mu.shape[0] <= 3
            assert set(g.k.tolist()) == set(range(model.mu.shape[0]))
            centre = model.mu[g.k]
        else:
            centre = model.mu
        assert np.all(np.abs(g.h - centre) <= 3 * model.sigma + 1e-12)


def test_verify_report():
    report = verify(trials=20, seed=1)
    assert report["passed"]
    assert [r["model"] for r in report["gradients"]] == ["per-synapse", "shared-gmm", "joint-gmm", "fixed-random"]
    assert all(r["step"] == 1e-5 and r["trials"] == 20 for r in report["gradients"])
    assert report["likelihood"]["max_abs_gap"] < 1e-10
    assert format_report(report).splitlines()[-1] == "verify: passed"
