"""Independent checks for the analytic log-density gradients.

``finite_diff`` and ``brute_force_gmm_log_prob`` deliberately share no code
with ``genotype``: the first only calls a black-box scalar function, the
second evaluates the mixture likelihood literally in linear space.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .genotype import FixedRandomGmm, Genotype, JointGmm, PerSynapseGaussian, SharedGmm

FD_STEP = 1e-5


class InapplicableInstance(ValueError):
    """Raised when a linear-space evaluation underflows."""


@dataclass
class GradCheckReport:
    model: str
    max_rel_error: float
    argmax: str
    step: float
    trials: int
    nonfinite: int = 0
    failures: list[str] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.nonfinite == 0 and self.max_rel_error < tol


def rel_error(a, f) -> np.ndarray:
    a, f = np.asarray(a, dtype=float), np.asarray(f, dtype=float)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)


def finite_diff(fn, theta, step: float = FD_STEP) -> np.ndarray:
    """Central differences of a scalar function, coordinate by coordinate.

    Non-finite evaluations give NaN at that coordinate instead of raising.
    """
    theta = np.array(theta, dtype=float)
    out = np.empty_like(theta)
    flat, grad = theta.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn(theta)
        flat[i] = orig - step
        down = fn(theta)
        flat[i] = orig
        grad[i] = (up - down) / (2 * step) if np.isfinite(up) and np.isfinite(down) else np.nan
    return out


def brute_force_gmm_log_prob(mu, lam, sigma, h) -> float:
    """Literal ``log prod_i sum_k N(h_i | mu_k, sigma) softmax(lam_i)_k``."""
    mu, lam, h = (np.asarray(a, dtype=float) for a in (mu, lam, h))
    n, d = h.shape
    total = 1.0
    for i in range(n):
        weights = [math.exp(l) for l in lam[i]]
        z = sum(weights)
        mix = 0.0
        for k in range(mu.shape[0]):
            sq = sum((h[i, j] - mu[k, j]) ** 2 for j in range(d))
            dens = math.exp(-0.5 * sq / sigma**2) / (sigma * math.sqrt(2 * math.pi)) ** d
            mix += dens * weights[k] / z
        total *= mix
    if total == 0.0 or not math.isfinite(total):
        raise InapplicableInstance("linear-space likelihood under- or overflowed")
    return math.log(total)


# randomized verification --------------------------------------------------

def random_instance(kind: str, rng: np.random.Generator, max_n=8, max_m=3, width=5, sigma=None):
    """A small random model and a genotype within 3 sigma of its means.

    Every mixture component is the source of at least one row. A component
    that generated no row gets a gradient made of vanishing responsibilities,
    below what a float64 central difference can resolve.
    """
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(1, min(max_m, n) + 1))
    sigma = float(rng.uniform(0.1, 1.0)) if sigma is None else sigma
    mu_rows = n if kind == "per-synapse" else m
    mu = rng.normal(0.0, 1.0, size=(mu_rows, width))
    lam = rng.normal(0.0, 1.0, size=(n, m))
    k = rng.permutation(np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)]))
    if kind == "per-synapse":
        model = PerSynapseGaussian(mu, sigma)
        centre = mu
        k = None
    elif kind == "shared-gmm":
        model = SharedGmm(mu, lam, sigma)
        centre = mu[k]
    elif kind == "joint-gmm":
        model = JointGmm(mu, lam, sigma)
        centre = mu[k]
    elif kind == "fixed-random":
        model = FixedRandomGmm(mu, k, sigma)
        centre = mu[k]
    else:
        raise ValueError(kind)
    h = centre + sigma * np.clip(rng.standard_normal(centre.shape), -3.0, 3.0)
    return model, Genotype(h, k=k)


def check_gradient(model, g: Genotype, step: float = FD_STEP):
    """Max relative error and its coordinate for one instance."""
    analytic = model.grad_log_prob(g)
    worst, where, nonfinite = 0.0, "", 0
    for name, value in model.theta.items():
        def fn(x, name=name):
            theta = dict(model.theta)
            theta[name] = x
            return model.with_theta(theta).log_prob(Genotype(g.h, k=g.k))

        numeric = finite_diff(fn, value, step)
        nonfinite += int(np.sum(~np.isfinite(numeric)))
        err = rel_error(analytic[name], numeric)
        err = np.where(np.isfinite(err), err, 0.0)
        idx = int(np.argmax(err))
        if err.reshape(-1)[idx] > worst:
            worst = float(err.reshape(-1)[idx])
            where = f"{name}{tuple(int(i) for i in np.unravel_index(idx, value.shape))}"
    return worst, where, nonfinite


def gradient_check(kind: str, trials: int = 100, seed: int = 0, step: float = FD_STEP,
                   tol: float = 1e-4) -> GradCheckReport:
    rng = np.random.default_rng([seed, sum(map(ord, kind))])
    report = GradCheckReport(kind, 0.0, "", step, trials)
    for t in range(trials):
        model, g = random_instance(kind, rng)
        err, where, nonfinite = check_gradient(model, g, step)
        report.nonfinite += nonfinite
        if err >= tol:
            report.failures.append(f"trial {t}: {where} rel err {err:.3g}")
        if err > report.max_rel_error:
            report.max_rel_error, report.argmax = err, f"trial {t} {where}"
    return report


def likelihood_check(trials: int = 100, seed: int = 0):
    """Max absolute gap between the stable and the brute-force GMM log density."""
    rng = np.random.default_rng([seed, 7])
    worst, skipped = 0.0, 0
    for _ in range(trials):
        model, g = random_instance("shared-gmm", rng)
        try:
            ref = brute_force_gmm_log_prob(model.mu, model.lam, model.sigma, g.h)
        except InapplicableInstance:
            skipped += 1
            continue
        worst = max(worst, abs(model.log_prob(g) - ref))
    return worst, skipped


def verify(trials: int = 100, seed: int = 0, tol: float = 1e-4) -> dict:
    """Run every gradient and likelihood check; returns a JSON-ready report."""
    reports = [gradient_check(kind, trials, seed, tol=tol)
               for kind in ("per-synapse", "shared-gmm", "joint-gmm", "fixed-random")]
    ll_gap, ll_skipped = likelihood_check(trials, seed)
    ok = all(r.passed(tol) for r in reports) and ll_gap < 1e-10
    return {
        "passed": ok,
        "tolerance": tol,
        "gradients": [asdict(r) for r in reports],
        "likelihood": {"max_abs_gap": ll_gap, "skipped": ll_skipped, "tolerance": 1e-10},
    }


def format_report(report: dict) -> str:
    lines = []
    for r in report["gradients"]:
        status = "ok" if r["max_rel_error"] < report["tolerance"] and r["nonfinite"] == 0 else "FAIL"
        lines.append(f"{status:4s} grad {r['model']:13s} trials={r['trials']} "
                     f"max_rel_err={r['max_rel_error']:.2e} at {r['argmax']} step={r['step']:g}")
    ll = report["likelihood"]
    status = "ok" if ll["max_abs_gap"] < ll["tolerance"] else "FAIL"
    lines.append(f"{status:4s} gmm log-likelihood vs brute force max_gap={ll['max_abs_gap']:.2e} "
                 f"(skipped {ll['skipped']})")
    lines.append("verify: " + ("passed" if report["passed"] else "FAILED"))
    return "\n".join(lines)


def dump_report(report: dict, path):
    from .persist import atomic_write_text

    atomic_write_text(path, json.dumps(report, indent=2) + "\n")
