"""Monte-Carlo shot noise: binomial draws on every ancilla probability under a plan."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .allocation import AllocationPlan
from .estimator import MetricEstimate, to_probability


class PlanError(ValueError):
    pass


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, name, extra...), stable across runs."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode()), *map(int, extra)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class ShotSample:
    noisy_fisher: np.ndarray
    noisy_grad: np.ndarray
    seed: int
    trial: int
    plan: AllocationPlan


def _binomial_mean(rng: np.random.Generator, shots: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Estimate x = 2p - 1 from ``shots`` draws; zero-shot slots return the exact value."""
    p = np.broadcast_to(p, shots.shape)
    safe = np.where(shots > 0, shots, 1)
    hits = rng.binomial(safe, p)
    est = 2.0 * hits / safe - 1.0
    return np.where(shots > 0, est, 2.0 * p - 1.0)


def _check_plan(m: MetricEstimate, plan: AllocationPlan) -> None:
    if plan.fisher_shots.shape != m.fisher.shape or plan.grad_shots.shape != m.grad.shape:
        raise PlanError("plan shape does not match the metric estimate")
    fs = plan.fisher_shots
    if plan.symmetric:
        fs = np.tril(fs) + np.tril(fs, -1).T
    if np.any((fs <= 0) & (m.var_fisher > 0)):
        raise PlanError("plan leaves a Fisher entry with non-zero variance unmeasured")
    if np.any((plan.grad_shots <= 0) & (m.var_grad > 0)):
        raise PlanError("plan leaves a gradient entry with non-zero variance unmeasured")


def _draw(m: MetricEstimate, plan: AllocationPlan, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    nu = m.nu
    fs = np.asarray(plan.fisher_shots, dtype=np.int64)
    if m.protocol == "swap_test":
        f_hat = _binomial_mean(rng, fs, to_probability(m.fisher))
    else:
        # A_kl plus separate estimates of B_k, B_l, C_k, C_l for every entry
        ones = np.ones((nu, nu))
        a_hat = _binomial_mean(rng, fs, to_probability(m.a_overlap))
        b_row = _binomial_mean(rng, fs, to_probability(m.b_overlap)[:, None] * ones)
        b_col = _binomial_mean(rng, fs, to_probability(m.b_overlap)[None, :] * ones)
        c_row = _binomial_mean(rng, fs, to_probability(m.c_overlap)[:, None] * ones)
        c_col = _binomial_mean(rng, fs, to_probability(m.c_overlap)[None, :] * ones)
        f_hat = a_hat - b_row * b_col - c_row * c_col
        exact = (fs <= 0) & (m.var_fisher <= 0)
        f_hat = np.where(exact, m.fisher, f_hat)
    if plan.symmetric:
        f_hat = np.tril(f_hat) + np.tril(f_hat, -1).T
    gs = np.asarray(plan.grad_shots, dtype=np.int64)
    m_hat = _binomial_mean(rng, gs[:, None] * np.ones_like(m.m_elements, dtype=np.int64), to_probability(m.m_elements))
    g_hat = -m_hat @ m.h_coeffs
    g_hat = np.where((gs <= 0) & (m.var_grad <= 0), m.grad, g_hat)
    return f_hat, g_hat


def sample_estimates(m: MetricEstimate, plan: AllocationPlan, seed: int, trial: int = 0) -> ShotSample:
    """One finite-shot realization of (F, g) under ``plan``.

    Every probability is estimated as Binomial(n, p) / n with the plan's n for
    its element and recombined through the exact-value formulas. Independent
    plans sample all nu^2 Fisher entries separately; symmetric plans sample
    k >= l and mirror, so both triangles come from the same draws.
    """
    _check_plan(m, plan)
    f_hat, g_hat = _draw(m, plan, substream(seed, "shots", trial))
    return ShotSample(noisy_fisher=f_hat, noisy_grad=g_hat, seed=int(seed), trial=int(trial), plan=plan)


@dataclass(frozen=True)
class EpsilonEstimate:
    mean: float
    stderr: float
    trials: int
    seed: int
    samples: np.ndarray

    def to_json(self) -> dict:
        return {"empirical_eps2": self.mean, "stderr": self.stderr, "trials": self.trials, "seed": self.seed}


def natural_gradient(fisher, grad, eta: float) -> np.ndarray:
    nu = grad.shape[0]
    return np.linalg.solve(fisher + eta * np.eye(nu), grad)


def empirical_epsilon(
    m: MetricEstimate,
    plan: AllocationPlan,
    eta: float,
    trials: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> EpsilonEstimate:
    """Mean of ||v_hat - v||^2 over ``trials`` independent shot realizations.

    Trial t always uses the stream (seed, "shots", t), so results do not
    depend on ``workers``.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    _check_plan(m, plan)
    v = natural_gradient(m.fisher, m.grad, eta)
    out = np.empty(trials)

    def run(chunk):
        for t in chunk:
            f_hat, g_hat = _draw(m, plan, substream(seed, "shots", t))
            dv = natural_gradient(f_hat, g_hat, eta) - v
            out[t] = dv @ dv

    chunks = np.array_split(np.arange(trials), max(1, int(workers)))
    if len(chunks) == 1:
        run(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(run, chunks))
    mean = float(np.sum(out) / trials)
    stderr = float(np.std(out, ddof=1) / np.sqrt(trials))
    return EpsilonEstimate(mean=mean, stderr=stderr, trials=trials, seed=int(seed), samples=out)
