"""Shot budgets: uniform requirements and their closed-form bounds, optimal
per-entry allocation, and the natural-gradient overhead relative to plain
gradient descent."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .estimator import MetricEstimate
from .propagation import (
    BoundViolation,
    PropagationCoefficients,
    RegularizedInverse,
    predicted_epsilon2,
    propagation_coefficients,
    spc,
)

MODES = ("uniform", "optimal", "optimal_symmetric")
# relative slack when comparing exact requirements to closed-form bounds
COMPARE_RTOL = 1e-9
# integer plans are int64; larger budgets are only available as continuous totals
MAX_SHOTS = 2**62


class DegenerateInput(ValueError):
    pass


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not eps > 0:
        raise ValueError(f"precision must be positive, got {eps}")
    return eps


@dataclass(frozen=True)
class AllocationPlan:
    fisher_shots: np.ndarray
    grad_shots: np.ndarray
    total: int
    predicted_eps2: float
    mode: str
    eps: float
    fisher_shots_continuous: np.ndarray
    grad_shots_continuous: np.ndarray

    @property
    def symmetric(self) -> bool:
        return self.mode == "optimal_symmetric"

    @property
    def nu(self) -> int:
        return self.grad_shots.shape[0]

    @property
    def total_continuous(self) -> float:
        return float(self.fisher_shots_continuous.sum() + self.grad_shots_continuous.sum())

    @property
    def degrees_of_freedom(self) -> int:
        nu = self.nu
        return (nu * (nu + 1) // 2 if self.symmetric else nu * nu) + nu

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """Continuous shots rescaled so a uniform split would give one per element."""
        total = self.total_continuous
        if total <= 0:
            return np.zeros_like(self.fisher_shots_continuous), np.zeros_like(self.grad_shots_continuous)
        scale = self.degrees_of_freedom / total
        return self.fisher_shots_continuous * scale, self.grad_shots_continuous * scale

    def to_json(self) -> dict:
        nf, ng = self.normalized()
        return {
            "mode": self.mode,
            "eps": self.eps,
            "nu": self.nu,
            "total": int(self.total),
            "total_continuous": self.total_continuous,
            "predicted_eps2": self.predicted_eps2,
            "fisher_shots": self.fisher_shots.astype(int).tolist(),
            "grad_shots": self.grad_shots.astype(int).tolist(),
            "fisher_shots_continuous": self.fisher_shots_continuous.tolist(),
            "grad_shots_continuous": self.grad_shots_continuous.tolist(),
            "fisher_shots_normalized": nf.tolist(),
            "grad_shots_normalized": ng.tolist(),
        }

    def heatmap_csv(self) -> str:
        """Rows ``object,k,l,shots,normalized`` with 1-based indices; gradient rows leave l empty."""
        nf, ng = self.normalized()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["object", "k", "l", "shots", "normalized"])
        for k in range(self.nu):
            for l in range(self.nu):
                w.writerow(["F", k + 1, l + 1, int(self.fisher_shots[k, l]), repr(float(nf[k, l]))])
        for k in range(self.nu):
            w.writerow(["g", k + 1, "", int(self.grad_shots[k]), repr(float(ng[k]))])
        return buf.getvalue()


class PlanOverflow(ValueError):
    pass


def _finish(coeffs, var_f, var_g, fs_cont, gs_cont, mode, eps, minimum_one) -> AllocationPlan:
    total = float(np.sum(fs_cont) + np.sum(gs_cont))
    if not total < MAX_SHOTS:
        raise PlanOverflow(f"plan needs {total:.3g} shots, beyond the integer range; increase eps")

    def to_int(cont, var, mask=None):
        shots = np.maximum(np.ceil(cont).astype(np.int64), 0)
        need = var > 0 if not minimum_one else np.ones_like(var, dtype=bool)
        if mask is not None:
            need &= mask
        return np.where(need, np.maximum(shots, 1), shots)

    mask = None
    if mode == "optimal_symmetric":
        mask = np.tril(np.ones_like(var_f, dtype=bool))
    fs = to_int(fs_cont, var_f, mask)
    gs = to_int(gs_cont, var_g)
    plan = AllocationPlan(
        fisher_shots=fs,
        grad_shots=gs,
        total=int(fs.sum() + gs.sum()),
        predicted_eps2=0.0,
        mode=mode,
        eps=eps,
        fisher_shots_continuous=fs_cont,
        grad_shots_continuous=gs_cont,
    )
    eps2 = predicted_epsilon2(coeffs, var_f, var_g, plan)
    return AllocationPlan(**{**plan.__dict__, "predicted_eps2": eps2})


def exact_uniform_requirements(coeffs: PropagationCoefficients, var_fisher, var_grad, eps) -> tuple[float, float]:
    """Total shots (N_F, N_g) when each object gets eps^2/2 and shots are spread evenly."""
    eps = _check_eps(eps)
    nu = coeffs.b.shape[0]
    n_f = 2.0 * nu**2 * float(np.sum(coeffs.a * var_fisher)) / eps**2
    n_g = 2.0 * nu * float(np.sum(coeffs.b * var_grad)) / eps**2
    return n_f, n_g


def uniform_plan(m: MetricEstimate, inv: RegularizedInverse, eps, coeffs: PropagationCoefficients | None = None) -> AllocationPlan:
    eps = _check_eps(eps)
    coeffs = coeffs or propagation_coefficients(inv, m.grad)
    n_f, n_g = exact_uniform_requirements(coeffs, m.var_fisher, m.var_grad, eps)
    nu = m.nu
    fs_cont = np.full((nu, nu), n_f / nu**2)
    gs_cont = np.full(nu, n_g / nu)
    return _finish(coeffs, m.var_fisher, m.var_grad, fs_cont, gs_cont, "uniform", eps, minimum_one=True)


def optimal_plan(
    coeffs: PropagationCoefficients,
    var_fisher,
    var_grad,
    eps,
    symmetric: bool = False,
) -> AllocationPlan:
    """Shots proportional to sqrt(weight * variance) for every element.

    Continuous counts reach exactly eps^2 with Sigma^2/eps^2 shots in total;
    the integer plan rounds each count up.
    """
    eps = _check_eps(eps)
    var_fisher = np.asarray(var_fisher, dtype=float)
    var_grad = np.asarray(var_grad, dtype=float)
    if np.any(var_fisher < 0) or np.any(var_grad < 0):
        raise ValueError("variances must be non-negative")
    a = coeffs.a_sym if symmetric else coeffs.a
    w_f = np.sqrt(np.clip(a * var_fisher, 0.0, None))
    w_g = np.sqrt(np.clip(coeffs.b * var_grad, 0.0, None))
    sigma = float(w_f.sum() + w_g.sum())
    mode = "optimal_symmetric" if symmetric else "optimal"
    return _finish(coeffs, var_fisher, var_grad, sigma * w_f / eps**2, sigma * w_g / eps**2, mode, eps, minimum_one=False)


def optimal_total(coeffs: PropagationCoefficients, var_fisher, var_grad, eps, symmetric: bool = False) -> float:
    a = coeffs.a_sym if symmetric else coeffs.a
    sigma = np.sqrt(np.clip(a * var_fisher, 0, None)).sum() + np.sqrt(np.clip(coeffs.b * var_grad, 0, None)).sum()
    return float(sigma**2 / _check_eps(eps) ** 2)


@dataclass(frozen=True)
class Theorem1Bounds:
    n_f_bound: float
    n_g_bound: float
    n_f_exact: float
    n_g_exact: float

    @property
    def n_f_holds(self) -> bool:
        return self.n_f_exact <= self.n_f_bound * (1 + COMPARE_RTOL)

    @property
    def n_g_holds(self) -> bool:
        return self.n_g_exact <= self.n_g_bound * (1 + COMPARE_RTOL)

    def check(self) -> None:
        if not (self.n_f_holds and self.n_g_holds):
            raise BoundViolation(f"exact requirement exceeds closed-form bound: {self}")


def theorem1_bounds(
    m: MetricEstimate,
    inv: RegularizedInverse,
    eps,
    f_F: float = 2.0,
    f_g: float = 1.0,
    spc_h: float | None = None,
    coeffs: PropagationCoefficients | None = None,
) -> Theorem1Bounds:
    """Closed-form upper bounds on N_F, N_g next to the exact uniform requirements.

    N_F <= 2 eps^-2 nu^4 Spc[F~^-1]^2 ||g||_inf^2 f_F and
    N_g <= 2 eps^-2 nu^2 Spc[F~^-1] Spc[H] f_g.
    """
    eps = _check_eps(eps)
    coeffs = coeffs or propagation_coefficients(inv, m.grad)
    nu = m.nu
    s = spc(inv.matrix)
    spc_h = float(np.sum(m.h_coeffs**2)) if spc_h is None else float(spc_h)
    g_inf = float(np.max(np.abs(m.grad), initial=0.0))
    n_f_bound = 2.0 * nu**4 * s**2 * g_inf**2 * f_F / eps**2
    n_g_bound = 2.0 * nu**2 * s * spc_h * f_g / eps**2
    n_f, n_g = exact_uniform_requirements(coeffs, m.var_fisher, m.var_grad, eps)
    return Theorem1Bounds(n_f_bound, n_g_bound, n_f, n_g)


@dataclass(frozen=True)
class OverheadReport:
    """Natural-gradient shot cost relative to plain gradient descent.

    ``kappa``, ``y`` and ``kappa_approx`` use the requested precisions; the
    bound checks compare both vectors at the natural-gradient precision.
    """

    kappa: float
    kappa_optimal: float
    kappa_approx: float
    n_f: float
    n_g: float
    n_opt: float
    n_smpl: float
    n_smpl_same: float
    n_f_bound: float
    n_g_bound: float
    spc_inv: float
    y: float
    gradient_ratio: float
    eta: float

    @property
    def y_same(self) -> float:
        return self.n_f / self.n_smpl_same

    @property
    def kappa_same(self) -> float:
        return (self.n_f + self.n_g) / self.n_smpl_same

    @property
    def kappa_bound(self) -> float:
        return np.inf if self.eta == 0 else self.eta**-2 + self.y_same

    @property
    def gradient_ratio_holds(self) -> bool:
        return self.eta == 0 or self.gradient_ratio <= self.eta**-2 * (1 + COMPARE_RTOL)

    @property
    def kappa_holds(self) -> bool:
        return self.kappa_same <= self.kappa_bound * (1 + COMPARE_RTOL)

    def check(self) -> None:
        if not (self.gradient_ratio_holds and self.kappa_holds):
            raise BoundViolation(f"overhead exceeds eta^-2 + y: {self}")

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "kappa_optimal": self.kappa_optimal,
            "kappa_approx": self.kappa_approx,
            "kappa_same_precision": self.kappa_same,
            "kappa_bound": self.kappa_bound,
            "kappa_holds": bool(self.kappa_holds),
            "n_f": self.n_f,
            "n_g": self.n_g,
            "n_opt": self.n_opt,
            "n_smpl": self.n_smpl,
            "n_f_bound": self.n_f_bound,
            "n_g_bound": self.n_g_bound,
            "spc_inv": self.spc_inv,
            "y": self.y,
            "gradient_ratio": self.gradient_ratio,
            "gradient_ratio_holds": bool(self.gradient_ratio_holds),
        }


def plain_gradient_requirement(var_grad, eps) -> float:
    """Shots for plain gradient descent at precision eps with the same even split.

    The gradient-only budget is measured against eps^2/2, like N_g, so that
    N_g / N_smpl compares both vectors at the same precision.
    """
    eps = _check_eps(eps)
    var_grad = np.asarray(var_grad, dtype=float)
    return 2.0 * var_grad.shape[0] * float(np.sum(var_grad)) / eps**2


def overhead_report(
    m: MetricEstimate,
    inv: RegularizedInverse,
    eps,
    f_F: float = 2.0,
    f_g: float = 1.0,
    spc_h: float | None = None,
    eps_grad: float | None = None,
    coeffs: PropagationCoefficients | None = None,
) -> OverheadReport:
    """kappa = (N_F + N_g) / N_smpl from exact uniform requirements.

    ``eps`` is the precision of the natural-gradient vector and ``eps_grad``
    that of the plain gradient (defaults to ``eps``); relative-precision runs
    pass eps0 ||v|| and eps0 ||g||.
    """
    eps = _check_eps(eps)
    eps_grad = eps if eps_grad is None else _check_eps(eps_grad)
    coeffs = coeffs or propagation_coefficients(inv, m.grad)
    n_smpl = plain_gradient_requirement(m.var_grad, eps_grad)
    n_smpl_same = plain_gradient_requirement(m.var_grad, eps)
    if n_smpl <= 0:
        raise DegenerateInput("gradient variance is zero; overhead undefined")
    bounds = theorem1_bounds(m, inv, eps, f_F, f_g, spc_h, coeffs)
    n_f, n_g = bounds.n_f_exact, bounds.n_g_exact
    n_opt = optimal_total(coeffs, m.var_fisher, m.var_grad, eps)
    s = spc(inv.matrix)
    y = n_f / n_smpl
    rho = (eps_grad / eps) ** 2
    ratio = float(np.sum(coeffs.b * m.var_grad) / np.sum(m.var_grad))
    return OverheadReport(
        kappa=(n_f + n_g) / n_smpl,
        kappa_optimal=n_opt / n_smpl,
        kappa_approx=s * rho + y,
        n_f=n_f,
        n_g=n_g,
        n_opt=n_opt,
        n_smpl=n_smpl,
        n_smpl_same=n_smpl_same,
        n_f_bound=bounds.n_f_bound,
        n_g_bound=bounds.n_g_bound,
        spc_inv=s,
        y=y,
        gradient_ratio=ratio,
        eta=inv.eta,
    )
