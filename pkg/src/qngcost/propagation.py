"""Regularized inversion and first-order propagation of shot noise into v = F~^-1 g."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-8
# relative slack for floating-point PSD round-off (F may carry eigenvalues ~ -1e-16)
BOUND_RTOL = 1e-8


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class BoundViolation(AssertionError):
    pass


class PlanMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RegularizedInverse:
    matrix: np.ndarray
    eta: float
    singular_values: np.ndarray

    @property
    def nu(self) -> int:
        return self.matrix.shape[0]

    @property
    def sigma_max(self) -> float:
        return float(self.singular_values[0]) if self.nu else 0.0

    @property
    def sigma_min(self) -> float:
        return float(self.singular_values[-1]) if self.nu else 0.0

    def spectral_bounds(self, r_g: float = 1.0) -> tuple[float, float]:
        """(lower bound on sigma_min, upper bound on sigma_max)."""
        upper = np.inf if self.eta == 0 else 1.0 / self.eta
        return 1.0 / (self.nu * r_g**2 + self.eta), upper

    def bounds_hold(self, r_g: float = 1.0) -> bool:
        lo, hi = self.spectral_bounds(r_g)
        return self.sigma_max <= hi * (1 + BOUND_RTOL) and self.sigma_min >= lo * (1 - BOUND_RTOL)

    def check_bounds(self, r_g: float = 1.0) -> None:
        if not self.bounds_hold(r_g):
            lo, hi = self.spectral_bounds(r_g)
            raise BoundViolation(
                f"singular values [{self.sigma_min:.6g}, {self.sigma_max:.6g}] "
                f"outside [{lo:.6g}, {hi:.6g}] at eta={self.eta}"
            )


def regularized_inverse(f, eta: float, check: bool = True) -> RegularizedInverse:
    """(f + eta Id)^-1 through a symmetric eigendecomposition.

    With ``check`` the spectral bounds 1/(nu + eta) <= sigma <= 1/eta are
    enforced, which holds for any PSD f with entries bounded by one.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {f.shape}")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if f.size and np.max(np.abs(f - f.T)) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric")
    f = 0.5 * (f + f.T)
    w, q = np.linalg.eigh(f + eta * np.eye(f.shape[0]))
    if f.size and np.min(np.abs(w)) <= 1e-12:
        raise SingularMatrixError(f"regularized matrix is singular (eta={eta}, min |eigenvalue|={np.min(np.abs(w)):.3g})")
    inv = (q / w) @ q.T
    inv = 0.5 * (inv + inv.T)
    sv = np.sort(1.0 / np.abs(w))[::-1]
    out = RegularizedInverse(matrix=inv, eta=float(eta), singular_values=sv)
    if check:
        out.check_bounds()
    return out


def spc(m) -> float:
    """Mean squared singular value ||m||_F^2 / d."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("spc needs a square matrix")
    return float(np.sum(np.abs(m) ** 2) / m.shape[0])


def cnd(m) -> float:
    s = np.linalg.svd(np.asarray(m), compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


@dataclass(frozen=True)
class PropagationCoefficients:
    """Weights of every single-shot variance in the squared error of v.

    ``a[k, l]`` weights Var F_kl when all nu^2 entries are estimated
    independently; ``a_sym`` is the weight when only k >= l is measured and
    mirrored (upper triangle zero).
    """

    a: np.ndarray
    b: np.ndarray
    a_sym: np.ndarray
    v: np.ndarray


def fold_symmetric(a) -> np.ndarray:
    """Move the (k, l) and (l, k) weights onto the lower triangle, k > l."""
    a = np.asarray(a, dtype=float)
    out = np.tril(a + a.T, -1)
    out[np.diag_indices_from(out)] = np.diag(a)
    return out


def propagation_coefficients(inv: RegularizedInverse | np.ndarray, g, form: str = "first_order") -> PropagationCoefficients:
    """Error-propagation weights for v = inv @ g.

    ``first_order`` is the exact linearization dv = -inv dF v + inv dg:
    a_kl = b_k v_l^2 with b_k = sum_i inv_ik^2. Mirrored sampling makes the
    (k, l) and (l, k) perturbations identical, which adds the cross term
    2 v_k v_l (inv^2)_kl to the folded weight.

    ``elementwise`` keeps the product-of-column-norms form
    a_kl = b_k b_l g_l^2 that propagates entry variances of the inverse
    without their covariances; it is an upper-bound style estimate and does
    not match sampled errors in general.
    """
    mat = inv.matrix if isinstance(inv, RegularizedInverse) else np.asarray(inv, dtype=float)
    g = np.asarray(g, dtype=float)
    if mat.shape != (g.shape[0], g.shape[0]):
        raise ValueError(f"inverse {mat.shape} and gradient {g.shape} do not match")
    v = mat @ g
    b = np.sum(mat**2, axis=0)
    if form == "first_order":
        a = np.outer(b, v**2)
        cross = 2.0 * np.outer(v, v) * (mat.T @ mat)
        a_sym = fold_symmetric(a) + np.tril(cross, -1)
        a_sym = np.clip(a_sym, 0.0, None)
    elif form == "elementwise":
        a = np.outer(b, b * g**2)
        a_sym = fold_symmetric(a)
    else:
        raise ValueError(f"unknown coefficient form {form!r}")
    return PropagationCoefficients(a=a, b=b, a_sym=a_sym, v=v)


def _weighted(coef, var, shots, what: str) -> float:
    coef = np.asarray(coef, dtype=float)
    var = np.asarray(var, dtype=float)
    if coef.shape != var.shape:
        raise PlanMismatch(f"{what}: coefficient shape {coef.shape} != variance shape {var.shape}")
    if np.any(var < 0):
        raise ValueError(f"{what}: negative variance")
    num = coef * var
    if shots is None:
        return float(np.sum(num))
    shots = np.asarray(shots, dtype=float)
    if shots.shape != coef.shape:
        raise PlanMismatch(f"{what}: plan shape {shots.shape} != {coef.shape}")
    live = num > 0
    if np.any(shots[live] <= 0):
        raise PlanMismatch(f"{what}: plan assigns no shots to an element with non-zero weighted variance")
    return float(np.sum(num[live] / shots[live]))


def predicted_epsilon2(coeffs: PropagationCoefficients, var_fisher, var_grad, plan=None, continuous: bool = False) -> float:
    """Predicted <||dv||^2>.

    Without a plan the single-shot variances are weighted directly. A plan in
    ``optimal_symmetric`` mode is scored with the folded weights on its lower
    triangle; other plans with the full nu x nu weights. ``continuous`` scores
    the plan's unrounded shot counts.
    """
    if plan is None:
        return _weighted(coeffs.a, var_fisher, None, "fisher") + _weighted(coeffs.b, var_grad, None, "grad")
    fs, gs = (plan.fisher_shots_continuous, plan.grad_shots_continuous) if continuous else (plan.fisher_shots, plan.grad_shots)
    a = coeffs.a_sym if plan.symmetric else coeffs.a
    return _weighted(a, var_fisher, fs, "fisher") + _weighted(coeffs.b, var_grad, gs, "grad")
