"""Exact metric quantities and single-shot variances of their ancilla estimators.

Every measured object is an ancilla probability p = (x + 1) / 2 of a real
overlap x in [-1, 1]; one shot of it is a Bernoulli draw, so the single-shot
variance of x is 4 p (1 - p) = 1 - x^2.

Conventions (0-based parameters, D_k|0> from :func:`derivative_states`):

* ``M[k, l] = Im <0|D_k^dag P_l U_c|0>`` and ``g_k = -sum_l h_l M[k, l]``
* ``A[k, l] = Re <0|D_k^dag D_l|0>``, ``B_k + i C_k = <0|D_k^dag U_c|0>``
* ``F[k, l] = A[k, l] - B_k B_l - C_k C_l``

The minus sign on the B B term is what the fidelity definition
4 Re[<d_k psi|d_l psi> - <d_k psi|psi><psi|d_l psi>] gives with
d_k psi = -(i/2) D_k|0>; for Pauli generators C_k vanishes identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ansatz import AnsatzCircuit, derivative_states
from .pauli import PauliSum
from .statevector import apply_pauli_string

PROTOCOLS = ("pure_abc", "swap_test")
# single-shot variances below this are round-off of an exactly known entry
VARIANCE_FLOOR = 1e-12


class InvariantViolation(ValueError):
    pass


@dataclass(frozen=True)
class MetricEstimate:
    fisher: np.ndarray
    grad: np.ndarray
    var_fisher: np.ndarray
    var_grad: np.ndarray
    protocol: str
    a_overlap: np.ndarray
    b_overlap: np.ndarray
    c_overlap: np.ndarray
    m_elements: np.ndarray
    h_coeffs: np.ndarray
    energy: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def nu(self) -> int:
        return self.grad.shape[0]

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "nu": self.nu,
            "energy": self.energy,
            "fisher": self.fisher.tolist(),
            "grad": self.grad.tolist(),
            "var_fisher": self.var_fisher.tolist(),
            "var_grad": self.var_grad.tolist(),
        }


def _pauli_images(psi: np.ndarray, h: PauliSum) -> np.ndarray:
    if not len(h):
        return np.zeros((0, psi.shape[0]), dtype=complex)
    return np.stack([apply_pauli_string(psi, t.axes) for t in h.terms])


def _m_from_states(psi: np.ndarray, dstates: np.ndarray, h: PauliSum) -> np.ndarray:
    return (dstates.conj() @ _pauli_images(psi, h).T).imag


def gradient_matrix_elements(c: AnsatzCircuit, theta, h: PauliSum, workers: int = 1) -> np.ndarray:
    """The nu x r_h matrix M of Hadamard-test overlaps."""
    if h.qubit_count != c.qubit_count:
        raise ValueError("Hamiltonian and circuit act on different qubit counts")
    psi, dstates = derivative_states(c, theta, workers=workers)
    return _m_from_states(psi, dstates, h)


def gradient_with_variance(m_elements: np.ndarray, h_coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and its single-round variance sum_l h_l^2 (1 - M_kl^2).

    One round measures every Hamiltonian term once.
    """
    h_coeffs = np.asarray(h_coeffs, dtype=float)
    m_elements = np.asarray(m_elements, dtype=float)
    if m_elements.ndim != 2 or m_elements.shape[1] != h_coeffs.shape[0]:
        raise ValueError(f"M has shape {m_elements.shape}, expected (nu, {h_coeffs.shape[0]})")
    g = -m_elements @ h_coeffs
    var = np.clip(1.0 - m_elements**2, 0.0, None) @ h_coeffs**2
    return g, _snap(var)


def _abc_from_states(psi: np.ndarray, dstates: np.ndarray):
    gram = (dstates.conj() @ dstates.T).real
    a = 0.5 * (gram + gram.T)
    z = dstates.conj() @ psi
    b, cc = z.real.copy(), z.imag.copy()
    f = a - np.outer(b, b) - np.outer(cc, cc)
    return a, b, cc, 0.5 * (f + f.T)


def fisher_abc(c: AnsatzCircuit, theta, workers: int = 1):
    """Return (A, B, C, F) for the pure-state ancilla protocol."""
    psi, dstates = derivative_states(c, theta, workers=workers)
    return _abc_from_states(psi, dstates)


def fisher_variance(a, b, c) -> np.ndarray:
    a, b, c = (np.asarray(x, dtype=float) for x in (a, b, c))
    one_b = 1.0 - b**2
    one_c = 1.0 - c**2
    var = (
        (1.0 - a**2)
        + np.outer(one_b, b**2)
        + np.outer(b**2, one_b)
        + np.outer(one_c, c**2)
        + np.outer(c**2, one_c)
    )
    return _snap(var)


def _snap(var: np.ndarray) -> np.ndarray:
    return np.where(var < VARIANCE_FLOOR, 0.0, var)


def fisher_swap_variance(fisher) -> np.ndarray:
    fisher = np.asarray(fisher, dtype=float)
    worst = float(np.max(np.abs(fisher), initial=0.0))
    if worst > 1.0 + 1e-9:
        raise InvariantViolation(f"|F_kl| = {worst} exceeds 1; swap-test variance undefined")
    return _snap(np.clip(1.0 - fisher**2, 0.0, 1.0))


def estimate_metric(
    c: AnsatzCircuit,
    theta,
    h: PauliSum,
    protocol: str = "pure_abc",
    workers: int = 1,
) -> MetricEstimate:
    """Exact Fisher matrix, gradient and all single-shot variances at ``theta``."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown Fisher protocol {protocol!r}")
    if h.qubit_count != c.qubit_count:
        raise ValueError("Hamiltonian and circuit act on different qubit counts")
    psi, dstates = derivative_states(c, theta, workers=workers)
    images = _pauli_images(psi, h)
    coeffs = h.coefficients
    m_el = (dstates.conj() @ images.T).imag
    energy = float(coeffs @ (images @ psi.conj()).real) if len(h) else 0.0
    a, b, cc, f = _abc_from_states(psi, dstates)
    g, var_g = gradient_with_variance(m_el, coeffs)
    var_f = fisher_variance(a, b, cc) if protocol == "pure_abc" else fisher_swap_variance(f)
    return MetricEstimate(
        fisher=f,
        grad=g,
        var_fisher=var_f,
        var_grad=var_g,
        protocol=protocol,
        a_overlap=a,
        b_overlap=b,
        c_overlap=cc,
        m_elements=m_el,
        h_coeffs=coeffs,
        energy=energy,
    )


def to_probability(x) -> np.ndarray:
    return np.clip((np.asarray(x, dtype=float) + 1.0) / 2.0, 0.0, 1.0)
