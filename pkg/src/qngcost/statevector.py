"""Dense statevector kernels.

States are complex numpy arrays whose last axis has length 2^N; leading axes
are treated as a batch, so the same kernels evolve a stack of states at once.
Qubit 1 is the most significant bit of the basis index.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .pauli import PauliSum, validate_axes


class DimensionError(ValueError):
    pass


def qubit_count(state: np.ndarray) -> int:
    d = state.shape[-1]
    n = d.bit_length() - 1
    if d < 2 or 1 << n != d:
        raise DimensionError(f"state length {d} is not a power of two")
    return n


def zero_state(n: int) -> np.ndarray:
    s = np.zeros(2**n, dtype=complex)
    s[0] = 1.0
    return s


@lru_cache(maxsize=4096)
def _pauli_kernel(axes: str):
    n = len(axes)
    xmask = zmask = 0
    for i, s in enumerate(axes):
        bit = 1 << (n - 1 - i)
        if s in "XY":
            xmask |= bit
        if s in "ZY":
            zmask |= bit
    idx = np.arange(2**n, dtype=np.int64)
    src = idx ^ xmask
    parity = (np.bitwise_count(src & zmask) & 1).astype(np.int64)
    phase = (1j) ** axes.count("Y") * (1 - 2 * parity).astype(complex)
    phase.setflags(write=False)
    if xmask == 0:
        return None, phase
    src.setflags(write=False)
    return src, phase


def _check(state: np.ndarray, axes: str) -> str:
    axes = validate_axes(axes)
    if state.shape[-1] != 2 ** len(axes):
        raise DimensionError(f"Pauli {axes} acts on {len(axes)} qubits, state has length {state.shape[-1]}")
    return axes


def apply_pauli_string(state: np.ndarray, axes: str) -> np.ndarray:
    """Return P|s> for the tensor-product Pauli ``axes``; the input is not modified."""
    src, phase = _pauli_kernel(_check(state, axes))
    if src is None:
        return phase * state
    return phase * state[..., src]


def apply_pauli_rotation(state: np.ndarray, axes: str, theta: float) -> np.ndarray:
    """Return exp(-i theta P / 2)|s> = cos(theta/2)|s> - i sin(theta/2) P|s>."""
    axes = _check(state, axes)
    if set(axes) == {"I"}:
        raise ValueError("rotation generator must act non-trivially on some qubit")
    return np.cos(theta / 2) * state - 1j * np.sin(theta / 2) * apply_pauli_string(state, axes)


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def expectation(state: np.ndarray, h: PauliSum) -> float:
    if state.shape[-1] != 2**h.qubit_count:
        raise DimensionError("Hamiltonian and state dimensions differ")
    total = 0.0
    for t in h.terms:
        total += t.coefficient * np.vdot(state, apply_pauli_string(state, t.axes)).real
    return float(total)


def norm(state: np.ndarray) -> float:
    return float(np.linalg.norm(state))
