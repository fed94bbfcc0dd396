"""Pauli strings, weighted Pauli sums and the benchmark spin Hamiltonians."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PAULI_SYMBOLS = "IXYZ"
DROP_TOL = 1e-12

_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class PauliError(ValueError):
    pass


def validate_axes(axes: str, n: int | None = None) -> str:
    axes = axes.upper()
    if not axes or any(c not in PAULI_SYMBOLS for c in axes):
        raise PauliError(f"invalid Pauli string {axes!r}")
    if n is not None and len(axes) != n:
        raise PauliError(f"Pauli string {axes!r} has length {len(axes)}, expected {n}")
    return axes


def place(n: int, ops: dict[int, str]) -> str:
    """Build an axes string of length ``n`` from a {qubit: symbol} map (0-based)."""
    chars = ["I"] * n
    for q, s in ops.items():
        chars[q] = s
    return "".join(chars)


@dataclass(frozen=True)
class PauliTerm:
    axes: str
    coefficient: float

    def __post_init__(self):
        object.__setattr__(self, "axes", validate_axes(self.axes))
        c = float(self.coefficient)
        if not np.isfinite(c):
            raise PauliError(f"non-finite coefficient for {self.axes}")
        object.__setattr__(self, "coefficient", c)

    @property
    def qubit_count(self) -> int:
        return len(self.axes)

    def is_identity(self) -> bool:
        return set(self.axes) == {"I"}


class PauliSum:
    """Real-weighted sum of Pauli strings over ``qubit_count`` qubits.

    Terms with identical axes are merged, merged coefficients below 1e-12 in
    magnitude are dropped and the remaining terms are kept in lexicographic
    order of their axes, so equal operators always compare and serialize equal.
    """

    def __init__(self, terms: Iterable[PauliTerm | tuple[str, float]], qubit_count: int | None = None):
        merged: dict[str, float] = {}
        for t in terms:
            if not isinstance(t, PauliTerm):
                t = PauliTerm(*t)
            if qubit_count is None:
                qubit_count = t.qubit_count
            validate_axes(t.axes, qubit_count)
            merged[t.axes] = merged.get(t.axes, 0.0) + t.coefficient
        if qubit_count is None or qubit_count < 1:
            raise PauliError("qubit_count must be given for an empty sum")
        self.qubit_count = int(qubit_count)
        self.terms: tuple[PauliTerm, ...] = tuple(
            PauliTerm(p, c) for p, c in sorted(merged.items()) if abs(c) >= DROP_TOL
        )

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __eq__(self, other):
        return (
            isinstance(other, PauliSum)
            and self.qubit_count == other.qubit_count
            and self.terms == other.terms
        )

    def __repr__(self):
        return f"PauliSum(n={self.qubit_count}, r_h={len(self.terms)})"

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([t.coefficient for t in self.terms], dtype=float)

    @property
    def axes(self) -> list[str]:
        return [t.axes for t in self.terms]

    def to_dense(self) -> np.ndarray:
        """Dense 2^N x 2^N matrix; qubit 1 is the most significant tensor factor."""
        d = 2**self.qubit_count
        out = np.zeros((d, d), dtype=complex)
        for t in self.terms:
            out += t.coefficient * pauli_matrix(t.axes)
        return out

    def to_text(self) -> str:
        return "".join(f"{t.coefficient!r} {t.axes}\n" for t in self.terms)

    @classmethod
    def from_text(cls, text: str) -> "PauliSum":
        terms = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise PauliError(f"line {lineno}: expected '<coeff> <axes>', got {line!r}")
            try:
                c = float(parts[0])
            except ValueError:
                raise PauliError(f"line {lineno}: bad coefficient {parts[0]!r}") from None
            terms.append(PauliTerm(parts[1], c))
        if not terms:
            raise PauliError("no terms found")
        return cls(terms)

    def to_json(self) -> dict:
        return {"n": self.qubit_count, "terms": [{"c": t.coefficient, "p": t.axes} for t in self.terms]}

    @classmethod
    def from_json(cls, obj: dict | str) -> "PauliSum":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls([PauliTerm(t["p"], t["c"]) for t in obj["terms"]], int(obj["n"]))


def pauli_matrix(axes: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for s in validate_axes(axes):
        out = np.kron(out, _MATRICES[s])
    return out


def spc_of_hamiltonian(h: PauliSum) -> float:
    """Average squared singular value Tr[H^2]/2^N, i.e. the sum of squared Pauli weights."""
    return float(np.sum(h.coefficients**2))


def _draw_omega(n: int, omega, seed) -> np.ndarray:
    if omega is not None:
        omega = np.asarray(omega, dtype=float)
        if omega.shape != (n,):
            raise PauliError(f"omega must have length {n}, got shape {omega.shape}")
        return omega
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=n)


def build_hamiltonian(
    kind: str,
    n: int,
    j: float = 1.0,
    omega: Sequence[float] | None = None,
    seed: int | None = None,
) -> PauliSum:
    """Benchmark Hamiltonians with on-site Z fields ``omega``.

    ``chain``: periodic Heisenberg ring, XX+YY+ZZ on (i, i+1) plus the (1, N) wrap.
    ``quadratic``: XX+YY+ZZ between all pairs.
    ``cubic``: X_k Y_l Z_m for every triple k < l < m.

    Fields are drawn uniformly from [-1, 1] with ``seed`` when ``omega`` is None.
    """
    minimum = {"chain": 2, "quadratic": 2, "cubic": 3}
    if kind not in minimum:
        raise PauliError(f"unknown Hamiltonian kind {kind!r}")
    if n < minimum[kind]:
        raise PauliError(f"{kind} Hamiltonian needs n >= {minimum[kind]}, got {n}")
    w = _draw_omega(n, omega, seed)
    terms: list[PauliTerm] = []
    if kind == "chain":
        pairs = [(i, i + 1) for i in range(n - 1)] + [(0, n - 1)]
    elif kind == "quadratic":
        pairs = list(itertools.combinations(range(n), 2))
    else:
        pairs = []
        for k, l, m in itertools.combinations(range(n), 3):
            terms.append(PauliTerm(place(n, {k: "X", l: "Y", m: "Z"}), j))
    for a, b in pairs:
        for s in "XYZ":
            terms.append(PauliTerm(place(n, {a: s, b: s}), j))
    for i in range(n):
        terms.append(PauliTerm(place(n, {i: "Z"}), w[i]))
    return PauliSum(terms, n)


def qubitwise_commute(p: str, q: str) -> bool:
    return all(a == b or a == "I" or b == "I" for a, b in zip(p, q))


def qubitwise_commuting_groups(h: PauliSum) -> list[list[int]]:
    """Greedy first-fit partition of term indices into qubit-wise commuting groups."""
    groups: list[list[int]] = []
    for idx, term in enumerate(h.terms):
        for group in groups:
            if all(qubitwise_commute(term.axes, h.terms[i].axes) for i in group):
                group.append(idx)
                break
        else:
            groups.append([idx])
    return groups


def grouping_factor(h: PauliSum, strategy: str = "per_term") -> int:
    """Number of separately measured settings, reported as the constant f_g."""
    if strategy == "per_term":
        return max(len(h), 1)
    if strategy == "qubitwise":
        return max(len(qubitwise_commuting_groups(h)), 1)
    raise PauliError(f"unknown grouping strategy {strategy!r}")
