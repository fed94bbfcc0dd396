"""Layered Pauli-rotation ansatz circuits and their derivative states."""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .pauli import place, validate_axes
from .statevector import apply_pauli_rotation, apply_pauli_string, zero_state


class AnsatzError(ValueError):
    pass


@dataclass(frozen=True)
class GateSpec:
    """One gate exp(-i theta_k P_k / 2); ``index`` is the 0-based parameter slot."""

    generator: str
    index: int

    def __post_init__(self):
        axes = validate_axes(self.generator)
        if set(axes) == {"I"}:
            raise AnsatzError("gate generator must be non-identity")
        object.__setattr__(self, "generator", axes)


@dataclass(frozen=True)
class AnsatzCircuit:
    gates: tuple[GateSpec, ...]
    qubit_count: int

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for k, g in enumerate(self.gates):
            if g.index != k:
                raise AnsatzError(f"gate {k} carries parameter index {g.index}; indices must follow gate order")
            if len(g.generator) != self.qubit_count:
                raise AnsatzError(f"gate {k} acts on {len(g.generator)} qubits, circuit has {self.qubit_count}")

    @property
    def parameter_count(self) -> int:
        return len(self.gates)

    @property
    def generators(self) -> list[str]:
        return [g.generator for g in self.gates]

    @classmethod
    def from_generators(cls, generators, qubit_count: int | None = None) -> "AnsatzCircuit":
        generators = list(generators)
        if qubit_count is None:
            if not generators:
                raise AnsatzError("qubit_count required for an empty circuit")
            qubit_count = len(generators[0])
        return cls(tuple(GateSpec(p, k) for k, p in enumerate(generators)), qubit_count)

    def to_json(self) -> dict:
        # idx is 1-based in the serialized form
        return {"n": self.qubit_count, "gates": [{"p": g.generator, "idx": g.index + 1} for g in self.gates]}

    @classmethod
    def from_json(cls, obj: dict | str) -> "AnsatzCircuit":
        if isinstance(obj, str):
            obj = json.loads(obj)
        gates = sorted(obj["gates"], key=lambda g: g["idx"])
        return cls(tuple(GateSpec(g["p"], int(g["idx"]) - 1) for g in gates), int(obj["n"]))


def parse_pattern(pattern) -> list[str]:
    """Accept "B1B2B2", "B1 B2 B2" or a sequence of block names."""
    if isinstance(pattern, str):
        compact = re.sub(r"[\s,]+", "", pattern.upper())
        blocks = re.findall(r"B\d+|.", compact)
    else:
        blocks = [str(b).upper() for b in pattern]
    for b in blocks:
        if b not in ("B1", "B2"):
            raise AnsatzError(f"unknown block {b!r}; expected B1 or B2")
    return blocks


def build_layered_ansatz(n: int, pattern="B1B2B2") -> AnsatzCircuit:
    """Blocks: B1 = X rotation on every qubit; B2 = ZZ on the ring, then Y, then X rotations."""
    if n < 2:
        raise AnsatzError("layered ansatz needs n >= 2")
    gens: list[str] = []
    for block in parse_pattern(pattern):
        if block == "B2":
            for i in range(n):
                gens.append(place(n, {i: "Z", (i + 1) % n: "Z"}))
            gens.extend(place(n, {i: "Y"}) for i in range(n))
        gens.extend(place(n, {i: "X"}) for i in range(n))
    return AnsatzCircuit.from_generators(gens, n)


def _check_theta(c: AnsatzCircuit, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (c.parameter_count,):
        raise AnsatzError(f"expected {c.parameter_count} parameters, got shape {theta.shape}")
    return theta


def prepare_state(c: AnsatzCircuit, theta) -> np.ndarray:
    theta = _check_theta(c, theta)
    s = zero_state(c.qubit_count)
    for g, t in zip(c.gates, theta):
        s = apply_pauli_rotation(s, g.generator, t)
    return s


def derivative_state(c: AnsatzCircuit, theta, k: int) -> np.ndarray:
    """D_k|0> = U_nu ... P_k U_k ... U_1 |0> for the 0-based parameter ``k``."""
    theta = _check_theta(c, theta)
    if not 0 <= k < c.parameter_count:
        raise AnsatzError(f"parameter index {k} out of range")
    s = zero_state(c.qubit_count)
    for j, (g, t) in enumerate(zip(c.gates, theta)):
        s = apply_pauli_rotation(s, g.generator, t)
        if j == k:
            s = apply_pauli_string(s, g.generator)
    return s


def _evolve_block(c: AnsatzCircuit, theta: np.ndarray, forward: np.ndarray, lo: int, hi: int) -> np.ndarray:
    rows = np.empty((hi - lo, forward.shape[1]), dtype=complex)
    for j in range(lo, c.parameter_count):
        started = min(j, hi) - lo
        if started > 0:
            rows[:started] = apply_pauli_rotation(rows[:started], c.gates[j].generator, theta[j])
        if j < hi:
            rows[j - lo] = apply_pauli_string(forward[j], c.gates[j].generator)
    return rows


def derivative_states(c: AnsatzCircuit, theta, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Return (|psi>, D) with D[k] = D_k|0> for every parameter.

    Derivative rows are split into contiguous blocks evolved independently, so the
    result is identical for any ``workers`` value.
    """
    theta = _check_theta(c, theta)
    nu = c.parameter_count
    forward = np.empty((nu, 2**c.qubit_count), dtype=complex)
    s = zero_state(c.qubit_count)
    for k, (g, t) in enumerate(zip(c.gates, theta)):
        s = apply_pauli_rotation(s, g.generator, t)
        forward[k] = s
    if nu == 0:
        return s, forward
    workers = max(1, min(int(workers), nu))
    bounds = np.linspace(0, nu, workers + 1).astype(int)
    blocks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    if len(blocks) == 1:
        parts = [_evolve_block(c, theta, forward, 0, nu)]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            parts = list(pool.map(lambda b: _evolve_block(c, theta, forward, *b), blocks))
    return s, np.concatenate(parts, axis=0)
