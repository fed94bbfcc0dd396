from __future__ import annotations

import numpy as np
import pytest

from oracles import dense_derivative_state, dense_state
from qngcost.ansatz import (
    AnsatzCircuit,
    AnsatzError,
    GateSpec,
    build_layered_ansatz,
    derivative_state,
    derivative_states,
    parse_pattern,
    prepare_state,
)
from qngcost.statevector import norm


@pytest.mark.parametrize("n,pattern,nu", [(12, "B1B2B2", 84), (4, "B1", 4), (8, "B1B2B2", 56), (2, "B2", 6)])
def test_parameter_counts(n, pattern, nu):
    assert build_layered_ansatz(n, pattern).parameter_count == nu


def test_block_layout():
    c = build_layered_ansatz(3, "B1B2")
    assert c.generators == ["XII", "IXI", "IIX", "ZZI", "IZZ", "ZIZ", "YII", "IYI", "IIY", "XII", "IXI", "IIX"]


def test_pattern_parsing():
    assert parse_pattern("B1 B2,B2") == ["B1", "B2", "B2"]
    assert parse_pattern(["b1", "B2"]) == ["B1", "B2"]
    with pytest.raises(AnsatzError):
        parse_pattern("B1B3")
    with pytest.raises(AnsatzError):
        build_layered_ansatz(1, "B1")


def test_gate_validation():
    with pytest.raises(AnsatzError):
        GateSpec("II", 0)
    with pytest.raises(AnsatzError):
        AnsatzCircuit((GateSpec("XI", 1),), 2)
    with pytest.raises(AnsatzError):
        AnsatzCircuit((GateSpec("X", 0),), 2)


def test_json_round_trip_is_one_based():
    c = build_layered_ansatz(3, "B1B2")
    obj = c.to_json()
    assert obj["gates"][0]["idx"] == 1 and obj["gates"][-1]["idx"] == c.parameter_count
    assert AnsatzCircuit.from_json(obj) == c


def test_prepare_examples():
    c = build_layered_ansatz(3, "B1B2B2")
    s = prepare_state(c, np.zeros(c.parameter_count))
    np.testing.assert_allclose(s, np.eye(8)[0])
    one = AnsatzCircuit.from_generators(["X"])
    np.testing.assert_allclose(prepare_state(one, [np.pi]), [0, -1j], atol=1e-15)
    with pytest.raises(AnsatzError):
        prepare_state(c, np.zeros(3))


@pytest.mark.parametrize("n", [2, 3])
def test_prepare_matches_dense(n):
    c = build_layered_ansatz(n, "B1B2B2")
    theta = np.random.default_rng(n).uniform(0, 2 * np.pi, c.parameter_count)
    s = prepare_state(c, theta)
    np.testing.assert_allclose(s, dense_state(c.generators, theta, n), atol=1e-12)
    assert norm(s) == pytest.approx(1.0, abs=1e-10)


def test_derivative_state_examples():
    one = AnsatzCircuit.from_generators(["X"])
    np.testing.assert_allclose(derivative_state(one, [0.0], 0), [0, 1])
    with pytest.raises(AnsatzError):
        derivative_state(one, [0.0], 1)


@pytest.mark.parametrize("n", [2, 3])
def test_derivative_states_match_dense_and_finite_difference(n):
    c = build_layered_ansatz(n, "B1B2B2")
    theta = np.random.default_rng(10 + n).uniform(0, 2 * np.pi, c.parameter_count)
    psi, d = derivative_states(c, theta)
    np.testing.assert_allclose(psi, prepare_state(c, theta), atol=1e-13)
    delta = 1e-5
    for k in range(c.parameter_count):
        np.testing.assert_allclose(d[k], dense_derivative_state(c.generators, theta, k, n), atol=1e-12)
        np.testing.assert_allclose(d[k], derivative_state(c, theta, k), atol=1e-13)
        assert norm(d[k]) == pytest.approx(1.0, abs=1e-10)
        e = np.zeros_like(theta)
        e[k] = delta
        fd = (prepare_state(c, theta + e) - prepare_state(c, theta - e)) / (2 * delta)
        assert np.linalg.norm(fd - (-0.5j) * d[k]) <= 1e-6


@pytest.mark.parametrize("workers", [2, 3, 8, 100])
def test_derivative_states_identical_for_any_worker_count(workers):
    c = build_layered_ansatz(4, "B1B2B2")
    theta = np.random.default_rng(0).uniform(0, 2 * np.pi, c.parameter_count)
    _, d1 = derivative_states(c, theta, workers=1)
    _, dw = derivative_states(c, theta, workers=workers)
    assert np.array_equal(d1, dw)
