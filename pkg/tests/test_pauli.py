from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_hamiltonian, enumerate_terms
from qngcost.pauli import (
    PauliError,
    PauliSum,
    PauliTerm,
    build_hamiltonian,
    grouping_factor,
    qubitwise_commuting_groups,
    spc_of_hamiltonian,
)


def test_spc_single_z():
    assert spc_of_hamiltonian(PauliSum([("Z", 1.0)])) == 1.0


def test_spc_two_terms():
    assert spc_of_hamiltonian(PauliSum([("X", 0.5), ("Z", 0.5)])) == pytest.approx(0.5)


def test_spc_chain_n4():
    h = build_hamiltonian("chain", 4, omega=np.zeros(4))
    assert spc_of_hamiltonian(h) == pytest.approx(12.0)


@pytest.mark.parametrize("kind,count", [("chain", 16), ("quadratic", 22), ("cubic", 8)])
def test_term_counts_n4(kind, count):
    # zero fields drop the on-site terms, so count with unit fields
    h = build_hamiltonian(kind, 4, omega=np.ones(4))
    assert len(h) == count
    assert len(h) == enumerate_terms(kind, 4)


@pytest.mark.parametrize("kind", ["chain", "quadratic", "cubic"])
@pytest.mark.parametrize("n", [3, 5, 6])
def test_term_counts_match_enumeration(kind, n):
    assert len(build_hamiltonian(kind, n, omega=np.ones(n))) == enumerate_terms(kind, n)


def test_zero_fields_are_dropped():
    assert len(build_hamiltonian("chain", 4, omega=np.zeros(4))) == 12


def test_minimum_sizes():
    with pytest.raises(PauliError):
        build_hamiltonian("chain", 1)
    with pytest.raises(PauliError):
        build_hamiltonian("cubic", 2)
    with pytest.raises(PauliError):
        build_hamiltonian("ladder", 4)


def test_seeded_fields_in_range_and_reproducible():
    a = build_hamiltonian("chain", 6, seed=11)
    b = build_hamiltonian("chain", 6, seed=11)
    assert a == b
    onsite = [t.coefficient for t in a.terms if t.axes.count("I") == 5]
    assert len(onsite) == 6 and all(-1 <= c <= 1 for c in onsite)


@pytest.mark.parametrize("kind", ["chain", "quadratic", "cubic"])
@pytest.mark.parametrize("n", [3, 4])
def test_spc_matches_dense_trace(kind, n):
    h = build_hamiltonian(kind, n, seed=5)
    dense = dense_hamiltonian([(t.axes, t.coefficient) for t in h.terms], n)
    assert spc_of_hamiltonian(h) == pytest.approx(np.trace(dense @ dense).real / 2**n, abs=1e-10)


def _spc0(kind, n):
    return spc_of_hamiltonian(build_hamiltonian(kind, n, omega=np.zeros(n)))


@pytest.mark.parametrize("n", [4, 6, 8])
def test_spc_doubling_ratios_exact(n):
    # unit couplings, zero fields: spc counts terms
    assert _spc0("chain", 2 * n) / _spc0("chain", n) == pytest.approx(2.0)
    assert _spc0("quadratic", 2 * n) / _spc0("quadratic", n) == pytest.approx(2 * (2 * n - 1) / (n - 1))
    assert _spc0("cubic", 2 * n) / _spc0("cubic", n) == pytest.approx(4 * (2 * n - 1) / (n - 2))


@pytest.mark.parametrize("kind,ratio", [("chain", 2), ("quadratic", 4), ("cubic", 8)])
def test_spc_growth_rates_asymptotic(kind, ratio):
    assert _spc0(kind, 48) / _spc0(kind, 24) == pytest.approx(ratio, rel=0.1)


def test_merging_and_order():
    a = PauliSum([("ZI", 1.0), ("XX", 2.0), ("ZI", 0.5)])
    b = PauliSum([("XX", 2.0), ("ZI", 1.5)])
    assert a == b
    assert a.axes == ["XX", "ZI"]
    assert len(PauliSum([("XX", 1.0), ("XX", -1.0), ("ZZ", 1.0)])) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["XI", "IZ", "YY", "ZZ", "XZ"]), st.floats(-3, 3)), min_size=1, max_size=8), st.randoms())
def test_merge_is_order_independent(terms, rnd):
    shuffled = list(terms)
    rnd.shuffle(shuffled)
    assert PauliSum(terms, 2).axes == PauliSum(shuffled, 2).axes
    np.testing.assert_allclose(PauliSum(terms, 2).coefficients, PauliSum(shuffled, 2).coefficients, atol=1e-12)


def test_invalid_terms():
    with pytest.raises(PauliError):
        PauliTerm("XQ", 1.0)
    with pytest.raises(PauliError):
        PauliTerm("XZ", float("nan"))
    with pytest.raises(PauliError):
        PauliSum([("X", 1.0), ("XX", 1.0)])


def test_text_and_json_round_trip():
    h = build_hamiltonian("quadratic", 3, seed=2)
    assert PauliSum.from_text(h.to_text()) == h
    assert PauliSum.from_json(h.to_json()) == h
    assert PauliSum.from_text("1.0 XXII\n# comment\n-0.5 IZIZ\n").axes == ["IZIZ", "XXII"]


def test_text_errors_name_the_line():
    with pytest.raises(PauliError, match="line 2"):
        PauliSum.from_text("1.0 XX\nabc ZZ\n")


def test_grouping_examples():
    assert len(qubitwise_commuting_groups(PauliSum([("ZI", 1), ("IZ", 1), ("ZZ", 1)]))) == 1
    assert len(qubitwise_commuting_groups(PauliSum([("XI", 1), ("ZI", 1)]))) == 2


def test_chain_grouping_bounds():
    h = build_hamiltonian("chain", 4, seed=0)
    g = len(qubitwise_commuting_groups(h))
    assert 3 <= g <= len(h)
    assert grouping_factor(h, "per_term") == len(h)
    assert grouping_factor(h, "qubitwise") == g


def test_groups_partition_and_commute():
    h = build_hamiltonian("quadratic", 4, seed=1)
    groups = qubitwise_commuting_groups(h)
    assert sorted(i for g in groups for i in g) == list(range(len(h)))
    for g in groups:
        for i in g:
            for j in g:
                assert all(a == b or "I" in (a, b) for a, b in zip(h.terms[i].axes, h.terms[j].axes))
