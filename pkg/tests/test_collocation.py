import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import FROZEN, q_matrix_oracle, radau_nodes_oracle
from paralpha.collocation import (
    MAX_NODES,
    build_tableau,
    radau_nodes,
    radau_poly,
    radau_poly_exact,
    radau_tableau,
)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_nodes_frozen(m):
    np.testing.assert_allclose(radau_nodes(m), FROZEN["radau_nodes"][m], rtol=0, atol=1e-15)


@pytest.mark.parametrize("m", range(2, MAX_NODES + 1))
def test_nodes_match_legendre_roots(m):
    nodes = radau_nodes(m)
    assert nodes[-1] == 1.0
    assert np.all(np.diff(nodes) > 0)
    np.testing.assert_allclose(nodes, radau_nodes_oracle(m), atol=1e-13)


@pytest.mark.parametrize("m", [0, -1, MAX_NODES + 1])
def test_nodes_reject_bad_m(m):
    with pytest.raises(ValueError):
        radau_nodes(m)


def test_q_frozen_m2():
    np.testing.assert_allclose(radau_tableau(2).q_matrix, FROZEN["q_m2"], atol=1e-15)


@pytest.mark.parametrize("m", [2, 3, 5, 7])
def test_q_matches_quadrature(m):
    tab = radau_tableau(m)
    np.testing.assert_allclose(tab.q_matrix, q_matrix_oracle(tab.nodes), atol=1e-12)


@pytest.mark.parametrize("m", [2, 3])
def test_node_poly_frozen(m):
    np.testing.assert_allclose(radau_poly(m), FROZEN["w_poly"][m], atol=1e-15)


@pytest.mark.parametrize("m", range(1, 7))
def test_node_poly_roots_are_nodes(m):
    coeffs = radau_poly(m)
    assert radau_poly_exact(m)[-1] == 1
    np.testing.assert_allclose(np.polynomial.polynomial.polyval(radau_nodes(m), coeffs), 0.0, atol=1e-12)


@pytest.mark.parametrize("m", range(1, 8))
def test_q_integrates_polynomials_exactly(m):
    # row a of Q applied to samples of t^j gives t_a^{j+1}/(j+1) for j < M
    tab = radau_tableau(m)
    for j in range(m):
        np.testing.assert_allclose(tab.q_matrix @ tab.nodes**j, tab.nodes ** (j + 1) / (j + 1), atol=1e-13)


def test_build_tableau_validation():
    for bad in ([], [0.5, 0.5], [0.6, 0.2], [0.0, 1.0], [0.5, 1.5]):
        with pytest.raises(ValueError):
            build_tableau(bad)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=5, unique=True))
def test_q_row_sums_are_nodes(pts):
    nodes = np.sort(pts)
    if np.any(np.diff(nodes) < 1e-2):
        return
    tab = build_tableau(nodes)
    np.testing.assert_allclose(tab.q_matrix.sum(axis=1), nodes, atol=1e-10)


def test_tableau_json_roundtrip():
    import json

    data = json.loads(radau_tableau(3).to_json())
    assert data["m_nodes"] == 3
    np.testing.assert_allclose(data["q_matrix"], radau_tableau(3).q_matrix)
