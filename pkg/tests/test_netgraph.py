import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gplight.netgraph import (
    RoadGraph,
    RoadnetError,
    build_graph,
    edge_weights,
    normalized_laplacian,
    power_iteration,
    scale_laplacian,
    scale_laplacian_matrix,
    standard_intersection,
)
from gplight.scenarios import generate_scenario


def one_node():
    return {"intersections": [standard_intersection("a", 0, 0, dict.fromkeys("EWSN", 300.0))], "links": []}


def pair(dist=300.0):
    lengths = dict.fromkeys("EWSN", 300.0)
    return {
        "intersections": [standard_intersection("a", 0, 0, lengths), standard_intersection("b", dist, 0, lengths)],
        "links": [{"from": "a", "to": "b"}],
    }


def test_single_intersection():
    g = build_graph(one_node())
    assert g.n == 1
    np.testing.assert_array_equal(g.weights, [[0.0]])
    assert len(g.nodes[0].lanes) == 12


def test_grid16_degrees():
    g = build_graph(generate_scenario("grid16")[0])
    assert g.n == 16
    deg = g.edges.sum(axis=1).reshape(4, 4)
    assert (deg[1:3, 1:3] == 4).all()
    assert deg[0, 0] == 2 and deg[0, 1] == 3


def test_grid48_size_and_lane_lengths():
    rn = generate_scenario("grid48")[0]
    g = build_graph(rn)
    assert g.n == 48
    node = g.nodes[0]
    assert node.lane_for("WS").length_m == 350.0
    assert node.lane_for("NS").length_m == 100.0


def test_accepts_json_text_and_path(tmp_path):
    text = json.dumps(pair())
    assert build_graph(text).n == 2
    p = tmp_path / "roadnet.json"
    p.write_text(text)
    assert build_graph(p).n == 2
    assert build_graph(str(p)).n == 2


def test_unknown_fields_warn(caplog):
    rn = one_node()
    rn["intersections"][0]["colour"] = "red"
    rn["comment"] = "x"
    with caplog.at_level(logging.WARNING):
        build_graph(rn)
    assert "colour" in caplog.text and "comment" in caplog.text


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda rn: rn["intersections"][0].__setitem__("phases", [["WS", "NS"], ["NS", "SS"], ["WL", "EL"], ["NL", "SL"]]), "conflicting"),
        (lambda rn: rn["intersections"][0].__setitem__("phases", [["WS", "ES"], ["NS", "SS"], ["WL", "EL"]]), "exactly 4"),
        (lambda rn: rn["intersections"][0].__setitem__("phases", [["WS", "WR"], ["NS", "SS"], ["WL", "EL"], ["NL", "SL"]]), "right turn"),
        (lambda rn: rn["intersections"][0]["lanes"].pop(), "one incoming lane per movement"),
        (lambda rn: rn["intersections"][0].pop("x"), "missing"),
        (lambda rn: rn["intersections"][0]["lanes"][0].__setitem__("turn", "U"), "approach/turn"),
    ],
)
def test_malformed_roadnets_rejected(mutate, message):
    rn = one_node()
    mutate(rn)
    with pytest.raises(RoadnetError, match=message):
        build_graph(rn)


def test_disconnected_node_rejected():
    rn = pair()
    rn["links"] = []
    with pytest.raises(RoadnetError, match="disconnected"):
        build_graph(rn)


def test_link_to_unknown_node_rejected():
    rn = pair()
    rn["links"].append({"from": "a", "to": "zz"})
    with pytest.raises(RoadnetError, match="unknown"):
        build_graph(rn)


def test_edge_weight_examples():
    g = build_graph(pair(300.0))
    w = edge_weights(g, sigma=300.0)
    assert w[0, 1] == pytest.approx(math.exp(-1))
    assert w[1, 0] == w[0, 1]
    assert w[0, 0] == 0.0
    g.positions[1] = g.positions[0]
    assert edge_weights(g, sigma=300.0)[0, 1] == 1.0
    g.edges[:] = 0
    assert edge_weights(g, sigma=300.0)[0, 1] == 0.0


def test_edge_weight_cutoff_and_sigma():
    g = build_graph(pair(300.0))
    assert edge_weights(g, sigma=300.0, cutoff=200.0)[0, 1] == 0.0
    with pytest.raises(ValueError):
        edge_weights(g, sigma=0.0)


def test_edge_weights_permutation_equivariant():
    g = build_graph(generate_scenario("grid16")[0])
    perm = np.random.default_rng(3).permutation(g.n)
    P = np.eye(g.n)[perm]
    permuted = RoadGraph([g.nodes[i] for i in perm], g.edges[np.ix_(perm, perm)], np.zeros_like(g.weights), g.positions[perm])
    np.testing.assert_allclose(P @ edge_weights(g, 250.0) @ P.T, edge_weights(permuted, 250.0))


def test_laplacian_two_nodes():
    lap = normalized_laplacian(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(lap.L, [[1, -1], [-1, 1]])
    assert lap.lambda_max == pytest.approx(2.0, rel=1e-6)
    assert np.linalg.eigvalsh(lap.L).max() == pytest.approx(2.0)
    np.testing.assert_allclose(scale_laplacian(lap), [[0, -1], [-1, 0]], atol=1e-6)


def test_laplacian_single_node_convention():
    lap = normalized_laplacian(np.zeros((1, 1)))
    np.testing.assert_array_equal(lap.L, [[0.0]])
    assert lap.lambda_max == 2.0
    np.testing.assert_array_equal(lap.L_scaled, [[-1.0]])


def test_laplacian_triangle():
    w = np.ones((3, 3)) - np.eye(3)
    lap = normalized_laplacian(w)
    np.testing.assert_allclose(np.diag(lap.L), 1.0)
    off = lap.L[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, -0.5)


def test_isolated_nodes_scale_to_minus_identity():
    lap = normalized_laplacian(np.zeros((3, 3)))
    np.testing.assert_array_equal(lap.L_scaled, -np.eye(3))


def test_negative_weight_and_bad_lambda():
    with pytest.raises(ValueError):
        normalized_laplacian(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(ValueError):
        scale_laplacian_matrix(np.eye(2), 0.0)


@st.composite
def weighted_graphs(draw, max_n=8):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    w = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
    w = np.triu(w, 1)
    return w + w.T


@settings(max_examples=60, deadline=None)
@given(weighted_graphs())
def test_laplacian_properties(w):
    lap = normalized_laplacian(w)
    assert np.abs(lap.L - lap.L.T).max() == 0.0
    eig = np.linalg.eigvalsh(lap.L)
    assert eig.min() >= -1e-9
    assert eig.max() <= 2 + 1e-9
    eig_scaled = np.linalg.eigvalsh(lap.L_scaled)
    assert eig_scaled.min() >= -1 - 1e-9
    assert eig_scaled.max() <= 1 + 1e-6


@settings(max_examples=60, deadline=None)
@given(weighted_graphs(max_n=16))
def test_power_iteration_matches_dense(w):
    lap = normalized_laplacian(w)
    dense = np.linalg.eigvalsh(lap.L).max()
    if dense > 1e-12:
        assert abs(lap.lambda_max - dense) <= 1e-4 * dense


def test_power_iteration_zero_matrix():
    assert power_iteration(np.zeros((3, 3))) == 0.0


def test_graph_hash_stable_and_sensitive():
    a = build_graph(pair(300.0))
    b = build_graph(pair(300.0))
    assert a.graph_hash() == b.graph_hash()
    c = build_graph(pair(300.0), sigma=100.0)
    assert c.graph_hash() != a.graph_hash()
