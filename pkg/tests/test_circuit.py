import json

import numpy as np
import pytest

from cvcluster.circuit import (
    CircuitParams,
    boundary_modes,
    build_2d_cluster_z,
    cluster_rotation_set,
    cylinder_z,
    mode_index,
    quadrature_transfer,
    z_covariance_blocks,
)
from cvcluster.exceptions import InvalidParameter
from cvcluster.graph import h_graph_to_cluster, is_bipartite, is_self_inverse


def h_graph(z, r):
    return (np.cosh(2 * r) * np.eye(z.dim) - z.u) / np.sinh(2 * r)


@pytest.mark.parametrize("n,k", [(2, 8), (4, 12), (12, 26)])
def test_cylinder_h_graph_is_self_inverse_and_bipartite(n, k):
    r = 0.9
    z = cylinder_z(n, k, r, r)
    g = h_graph(z, r)
    assert np.allclose(z.v, 0)
    assert is_self_inverse(g, tol=1e-9)
    assert is_bipartite(g).bipartite


def test_odd_circumference_has_odd_cycle():
    coloring = is_bipartite(cylinder_z(5, 12, 1.0, 1.0).u)
    assert not coloring.bipartite
    assert len(coloring.odd_cycle) % 2 == 1
    with pytest.raises(InvalidParameter, match="bipartite"):
        CircuitParams(n_circumference=5, n_temporal=12)


def test_cluster_has_tanh_edges_and_sech_loops():
    r = 0.8
    z = cylinder_z(4, 12, r, r)
    c = h_graph_to_cluster(z, cluster_rotation_set(12))
    assert np.allclose(np.abs(c.v), np.tanh(2 * r) * np.abs(h_graph(z, r)), atol=1e-12)
    assert np.allclose(c.u, np.eye(z.dim) / np.cosh(2 * r), atol=1e-12)


def test_h_graph_weights_and_degree():
    z = cylinder_z(12, 30, 1.0, 1.0)
    g = h_graph(z, 1.0)
    weights = np.unique(np.round(np.abs(g[np.abs(g) > 1e-9]), 12))
    assert np.allclose(weights, [0.25, 0.5])
    interior = ~boundary_modes(12, 30)
    deg = np.count_nonzero(np.abs(g) > 1e-9, axis=1)
    for k in np.flatnonzero(interior):
        for ch in "AB":
            i = mode_index(ch, k)
            assert deg[i] == 10
            # two dk = +-1 edges of weight 1/2, eight dk = +-(N +- 1) edges of weight 1/4
            assert np.sum(g[i] ** 2) == pytest.approx(1.0)


@pytest.mark.parametrize("r_a,r_b", [(0.7, 0.9), (1.2, 0.3)])
def test_closed_form_transfer_matches_symplectic_circuit(r_a, r_b):
    p = CircuitParams(n_circumference=4, n_temporal=12, r_a=r_a, r_b=r_b)
    cov, outs = quadrature_transfer(p).covariance()
    assert np.max(np.abs(cov - z_covariance_blocks(build_2d_cluster_z(p, "x"), outs))) < 1e-10


def test_transfer_rows_mix_squeezed_and_antisqueezed():
    p = CircuitParams(n_circumference=4, n_temporal=12, r_a=1.0, r_b=1.0)
    tm = quadrature_transfer(p)
    row = tm.rows[("A", "x", 10)]
    assert len(row) == 8
    mags = sorted({round(abs(v), 12) for v in row.values()})
    assert np.allclose(mags, [np.exp(-1) / np.sqrt(8), np.exp(1) / np.sqrt(8)])
    assert tm.shifted(3).rows[("A", "x", 13)][("A", "x", 13)] == row[("A", "x", 10)]


def test_params_validation():
    with pytest.raises(InvalidParameter):
        CircuitParams(n_circumference=12, n_temporal=20)
    with pytest.raises(InvalidParameter):
        CircuitParams(eta_a=0.0)
    with pytest.raises(InvalidParameter):
        CircuitParams(epsilon_a=2.0, gamma_a=1.0, epsilon_b=1.0, gamma_b=2.0)
    with pytest.raises(InvalidParameter):
        CircuitParams(epsilon_a=1.0)
    with pytest.raises(InvalidParameter):
        CircuitParams(sigma_b=-0.1)


def test_config_round_trip(tmp_path):
    p = CircuitParams(r_a=0.5, epsilon_a=3e7, gamma_a=5e7, epsilon_b=3e7, gamma_b=5e7, electronic_noise_db=-20)
    doc = p.to_config()
    assert doc["tau_ns"] == pytest.approx(247)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    back = CircuitParams.load(path)
    assert back.n_circumference == p.n_circumference and back.r_a == p.r_a
    assert back.epsilon_a == pytest.approx(p.epsilon_a, rel=1e-15)
    with pytest.raises(InvalidParameter):
        CircuitParams.from_config({"bogus": 1})
