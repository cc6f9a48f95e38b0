import networkx as nx
import numpy as np
import pytest

from cvcluster.graph import EDGE_THRESHOLD, is_bipartite
from cvcluster.unfold import (
    column_step,
    fourier_nodes,
    ideal_cluster_graph,
    interior_degrees,
    sublattice,
    unfold,
    wrapping_edges,
)

N, K = 12, 60


@pytest.fixture(scope="module")
def stages():
    return unfold(ideal_cluster_graph(N, K), N)


def to_nx(g):
    out = nx.Graph()
    out.add_nodes_from(g.labels)
    rows, cols = np.nonzero(np.triu(np.abs(g.adjacency) > EDGE_THRESHOLD, 1))
    out.add_edges_from((g.labels[i], g.labels[j]) for i, j in zip(rows, cols))
    return out


def windings(g):
    """Winding number of every cycle in a networkx cycle basis."""
    out = []
    for cyc in nx.cycle_basis(to_nx(g)):
        steps = sum(column_step(b[1] - a[1], N) for a, b in zip(cyc, cyc[1:] + cyc[:1]))
        assert steps % N == 0
        out.append(steps // N)
    return out


def test_ideal_cluster_weights():
    g = ideal_cluster_graph(N, K)
    w = np.unique(np.round(np.abs(g.adjacency[np.abs(g.adjacency) > EDGE_THRESHOLD]), 12))
    assert np.allclose(w, [0.25, 0.5])
    # finite r rescales to the same ideal graph
    assert np.allclose(ideal_cluster_graph(N, K, r=0.6).adjacency, g.adjacency, atol=1e-12)


def test_stage_sizes(stages):
    assert [stages[s].dim for s in "ABCD"] == [120, 110, 54, 27]
    assert all(lab[0] == "A" for lab in stages["D"].labels)
    assert all(sublattice(lab[1], N) == 0 and lab[1] % N for lab in stages["D"].labels)


def test_stage_a_wraps_and_stage_d_does_not(stages):
    assert any(w != 0 for w in windings(stages["A"]))
    assert wrapping_edges(stages["A"], N)
    assert all(w == 0 for w in windings(stages["D"]))
    assert wrapping_edges(stages["D"], N) == []
    assert wrapping_edges(stages["B"], N) == []


def test_stage_d_is_a_square_lattice(stages):
    d = stages["D"]
    assert d.degrees().max() <= 4
    assert np.all(interior_degrees(d, N) <= 4)
    # only nodes beside the cut seam (columns 1 and N - 1) have fewer neighbours
    for lab, deg in zip(d.labels, d.degrees()):
        if N + 1 <= lab[1] <= K - N - 2 and deg < 4:
            assert lab[1] % N in (1, N - 1)
    assert is_bipartite(d).bipartite
    g = to_nx(d)
    assert nx.is_connected(g)
    # a planar grid: every interior node sits on four 4-cycles
    k = {lab: lab[1] for lab in d.labels}
    interior = [v for v in g if N + 1 <= k[v] <= K - N - 2 and all(g.degree(u) == 4 for u in (v, *g[v]))]
    assert len(interior) >= 3
    for v in interior:
        squares = sum(1 for a in g[v] for b in g[v] if a < b for c in set(g[a]) & set(g[b]) if c != v)
        assert squares == 4


def test_fourier_nodes_are_half_the_rows(stages):
    d = stages["D"]
    picked = fourier_nodes(d, N)
    assert 0 < len(picked) < d.dim
    assert all((lab[1] // N) % 2 == 1 for lab in picked)


def test_column_step():
    assert column_step(1, 12) == 1
    assert column_step(11, 12) == -1
    assert column_step(13, 12) == 1
    assert column_step(-13, 12) == -1
