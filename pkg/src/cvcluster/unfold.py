"""Reduction of the cylinder cluster graph to a square lattice by x-deletion.

Temporal index ``k`` sits at row ``k // N`` and column ``k % N`` of the
cylinder.  Quarter-weight edges (``dk = N +- 1``) join macronodes with equal
``(row + col) % 2`` and half-weight edges (``dk = 1``) join the two
sublattices, except across the seam ``col = 0`` where the parity flips.

Stages:

A. the finite-window cluster graph;
B. delete the seam macronodes (``k % N == 0``): the cylinder opens into a
   plane holding two bilayer square lattices;
C. delete the sublattice with odd ``row + col``: one bilayer square lattice;
D. delete every B node: a square lattice of A nodes.

The Fourier gates that fix edge signs of the final lattice do not change
which nodes are connected, so stage D records them only as ``fourier_nodes``.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .circuit import cluster_rotation_set, cylinder_z
from .graph import EDGE_THRESHOLD, IdealGraph, delete_by_x_measurement, h_graph_to_cluster

STAGES = ("A", "B", "C", "D")


def ideal_cluster_graph(n: int, k_total: int, r: float = 1.0) -> IdealGraph:
    """Infinite-squeezing limit of the cluster graph on a window of ``k_total``.

    The finite-``r`` cluster has real part ``tanh(2r) G``; dividing by
    ``tanh(2r)`` gives the ideal weights.  Edges that only exist because the
    window is cyclic (``|dk| > N + 1``) are dropped.
    """
    z = h_graph_to_cluster(cylinder_z(n, k_total, r, r), cluster_rotation_set(k_total))
    adj = np.where(np.abs(z.v) > EDGE_THRESHOLD, z.v, 0.0) / np.tanh(2 * r)
    np.fill_diagonal(adj, 0.0)
    k = np.array([lab[1] for lab in z.labels])
    adj[np.abs(k[:, None] - k[None, :]) > n + 1] = 0.0
    return IdealGraph(adj, labels=z.labels)


def sublattice(k: int, n: int) -> int:
    return (k // n + k % n) % 2


def unfold(graph: IdealGraph, n: int) -> dict:
    """Stages A-D as ``{stage: IdealGraph}``."""
    labels = graph.labels
    seam = [lab for lab in labels if lab[1] % n == 0]
    stage_b = delete_by_x_measurement(graph, seam)
    odd = [lab for lab in stage_b.labels if sublattice(lab[1], n) == 1]
    stage_c = delete_by_x_measurement(stage_b, odd)
    stage_d = delete_by_x_measurement(stage_c, [lab for lab in stage_c.labels if lab[0] == "B"])
    return {"A": graph, "B": stage_b, "C": stage_c, "D": stage_d}


def fourier_nodes(stage_d: IdealGraph, n: int) -> list:
    """Half of the A nodes (every second row) that take a Fourier gate."""
    return [lab for lab in stage_d.labels if (lab[1] // n) % 2 == 1]


def column_step(dk: int, n: int) -> int:
    """Signed displacement around the circumference for a jump of ``dk``."""
    return (dk + n // 2) % n - n // 2


def wrapping_edges(graph: IdealGraph, n: int) -> list:
    """Edges inconsistent with an unwrapped column coordinate.

    Each component is lifted to the universal cover by breadth-first search
    using :func:`column_step`; an edge whose endpoints disagree with the
    lifted columns closes a cycle that winds around the circumference.
    An empty list means no such cycle exists.
    """
    mask = np.abs(graph.adjacency) > EDGE_THRESHOLD
    k = [lab[1] for lab in graph.labels]
    lifted = {}
    bad = []
    for root in range(graph.dim):
        if root in lifted:
            continue
        lifted[root] = k[root] % n
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(mask[i]):
                j = int(j)
                step = column_step(k[j] - k[i], n)
                if j not in lifted:
                    lifted[j] = lifted[i] + step
                    queue.append(j)
                elif lifted[j] != lifted[i] + step and i < j:
                    bad.append((graph.labels[i], graph.labels[j]))
    return bad


def interior_degrees(graph: IdealGraph, n: int, margin: int | None = None) -> np.ndarray:
    """Degrees of nodes at least ``margin`` temporal modes from the window edges."""
    margin = n + 1 if margin is None else margin
    k = np.array([lab[1] for lab in graph.labels])
    lo, hi = k.min() + margin, k.max() - margin
    return graph.degrees()[(k >= lo) & (k <= hi)]
