"""Graphical calculus for Gaussian pure states.

A pure Gaussian state on ``m`` modes is described by a complex symmetric
adjacency matrix ``Z = V + iU`` with ``U`` positive definite.  Quadratures are
ordered in block form ``(x_1 ... x_m, p_1 ... p_m)`` and a linear optical
operation is a real symplectic matrix ``S = [[A, B], [C, D]]`` acting as
``(x', p') = S (x, p)``.  Under ``S`` the adjacency matrix transforms as
``Z' = (C + D Z)(A + B Z)^-1``.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import InvalidParameter, NumericalSingularity, PhysicalityError

__all__ = [
    "AdjacencyZ",
    "SymplecticTransform",
    "IdealGraph",
    "TwoColoring",
    "symplectic_form",
    "squeezed_vacuum_z",
    "apply_symplectic",
    "rotation_pi2",
    "beam_splitter",
    "permutation",
    "is_self_inverse",
    "is_bipartite",
    "h_graph_to_cluster",
    "delete_by_x_measurement",
    "edge_list",
]

SYMMETRY_TOL = 1e-12
CONDITION_LIMIT = 1e12
EDGE_THRESHOLD = 1e-9


def _as_labels(labels, dim):
    if labels is None:
        return tuple(range(dim))
    labels = tuple(tuple(lab) if isinstance(lab, list) else lab for lab in labels)
    if len(labels) != dim:
        raise InvalidParameter(f"expected {dim} labels, got {len(labels)}")
    return labels


def _relative_asymmetry(a):
    norm = np.linalg.norm(a)
    if norm == 0:
        return 0.0
    return np.linalg.norm(a - a.T) / norm


@dataclass(frozen=True)
class AdjacencyZ:
    """Complex adjacency matrix ``Z = v + i u`` of a pure Gaussian state."""

    v: np.ndarray
    u: np.ndarray
    labels: tuple = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        u = np.array(self.u, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape != u.shape:
            raise InvalidParameter("v and u must be square matrices of equal shape")
        if self.check:
            if _relative_asymmetry(v) > SYMMETRY_TOL or _relative_asymmetry(u) > SYMMETRY_TOL:
                raise InvalidParameter("v and u must be symmetric")
            try:
                np.linalg.cholesky(u)
            except np.linalg.LinAlgError:
                raise PhysicalityError("u is not positive definite") from None
        v.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "labels", _as_labels(self.labels, v.shape[0]))

    @classmethod
    def from_complex(cls, z, labels=None, check=True):
        z = np.asarray(z, dtype=complex)
        return cls(z.real, z.imag, labels=labels, check=check)

    @property
    def dim(self) -> int:
        return self.v.shape[0]

    @property
    def z(self) -> np.ndarray:
        return self.v + 1j * self.u

    def to_json(self) -> str:
        return json.dumps(
            {
                "dim": self.dim,
                "v": self.v.tolist(),
                "u": self.u.tolist(),
                "labels": [list(lab) if isinstance(lab, tuple) else lab for lab in self.labels],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "AdjacencyZ":
        doc = json.loads(text)
        return cls(np.array(doc["v"]), np.array(doc["u"]), labels=doc.get("labels"))


@dataclass(frozen=True)
class SymplecticTransform:
    """Real symplectic matrix in ``(x..., p...)`` block ordering."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        blocks = [np.array(blk, dtype=float) for blk in (self.a, self.b, self.c, self.d)]
        m = blocks[0].shape[0]
        if any(blk.shape != (m, m) for blk in blocks):
            raise InvalidParameter("symplectic blocks must all be m x m")
        for name, blk in zip("abcd", blocks):
            blk.setflags(write=False)
            object.__setattr__(self, name, blk)

    @classmethod
    def from_matrix(cls, s) -> "SymplecticTransform":
        s = np.asarray(s, dtype=float)
        m = s.shape[0] // 2
        return cls(s[:m, :m], s[:m, m:], s[m:, :m], s[m:, m:])

    @classmethod
    def identity(cls, m: int) -> "SymplecticTransform":
        return cls.from_matrix(np.eye(2 * m))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.a, self.b], [self.c, self.d]])

    def __matmul__(self, other: "SymplecticTransform") -> "SymplecticTransform":
        return SymplecticTransform.from_matrix(self.matrix @ other.matrix)

    def inverse(self) -> "SymplecticTransform":
        # S^-1 = -Omega S^T Omega for symplectic S
        omega = symplectic_form(self.dim)
        return SymplecticTransform.from_matrix(-omega @ self.matrix.T @ omega)

    def symplectic_error(self) -> float:
        omega = symplectic_form(self.dim)
        s = self.matrix
        return float(np.max(np.abs(s.T @ omega @ s - omega)))


def symplectic_form(m: int) -> np.ndarray:
    eye = np.eye(m)
    zero = np.zeros((m, m))
    return np.block([[zero, eye], [-eye, zero]])


def squeezed_vacuum_z(m: int, r, labels=None) -> AdjacencyZ:
    """Momentum-squeezed vacuum ``Z = i e^{-2r} I``.

    ``r`` may be a scalar or a length-``m`` sequence.  A negative ``r``
    describes squeezing in the position quadrature instead.
    """
    if m < 1:
        raise InvalidParameter("mode count must be at least 1")
    r = np.broadcast_to(np.asarray(r, dtype=float), (m,))
    if not np.all(np.isfinite(r)):
        raise InvalidParameter("squeezing parameter must be finite")
    return AdjacencyZ(np.zeros((m, m)), np.diag(np.exp(-2.0 * r)), labels=labels)


def apply_symplectic(z: AdjacencyZ, s: SymplecticTransform) -> AdjacencyZ:
    """Transform ``z`` by the symplectic ``s``: ``Z' = (C + D Z)(A + B Z)^-1``."""
    if z.dim != s.dim:
        raise InvalidParameter(f"dimension mismatch: Z is {z.dim}, S is {s.dim}")
    zc = z.z
    denom = s.a + s.b @ zc
    numer = s.c + s.d @ zc
    cond = np.linalg.cond(denom)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise NumericalSingularity(f"A + B Z is singular (condition {cond:.3g})", condition=cond)
    # Z' symmetric, so Z' = (denom^-T numer^T)^T
    znew = np.linalg.solve(denom.T, numer.T).T
    znew = 0.5 * (znew + znew.T)
    return AdjacencyZ.from_complex(znew, labels=z.labels)


def _check_targets(m, targets):
    targets = sorted(set(int(t) for t in targets))
    for t in targets:
        if not 0 <= t < m:
            raise IndexError(f"mode {t} out of range for {m} modes")
    return targets


def rotation_pi2(m: int, targets: Iterable[int]) -> SymplecticTransform:
    """Fourier gate on ``targets``: ``x -> -p``, ``p -> x``."""
    s = np.eye(2 * m)
    for t in _check_targets(m, targets):
        s[t, t] = 0.0
        s[m + t, m + t] = 0.0
        s[t, m + t] = -1.0
        s[m + t, t] = 1.0
    return SymplecticTransform.from_matrix(s)


def beam_splitter(m: int, first: int, second: int) -> SymplecticTransform:
    """Balanced beam splitter from ``first`` to ``second``.

    ``q_first' = (q_first - q_second)/sqrt2`` and
    ``q_second' = (q_first + q_second)/sqrt2`` for both quadratures.
    """
    if first == second:
        raise InvalidParameter("beam splitter needs two distinct modes")
    _check_targets(m, (first, second))
    h = 1.0 / np.sqrt(2.0)
    s = np.eye(2 * m)
    for off in (0, m):
        i, j = first + off, second + off
        s[i, i], s[i, j] = h, -h
        s[j, i], s[j, j] = h, h
    return SymplecticTransform.from_matrix(s)


def permutation(perm: Sequence[int]) -> SymplecticTransform:
    """Passive relabelling: output mode ``i`` is input mode ``perm[i]``."""
    perm = np.asarray(perm, dtype=int)
    m = perm.size
    if sorted(perm.tolist()) != list(range(m)):
        raise InvalidParameter("not a permutation")
    p = np.zeros((m, m))
    p[np.arange(m), perm] = 1.0
    zero = np.zeros((m, m))
    return SymplecticTransform(p, zero, zero, p)


@dataclass(frozen=True)
class IdealGraph:
    """Real weighted graph of an ideal (infinitely squeezed) cluster state."""

    adjacency: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise InvalidParameter("adjacency must be square")
        if _relative_asymmetry(adj) > SYMMETRY_TOL:
            raise InvalidParameter("adjacency must be symmetric")
        if np.any(np.abs(np.diag(adj)) > EDGE_THRESHOLD):
            raise InvalidParameter("ideal graphs have no self-loops")
        adj = 0.5 * (adj + adj.T)
        np.fill_diagonal(adj, 0.0)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "labels", _as_labels(self.labels, adj.shape[0]))

    @property
    def dim(self) -> int:
        return self.adjacency.shape[0]

    @property
    def index(self) -> dict:
        return {lab: i for i, lab in enumerate(self.labels)}

    def neighbours(self, i: int) -> np.ndarray:
        return np.flatnonzero(np.abs(self.adjacency[i]) > EDGE_THRESHOLD)

    def degrees(self) -> np.ndarray:
        return np.count_nonzero(np.abs(self.adjacency) > EDGE_THRESHOLD, axis=1)

    @classmethod
    def from_z(cls, z: AdjacencyZ, threshold: float = EDGE_THRESHOLD) -> "IdealGraph":
        """Drop the imaginary part and self-loops of ``z``."""
        adj = np.where(np.abs(z.v) > threshold, z.v, 0.0)
        np.fill_diagonal(adj, 0.0)
        return cls(adj, labels=z.labels)

    def to_json(self) -> str:
        return json.dumps(
            {
                "dim": self.dim,
                "v": self.adjacency.tolist(),
                "u": np.zeros_like(self.adjacency).tolist(),
                "labels": [list(lab) if isinstance(lab, tuple) else lab for lab in self.labels],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "IdealGraph":
        doc = json.loads(text)
        return cls(np.array(doc["v"]), labels=doc.get("labels"))


class TwoColoring(NamedTuple):
    bipartite: bool
    colors: np.ndarray | None
    odd_cycle: list | None


def is_self_inverse(g, tol: float = 1e-10) -> bool:
    """True iff ``G @ G`` equals the identity to ``tol``."""
    adj = g.adjacency if isinstance(g, IdealGraph) else np.asarray(g, dtype=float)
    return bool(np.max(np.abs(adj @ adj - np.eye(adj.shape[0]))) <= tol)


def is_bipartite(g, threshold: float = EDGE_THRESHOLD) -> TwoColoring:
    """Breadth-first two-colouring over edges with ``|w| >= threshold``.

    On failure the returned ``odd_cycle`` lists node indices of an odd cycle
    (first node not repeated).
    """
    adj = g.adjacency if isinstance(g, IdealGraph) else np.asarray(g, dtype=float)
    m = adj.shape[0]
    mask = np.abs(adj) > threshold
    np.fill_diagonal(mask, False)
    colors = np.full(m, -1, dtype=int)
    parent = np.full(m, -1, dtype=int)
    for root in range(m):
        if colors[root] >= 0:
            continue
        colors[root] = 0
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(mask[i]):
                if colors[j] < 0:
                    colors[j] = 1 - colors[i]
                    parent[j] = i
                    queue.append(j)
                elif colors[j] == colors[i]:
                    return TwoColoring(False, None, _odd_cycle(parent, i, j))
    return TwoColoring(True, colors, None)


def _odd_cycle(parent, i, j):
    def path(n):
        out = [n]
        while parent[out[-1]] >= 0:
            out.append(int(parent[out[-1]]))
        return out

    pi, pj = path(i), path(j)
    common = set(pi) & set(pj)
    head_i = [n for n in pi if n not in common] + [next(n for n in pi if n in common)]
    head_j = [n for n in pj if n not in common]
    return [int(n) for n in head_i + head_j[::-1]]


def h_graph_to_cluster(z: AdjacencyZ, rotate_set: Iterable[int]) -> AdjacencyZ:
    """Apply Fourier gates on ``rotate_set``.

    For a self-inverse bipartite H-graph and one side of its bipartition the
    result has real edges ``tanh(2r) G`` and self-loops ``i sech(2r)``.
    """
    return apply_symplectic(z, rotation_pi2(z.dim, rotate_set))


def delete_by_x_measurement(g: IdealGraph, measured) -> IdealGraph:
    """Remove measured nodes (given by label) and their incident edges.

    Labels not present in ``g`` are ignored, which makes repeated deletion
    idempotent.
    """
    drop = set(measured)
    keep = [i for i, lab in enumerate(g.labels) if lab not in drop]
    adj = g.adjacency[np.ix_(keep, keep)]
    return IdealGraph(adj, labels=[g.labels[i] for i in keep])


def edge_list(g, threshold: float = EDGE_THRESHOLD) -> list:
    """Upper-triangle edges ``(label_i, label_j, weight)``."""
    if isinstance(g, AdjacencyZ):
        adj, labels = g.v, g.labels
    else:
        adj, labels = g.adjacency, g.labels
    rows, cols = np.nonzero(np.triu(np.abs(adj) > threshold, k=1))
    return [(labels[i], labels[j], float(adj[i, j])) for i, j in zip(rows, cols)]


def format_label(label) -> str:
    if isinstance(label, tuple):
        return ":".join(str(part) for part in label)
    return str(label)


def write_edge_csv(g, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_i", "node_j", "weight"])
        for i, j, w in edge_list(g):
            writer.writerow([format_label(i), format_label(j), repr(w)])
