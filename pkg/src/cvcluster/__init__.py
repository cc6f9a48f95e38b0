"""Continuous-variable 2D cluster states from a temporally multiplexed circuit.

Submodules:

``graph``          Gaussian-state adjacency matrices and symplectic updates.
``circuit``        the EPR -> 1D -> 2D cylinder circuit and its transfer map.
``nullifiers``     eight-mode nullifiers and their variances.
``inseparability`` van Loock-Furusawa witnesses and the 127-bipartition audit.
``sampler``        Monte-Carlo homodyne sampling of temporal modes.
``traces``         continuous trace synthesis and temporal-mode extraction.
``spectra``        analytic spectra, Welch estimation and parameter fitting.
``unfold``         reduction of the cylinder graph to a square lattice.
"""

from .circuit import CircuitParams, build_2d_cluster_z, quadrature_transfer
from .exceptions import ClusterError
from .graph import AdjacencyZ, IdealGraph, SymplecticTransform
from .nullifiers import NullifierSpec, VarianceReport, analytic_variance, make_nullifier

__version__ = "0.1.0"

__all__ = [
    "AdjacencyZ",
    "CircuitParams",
    "ClusterError",
    "IdealGraph",
    "NullifierSpec",
    "SymplecticTransform",
    "VarianceReport",
    "analytic_variance",
    "build_2d_cluster_z",
    "make_nullifier",
    "quadrature_transfer",
]
