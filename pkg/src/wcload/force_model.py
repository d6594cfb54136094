"""Contact force footprints and the spectral design matrix.

A contact at region node f is distributed uniformly over the geodesic disc
of a given radius around f (avoiding point-load stress singularities), with
unit total magnitude.  Mean-centering the footprint matrix and projecting on
the Laplacian basis yields the design matrix the regression and the
experimental design operate on.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .errors import ValidationError
from .mesh_io import ContactRegion, VolumeMesh
from .spectral import LaplacianBasis

DEFAULT_RADIUS_REL = 0.02
DEFAULT_MAGNITUDE = 1.0


@dataclass(frozen=True)
class ForceMatrix:
    """Row-stochastic footprint matrix: row f = weights of contact at f."""

    weights: sparse.csr_matrix  # (n_F, n_F), rows sum to 1
    radius: float

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def row_support(self, f: int) -> np.ndarray:
        """Region indices touched by a contact at f."""
        return self.weights.indices[
            self.weights.indptr[f]:self.weights.indptr[f + 1]]

    def content_hash(self) -> str:
        from .util import content_hash
        return content_hash(self.weights.indices, self.weights.indptr,
                            self.weights.data, self.radius)


@dataclass(frozen=True)
class DesignMatrix:
    """X = (mean-centered footprints) @ Laplacian basis."""

    X: np.ndarray  # (n_F, p)
    column_means: np.ndarray  # (p,) means of X columns, ~0 after centering
    rank: int

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def build_force_matrix(region: ContactRegion, radius: float) -> ForceMatrix:
    """Uniform weights over each node's geodesic disc of the given radius.

    The disc always contains its own center, so radius 0 gives the identity.
    """
    if radius < 0:
        raise ValidationError(f"footprint radius must be >= 0, got {radius}")
    n = region.size
    rows, cols, data = [], [], []
    chunk = 512
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        dist = dijkstra(region.graph, directed=False, indices=idx,
                        limit=radius)
        for k, f in enumerate(idx):
            support = np.where(dist[k] <= radius)[0]
            if support.size == 0:  # defensive; d(f,f)=0 is always <= radius
                support = np.array([f])
            w = 1.0 / support.size
            rows.extend([f] * support.size)
            cols.extend(support.tolist())
            data.extend([w] * support.size)
    weights = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    return ForceMatrix(weights=weights, radius=float(radius))


def design_matrix(force: ForceMatrix, basis: LaplacianBasis) -> DesignMatrix:
    """Project the column-centered footprint matrix onto the basis.

    A deficient numerical rank is reported as a warning; the design pipeline
    itself refuses rank-deficient inputs at the relaxation stage.
    """
    if force.n != basis.vectors.shape[0]:
        raise ValidationError(
            f"force matrix is {force.n}x{force.n} but basis has "
            f"{basis.vectors.shape[0]} rows")
    F = force.weights.toarray()
    F_centered = F - F.mean(axis=0, keepdims=True)
    X = F_centered @ basis.vectors
    rank = int(np.linalg.matrix_rank(X))
    if rank < basis.p:
        warnings.warn(
            f"design matrix is rank deficient: numerical rank {rank} < p="
            f"{basis.p}; the relaxation stage will reject it",
            stacklevel=2)
    return DesignMatrix(X=X, column_means=X.mean(axis=0), rank=rank)


def force_vector(region: ContactRegion, volume: VolumeMesh,
                 force: ForceMatrix, f: int,
                 magnitude: float = DEFAULT_MAGNITUDE) -> np.ndarray:
    """Nodal load vector (3*n_W,) for a contact at region node f.

    Each support node f' receives -magnitude * weight(f,f') * normal(f'):
    compression along the inward surface normal.
    """
    if not 0 <= f < region.size:
        raise ValidationError(f"contact index {f} outside region")
    load = np.zeros(3 * volume.n_nodes)
    start, end = force.weights.indptr[f], force.weights.indptr[f + 1]
    for fp, w in zip(force.weights.indices[start:end],
                     force.weights.data[start:end]):
        vol_node = int(volume.surface_map[region.nodes[fp]])
        load[3 * vol_node:3 * vol_node + 3] -= magnitude * w * region.normals[fp]
    return load
