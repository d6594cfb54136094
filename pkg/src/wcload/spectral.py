"""Graph Laplacian of the contact region and its low-frequency eigenbasis.

The basis columns are eigenvectors of the combinatorial Laplacian D - A for
the smallest eigenvalues, giving a smooth spatial embedding of the region.
A config switch allows the opposite (largest-eigenvalue) convention.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import SolverError, ValidationError
from .mesh_io import ContactRegion

DEFAULT_BASIS_SIZE = 15


@dataclass(frozen=True)
class LaplacianBasis:
    """Orthonormal eigenvector basis of the region Laplacian."""

    vectors: np.ndarray  # (n_F, p), columns orthonormal
    eigenvalues: np.ndarray  # (p,) ascending

    @property
    def p(self) -> int:
        return self.vectors.shape[1]


def graph_laplacian(region: ContactRegion) -> np.ndarray:
    """Combinatorial Laplacian D - A of the unweighted region adjacency."""
    if region.size == 0:
        raise ValidationError("empty region")
    adj = (region.graph != 0).astype(np.float64).toarray()
    np.fill_diagonal(adj, 0.0)
    lap = np.diag(adj.sum(axis=1)) - adj
    return lap


def laplacian_basis(region: ContactRegion, p: int = DEFAULT_BASIS_SIZE,
                    which: str = "smallest", drop_kernel: bool = False,
                    cache_dir=None) -> LaplacianBasis:
    """Eigenpairs of the region Laplacian for the ``p`` extreme eigenvalues.

    ``which`` selects the end of the spectrum ("smallest" by default).
    ``drop_kernel`` skips the (near-)zero eigenvalues  -- the constant modes
    that mean-centering annihilates anyway -- so the resulting design matrix
    keeps full column rank.  Sign convention: the largest-magnitude entry of
    each column is positive, ties broken by lowest index.
    """
    n = region.size
    if not 1 <= p <= n:
        raise ValidationError(f"basis size p={p} must be in [1, {n}]")
    if which not in ("smallest", "largest"):
        raise ValidationError(f"unknown spectrum end {which!r}")

    cache_path = None
    if cache_dir is not None:
        tag = region.content_hash()
        cache_path = os.path.join(
            cache_dir, f"basis_{tag}_p{p}_{which}_k{int(drop_kernel)}.npz")
        if os.path.exists(cache_path):
            with np.load(cache_path) as data:
                return LaplacianBasis(vectors=data["vectors"],
                                      eigenvalues=data["eigenvalues"])

    lap = graph_laplacian(region)
    n_skip = 0
    if drop_kernel and which == "smallest":
        n_skip = region.n_components
        if p + n_skip > n:
            raise ValidationError(
                f"p={p} plus {n_skip} kernel vector(s) exceeds region size {n}")
    try:
        if which == "smallest":
            vals, vecs = eigh(lap, subset_by_index=[n_skip, n_skip + p - 1])
        else:
            vals, vecs = eigh(lap, subset_by_index=[n - p, n - 1])
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"Laplacian eigensolver failed: {exc}") from exc

    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        k = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[k, j] < 0:
            vecs[:, j] = -vecs[:, j]

    basis = LaplacianBasis(vectors=np.ascontiguousarray(vecs),
                           eigenvalues=vals)
    if cache_path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        np.savez(cache_path, vectors=basis.vectors,
                 eigenvalues=basis.eigenvalues)
    return basis
