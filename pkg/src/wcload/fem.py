"""Linear-elastic tetrahedral FEM: stiffness, displacements, von Mises.

Four-node constant-strain tets, Dirichlet handling by row/column
elimination, one sparse LU factorization reused for every load vector on
the same mesh.  Peak-stress queries are cached (memory + optional disk) with
a single-flight guarantee so no contact node is ever solved twice.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import SolverError, ValidationError
from .force_model import ForceMatrix, force_vector
from .mesh_io import ContactRegion, VolumeMesh, tet_signed_volumes
from .util import content_hash

_RESIDUAL_REL = 1e-8

CACHE_ENV_VAR = "WCL_CACHE_DIR"


@dataclass(frozen=True)
class Material:
    """Isotropic linear-elastic material."""

    young_modulus: float = 1e9
    poisson_ratio: float = 0.3

    def __post_init__(self):
        if self.young_modulus <= 0:
            raise ValidationError(f"E must be > 0, got {self.young_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValidationError(
                f"nu must lie in (-1, 0.5), got {self.poisson_ratio}")

    def content_hash(self) -> str:
        return content_hash(self.young_modulus, self.poisson_ratio)


def elasticity_matrix(material: Material) -> np.ndarray:
    """6x6 isotropic stiffness in Voigt order (xx,yy,zz,xy,yz,zx)."""
    E, nu = material.young_modulus, material.poisson_ratio
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] = lam + 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def _element_geometry(volume: VolumeMesh) -> tuple[np.ndarray, np.ndarray]:
    """Shape-function gradients (ne,4,3) and element volumes (ne,)."""
    vols = tet_signed_volumes(volume.nodes, volume.tets)
    if np.any(vols <= 0):
        raise ValidationError("mesh contains non-positively oriented tets")
    x0 = volume.nodes[volume.tets[:, 0]]
    M = np.stack([volume.nodes[volume.tets[:, k]] - x0 for k in (1, 2, 3)],
                 axis=1)  # rows = edge vectors
    Minv = np.linalg.inv(M)
    grads = np.empty((volume.tets.shape[0], 4, 3))
    grads[:, 1:, :] = np.transpose(Minv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return grads, vols


def _strain_matrices(grads: np.ndarray) -> np.ndarray:
    """Per-element B (ne,6,12) mapping nodal displacements to Voigt strain."""
    ne = grads.shape[0]
    B = np.zeros((ne, 6, 12))
    for a in range(4):
        gx, gy, gz = grads[:, a, 0], grads[:, a, 1], grads[:, a, 2]
        c = 3 * a
        B[:, 0, c + 0] = gx
        B[:, 1, c + 1] = gy
        B[:, 2, c + 2] = gz
        B[:, 3, c + 0] = gy
        B[:, 3, c + 1] = gx
        B[:, 4, c + 1] = gz
        B[:, 4, c + 2] = gy
        B[:, 5, c + 0] = gz
        B[:, 5, c + 2] = gx
    return B


def assemble_stiffness(volume: VolumeMesh, material: Material) -> sparse.csr_matrix:
    """Global stiffness K (3n x 3n), exactly symmetric."""
    grads, vols = _element_geometry(volume)
    B = _strain_matrices(grads)
    D = elasticity_matrix(material)
    Ke = np.einsum("eki,kl,elj->eij", B, D, B) * vols[:, None, None]
    Ke = 0.5 * (Ke + np.transpose(Ke, (0, 2, 1)))

    dofs = (3 * volume.tets[:, :, None] + np.arange(3)).reshape(-1, 12)
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()
    n_dof = 3 * volume.n_nodes
    K = sparse.coo_matrix((Ke.ravel(), (rows, cols)),
                          shape=(n_dof, n_dof)).tocsr()
    return (K + K.T) * 0.5


def _fixed_dof_indices(fixed_nodes: np.ndarray) -> np.ndarray:
    return (3 * np.asarray(fixed_nodes, dtype=np.int64)[:, None]
            + np.arange(3)).ravel()


class ElasticSolver:
    """Factorize once, back-substitute per load.

    The factorization is immutable after construction; concurrent solves on
    distinct loads only read shared state.
    """

    def __init__(self, volume: VolumeMesh, material: Material):
        self.volume = volume
        self.material = material
        self.K = assemble_stiffness(volume, material)
        n_dof = self.K.shape[0]
        fixed = _fixed_dof_indices(volume.fixed_nodes)
        mask = np.ones(n_dof, dtype=bool)
        mask[fixed] = False
        self.free = np.where(mask)[0]
        self.fixed = fixed
        self._K_ff = self.K[self.free][:, self.free].tocsc()
        self._K_fb = self.K[self.free][:, fixed].tocsr()
        try:
            self._factor = splu(self._K_ff)
        except RuntimeError as exc:
            raise SolverError(
                f"stiffness factorization failed (anchoring?): {exc}") from exc

    def solve(self, load: np.ndarray,
              fixed_values: np.ndarray | None = None) -> np.ndarray:
        """Displacements for a nodal load; fixed DOFs take ``fixed_values``
        (per fixed node, shape (n_fixed, 3)) or zero."""
        load = np.asarray(load, dtype=np.float64)
        if not np.all(np.isfinite(load)):
            raise ValidationError("load vector contains non-finite entries")
        u = np.zeros(self.K.shape[0])
        rhs = load[self.free]
        if fixed_values is not None:
            ub = np.asarray(fixed_values, dtype=np.float64).ravel()
            u[self.fixed] = ub
            rhs = rhs - self._K_fb @ ub
        u_f = self._factor.solve(rhs)
        resid = np.linalg.norm(self._K_ff @ u_f - rhs)
        ref = np.linalg.norm(rhs)
        if not np.all(np.isfinite(u_f)) or (ref > 0 and resid > _RESIDUAL_REL * ref):
            raise SolverError(
                f"linear solve residual {resid:.3e} exceeds "
                f"{_RESIDUAL_REL:g} * {ref:.3e}")
        u[self.free] = u_f
        return u


def solve_displacement(K: sparse.spmatrix, fixed_nodes: np.ndarray,
                       load: np.ndarray,
                       fixed_values: np.ndarray | None = None) -> np.ndarray:
    """One-shot constrained solve of K u = load with eliminated fixed DOFs."""
    load = np.asarray(load, dtype=np.float64)
    if not np.all(np.isfinite(load)):
        raise ValidationError("load vector contains non-finite entries")
    n_dof = K.shape[0]
    fixed = _fixed_dof_indices(np.asarray(fixed_nodes, dtype=np.int64))
    mask = np.ones(n_dof, dtype=bool)
    mask[fixed] = False
    free = np.where(mask)[0]
    K = sparse.csr_matrix(K)
    K_ff = K[free][:, free].tocsc()
    u = np.zeros(n_dof)
    rhs = load[free]
    if fixed_values is not None:
        ub = np.asarray(fixed_values, dtype=np.float64).ravel()
        u[fixed] = ub
        rhs = rhs - K[free][:, fixed] @ ub
    try:
        u_f = splu(K_ff).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"constrained system is singular: {exc}") from exc
    resid = np.linalg.norm(K_ff @ u_f - rhs)
    ref = np.linalg.norm(rhs)
    if not np.all(np.isfinite(u_f)) or (ref > 0 and resid > _RESIDUAL_REL * ref):
        raise SolverError(f"linear solve residual {resid:.3e} too large")
    u[free] = u_f
    return u


def element_stresses(volume: VolumeMesh, material: Material,
                     u: np.ndarray) -> np.ndarray:
    """Per-element constant Voigt stress (ne, 6)."""
    grads, _ = _element_geometry(volume)
    B = _strain_matrices(grads)
    u_e = u.reshape(-1, 3)[volume.tets].reshape(-1, 12)
    strains = np.einsum("eij,ej->ei", B, u_e)
    return strains @ elasticity_matrix(material).T


def von_mises_of(stress: np.ndarray) -> np.ndarray:
    """Von Mises equivalent of Voigt stresses (..., 6)."""
    s = np.asarray(stress)
    sq = 0.5 * ((s[..., 0] - s[..., 1]) ** 2
                + (s[..., 1] - s[..., 2]) ** 2
                + (s[..., 2] - s[..., 0]) ** 2) \
        + 3.0 * (s[..., 3] ** 2 + s[..., 4] ** 2 + s[..., 5] ** 2)
    return np.sqrt(np.maximum(sq, 0.0))


def von_mises_field(volume: VolumeMesh, material: Material,
                    u: np.ndarray) -> np.ndarray:
    """Nodal von Mises stress: volume-weighted average of element values."""
    if not np.all(np.isfinite(u)):
        raise ValidationError("displacement field contains non-finite entries")
    vm_e = von_mises_of(element_stresses(volume, material, u))
    _, vols = _element_geometry(volume)
    num = np.zeros(volume.n_nodes)
    den = np.zeros(volume.n_nodes)
    for k in range(4):
        np.add.at(num, volume.tets[:, k], vm_e * vols)
        np.add.at(den, volume.tets[:, k], vols)
    out = np.zeros(volume.n_nodes)
    touched = den > 0
    out[touched] = num[touched] / den[touched]
    return out


@dataclass
class StressSweep:
    """Peak-stress results per contact node: f -> (sigma*, argmax node)."""

    content_hash: str
    n_region: int
    entries: dict[int, tuple[float, int]] = field(default_factory=dict)

    def evaluated(self, f: int) -> bool:
        return f in self.entries

    def sigma_array(self) -> np.ndarray:
        """Dense sigma*(f) with NaN for nodes not evaluated yet."""
        out = np.full(self.n_region, np.nan)
        for f, (s, _) in self.entries.items():
            out[f] = s
        return out

    def max(self) -> tuple[float, int]:
        """(sigma*, argmax region node) over evaluated entries."""
        if not self.entries:
            raise ValidationError("sweep has no evaluated entries")
        f_star = min(self.entries, key=lambda f: (-self.entries[f][0], f))
        return self.entries[f_star][0], f_star


class StressOracle:
    """sigma*(f) evaluator with caching and single-flight deduplication."""

    def __init__(self, volume: VolumeMesh, material: Material,
                 region: ContactRegion, force: ForceMatrix,
                 magnitude: float = 1.0, cache_dir: str | None = None):
        self.volume = volume
        self.material = material
        self.region = region
        self.force = force
        self.magnitude = float(magnitude)
        self.key = content_hash(volume.content_hash(), material.content_hash(),
                                region.content_hash(), force.content_hash(),
                                self.magnitude)
        if cache_dir is None:
            cache_dir = os.environ.get(CACHE_ENV_VAR)
        self._disk_dir = (os.path.join(cache_dir, self.key)
                          if cache_dir else None)
        self._solver = ElasticSolver(volume, material)
        self._sweep = StressSweep(content_hash=self.key, n_region=region.size)
        self._lock = threading.Lock()
        self._inflight: dict[int, threading.Event] = {}
        self.solve_count = 0

    @property
    def sweep(self) -> StressSweep:
        return self._sweep

    def _disk_path(self, f: int) -> str:
        return os.path.join(self._disk_dir, f"f_{f:06d}.json")

    def _load_disk(self, f: int):
        if self._disk_dir is None:
            return None
        path = self._disk_path(f)
        if not os.path.exists(path):
            return None
        with open(path) as fh:
            rec = json.load(fh)
        return float(rec["sigma_star"]), int(rec["argmax_node"])

    def _store_disk(self, f: int, entry) -> None:
        if self._disk_dir is None:
            return
        os.makedirs(self._disk_dir, exist_ok=True)
        tmp = self._disk_path(f) + ".tmp"
        with open(tmp, "w") as fh:
            json.dump({"f_index": f, "sigma_star": entry[0],
                       "argmax_node": entry[1]}, fh)
        os.replace(tmp, self._disk_path(f))

    def _compute(self, f: int) -> tuple[float, int]:
        load = force_vector(self.region, self.volume, self.force, f,
                            self.magnitude)
        u = self._solver.solve(load)
        vm = von_mises_field(self.volume, self.material, u)
        w_star = int(np.argmax(vm))
        self.solve_count += 1
        return float(vm[w_star]), w_star

    def max_stress(self, f: int) -> tuple[float, int]:
        """Peak von Mises and its volume node for a contact at f (cached)."""
        if not 0 <= f < self.region.size:
            raise ValidationError(f"contact index {f} outside region")
        while True:
            with self._lock:
                if f in self._sweep.entries:
                    return self._sweep.entries[f]
                ev = self._inflight.get(f)
                if ev is None:
                    hit = self._load_disk(f)
                    if hit is not None:
                        self._sweep.entries[f] = hit
                        return hit
                    ev = threading.Event()
                    self._inflight[f] = ev
                    break  # we own the computation
            ev.wait()
        try:
            entry = self._compute(f)
            with self._lock:
                self._sweep.entries[f] = entry
            self._store_disk(f, entry)
        finally:
            with self._lock:
                self._inflight.pop(f, None)
            ev.set()
        return entry

    def is_cached(self, f: int) -> bool:
        with self._lock:
            if f in self._sweep.entries:
                return True
        return self._load_disk(f) is not None

    def sweep_all(self, indices=None) -> StressSweep:
        """Evaluate sigma*(f) for the given region indices (default: all)."""
        if indices is None:
            indices = range(self.region.size)
        for f in indices:
            try:
                self.max_stress(int(f))
            except SolverError as exc:
                raise SolverError(f"solver failed at region node {f}: {exc}") from exc
        return self._sweep
