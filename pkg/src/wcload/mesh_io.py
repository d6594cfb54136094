"""Mesh loading, validation and contact-region indexing.

Surface meshes come in as ASCII OFF triangle meshes, volume meshes as
TetGen-style ``.node``/``.ele`` pairs.  Fixed boundary nodes and contact
regions are plain text index lists (one integer per line, ``#`` comments).
The surface and volume meshes may be generated independently; they are tied
together by nearest-position matching.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .errors import ParseError, ValidationError
from .util import bbox_diagonal, content_hash

# Relative tolerances, all scaled by the bounding-box diagonal.
_DEGENERATE_AREA_REL = 1e-14
_SURFACE_MATCH_REL = 1e-8


@dataclass(frozen=True)
class SurfaceMesh:
    """Triangle boundary mesh with outward area-weighted vertex normals."""

    vertices: np.ndarray  # (n_S, 3) float64
    triangles: np.ndarray  # (n_T, 3) int64
    normals: np.ndarray  # (n_S, 3) unit outward

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def edge_set(self) -> set[tuple[int, int]]:
        """Undirected edges as sorted vertex-index pairs."""
        edges = set()
        for a, b, c in self.triangles:
            for u, v in ((a, b), (b, c), (c, a)):
                edges.add((min(int(u), int(v)), max(int(u), int(v))))
        return edges


@dataclass(frozen=True)
class VolumeMesh:
    """Tetrahedral mesh with a map from surface vertices to volume nodes."""

    nodes: np.ndarray  # (n_W, 3) float64
    tets: np.ndarray  # (n_T, 4) int64, positively oriented
    surface_map: np.ndarray  # (n_S,) volume node index per surface vertex
    fixed_nodes: np.ndarray  # sorted volume node indices

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def content_hash(self) -> str:
        return content_hash(self.nodes, self.tets, self.fixed_nodes)


@dataclass(frozen=True)
class ContactRegion:
    """Ordered subset of surface vertices where a force may make contact.

    ``graph`` is the adjacency over region nodes induced by surface edges,
    weighted by Euclidean edge length (the metric used for geodesics).
    """

    nodes: np.ndarray  # (n_F,) surface vertex indices
    graph: sparse.csr_matrix  # (n_F, n_F) symmetric, Euclidean edge lengths
    index_of: dict[int, int] = field(repr=False)  # surface vertex -> position
    positions: np.ndarray = field(repr=False)  # (n_F, 3)
    normals: np.ndarray = field(repr=False)  # (n_F, 3)
    n_components: int = 1
    component_labels: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def connected(self) -> bool:
        return self.n_components == 1

    def content_hash(self) -> str:
        return content_hash(self.nodes, self.positions, self.graph.indices,
                            self.graph.indptr, self.graph.data)


def _strip_comment_lines(text: str) -> list[str]:
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return lines


def load_surface_mesh(path) -> SurfaceMesh:
    """Parse an ASCII OFF triangle mesh and compute vertex normals.

    Raises ParseError on malformed files and ValidationError on degenerate
    triangles or out-of-range indices.
    """
    with open(path) as fh:
        lines = _strip_comment_lines(fh.read())
    if not lines:
        raise ParseError(f"{path}: empty OFF file")

    header = lines[0].split()
    if header[0] != "OFF":
        raise ParseError(f"{path}: missing OFF header")
    if len(header) == 4:  # counts on the header line
        counts = header[1:]
        body = lines[1:]
    else:
        if len(lines) < 2:
            raise ParseError(f"{path}: missing counts line")
        counts = lines[1].split()
        body = lines[2:]
    try:
        n_vert, n_face = int(counts[0]), int(counts[1])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: bad counts line") from exc
    if len(body) < n_vert + n_face:
        raise ParseError(f"{path}: truncated file "
                         f"({len(body)} lines, need {n_vert + n_face})")

    try:
        vertices = np.array(
            [[float(t) for t in body[i].split()[:3]] for i in range(n_vert)],
            dtype=np.float64,
        ).reshape(n_vert, 3)
    except ValueError as exc:
        raise ParseError(f"{path}: bad vertex line") from exc

    triangles = np.empty((n_face, 3), dtype=np.int64)
    for i in range(n_face):
        toks = body[n_vert + i].split()
        try:
            arity = int(toks[0])
            idx = [int(t) for t in toks[1:1 + arity]]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: bad face line {i}") from exc
        if arity != 3 or len(idx) != 3:
            raise ParseError(f"{path}: face {i} is not a triangle")
        triangles[i] = idx

    return build_surface_mesh(vertices, triangles)


def build_surface_mesh(vertices: np.ndarray, triangles: np.ndarray) -> SurfaceMesh:
    """Validate raw arrays and attach area-weighted unit vertex normals."""
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    n_vert = vertices.shape[0]
    if triangles.size and (triangles.min() < 0 or triangles.max() >= n_vert):
        bad = triangles.max() if triangles.max() >= n_vert else triangles.min()
        raise ValidationError(f"triangle index {bad} out of range for "
                              f"{n_vert} vertices")

    diag = bbox_diagonal(vertices) if n_vert else 0.0
    p0 = vertices[triangles[:, 0]]
    cross = np.cross(vertices[triangles[:, 1]] - p0, vertices[triangles[:, 2]] - p0)
    areas2 = np.linalg.norm(cross, axis=1)  # 2 * area
    if np.any(areas2 <= _DEGENERATE_AREA_REL * max(diag, 1.0) ** 2):
        bad = int(np.argmin(areas2))
        raise ValidationError(f"degenerate (zero-area) triangle {bad}")

    # Area-weighted normal accumulation: cross already carries 2*area weight.
    normals = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(normals, triangles[:, k], cross)
    norms = np.linalg.norm(normals, axis=1)
    if np.any(norms <= 1e-12):
        bad = int(np.argmin(norms))
        raise ValidationError(f"vertex {bad} has no usable normal "
                              "(isolated or fully cancelling faces)")
    normals /= norms[:, None]
    return SurfaceMesh(vertices=vertices, triangles=triangles, normals=normals)


def _parse_tetgen_table(path, ncols: int, what: str) -> tuple[np.ndarray, int]:
    """Read a TetGen .node/.ele style table; returns (rows, base_index)."""
    with open(path) as fh:
        lines = _strip_comment_lines(fh.read())
    if not lines:
        raise ParseError(f"{path}: empty {what} file")
    try:
        count = int(lines[0].split()[0])
    except ValueError as exc:
        raise ParseError(f"{path}: bad {what} header") from exc
    if len(lines) < 1 + count:
        raise ParseError(f"{path}: truncated {what} file")
    rows = []
    first_index = None
    for i in range(count):
        toks = lines[1 + i].split()
        if len(toks) < 1 + ncols:
            raise ParseError(f"{path}: short {what} line {i}")
        if first_index is None:
            first_index = int(toks[0])
        rows.append(toks[1:1 + ncols])
    base = 1 if first_index == 1 else 0
    return np.array(rows), base


def _read_index_list(path) -> list[int]:
    with open(path) as fh:
        lines = _strip_comment_lines(fh.read())
    try:
        return [int(tok) for line in lines for tok in line.split()]
    except ValueError as exc:
        raise ParseError(f"{path}: non-integer index entry") from exc


def tet_signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volume of each tetrahedron (positive = consistent orientation)."""
    a = nodes[tets[:, 0]]
    e1 = nodes[tets[:, 1]] - a
    e2 = nodes[tets[:, 2]] - a
    e3 = nodes[tets[:, 3]] - a
    return np.einsum("ij,ij->i", np.cross(e1, e2), e3) / 6.0


def load_volume_mesh(surface: SurfaceMesh, node_path, ele_path,
                     fixed_path) -> VolumeMesh:
    """Load a TetGen volume mesh and tie it to an existing surface mesh.

    Surface vertices are matched to volume nodes by nearest position within
    1e-8 x bounding-box diagonal.  Inverted tets are repaired by swapping two
    indices.  The fixed-node list must contain >= 3 non-collinear nodes.
    """
    node_rows, _ = _parse_tetgen_table(node_path, 3, "node")
    nodes = node_rows.astype(np.float64)
    ele_rows, base = _parse_tetgen_table(ele_path, 4, "ele")
    tets = ele_rows.astype(np.int64) - base
    if tets.size and (tets.min() < 0 or tets.max() >= nodes.shape[0]):
        raise ValidationError("tet index out of range")

    # Orientation repair: a negative signed volume means the tet is inverted.
    vols = tet_signed_volumes(nodes, tets)
    flipped = vols < 0
    if np.any(flipped):
        tets[flipped] = tets[flipped][:, [0, 1, 3, 2]]
        vols = tet_signed_volumes(nodes, tets)
    if np.any(vols <= 0):
        bad = int(np.argmin(vols))
        raise ValidationError(f"tet {bad} has non-positive volume {vols[bad]:g}")

    fixed = np.array(sorted(set(_read_index_list(fixed_path))), dtype=np.int64)
    if fixed.size and (fixed.min() < 0 or fixed.max() >= nodes.shape[0]):
        raise ValidationError("fixed node index out of range")
    _check_anchoring(nodes, fixed)

    tol = _SURFACE_MATCH_REL * max(bbox_diagonal(nodes), 1e-300)
    dist, nearest = cKDTree(nodes).query(surface.vertices)
    if np.any(dist > tol):
        bad = int(np.argmax(dist))
        raise ValidationError(
            f"surface vertex {bad} has no volume node within tolerance "
            f"(closest at distance {dist[bad]:.3e})")
    surface_map = nearest.astype(np.int64)
    if len(set(surface_map.tolist())) != surface_map.size:
        raise ValidationError("surface-to-volume map is not injective")
    on_tet = np.zeros(nodes.shape[0], dtype=bool)
    on_tet[tets.ravel()] = True
    if not np.all(on_tet[surface_map]):
        bad = int(np.where(~on_tet[surface_map])[0][0])
        raise ValidationError(f"mapped volume node for surface vertex {bad} "
                              "does not belong to any tet")

    return VolumeMesh(nodes=nodes, tets=tets, surface_map=surface_map,
                      fixed_nodes=fixed)


def _check_anchoring(nodes: np.ndarray, fixed: np.ndarray) -> None:
    """Anchoring requires at least 3 non-collinear fixed nodes."""
    if fixed.size < 3:
        raise ValidationError(f"need >= 3 fixed nodes, got {fixed.size}")
    pts = nodes[fixed]
    centered = pts - pts.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    scale = max(float(svals[0]), 1e-300)
    if svals[1] / scale < 1e-10:
        raise ValidationError("fixed nodes are collinear; cannot anchor")


def build_contact_region(surface: SurfaceMesh, node_list) -> ContactRegion:
    """Index a contact region given surface vertex indices (path or list).

    The adjacency graph is the subgraph of surface edges induced on the
    region, weighted by Euclidean edge length.  Disconnected regions are
    allowed; each component is labelled and the region flagged.
    """
    if isinstance(node_list, (str, bytes)) or hasattr(node_list, "__fspath__"):
        node_ids = _read_index_list(node_list)
    else:
        node_ids = [int(i) for i in node_list]
    if not node_ids:
        raise ValidationError("contact region is empty")
    if len(set(node_ids)) != len(node_ids):
        raise ValidationError("contact region has duplicate indices")
    nodes = np.array(node_ids, dtype=np.int64)
    if nodes.min() < 0 or nodes.max() >= surface.n_vertices:
        raise ValidationError("contact region index out of range")

    index_of = {int(v): i for i, v in enumerate(nodes)}
    in_region = np.zeros(surface.n_vertices, dtype=bool)
    in_region[nodes] = True

    # Induced edges, with a manifold check: a region edge bordering more than
    # two triangles breaks the Laplacian/geodesic assumptions.
    edge_count: dict[tuple[int, int], int] = {}
    for a, b, c in surface.triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            if in_region[u] and in_region[v]:
                key = (min(int(u), int(v)), max(int(u), int(v)))
                edge_count[key] = edge_count.get(key, 0) + 1
    for (u, v), cnt in edge_count.items():
        if cnt > 2:
            raise ValidationError(
                f"region edge ({u},{v}) borders {cnt} triangles (non-manifold)")

    n = nodes.size
    rows, cols, data = [], [], []
    for (u, v) in edge_count:
        i, j = index_of[u], index_of[v]
        w = float(np.linalg.norm(surface.vertices[u] - surface.vertices[v]))
        rows += [i, j]
        cols += [j, i]
        data += [w, w]
    graph = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    n_comp, labels = connected_components(graph, directed=False)
    return ContactRegion(
        nodes=nodes,
        graph=graph,
        index_of=index_of,
        positions=surface.vertices[nodes].copy(),
        normals=surface.normals[nodes].copy(),
        n_components=int(n_comp),
        component_labels=labels,
    )


def geodesic_distances(region: ContactRegion, source: int) -> np.ndarray:
    """Shortest-path distances from one region node over the edge graph.

    Distances are in model units (Euclidean edge lengths); unreachable nodes
    get +inf.
    """
    if not 0 <= source < region.size:
        raise ValidationError(f"source {source} outside region of size {region.size}")
    return dijkstra(region.graph, directed=False, indices=source)


def geodesic_matrix(region: ContactRegion, limit: float = np.inf) -> np.ndarray:
    """All-pairs geodesic distances; entries beyond ``limit`` are +inf."""
    return dijkstra(region.graph, directed=False, limit=limit)
