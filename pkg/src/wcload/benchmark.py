"""Procedural desk-scale benchmark: an anchored rectangular bar.

Generates a structured tetrahedral bar (Kuhn 6-tet cubes), extracts the
boundary triangle mesh, anchors one end face, and marks the interior of the
top face as the contact region.  Writers emit the same OFF / TetGen / index
files the loaders consume, so the benchmark also exercises the full I/O
path.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

# Kuhn decomposition: six tets around the main diagonal of each cube cell.
# Corner ids use bit order (x, y, z) -> i = x + 2y + 4z.
_KUHN_TETS = (
    (0, 1, 3, 7),
    (0, 3, 2, 7),
    (0, 2, 6, 7),
    (0, 6, 4, 7),
    (0, 4, 5, 7),
    (0, 5, 1, 7),
)


@dataclass(frozen=True)
class BenchmarkPaths:
    surface: str
    volume_nodes: str
    volume_elements: str
    fixed_nodes: str
    contact_region: str
    config: str


def grid_bar_mesh(nx: int, ny: int, nz: int, lx: float, ly: float,
                  lz: float) -> tuple[np.ndarray, np.ndarray]:
    """Structured bar of nx*ny*nz cells; returns (nodes, tets)."""
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = [nid(i + dx, j + dy, k + dz)
                          for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)]
                for tet in _KUHN_TETS:
                    tets.append([corner[c] for c in tet])
    tets = np.array(tets, dtype=np.int64)

    # Fix orientation cell-independently: positive signed volume everywhere.
    from .mesh_io import tet_signed_volumes
    vols = tet_signed_volumes(nodes, tets)
    flip = vols < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]
    return nodes, tets


def boundary_triangles(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Outward-oriented boundary faces (faces belonging to one tet only)."""
    faces = {}
    local = ((1, 2, 3, 0), (0, 3, 2, 1), (0, 1, 3, 2), (0, 2, 1, 3))
    for tet in tets:
        for a, b, c, d in local:
            tri = (int(tet[a]), int(tet[b]), int(tet[c]))
            key = tuple(sorted(tri))
            if key in faces:
                faces[key] = None  # interior face, shared twice
            else:
                faces[key] = (tri, int(tet[d]))
    out = []
    for rec in faces.values():
        if rec is None:
            continue
        (a, b, c), d = rec
        normal = np.cross(nodes[b] - nodes[a], nodes[c] - nodes[a])
        if normal @ (nodes[d] - nodes[a]) > 0:  # flip until it faces outward
            a, b, c = a, c, b
        out.append((a, b, c))
    return np.array(sorted(out), dtype=np.int64)


def extract_surface(nodes: np.ndarray,
                    tets: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boundary vertices (reindexed), triangles, and vertex->volume map."""
    tris_vol = boundary_triangles(nodes, tets)
    used = np.unique(tris_vol)
    remap = {int(v): i for i, v in enumerate(used)}
    tris = np.vectorize(remap.__getitem__)(tris_vol)
    return nodes[used], tris.astype(np.int64), used.astype(np.int64)


def bar_problem_arrays(nx: int = 30, ny: int = 8, nz: int = 5,
                       lx: float = 8.0, ly: float = 2.0, lz: float = 1.0):
    """All raw arrays of the anchored-bar benchmark.

    Returns (nodes, tets, surf_vertices, surf_triangles, surf_to_volume,
    fixed_volume_nodes, region_surface_vertices).  The fixed face is x=0 and
    the contact region is the interior of the top face z=lz.
    """
    nodes, tets = grid_bar_mesh(nx, ny, nz, lx, ly, lz)
    verts, tris, surf_to_vol = extract_surface(nodes, tets)

    fixed = np.where(np.isclose(nodes[:, 0], 0.0))[0]

    eps = 1e-9 * max(lx, ly, lz)
    on_top = np.isclose(verts[:, 2], lz, atol=eps)
    interior = ((verts[:, 0] > eps) & (verts[:, 0] < lx - eps)
                & (verts[:, 1] > eps) & (verts[:, 1] < ly - eps))
    region = np.where(on_top & interior)[0]
    return nodes, tets, verts, tris, surf_to_vol, fixed, region


def write_off(path: str, vertices: np.ndarray, triangles: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(vertices)} {len(triangles)} 0\n")
        for v in vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def write_tetgen(node_path: str, ele_path: str, nodes: np.ndarray,
                 tets: np.ndarray) -> None:
    with open(node_path, "w") as fh:
        fh.write(f"{len(nodes)} 3 0 0\n")
        for i, v in enumerate(nodes):
            fh.write(f"{i} {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
    with open(ele_path, "w") as fh:
        fh.write(f"{len(tets)} 4 0\n")
        for i, t in enumerate(tets):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")


def write_indices(path: str, indices) -> None:
    with open(path, "w") as fh:
        for i in indices:
            fh.write(f"{int(i)}\n")


def write_benchmark(out_dir: str, nx: int = 30, ny: int = 8, nz: int = 5,
                    lx: float = 8.0, ly: float = 2.0, lz: float = 1.0,
                    **config_overrides) -> BenchmarkPaths:
    """Write the bar benchmark mesh set plus a ready-to-run config file."""
    os.makedirs(out_dir, exist_ok=True)
    nodes, tets, verts, tris, _, fixed, region = bar_problem_arrays(
        nx, ny, nz, lx, ly, lz)

    paths = BenchmarkPaths(
        surface=os.path.join(out_dir, "bar.off"),
        volume_nodes=os.path.join(out_dir, "bar.node"),
        volume_elements=os.path.join(out_dir, "bar.ele"),
        fixed_nodes=os.path.join(out_dir, "bar.fixed"),
        contact_region=os.path.join(out_dir, "bar.region"),
        config=os.path.join(out_dir, "bar.cfg"),
    )
    write_off(paths.surface, verts, tris)
    write_tetgen(paths.volume_nodes, paths.volume_elements, nodes, tets)
    write_indices(paths.fixed_nodes, fixed)
    write_indices(paths.contact_region, region)

    # Mesh paths go into the config relative to the config file itself.
    settings = {
        "surface_mesh": os.path.basename(paths.surface),
        "volume_nodes": os.path.basename(paths.volume_nodes),
        "volume_elements": os.path.basename(paths.volume_elements),
        "fixed_nodes": os.path.basename(paths.fixed_nodes),
        "contact_region": os.path.basename(paths.contact_region),
        "young_modulus": 1e9,
        "poisson_ratio": 0.3,
        "footprint_radius_rel": 0.05,
        "force_magnitude": 1.0,
        "basis_size": 15,
        "method": "greedy",
        "methods": "greedy,uniform,levscore,kmeans,sampling",
        "n_fl": 25,
        "top_k": 40,
        "delta": "0,0.05,0.1",
        "seed": 0,
        "trials": 10,
        "output_dir": "out",
    }
    settings.update(config_overrides)
    with open(paths.config, "w") as fh:
        fh.write("# anchored-bar benchmark configuration\n")
        for key, value in settings.items():
            fh.write(f"{key} = {value}\n")
    return paths
