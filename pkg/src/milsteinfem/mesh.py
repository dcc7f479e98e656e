"""Structured triangulations of a square domain with homogeneous Dirichlet data.

The mesh generator splits every grid cell of an ``n_div`` x ``n_div``
subdivision of ``(x0, x0+L) x (y0, y0+L)`` into two right triangles along the
same diagonal, which keeps every triangle nonobtuse.  Nonobtuseness makes the
per-edge cotangent condition checked by :func:`check_mesh_condition` hold with
margin, and in turn makes the assembled stiffness matrix an M-matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh parameters or broken mesh invariants."""


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of a square with Dirichlet boundary flags.

    Attributes
    ----------
    vertices : (nv, 2) float array of vertex coordinates.
    triangles : (nt, 3) int array, counterclockwise vertex triples.
    boundary_mask : (nv,) bool array, True on the square's boundary.
    interior_edges : (ne, 2) int array of vertex pairs shared by two triangles.
    edge_triangles : (ne, 2) int array, the two triangles adjacent to each
        interior edge (same row order as ``interior_edges``).
    free_vertices : (nf,) int array mapping free dof -> vertex index.
    vertex_to_free : (nv,) int array mapping vertex -> free dof (-1 on boundary).
    L : side length of the square domain.
    origin : lower-left corner (x0, y0).
    n_div : subdivisions per side used by the structured generator.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray
    interior_edges: np.ndarray
    edge_triangles: np.ndarray
    free_vertices: np.ndarray
    vertex_to_free: np.ndarray
    L: float
    origin: tuple
    n_div: int

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def num_free(self) -> int:
        return self.free_vertices.shape[0]

    @property
    def h(self) -> float:
        """Grid spacing of the structured generator (leg length, not diameter)."""
        return self.L / self.n_div

    def triangle_areas(self) -> np.ndarray:
        """Signed areas of all triangles (positive for CCW orientation)."""
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Copy of this mesh with replaced coordinates (same connectivity).

        The caller is responsible for re-running :func:`validate_mesh`; moving
        vertices can flip orientations or break the boundary placement.
        """
        vertices = np.asarray(vertices, dtype=float)
        if vertices.shape != self.vertices.shape:
            raise MeshError("replacement vertex array has wrong shape")
        return replace(self, vertices=vertices)


def build_structured_mesh(L: float, n_div: int, origin=(0.0, 0.0)) -> Mesh:
    """Uniform right-triangle mesh of the square ``origin + (0,L)^2``.

    Every cell is split along the diagonal from its lower-left to its
    upper-right corner, producing ``2*n_div**2`` counterclockwise triangles
    over ``(n_div+1)**2`` grid vertices.
    """
    if n_div < 1:
        raise MeshError(f"n_div must be >= 1, got {n_div}")
    if not (L > 0):
        raise MeshError(f"side length L must be positive, got {L}")
    x0, y0 = float(origin[0]), float(origin[1])
    n = int(n_div)
    m = n + 1

    xs = x0 + (L / n) * np.arange(m)
    ys = y0 + (L / n) * np.arange(m)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])  # index = j*m + i

    cells_i, cells_j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (cells_j * m + cells_i).ravel()
    v10 = v00 + 1
    v01 = v00 + m
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.vstack([lower, upper])

    gi = np.arange(vertices.shape[0]) % m
    gj = np.arange(vertices.shape[0]) // m
    boundary_mask = (gi == 0) | (gi == n) | (gj == 0) | (gj == n)

    interior_edges, edge_triangles = _edge_topology(triangles, vertices.shape[0])

    free_vertices = np.flatnonzero(~boundary_mask)
    vertex_to_free = np.full(vertices.shape[0], -1, dtype=int)
    vertex_to_free[free_vertices] = np.arange(free_vertices.size)

    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_mask=boundary_mask,
        interior_edges=interior_edges,
        edge_triangles=edge_triangles,
        free_vertices=free_vertices,
        vertex_to_free=vertex_to_free,
        L=float(L),
        origin=(x0, y0),
        n_div=n,
    )
    validate_mesh(mesh)
    return mesh


def _edge_topology(triangles: np.ndarray, num_vertices: int):
    """Interior edge list and adjacent-triangle pairs; checks conformity."""
    nt = triangles.shape[0]
    tri_ids = np.repeat(np.arange(nt), 3)
    a = triangles[:, [0, 1, 2]].ravel()
    b = triangles[:, [1, 2, 0]].ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    keys = lo.astype(np.int64) * num_vertices + hi.astype(np.int64)
    order = np.argsort(keys, kind="stable")
    keys_sorted = keys[order]
    tri_sorted = tri_ids[order]

    uniq, start, counts = np.unique(keys_sorted, return_index=True, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: an edge is shared by >2 triangles")
    shared = counts == 2
    first = tri_sorted[start[shared]]
    second = tri_sorted[start[shared] + 1]
    interior_keys = uniq[shared]
    interior_edges = np.column_stack(
        [interior_keys // num_vertices, interior_keys % num_vertices]
    ).astype(int)
    edge_triangles = np.column_stack([first, second]).astype(int)
    return interior_edges, edge_triangles


def validate_mesh(mesh: Mesh, tol: float = 1e-12) -> None:
    """Check the mesh invariants; raise :class:`MeshError` on violation.

    Checks: positive triangle areas, index ranges, boundary vertices sitting
    on the configured square, interior vertices strictly inside, the free-dof
    map being a bijection on non-boundary vertices, and 2/1 edge sharing.
    """
    nv = mesh.num_vertices
    tris = mesh.triangles
    if tris.min() < 0 or tris.max() >= nv:
        raise MeshError("triangle vertex index out of range")

    areas = mesh.triangle_areas()
    if np.any(areas <= 0):
        bad = int(np.argmin(areas))
        raise MeshError(f"triangle {bad} has non-positive signed area {areas[bad]:g}")

    x0, y0 = mesh.origin
    x1, y1 = x0 + mesh.L, y0 + mesh.L
    scale = max(1.0, abs(mesh.L))
    on_edge = (
        (np.abs(mesh.vertices[:, 0] - x0) <= tol * scale)
        | (np.abs(mesh.vertices[:, 0] - x1) <= tol * scale)
        | (np.abs(mesh.vertices[:, 1] - y0) <= tol * scale)
        | (np.abs(mesh.vertices[:, 1] - y1) <= tol * scale)
    )
    if np.any(mesh.boundary_mask & ~on_edge):
        bad = int(np.flatnonzero(mesh.boundary_mask & ~on_edge)[0])
        raise MeshError(f"boundary vertex {bad} does not lie on the square boundary")
    if np.any(~mesh.boundary_mask & on_edge):
        bad = int(np.flatnonzero(~mesh.boundary_mask & on_edge)[0])
        raise MeshError(f"interior vertex {bad} lies on the square boundary")

    free = mesh.free_vertices
    if free.size != np.count_nonzero(~mesh.boundary_mask):
        raise MeshError("free dof count does not match non-boundary vertex count")
    if np.any(mesh.boundary_mask[free]):
        raise MeshError("free dof map contains a boundary vertex")
    if np.unique(free).size != free.size:
        raise MeshError("free dof map is not injective")
    if not np.array_equal(mesh.vertex_to_free[free], np.arange(free.size)):
        raise MeshError("vertex_to_free is inconsistent with free_vertices")

    # Edge sharing: recompute from connectivity and compare interior count.
    interior_edges, _ = _edge_topology(tris, nv)
    if interior_edges.shape[0] != mesh.interior_edges.shape[0]:
        raise MeshError("stored interior edge list is inconsistent with triangles")


@dataclass(frozen=True)
class EdgeConditionReport:
    """Per-interior-edge cotangent sums and the overall pass flag."""

    edges: np.ndarray       # (ne, 2) vertex pairs
    cot_sums: np.ndarray    # (ne,) sum of the two opposite-angle cotangents
    tol: float
    passed: bool

    @property
    def worst_edge(self) -> int:
        """Row index of the edge with the smallest cotangent sum."""
        return int(np.argmin(self.cot_sums))

    def failing_edges(self) -> np.ndarray:
        return np.flatnonzero(self.cot_sums < -self.tol)


def check_mesh_condition(mesh: Mesh, tol_geom: float = 1e-12) -> EdgeConditionReport:
    """Per-edge opposite-angle cotangent sums for the 2D mesh condition.

    For every interior edge the two angles opposite to it (one per adjacent
    triangle) must satisfy cot(t1) + cot(t2) >= 0, i.e. the triangulation is
    Delaunay.  Sums down to ``-tol_geom`` pass, absorbing round-off.
    """
    ne = mesh.interior_edges.shape[0]
    cot_sums = np.zeros(ne)
    for side in range(2):
        tris = mesh.triangles[mesh.edge_triangles[:, side]]
        # opposite vertex = the triangle vertex not on the edge
        on_edge = (tris[:, :, None] == mesh.interior_edges[:, None, :]).any(axis=2)
        opp_local = np.argmin(on_edge, axis=1)
        opp = tris[np.arange(ne), opp_local]
        pa = mesh.vertices[mesh.interior_edges[:, 0]] - mesh.vertices[opp]
        pb = mesh.vertices[mesh.interior_edges[:, 1]] - mesh.vertices[opp]
        dot = (pa * pb).sum(axis=1)
        cross = np.abs(pa[:, 0] * pb[:, 1] - pa[:, 1] * pb[:, 0])
        cot_sums += dot / cross
    passed = bool(np.all(cot_sums >= -tol_geom))
    return EdgeConditionReport(
        edges=mesh.interior_edges.copy(), cot_sums=cot_sums, tol=tol_geom, passed=passed
    )
