import numpy as np
import pytest

from milsteinfem import MeshError, build_structured_mesh, check_mesh_condition
from milsteinfem.mesh import validate_mesh


def test_single_cell_counts():
    mesh = build_structured_mesh(2.0, 1, origin=(-1, -1))
    assert mesh.num_vertices == 4
    assert mesh.num_triangles == 2
    assert mesh.interior_edges.shape[0] == 1
    assert mesh.num_free == 0


def test_two_cell_counts():
    mesh = build_structured_mesh(2.0, 2, origin=(-1, -1))
    assert mesh.num_vertices == 9
    assert mesh.num_triangles == 8
    assert mesh.num_free == 1
    assert np.allclose(mesh.vertices[mesh.free_vertices[0]], [0.0, 0.0])


@pytest.mark.parametrize("n_div,L", [(0, 2.0), (-3, 2.0), (4, 0.0), (4, -1.0)])
def test_bad_parameters(n_div, L):
    with pytest.raises(MeshError):
        build_structured_mesh(L, n_div)


def test_areas_positive_and_boundary_flags():
    mesh = build_structured_mesh(3.0, 5, origin=(1.0, -2.0))
    assert np.all(mesh.triangle_areas() > 0)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    on_edge = (
        np.isclose(x, 1.0) | np.isclose(x, 4.0) | np.isclose(y, -2.0) | np.isclose(y, 1.0)
    )
    assert np.array_equal(mesh.boundary_mask, on_edge)
    # free dof map is a bijection on the interior vertices
    assert mesh.num_free == (5 - 1) ** 2
    assert np.array_equal(mesh.vertex_to_free[mesh.free_vertices], np.arange(mesh.num_free))


def test_interior_edge_sharing():
    mesh = build_structured_mesh(1.0, 4)
    # every interior edge is listed with two distinct adjacent triangles
    assert np.all(mesh.edge_triangles[:, 0] != mesh.edge_triangles[:, 1])
    # total edge count: 3 per triangle, interior counted twice
    n_edges_total = (3 * mesh.num_triangles + 0) // 2 + 0
    boundary_edges = 3 * mesh.num_triangles - 2 * mesh.interior_edges.shape[0]
    assert boundary_edges == 4 * mesh.n_div


def test_validate_rejects_flipped_triangle():
    mesh = build_structured_mesh(1.0, 2)
    tris = mesh.triangles.copy()
    tris[0] = tris[0][::-1]
    from dataclasses import replace

    bad = replace(mesh, triangles=tris)
    with pytest.raises(MeshError):
        validate_mesh(bad)


@pytest.mark.parametrize("n_div", [1, 2, 5, 16, 40])
def test_condition_passes_on_structured_meshes(n_div):
    mesh = build_structured_mesh(2.0, n_div, origin=(-1, -1))
    report = check_mesh_condition(mesh)
    assert report.passed
    assert np.all(report.cot_sums >= -1e-12)


def test_condition_single_diagonal_edge():
    # the square's diagonal has both opposite angles equal to pi/2
    mesh = build_structured_mesh(2.0, 1, origin=(-1, -1))
    report = check_mesh_condition(mesh)
    assert report.edges.shape[0] == 1
    assert report.passed
    assert abs(report.cot_sums[0]) <= 1e-12


def _cot_sum_oracle(mesh, edge_row):
    """Opposite-angle cotangents from raw coordinates, via arccos."""
    a, b = mesh.interior_edges[edge_row]
    total = 0.0
    for tri in mesh.edge_triangles[edge_row]:
        (opp,) = [v for v in mesh.triangles[tri] if v not in (a, b)]
        pa = mesh.vertices[a] - mesh.vertices[opp]
        pb = mesh.vertices[b] - mesh.vertices[opp]
        theta = np.arccos(pa @ pb / (np.linalg.norm(pa) * np.linalg.norm(pb)))
        total += 1.0 / np.tan(theta)
    return total


def test_condition_fails_for_displaced_interior_vertex():
    """Pushing the center vertex off-grid makes two opposite angles obtuse."""
    mesh = build_structured_mesh(2.0, 2, origin=(0, 0))
    verts = mesh.vertices.copy()
    verts[4] = (1.8, 1.0)
    skewed = mesh.with_vertices(verts)
    validate_mesh(skewed)  # still a valid mesh, just not Delaunay
    report = check_mesh_condition(skewed)
    assert not report.passed
    assert report.failing_edges().size > 0
    for row in range(report.edges.shape[0]):
        assert report.cot_sums[row] == pytest.approx(_cot_sum_oracle(skewed, row), rel=1e-9)
    assert report.cot_sums[report.worst_edge] < 0
