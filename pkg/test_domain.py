"""
Tests for domain.py: mesh construction, validation and boundary partitions
"""
import math

import numpy as np
import pytest

from domain import (
    DIRICHLET,
    NEUMANN,
    BoundaryInterval,
    Mesh,
    assign_boundary,
    build_disk_mesh,
    build_rect_mesh,
    gradient_norm,
    read_mesh,
    validate,
    write_mesh,
)
from errors import InvalidGeometryError, InvalidPartitionError, InvalidReferenceError


def test_rect_mesh_counts(square):
    assert square.n_nodes == 25
    assert square.n_triangles == 32
    assert square.n_edges == 56
    assert len(square.boundary_edges) == 16
    assert square.h == 0.25
    assert validate(square) == []


def test_rect_mesh_areas_sum_to_domain(square):
    assert np.all(square.areas > 0)
    assert math.isclose(square.areas.sum(), 1.0, rel_tol=1e-12)


def test_single_cell_mesh():
    mesh = build_rect_mesh(1.0, 1.0, 1.0)
    assert (mesh.n_nodes, mesh.n_edges, mesh.n_triangles) == (4, 5, 2)
    assert list(mesh.edge_multiplicity).count(2) == 1


def test_rect_mesh_rejects_bad_sizes():
    with pytest.raises(InvalidGeometryError):
        build_rect_mesh(1.0, 1.0, 0.0)
    with pytest.raises(InvalidGeometryError):
        build_rect_mesh(1.0, 0.5, 0.75)


def test_boundary_cycle_is_counterclockwise_from_origin(square):
    nodes, edges = square.boundary_cycle
    assert nodes[0] == 0
    assert nodes[1] == 1
    assert len(nodes) == len(edges) == 16
    assert set(edges.tolist()) == set(square.boundary_edges.tolist())


def test_disk_mesh_is_valid():
    mesh = build_disk_mesh(1.0, 0.25)
    assert validate(mesh) == []
    assert mesh.n_nodes == 1 + 3 * 4 * 5
    # the rings tile the inscribed 24-gon
    assert math.isclose(mesh.areas.sum(), 12.0 * math.sin(math.pi / 12.0), rel_tol=1e-12)


def test_validate_reports_clockwise_triangle():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 2, 1]]))
    kinds = {v.kind for v in validate(mesh)}
    assert "negative-area" in kinds


def test_validate_reports_non_manifold_edge():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 2.0]])
    triangles = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    kinds = {v.kind for v in validate(Mesh(nodes, triangles))}
    assert "non-manifold-edge" in kinds


def test_triangle_with_unknown_node_is_rejected():
    with pytest.raises(InvalidReferenceError):
        Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 3]]))


def test_partition_left_right(left_right):
    assert left_right.separator_nodes == (0, 4, 20, 24)
    assert left_right.dirichlet_nodes.tolist() == [5, 9, 10, 14, 15, 19]
    assert len(left_right.dirichlet_arcs) == 2
    assert len(left_right.neumann_arcs) == 2
    assert left_right.edge_labels.count(DIRICHLET) == 8


def test_partition_single_label_has_no_separators(square, all_dirichlet):
    assert all_dirichlet.separator_nodes == ()
    assert len(all_dirichlet.dirichlet_nodes) == 16
    pure = assign_boundary(square, [(0.0, 1.0, NEUMANN)])
    assert len(pure.dirichlet_nodes) == 0


def test_partition_rejects_gaps_and_overlaps(square):
    with pytest.raises(InvalidPartitionError):
        assign_boundary(square, [BoundaryInterval(0.0, 0.4, DIRICHLET), BoundaryInterval(0.5, 1.0, NEUMANN)])
    with pytest.raises(InvalidPartitionError):
        assign_boundary(square, [BoundaryInterval(0.0, 0.6, DIRICHLET), BoundaryInterval(0.5, 1.0, NEUMANN)])
    with pytest.raises(InvalidPartitionError):
        assign_boundary(square, [BoundaryInterval(0.0, 1.0, "robin")])


def test_gradient_norm_of_linear_fields(square):
    x, y = square.nodes[:, 0], square.nodes[:, 1]
    assert math.isclose(gradient_norm(square, x), 1.0, rel_tol=1e-12)
    assert math.isclose(gradient_norm(square, x + y), math.sqrt(2.0), rel_tol=1e-12)


def test_mesh_file_round_trip(tmp_path, square):
    path = write_mesh(square, tmp_path / "square.mesh")
    again = read_mesh(path)
    assert np.array_equal(again.nodes, square.nodes)
    assert np.array_equal(again.triangles, square.triangles)


def test_mesh_file_with_bad_header(tmp_path):
    path = tmp_path / "broken.mesh"
    path.write_text("vertices 3\n0 0\n1 0\n0 1\n")
    with pytest.raises(InvalidGeometryError):
        read_mesh(path)
