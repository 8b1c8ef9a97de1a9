import numpy as np
import pytest

from shapeopt.core.exceptions import InvalidMeshError, UnsupportedOperationError
from shapeopt.services.deformation import build_volume
from shapeopt.services.geometry import (
    SurfaceMesh,
    chord_surface,
    node_radius,
    perimeter,
    perimeter_gradient,
    perimeter_hessian,
    read_surface_csv,
    signed_area,
    signed_area_gradient,
    unit_circle_surface,
    write_surface_csv,
    write_volume_csv,
)

UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]


def _fd_gradient(fn, nodes, h=1e-6):
    flat = nodes.reshape(-1).copy()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        grad[i] = (fn(flat + e) - fn(flat - e)) / (2 * h)
    return grad


def test_unit_circle_four_nodes():
    surface = unit_circle_surface(4, 1.0)
    np.testing.assert_allclose(surface.nodes, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)
    assert surface.closed
    np.testing.assert_allclose(surface.reference, [0, np.pi / 2, np.pi, 3 * np.pi / 2])


def test_unit_circle_triangle_is_equilateral():
    surface = unit_circle_surface(3, 1.0)
    sides = np.linalg.norm(np.roll(surface.nodes, -1, axis=0) - surface.nodes, axis=1)
    np.testing.assert_allclose(sides, np.sqrt(3.0))


def test_unit_circle_needs_three_nodes():
    with pytest.raises(InvalidMeshError):
        unit_circle_surface(2, 1.0)


def test_perimeter_values():
    assert perimeter(SurfaceMesh(np.array(UNIT_SQUARE))) == pytest.approx(4.0)
    assert perimeter(unit_circle_surface(4)) == pytest.approx(4 * np.sqrt(2.0), abs=1e-12)
    assert perimeter(unit_circle_surface(64)) == pytest.approx(2 * 64 * np.sin(np.pi / 64), abs=1e-12)


def test_open_chord_perimeter():
    assert perimeter(chord_surface(11, 2.0)) == pytest.approx(2.0)


def test_signed_area_orientation():
    square = SurfaceMesh.from_nodes(UNIT_SQUARE)
    assert signed_area(square) == pytest.approx(1.0)
    assert signed_area(square.reversed()) == pytest.approx(-1.0)
    assert signed_area(unit_circle_surface(4)) == pytest.approx(2.0)


def test_signed_area_rejects_open_curve():
    with pytest.raises(UnsupportedOperationError):
        signed_area(chord_surface(5))


def test_clockwise_closed_curve_rejected():
    with pytest.raises(InvalidMeshError):
        SurfaceMesh.from_nodes(UNIT_SQUARE[::-1])


def test_coincident_nodes_rejected():
    with pytest.raises(InvalidMeshError):
        SurfaceMesh(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]))


def test_node_radius():
    np.testing.assert_allclose(node_radius(unit_circle_surface(16)), 1.0)
    open_curve = SurfaceMesh(np.array([[3.0, 4.0], [0.0, 0.0]]), closed=False)
    np.testing.assert_allclose(node_radius(open_curve), [5.0, 0.0])
    assert node_radius(open_curve, center=(3.0, 4.0))[0] == 0.0


def test_nodes_are_read_only():
    surface = unit_circle_surface(8)
    with pytest.raises(ValueError):
        surface.nodes[0, 0] = 2.0


def test_perimeter_gradient_matches_fd(rng):
    nodes = unit_circle_surface(9).nodes + 0.05 * rng.standard_normal((9, 2))
    fd = _fd_gradient(lambda x: perimeter(SurfaceMesh(x.reshape(-1, 2))), nodes)
    np.testing.assert_allclose(perimeter_gradient(nodes).reshape(-1), fd, atol=1e-8)


def test_signed_area_gradient_matches_fd(rng):
    nodes = unit_circle_surface(9).nodes + 0.05 * rng.standard_normal((9, 2))
    fd = _fd_gradient(lambda x: signed_area(SurfaceMesh(x.reshape(-1, 2))), nodes)
    np.testing.assert_allclose(signed_area_gradient(nodes).reshape(-1), fd, atol=1e-8)


def test_perimeter_hessian_matches_fd_of_gradient(rng):
    nodes = unit_circle_surface(7).nodes + 0.05 * rng.standard_normal((7, 2))
    flat = nodes.reshape(-1)
    h = 1e-6
    columns = []
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        columns.append((perimeter_gradient(flat + e) - perimeter_gradient(flat - e)).reshape(-1) / (2 * h))
    hessian = perimeter_hessian(nodes)
    np.testing.assert_allclose(hessian, np.column_stack(columns), atol=1e-7)
    np.testing.assert_allclose(hessian, hessian.T)


def test_surface_csv_round_trip(tmp_path):
    surface = unit_circle_surface(12)
    path = write_surface_csv(surface, tmp_path / "surface.csv")
    assert path.read_text().splitlines()[0] == "index,x,y"
    np.testing.assert_array_equal(read_surface_csv(path).nodes, surface.nodes)


def test_volume_csv_has_layers(tmp_path):
    volume, _ = build_volume(unit_circle_surface(8), 2, 3.0)
    lines = write_volume_csv(volume, tmp_path / "volume.csv").read_text().splitlines()
    assert lines[0] == "index,x,y,layer"
    assert len(lines) == 1 + 8 * 3
    assert lines[-1].endswith(",2")
