"""
Surface and volume meshes of the design boundary, with the measures the model
problem needs (perimeter, signed area, node radii) and their analytic
derivatives.

Coordinates of a mesh are (n, 2) arrays. Flattened coordinate vectors use
node-major order [x0, y0, x1, y1, ...].
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from shapeopt.core.exceptions import InvalidMeshError, UnsupportedOperationError

DIM = 2
MIN_EDGE_LENGTH = 1e-14


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Polyline design boundary. Closed curves store no duplicated end node."""
    nodes: np.ndarray
    closed: bool = True
    reference: Optional[np.ndarray] = None  # baseline angle in [0, 2pi) or chord fraction in [0, 1]

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != DIM:
            raise InvalidMeshError("nodes must have shape (n, 2)", shape=list(nodes.shape))
        minimum = 3 if self.closed else 2
        if nodes.shape[0] < minimum:
            raise InvalidMeshError(
                f"{'closed' if self.closed else 'open'} curve needs at least {minimum} nodes",
                n_nodes=int(nodes.shape[0]),
            )
        lengths = np.linalg.norm(_edge_vectors(nodes, self.closed), axis=1)
        if np.any(lengths <= MIN_EDGE_LENGTH):
            raise InvalidMeshError("consecutive nodes coincide", edge=int(np.argmin(lengths)))
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if self.reference is not None:
            reference = np.array(self.reference, dtype=float)
            if reference.shape != (nodes.shape[0],):
                raise InvalidMeshError("reference must hold one value per node")
            reference.setflags(write=False)
            object.__setattr__(self, "reference", reference)

    @classmethod
    def from_nodes(cls, nodes, closed: bool = True, reference=None, require_ccw: bool = True) -> "SurfaceMesh":
        """Validating constructor; closed curves must be counter-clockwise unless disabled."""
        mesh = cls(nodes=nodes, closed=closed, reference=reference)
        if closed and require_ccw and signed_area(mesh) <= 0.0:
            raise InvalidMeshError("closed curve must be counter-clockwise (signed area > 0)")
        return mesh

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def coordinates(self) -> np.ndarray:
        """Flattened node-major coordinates."""
        return self.nodes.reshape(-1)

    def with_coordinates(self, coordinates: np.ndarray) -> "SurfaceMesh":
        """Copy with new node positions and the same reference data."""
        return SurfaceMesh(
            nodes=np.asarray(coordinates, dtype=float).reshape(-1, DIM),
            closed=self.closed,
            reference=self.reference,
        )

    def reversed(self) -> "SurfaceMesh":
        reference = None if self.reference is None else self.reference[::-1]
        return SurfaceMesh(nodes=self.nodes[::-1], closed=self.closed, reference=reference)

    def edges(self) -> np.ndarray:
        n = self.n_nodes
        start = np.arange(n if self.closed else n - 1)
        return np.column_stack([start, (start + 1) % n])

    def outward_normals(self) -> np.ndarray:
        """Unit node normals: average of adjacent edge normals (outward for CCW curves)."""
        tangents = _edge_vectors(self.nodes, self.closed)
        edge_normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
        edge_normals /= np.linalg.norm(edge_normals, axis=1)[:, None]
        normals = np.zeros_like(self.nodes)
        edges = self.edges()
        np.add.at(normals, edges[:, 0], edge_normals)
        np.add.at(normals, edges[:, 1], edge_normals)
        return normals / np.linalg.norm(normals, axis=1)[:, None]


@dataclass(frozen=True, eq=False)
class VolumeMesh:
    """Layered annulus mesh: layer k holds nodes k*n_s .. (k+1)*n_s - 1."""
    nodes: np.ndarray
    layer_fractions: np.ndarray
    n_surface: int
    connectivity: np.ndarray = field(repr=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        fractions = np.array(self.layer_fractions, dtype=float)
        n_layers = fractions.shape[0]
        if nodes.shape != (self.n_surface * n_layers, DIM):
            raise InvalidMeshError(
                "node count must equal n_s x (L+1)",
                n_nodes=int(nodes.shape[0]), n_surface=self.n_surface, layers=n_layers,
            )
        if n_layers < 2 or np.any(np.diff(fractions) <= 0.0):
            raise InvalidMeshError("layer fractions must be strictly increasing")
        if fractions[0] != 0.0 or fractions[-1] != 1.0:
            raise InvalidMeshError("layer fractions must start at 0 and end at 1")
        for array in (nodes, fractions):
            array.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "layer_fractions", fractions)

    @property
    def n_layers(self) -> int:
        """Number of node layers (L + 1)."""
        return self.layer_fractions.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def coordinates(self) -> np.ndarray:
        return self.nodes.reshape(-1)

    @property
    def outer_nodes(self) -> np.ndarray:
        return self.nodes[-self.n_surface:]

    def layer(self, k: int) -> np.ndarray:
        return self.nodes[k * self.n_surface:(k + 1) * self.n_surface]

    def layer_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_layers), self.n_surface)

    def with_coordinates(self, coordinates: np.ndarray) -> "VolumeMesh":
        return VolumeMesh(
            nodes=np.asarray(coordinates, dtype=float).reshape(-1, DIM),
            layer_fractions=self.layer_fractions,
            n_surface=self.n_surface,
            connectivity=self.connectivity,
        )


def _edge_vectors(nodes: np.ndarray, closed: bool) -> np.ndarray:
    if closed:
        return np.roll(nodes, -1, axis=0) - nodes
    return nodes[1:] - nodes[:-1]


def unit_circle_surface(n_s: int, radius: float = 1.0, center: Sequence[float] = (0.0, 0.0)) -> SurfaceMesh:
    """Regular counter-clockwise n-gon inscribed in a circle; node 0 at angle 0."""
    if n_s < 3:
        raise InvalidMeshError("a closed circle needs at least 3 nodes", n_nodes=n_s)
    if radius <= 0.0:
        raise InvalidMeshError("radius must be positive", radius=radius)
    angles = 2.0 * np.pi * np.arange(n_s) / n_s
    nodes = np.asarray(center, dtype=float) + radius * np.column_stack([np.cos(angles), np.sin(angles)])
    return SurfaceMesh.from_nodes(nodes, closed=True, reference=angles)


def chord_surface(n_s: int, length: float = 1.0) -> SurfaceMesh:
    """Open flat chord y = 0 from x = 0 to x = length; reference is the chord fraction."""
    if n_s < 2:
        raise InvalidMeshError("an open chord needs at least 2 nodes", n_nodes=n_s)
    fractions = np.linspace(0.0, 1.0, n_s)
    nodes = np.column_stack([length * fractions, np.zeros(n_s)])
    return SurfaceMesh.from_nodes(nodes, closed=False, reference=fractions)


def perimeter(mesh: SurfaceMesh) -> float:
    """Sum of edge lengths, including the closing edge of closed curves."""
    return float(np.sum(np.linalg.norm(_edge_vectors(mesh.nodes, mesh.closed), axis=1)))


def signed_area(mesh: SurfaceMesh) -> float:
    """Shoelace formula; positive for counter-clockwise orientation."""
    if not mesh.closed:
        raise UnsupportedOperationError("signed_area", "open curves enclose no area")
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def node_radius(mesh: SurfaceMesh, center: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
    """Euclidean distance of every node from center."""
    return np.linalg.norm(mesh.nodes - np.asarray(center, dtype=float), axis=1)


def perimeter_gradient(nodes: np.ndarray, closed: bool = True) -> np.ndarray:
    """d perimeter / d nodes, shape (n, 2)."""
    nodes = np.asarray(nodes, dtype=float).reshape(-1, DIM)
    tangents = _edge_vectors(nodes, closed)
    units = tangents / np.linalg.norm(tangents, axis=1)[:, None]
    grad = np.zeros_like(nodes)
    n = nodes.shape[0]
    start = np.arange(tangents.shape[0])
    end = (start + 1) % n
    np.add.at(grad, start, -units)
    np.add.at(grad, end, units)
    return grad


def perimeter_hessian(nodes: np.ndarray, closed: bool = True) -> np.ndarray:
    """Dense Hessian of the perimeter over flattened coordinates, shape (2n, 2n)."""
    nodes = np.asarray(nodes, dtype=float).reshape(-1, DIM)
    n = nodes.shape[0]
    hessian = np.zeros((DIM * n, DIM * n))
    tangents = _edge_vectors(nodes, closed)
    for e, t in enumerate(tangents):
        length = np.linalg.norm(t)
        unit = t / length
        block = (np.eye(DIM) - np.outer(unit, unit)) / length
        a, b = e, (e + 1) % n
        sa, sb = slice(DIM * a, DIM * a + DIM), slice(DIM * b, DIM * b + DIM)
        hessian[sa, sa] += block
        hessian[sb, sb] += block
        hessian[sa, sb] -= block
        hessian[sb, sa] -= block
    return hessian


def signed_area_gradient(nodes: np.ndarray) -> np.ndarray:
    """d signed_area / d nodes of a closed curve, shape (n, 2)."""
    nodes = np.asarray(nodes, dtype=float).reshape(-1, DIM)
    following = np.roll(nodes, -1, axis=0)
    preceding = np.roll(nodes, 1, axis=0)
    return 0.5 * np.column_stack([following[:, 1] - preceding[:, 1], preceding[:, 0] - following[:, 0]])


def write_surface_csv(mesh: SurfaceMesh, path: Union[str, Path]) -> Path:
    """Dump a surface as CSV with header index,x,y."""
    path = Path(path)
    table = np.column_stack([np.arange(mesh.n_nodes), mesh.nodes])
    np.savetxt(path, table, delimiter=",", header="index,x,y", comments="", fmt=["%d", "%.17g", "%.17g"])
    return path


def write_volume_csv(volume: VolumeMesh, path: Union[str, Path]) -> Path:
    """Dump a volume mesh as CSV with header index,x,y,layer."""
    path = Path(path)
    table = np.column_stack([np.arange(volume.n_nodes), volume.nodes, volume.layer_index()])
    np.savetxt(path, table, delimiter=",", header="index,x,y,layer", comments="",
               fmt=["%d", "%.17g", "%.17g", "%d"])
    return path


def read_surface_csv(path: Union[str, Path], closed: bool = True) -> SurfaceMesh:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return SurfaceMesh(nodes=table[:, 1:3], closed=closed)
