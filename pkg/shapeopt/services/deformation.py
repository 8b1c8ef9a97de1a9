"""
Surface-to-volume mesh deformation V(s) and the composed design map M(p) = V(S(p)).
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from shapeopt.core.exceptions import DimensionMismatchError, InvalidMeshError, InvalidParameterError
from shapeopt.services.geometry import DIM, SurfaceMesh, VolumeMesh, node_radius
from shapeopt.services.parameterization import Parameterization

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RadialBlendDeformer:
    """
    Volume node (i, k) = (1 - t_k) s_i + t_k outer_i.

    Affine in the surface coordinates, so its Jacobian is constant and
    D_ss V vanishes.
    """
    layer_fractions: np.ndarray
    outer_nodes: np.ndarray
    n_s: int

    def __post_init__(self):
        fractions = np.array(self.layer_fractions, dtype=float)
        outer = np.array(self.outer_nodes, dtype=float)
        if outer.shape != (self.n_s, DIM):
            raise DimensionMismatchError("outer_nodes", (self.n_s, DIM), outer.shape)
        fractions.setflags(write=False)
        outer.setflags(write=False)
        object.__setattr__(self, "layer_fractions", fractions)
        object.__setattr__(self, "outer_nodes", outer)

    @property
    def n_layers(self) -> int:
        return self.layer_fractions.shape[0]

    @property
    def surface_size(self) -> int:
        return DIM * self.n_s

    @property
    def volume_size(self) -> int:
        return DIM * self.n_s * self.n_layers

    def _check(self, vector: np.ndarray, expected: int, name: str) -> np.ndarray:
        vector = np.asarray(vector, dtype=float).reshape(-1)
        if vector.shape[0] != expected:
            raise DimensionMismatchError(name, expected, vector.shape[0])
        return vector

    def deform(self, s: np.ndarray) -> np.ndarray:
        """Volume coordinates for surface coordinates s."""
        surface = self._check(s, self.surface_size, "s").reshape(self.n_s, DIM)
        t = self.layer_fractions[:, None, None]
        volume = (1.0 - t) * surface[None, :, :] + t * self.outer_nodes[None, :, :]
        return volume.reshape(-1)

    def deform_jvp(self, ds: np.ndarray) -> np.ndarray:
        ds = self._check(ds, self.surface_size, "ds").reshape(self.n_s, DIM)
        t = self.layer_fractions[:, None, None]
        return ((1.0 - t) * ds[None, :, :]).reshape(-1)

    def deform_vjp(self, wm: np.ndarray) -> np.ndarray:
        wm = self._check(wm, self.volume_size, "wm").reshape(self.n_layers, self.n_s, DIM)
        weights = (1.0 - self.layer_fractions)[:, None, None]
        return np.sum(weights * wm, axis=0).reshape(-1)

    def jacobian(self) -> np.ndarray:
        """Dense D_s V, shape (d n_m, d n_s)."""
        block = np.eye(self.surface_size)
        return np.vstack([(1.0 - t) * block for t in self.layer_fractions])

    def second_derivative_contraction(self, wm: np.ndarray) -> np.ndarray:
        """sum_k w_k D_ss V_k over surface coordinates; identically zero for the blend."""
        self._check(wm, self.volume_size, "wm")
        return np.zeros((self.surface_size, self.surface_size))

    def volume_mesh(self, s: np.ndarray, connectivity: np.ndarray) -> VolumeMesh:
        return VolumeMesh(
            nodes=self.deform(s).reshape(-1, DIM),
            layer_fractions=self.layer_fractions,
            n_surface=self.n_s,
            connectivity=connectivity,
        )


def layered_connectivity(n_s: int, n_layers: int, closed: bool = True) -> np.ndarray:
    """Graph edges of the layered mesh: rings within each layer plus radial edges between layers."""
    edges = []
    ring = np.arange(n_s if closed else n_s - 1)
    for k in range(n_layers):
        offset = k * n_s
        edges.append(np.column_stack([offset + ring, offset + (ring + 1) % n_s]))
        if k + 1 < n_layers:
            nodes = np.arange(n_s)
            edges.append(np.column_stack([offset + nodes, offset + n_s + nodes]))
    return np.vstack(edges).astype(int)


def build_volume(surface: SurfaceMesh, layers: int, outer_radius: float,
                 center: Sequence[float] = (0.0, 0.0)) -> Tuple[VolumeMesh, RadialBlendDeformer]:
    """
    Layered annulus between a closed surface and a circle of outer_radius.

    Layer fractions are uniform, t_k = k / L. Outer nodes sit on the circle at
    the baseline angles of the surface nodes (the polar angle when no angles
    are stored).
    """
    if layers < 1:
        raise InvalidParameterError("layers", "need at least one layer")
    if not surface.closed:
        raise InvalidMeshError("volume meshes need a closed surface")
    center = np.asarray(center, dtype=float)
    max_radius = float(np.max(node_radius(surface, center)))
    if outer_radius <= max_radius:
        raise InvalidMeshError(
            "outer radius must enclose the surface",
            outer_radius=outer_radius, max_node_radius=max_radius,
        )
    if surface.reference is not None:
        angles = surface.reference
    else:
        offsets = surface.nodes - center
        angles = np.arctan2(offsets[:, 1], offsets[:, 0])
    outer = center + outer_radius * np.column_stack([np.cos(angles), np.sin(angles)])
    fractions = np.arange(layers + 1) / layers
    deformer = RadialBlendDeformer(layer_fractions=fractions, outer_nodes=outer, n_s=surface.n_nodes)
    connectivity = layered_connectivity(surface.n_nodes, layers + 1)
    volume = deformer.volume_mesh(surface.coordinates, connectivity)
    logger.debug(f"Built volume mesh: {volume.n_nodes} nodes in {layers + 1} layers, outer radius {outer_radius}")
    return volume, deformer


@dataclass(eq=False)
class DesignMap:
    """
    Composition M(p) = V(S(p)) of a parameterization and a deformer.

    The surface Jacobian is cached for linear parameterizations.
    """
    param: Parameterization
    deformer: RadialBlendDeformer
    connectivity: Optional[np.ndarray] = None
    _surface_jacobian: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.param.baseline.n_nodes != self.deformer.n_s:
            raise DimensionMismatchError("deformer.n_s", self.param.baseline.n_nodes, self.deformer.n_s)
        if self.connectivity is None:
            self.connectivity = layered_connectivity(self.deformer.n_s, self.deformer.n_layers)

    @property
    def n_params(self) -> int:
        return self.param.n_params

    @property
    def is_linear(self) -> bool:
        return self.param.is_linear

    def surface(self, p: np.ndarray) -> SurfaceMesh:
        return self.param.apply(p)

    def mesh(self, p: np.ndarray) -> np.ndarray:
        """Flattened volume coordinates M(p)."""
        return self.deformer.deform(self.param.apply(p).coordinates)

    def volume(self, p: np.ndarray) -> VolumeMesh:
        return self.deformer.volume_mesh(self.param.apply(p).coordinates, self.connectivity)

    def jvp(self, p: np.ndarray, dp: np.ndarray) -> np.ndarray:
        return self.deformer.deform_jvp(self.param.jvp(p, dp))

    def vjp(self, p: np.ndarray, wm: np.ndarray) -> np.ndarray:
        return self.param.vjp(p, self.deformer.deform_vjp(wm))

    def surface_jacobian(self, p: np.ndarray) -> np.ndarray:
        """J_S assembled column by column."""
        if self.param.is_linear:
            if self._surface_jacobian is None:
                self._surface_jacobian = self.param.jacobian(p)
            return self._surface_jacobian
        return self.param.jacobian(p)

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        """J_M = D_s V J_S."""
        return self.deformer.jacobian() @ self.surface_jacobian(p)

    def second_derivative_contraction(self, p: np.ndarray, wm: np.ndarray) -> np.ndarray:
        """
        sum_k w_k D_pp M_k(p) for a mesh covector w, reduced by the chain rule:
        D_pp S contracted with D_s V^T w plus J_S^T (sum_k w_k D_ss V_k) J_S.
        """
        surface_covector = self.deformer.deform_vjp(wm)
        term = self.param.second_derivative_contraction(p, surface_covector)
        cross = self.deformer.second_derivative_contraction(wm)
        if np.any(cross):
            j_s = self.surface_jacobian(p)
            term = term + j_s.T @ cross @ j_s
        return term
