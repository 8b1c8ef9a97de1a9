"""
Design-parameter-to-surface maps S(p).

Every parameterization provides the deformed surface, forward and reverse
Jacobian products and the second-derivative contraction sum_k w_k D_pp S_k(p).
All products are analytic; flattened surface vectors are node-major.
"""

from abc import ABC, abstractmethod
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import comb

from shapeopt.core.exceptions import (
    DimensionMismatchError,
    DomainError,
    InvalidMeshError,
    InvalidParameterError,
)
from shapeopt.services.geometry import DIM, SurfaceMesh

UPPER = "upper"
LOWER = "lower"


def hicks_henne_bump(x, x_peak: float, t: float = 3.0):
    """Hicks-Henne bump sin(pi * x^(ln 0.5 / ln x_peak))^t, maximum 1 at x = x_peak."""
    if not 0.0 < x_peak < 1.0:
        raise DomainError("x_peak", x_peak, "(0, 1)")
    if t < 1.0:
        raise DomainError("t", t, "[1, inf)")
    x = np.asarray(x, dtype=float)
    outside = x[(x < 0.0) | (x > 1.0) | np.isnan(x)]
    if outside.size:
        raise DomainError("x", float(outside[0]), "[0, 1]")
    exponent = np.log(0.5) / np.log(x_peak)
    return np.sin(np.pi * x ** exponent) ** t


class Parameterization(ABC):
    """Map p -> surface with Jacobian products."""

    def __init__(self, baseline: SurfaceMesh):
        self.baseline = baseline

    @property
    @abstractmethod
    def n_params(self) -> int:
        ...

    @property
    def is_linear(self) -> bool:
        return True

    @property
    def n_surface_dofs(self) -> int:
        return DIM * self.baseline.n_nodes

    @abstractmethod
    def displacement(self, p: np.ndarray) -> np.ndarray:
        """Surface displacement S(p) - S_baseline, flattened."""

    @abstractmethod
    def jvp(self, p: np.ndarray, dp: np.ndarray) -> np.ndarray:
        """D_p S(p) dp, flattened."""

    @abstractmethod
    def vjp(self, p: np.ndarray, w: np.ndarray) -> np.ndarray:
        """D_p S(p)^T w."""

    def second_derivative_contraction(self, p: np.ndarray, w: np.ndarray) -> np.ndarray:
        """sum_k w_k D_pp S_k(p); zero for linear maps."""
        self._check_params(p)
        self._check_surface(w)
        return np.zeros((self.n_params, self.n_params))

    def apply(self, p: np.ndarray) -> SurfaceMesh:
        """Deformed copy of the baseline."""
        p = self._check_params(p)
        return self.baseline.with_coordinates(self.baseline.coordinates + self.displacement(p))

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        """Dense D_p S(p), assembled column by column from forward products."""
        p = self._check_params(p)
        columns = [self.jvp(p, unit) for unit in np.eye(self.n_params)]
        return np.column_stack(columns) if columns else np.zeros((self.n_surface_dofs, 0))

    def _check_params(self, p: np.ndarray, name: str = "p") -> np.ndarray:
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.shape[0] != self.n_params:
            raise DimensionMismatchError(name, self.n_params, p.shape[0])
        return p

    def _check_surface(self, w: np.ndarray, name: str = "w") -> np.ndarray:
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.shape[0] != self.n_surface_dofs:
            raise DimensionMismatchError(name, self.n_surface_dofs, w.shape[0])
        return w


class LinearParameterization(Parameterization):
    """Parameterization given by a constant matrix: S(p) = S0 + D p."""

    def __init__(self, baseline: SurfaceMesh, matrix: np.ndarray):
        super().__init__(baseline)
        self.matrix = np.asarray(matrix, dtype=float)
        self.matrix.setflags(write=False)

    @property
    def n_params(self) -> int:
        return self.matrix.shape[1]

    def displacement(self, p: np.ndarray) -> np.ndarray:
        return self.matrix @ self._check_params(p)

    def jvp(self, p: np.ndarray, dp: np.ndarray) -> np.ndarray:
        self._check_params(p)
        return self.matrix @ self._check_params(dp, "dp")

    def vjp(self, p: np.ndarray, w: np.ndarray) -> np.ndarray:
        self._check_params(p)
        return self.matrix.T @ self._check_surface(w)

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        self._check_params(p)
        return np.array(self.matrix)


class HicksHenneParam(LinearParameterization):
    """
    Hicks-Henne bumps scaled by the amplitudes p.

    Closed curves: chord fraction (1 - cos theta) / 2 from the baseline angle,
    upper bumps act on nodes with sin theta > 0, lower bumps on sin theta < 0,
    displacement along the baseline outward normal. Open chord curves: the
    reference is the chord fraction, upper bumps push +y and lower bumps -y.
    """

    def __init__(self, baseline: SurfaceMesh, peaks: Sequence[float], sides: Sequence[str],
                 exponent: float = 3.0):
        if len(peaks) != len(sides):
            raise DimensionMismatchError("sides", len(peaks), len(sides))
        if baseline.reference is None:
            raise InvalidMeshError("Hicks-Henne needs baseline angles or chord fractions")
        for side in sides:
            if side not in (UPPER, LOWER):
                raise InvalidParameterError("sides", f"unknown side '{side}'")
        self.peaks = np.asarray(peaks, dtype=float)
        self.sides = list(sides)
        self.exponent = float(exponent)

        n = baseline.n_nodes
        if baseline.closed:
            theta = baseline.reference
            chord = 0.5 * (1.0 - np.cos(theta))
            upper_mask = np.sin(theta) > 1e-12
            lower_mask = np.sin(theta) < -1e-12
            directions = {UPPER: baseline.outward_normals(), LOWER: baseline.outward_normals()}
        else:
            chord = baseline.reference
            upper_mask = lower_mask = np.ones(n, dtype=bool)
            directions = {
                UPPER: np.tile([0.0, 1.0], (n, 1)),
                LOWER: np.tile([0.0, -1.0], (n, 1)),
            }

        columns = []
        for peak, side in zip(self.peaks, self.sides):
            mask = upper_mask if side == UPPER else lower_mask
            values = np.where(mask, hicks_henne_bump(chord, peak, self.exponent), 0.0)
            columns.append((values[:, None] * directions[side]).reshape(-1))
        matrix = np.column_stack(columns) if columns else np.zeros((DIM * n, 0))
        super().__init__(baseline, matrix)

    @classmethod
    def uniform(cls, baseline: SurfaceMesh, per_side: int, exponent: float = 3.0) -> "HicksHenneParam":
        """per_side bumps on each side, peaks at j / (per_side + 1)."""
        peaks = [j / (per_side + 1) for j in range(1, per_side + 1)]
        return cls(baseline, peaks * 2, [UPPER] * per_side + [LOWER] * per_side, exponent)

    @classmethod
    def airfoil_preset(cls, baseline: SurfaceMesh, exponent: float = 3.0) -> "HicksHenneParam":
        """38 bumps, 19 per side, peaks at 0.05, 0.10, ..., 0.95."""
        peaks = [round(0.05 * j, 2) for j in range(1, 20)]
        return cls(baseline, peaks * 2, [UPPER] * 19 + [LOWER] * 19, exponent)


def bernstein(degree: int, index: int, u):
    u = np.asarray(u, dtype=float)
    return comb(degree, index) * u ** index * (1.0 - u) ** (degree - index)


class FFDParam(LinearParameterization):
    """
    Free-form deformation box with an n_x x n_y Bernstein control lattice.

    Local coordinates are frozen at construction, so the surface displacement
    is linear in the control point displacements. movable_axis 0 or 1 lets the
    control points move along that axis only; None moves both axes.
    Parameters are ordered lattice-major (ix, iy) then axis.
    """

    def __init__(self, baseline: SurfaceMesh, box: Sequence[float], n_x: int, n_y: int,
                 movable_axis: Optional[int] = 1):
        x_min, x_max, y_min, y_max = (float(v) for v in box)
        if x_max <= x_min or y_max <= y_min:
            raise InvalidParameterError("box", "extents must be increasing")
        if n_x < 2 or n_y < 2:
            raise InvalidParameterError("lattice", "need at least 2 control points per axis")
        nodes = baseline.nodes
        xi = (nodes[:, 0] - x_min) / (x_max - x_min)
        eta = (nodes[:, 1] - y_min) / (y_max - y_min)
        outside = np.flatnonzero((xi < 0) | (xi > 1) | (eta < 0) | (eta > 1))
        if outside.size:
            raise InvalidMeshError("baseline node outside the FFD box", node=int(outside[0]))
        self.box = (x_min, x_max, y_min, y_max)
        self.lattice = (n_x, n_y)
        self.movable_axis = movable_axis
        self.local_coordinates = np.column_stack([xi, eta])

        weights = np.stack(
            [bernstein(n_x - 1, a, xi)[:, None] * bernstein(n_y - 1, np.arange(n_y), eta[:, None])
             for a in range(n_x)],
            axis=1,
        ).reshape(nodes.shape[0], n_x * n_y)
        self.weights = weights

        axes = [0, 1] if movable_axis is None else [movable_axis]
        n = nodes.shape[0]
        matrix = np.zeros((DIM * n, n_x * n_y * len(axes)))
        for c in range(n_x * n_y):
            for k, axis in enumerate(axes):
                matrix[axis::DIM, c * len(axes) + k] = weights[:, c]
        super().__init__(baseline, matrix)

    @classmethod
    def around(cls, baseline: SurfaceMesh, n_x: int, n_y: int, margin: float = 0.1,
               movable_axis: Optional[int] = 1) -> "FFDParam":
        """Box enclosing the baseline with a relative margin on every side."""
        lo = baseline.nodes.min(axis=0)
        hi = baseline.nodes.max(axis=0)
        pad = margin * np.maximum(hi - lo, 1e-3)
        box = (lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1])
        return cls(baseline, box, n_x, n_y, movable_axis)

    def control_points(self, p: Optional[np.ndarray] = None) -> np.ndarray:
        n_x, n_y = self.lattice
        x_min, x_max, y_min, y_max = self.box
        gx, gy = np.meshgrid(np.linspace(x_min, x_max, n_x), np.linspace(y_min, y_max, n_y), indexing="ij")
        points = np.column_stack([gx.ravel(), gy.ravel()])
        if p is not None:
            p = self._check_params(p)
            axes = [0, 1] if self.movable_axis is None else [self.movable_axis]
            moves = p.reshape(n_x * n_y, len(axes))
            for k, axis in enumerate(axes):
                points[:, axis] += moves[:, k]
        return points


class FreeNodeParam(LinearParameterization):
    """Identity on the surface degrees of freedom: p is the flattened node displacement."""

    def __init__(self, baseline: SurfaceMesh):
        super().__init__(baseline, np.eye(DIM * baseline.n_nodes))

    def displacement(self, p: np.ndarray) -> np.ndarray:
        return np.array(self._check_params(p))

    def jvp(self, p: np.ndarray, dp: np.ndarray) -> np.ndarray:
        self._check_params(p)
        return np.array(self._check_params(dp, "dp"))

    def vjp(self, p: np.ndarray, w: np.ndarray) -> np.ndarray:
        self._check_params(p)
        return np.array(self._check_surface(w))


def fourier_basis(theta: np.ndarray, n_basis: int) -> np.ndarray:
    """Columns 1, cos t, sin t, cos 2t, sin 2t, ... evaluated at theta; shape (n, n_basis)."""
    columns: List[np.ndarray] = []
    k = 0
    while len(columns) < n_basis:
        if k == 0:
            columns.append(np.ones_like(theta))
        else:
            columns.append(np.cos(k * theta))
            if len(columns) < n_basis:
                columns.append(np.sin(k * theta))
        k += 1
    return np.column_stack(columns)


class NonlinearRadialParam(Parameterization):
    """
    Radial map with a quadratic knob:
    node i -> center + (r0_i + sum_j (p_j + alpha p_j^2) phi_j(theta_i)) e(theta_i).

    basis="fourier" uses 1, cos, sin, ...; basis="nodal" gives one radial degree
    of freedom per node (n_p = n_s).
    """

    def __init__(self, baseline: SurfaceMesh, n_basis: Optional[int] = None, alpha: float = 0.0,
                 center: Sequence[float] = (0.0, 0.0), basis: str = "fourier",
                 basis_values: Optional[np.ndarray] = None):
        super().__init__(baseline)
        if not baseline.closed or baseline.reference is None:
            raise InvalidMeshError("radial parameterization needs a closed baseline with stored angles")
        if alpha < 0.0:
            raise DomainError("alpha", alpha, "[0, inf)")
        self.alpha = float(alpha)
        self.center = np.asarray(center, dtype=float)
        theta = baseline.reference
        self.directions = np.column_stack([np.cos(theta), np.sin(theta)])
        self.base_radius = np.einsum("ij,ij->i", baseline.nodes - self.center, self.directions)
        if basis_values is not None:
            values = np.asarray(basis_values, dtype=float)
            if values.ndim == 1:
                values = values[:, None]
            if values.shape[0] != baseline.n_nodes:
                raise DimensionMismatchError("basis_values", baseline.n_nodes, values.shape[0])
        elif basis == "nodal":
            values = np.eye(baseline.n_nodes)
        elif basis == "fourier":
            if n_basis is None or n_basis < 1:
                raise InvalidParameterError("n_basis", "fourier basis needs n_basis >= 1")
            values = fourier_basis(theta, n_basis)
        else:
            raise InvalidParameterError("basis", f"unknown basis '{basis}'")
        self.basis = values
        self.basis.setflags(write=False)

    @property
    def n_params(self) -> int:
        return self.basis.shape[1]

    @property
    def is_linear(self) -> bool:
        return self.alpha == 0.0

    def _radial_to_surface(self, radial: np.ndarray) -> np.ndarray:
        return (radial[:, None] * self.directions).reshape(-1)

    def _surface_to_radial(self, w: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", w.reshape(-1, DIM), self.directions)

    def displacement(self, p: np.ndarray) -> np.ndarray:
        p = self._check_params(p)
        return self._radial_to_surface(self.basis @ (p + self.alpha * p ** 2))

    def apply(self, p: np.ndarray) -> SurfaceMesh:
        p = self._check_params(p)
        radius = self.base_radius + self.basis @ (p + self.alpha * p ** 2)
        nodes = self.center + radius[:, None] * self.directions
        return self.baseline.with_coordinates(nodes.reshape(-1))

    def jvp(self, p: np.ndarray, dp: np.ndarray) -> np.ndarray:
        p = self._check_params(p)
        dp = self._check_params(dp, "dp")
        return self._radial_to_surface(self.basis @ ((1.0 + 2.0 * self.alpha * p) * dp))

    def vjp(self, p: np.ndarray, w: np.ndarray) -> np.ndarray:
        p = self._check_params(p)
        radial = self._surface_to_radial(self._check_surface(w))
        return (1.0 + 2.0 * self.alpha * p) * (self.basis.T @ radial)

    def second_derivative_contraction(self, p: np.ndarray, w: np.ndarray) -> np.ndarray:
        self._check_params(p)
        radial = self._surface_to_radial(self._check_surface(w))
        return np.diag(2.0 * self.alpha * (self.basis.T @ radial))
