"""
Laplace-Beltrami finite elements on the design curve, the volume Laplacian on
the layered mesh, Sobolev gradient smoothing and the hybrid parameter-space
operator

    B = J^T kron(eps1 M + eps2 K, I_d) J + eps3 I_p.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from shapeopt.core.exceptions import AssemblyError, DomainError, InvalidParameterError
from shapeopt.services.deformation import DesignMap
from shapeopt.services.geometry import DIM, MIN_EDGE_LENGTH, SurfaceMesh, VolumeMesh
from shapeopt.services.linalg_support import SymSparse, is_positive_definite, sym_solve
from shapeopt.services.optim import regularize

logger = logging.getLogger(__name__)

SURFACE = "surface"
VOLUME = "volume"

_EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
_EDGE_STIFFNESS = np.array([[1.0, -1.0], [-1.0, 1.0]])
_TRIANGLE_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass
class SurfaceOperators:
    """Consistent mass and stiffness of linear elements on the polyline."""
    mass: SymSparse
    stiffness: SymSparse
    n_nodes: int
    closed: bool

    def system(self, eps1: float, eps2: float, identity_as_matrix: bool = False) -> SymSparse:
        """eps1 M + eps2 K, or eps1 I + eps2 K with the literal identity."""
        first = SymSparse(sp.identity(self.n_nodes, format="csr")) if identity_as_matrix else self.mass
        return first.scaled_sum(eps1, self.stiffness, eps2)


def block(matrix: Union[SymSparse, np.ndarray, sp.spmatrix], dim: int = DIM) -> np.ndarray:
    """Componentwise copy for node-major d-vector fields: kron(A, I_d)."""
    dense = matrix.toarray() if isinstance(matrix, SymSparse) else (
        matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    )
    return np.kron(dense, np.eye(dim))


def assemble_surface_operators(mesh: SurfaceMesh) -> SurfaceOperators:
    """Element mass h/6 [[2,1],[1,2]] and stiffness 1/h [[1,-1],[-1,1]] summed over edges."""
    edges = mesh.edges()
    lengths = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    degenerate = np.flatnonzero(lengths < MIN_EDGE_LENGTH)
    if degenerate.size:
        raise AssemblyError(int(degenerate[0]), f"edge length {lengths[degenerate[0]]:.3e}")

    rows = np.repeat(edges, 2, axis=1).reshape(-1)
    cols = np.tile(edges, 2).reshape(-1)
    mass_values = (lengths[:, None, None] * _EDGE_MASS[None]).reshape(-1)
    stiffness_values = (_EDGE_STIFFNESS[None] / lengths[:, None, None]).reshape(-1)
    n = mesh.n_nodes
    return SurfaceOperators(
        mass=SymSparse.from_triplets(rows, cols, mass_values, n),
        stiffness=SymSparse.from_triplets(rows, cols, stiffness_values, n),
        n_nodes=n,
        closed=mesh.closed,
    )


def _check_epsilons(eps1: float, eps2: float, eps3: float = 0.0):
    for name, value in (("eps1", eps1), ("eps2", eps2), ("eps3", eps3)):
        if value < 0.0:
            raise DomainError(name, value, "[0, inf)")
    if eps1 == 0.0 and eps2 == 0.0 and eps3 == 0.0:
        raise InvalidParameterError("epsilons", "eps1, eps2 and eps3 are all zero")


def _componentwise(values: np.ndarray, n: int) -> Tuple[np.ndarray, bool]:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1 and values.size == DIM * n:
        return values.reshape(n, DIM), True
    return values, False


def smooth_surface_field(ops: SurfaceOperators, f: np.ndarray, eps1: float, eps2: float) -> np.ndarray:
    """
    Sobolev representative of a nodal field: solve (eps1 M + eps2 K) g = M f.

    f may be (n,), (n, k) or a flattened node-major d-vector field.
    """
    _check_epsilons(eps1, eps2)
    values, flattened = _componentwise(f, ops.n_nodes)
    g = sym_solve(ops.system(eps1, eps2), ops.mass @ values)
    return g.reshape(-1) if flattened else g


def reinterpret_gradient(ops: SurfaceOperators, rhs: np.ndarray, eps1: float, eps2: float) -> np.ndarray:
    """Dual-vector form: solve (eps1 M + eps2 K) g = rhs."""
    _check_epsilons(eps1, eps2)
    values, flattened = _componentwise(rhs, ops.n_nodes)
    g = sym_solve(ops.system(eps1, eps2), values)
    return g.reshape(-1) if flattened else g


@dataclass
class VolumeOperators:
    """P1 mass and stiffness on the layered mesh, full and with the outer layer eliminated."""
    mass: SymSparse
    stiffness: SymSparse
    interior: np.ndarray

    def restricted(self, matrix: SymSparse) -> np.ndarray:
        dense = matrix.toarray()
        return dense[np.ix_(self.interior, self.interior)]

    @property
    def mass_interior(self) -> np.ndarray:
        return self.restricted(self.mass)

    @property
    def stiffness_interior(self) -> np.ndarray:
        return self.restricted(self.stiffness)

    def system(self, eps1: float, eps2: float) -> np.ndarray:
        return eps1 * self.mass_interior + eps2 * self.stiffness_interior


def volume_triangles(volume: VolumeMesh) -> np.ndarray:
    """Each quad cell between layers k and k+1 split along its diagonal into two triangles."""
    n = volume.n_surface
    i = np.arange(n)
    triangles = []
    for k in range(volume.n_layers - 1):
        a = k * n + i
        b = k * n + (i + 1) % n
        c = (k + 1) * n + (i + 1) % n
        d = (k + 1) * n + i
        triangles.append(np.column_stack([a, b, c]))
        triangles.append(np.column_stack([a, c, d]))
    return np.vstack(triangles)


def assemble_volume_operators(volume: VolumeMesh) -> VolumeOperators:
    """Linear triangle elements; outer-layer degrees of freedom are Dirichlet and removed."""
    triangles = volume_triangles(volume)
    points = volume.nodes[triangles]
    opposite = np.stack([
        points[:, 2] - points[:, 1],
        points[:, 0] - points[:, 2],
        points[:, 1] - points[:, 0],
    ], axis=1)
    areas = 0.5 * np.abs(opposite[:, 0, 0] * opposite[:, 1, 1] - opposite[:, 0, 1] * opposite[:, 1, 0])
    scale = max(float(np.max(areas)), np.finfo(float).tiny)
    degenerate = np.flatnonzero(areas <= 1e-12 * scale)
    if degenerate.size:
        raise AssemblyError(int(degenerate[0]), f"triangle area {areas[degenerate[0]]:.3e}")

    local_stiffness = np.einsum("eid,ejd->eij", opposite, opposite) / (4.0 * areas[:, None, None])
    local_mass = areas[:, None, None] * _TRIANGLE_MASS[None]
    rows = np.repeat(triangles, 3, axis=1).reshape(-1)
    cols = np.tile(triangles, 3).reshape(-1)
    n = volume.n_nodes
    interior = np.arange(n - volume.n_surface)
    logger.debug(f"Assembled volume operators on {triangles.shape[0]} triangles, {interior.size} free nodes")
    return VolumeOperators(
        mass=SymSparse.from_triplets(rows, cols, local_mass.reshape(-1), n),
        stiffness=SymSparse.from_triplets(rows, cols, local_stiffness.reshape(-1), n),
        interior=interior,
    )


@dataclass
class HybridOperator:
    """Parameter-space operator used as Hessian approximation."""
    B: np.ndarray
    epsilons: Tuple[float, float, float]
    formulation: str = SURFACE
    shift: float = 0.0

    def is_positive_definite(self) -> bool:
        return is_positive_definite(self.B)

    @property
    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.B - self.B.T))) if self.B.size else 0.0


def assemble_hybrid_operator(design: DesignMap, p: np.ndarray, ops: Optional[SurfaceOperators],
                             eps1: float, eps2: float, eps3: float, formulation: str = SURFACE,
                             identity_as_matrix: bool = False,
                             volume_ops: Optional[VolumeOperators] = None) -> HybridOperator:
    """
    Surface form: J_S^T kron(eps1 M + eps2 K, I_d) J_S + eps3 I_p.
    Volume form: J_M restricted to the free volume nodes with the volume mass and stiffness.
    """
    _check_epsilons(eps1, eps2, eps3)
    n_p = design.n_params
    if formulation == SURFACE:
        if ops is None:
            ops = assemble_surface_operators(design.surface(p))
        jacobian = design.surface_jacobian(p)
        inner = block(ops.system(eps1, eps2, identity_as_matrix))
    elif formulation == VOLUME:
        if volume_ops is None:
            volume_ops = assemble_volume_operators(design.volume(p))
        free = (DIM * volume_ops.interior[:, None] + np.arange(DIM)[None, :]).reshape(-1)
        jacobian = design.jacobian(p)[free]
        inner = block(volume_ops.system(eps1, eps2))
    else:
        raise InvalidParameterError("formulation", f"unknown formulation '{formulation}'")

    matrix = jacobian.T @ inner @ jacobian + eps3 * np.eye(n_p)
    matrix = 0.5 * (matrix + matrix.T)
    return HybridOperator(B=matrix, epsilons=(eps1, eps2, eps3), formulation=formulation)


@dataclass
class HybridOperatorBuilder:
    """
    Builds B at the current design for the optimizers.

    With a linear parameterization and reassemble=False the first operator is
    reused for every later call. regularization is None, "auto" or a shift c.
    """
    eps1: float
    eps2: float
    eps3: float
    formulation: str = SURFACE
    identity_as_matrix: bool = False
    regularization: Optional[Union[str, float]] = None
    reassemble: bool = False
    last: Optional[HybridOperator] = field(default=None, init=False, repr=False)
    builds: int = field(default=0, init=False)

    def __post_init__(self):
        _check_epsilons(self.eps1, self.eps2, self.eps3)
        if self.formulation not in (SURFACE, VOLUME):
            raise InvalidParameterError("formulation", f"unknown formulation '{self.formulation}'")

    def build(self, design: DesignMap, p: np.ndarray) -> HybridOperator:
        if self.last is not None and design.is_linear and not self.reassemble:
            return self.last
        operator = assemble_hybrid_operator(
            design, p, None, self.eps1, self.eps2, self.eps3,
            self.formulation, self.identity_as_matrix,
        )
        if self.regularization is not None:
            if self.regularization == "auto":
                matrix, shift = regularize(operator.B, "auto")
            else:
                matrix, shift = regularize(operator.B, "fixed", float(self.regularization))
            operator = HybridOperator(matrix, operator.epsilons, operator.formulation, shift)
        self.builds += 1
        self.last = operator
        return operator

    def __call__(self, design: DesignMap, p: np.ndarray) -> np.ndarray:
        return self.build(design, p).B


def write_operators(directory: Union[str, Path], ops: Optional[SurfaceOperators] = None,
                    hybrid: Optional[HybridOperator] = None) -> Dict[str, Path]:
    """Matrix Market dumps of M, K and B."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}
    matrices = {}
    if ops is not None:
        matrices["mass"] = ops.mass.tocsr()
        matrices["stiffness"] = ops.stiffness.tocsr()
    if hybrid is not None:
        matrices["hybrid"] = sp.csr_matrix(hybrid.B)
    for name, matrix in matrices.items():
        path = directory / f"{name}.mtx"
        scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), symmetry="symmetric",
                         comment=f"shapeopt {name} operator")
        written[name] = path
    return written
