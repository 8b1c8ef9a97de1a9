"""
Model state problem in fixed-point form u = G(u, m), its adjoint, the piggyback
iteration and reduced derivatives of the objective and constraints.

Mesh vectors m are flattened volume coordinates; the first n_s volume nodes are
the design surface.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from shapeopt.core.config import get_settings
from shapeopt.core.exceptions import (
    ConvergenceError,
    DimensionMismatchError,
    InvalidParameterError,
    StaleAdjointError,
)
from shapeopt.core.logging import log_solver
from shapeopt.services.deformation import DesignMap, build_volume
from shapeopt.services.geometry import (
    DIM,
    SurfaceMesh,
    perimeter,
    perimeter_gradient,
    signed_area,
    signed_area_gradient,
    unit_circle_surface,
)
from shapeopt.services.linalg_support import PowerIterationResult, power_iteration

logger = logging.getLogger(__name__)

OBJECTIVE = "objective"


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------

class Functional(ABC):
    """Scalar functional f(u, m) with its partial derivatives."""

    name: str = "functional"
    depends_on_state: bool = True

    @abstractmethod
    def value(self, u: np.ndarray, m: np.ndarray) -> float:
        ...

    @abstractmethod
    def du(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def dm(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        ...


def _surface_nodes(m: np.ndarray, n_surface: int) -> np.ndarray:
    return np.asarray(m, dtype=float)[:DIM * n_surface].reshape(n_surface, DIM)


def _pad_surface_covector(surface_covector: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[:surface_covector.size] = surface_covector.reshape(-1)
    return out


class TrackingObjective(Functional):
    """F(u, m) = weight/2 ||P u - u_target||^2 + gamma * perimeter(surface of m)."""

    name = OBJECTIVE

    def __init__(self, selector: Sequence[int], target, gamma: float = 0.0,
                 n_surface: int = 0, closed: bool = True, weight: float = 1.0):
        if weight < 0.0:
            raise InvalidParameterError("weight", "must be non-negative")
        self.weight = float(weight)
        self.selector = np.asarray(selector, dtype=int)
        self.target = np.broadcast_to(np.asarray(target, dtype=float), self.selector.shape).copy()
        if gamma < 0.0:
            raise InvalidParameterError("gamma", "must be non-negative")
        if gamma > 0.0 and n_surface < 2:
            raise InvalidParameterError("n_surface", "perimeter term needs the surface node count")
        self.gamma = float(gamma)
        self.n_surface = n_surface
        self.closed = closed
        self.depends_on_state = self.selector.size > 0 and self.weight > 0.0

    def _mismatch(self, u: np.ndarray) -> np.ndarray:
        return u[self.selector] - self.target

    def value(self, u: np.ndarray, m: np.ndarray) -> float:
        result = 0.5 * self.weight * float(np.sum(self._mismatch(u) ** 2))
        if self.gamma:
            surface = SurfaceMesh(_surface_nodes(m, self.n_surface), closed=self.closed)
            result += self.gamma * perimeter(surface)
        return result

    def du(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(u, dtype=float)
        np.add.at(grad, self.selector, self.weight * self._mismatch(u))
        return grad

    def dm(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if not self.gamma:
            return np.zeros(m.size)
        grad = perimeter_gradient(_surface_nodes(m, self.n_surface), self.closed)
        return _pad_surface_covector(self.gamma * grad, m.size)


class AreaConstraint(Functional):
    """E(m) = signed_area(surface of m) - A0."""

    depends_on_state = False

    def __init__(self, n_surface: int, target_area: float, name: str = "area"):
        self.n_surface = n_surface
        self.target_area = float(target_area)
        self.name = name

    def value(self, u: np.ndarray, m: np.ndarray) -> float:
        return signed_area(SurfaceMesh(_surface_nodes(m, self.n_surface))) - self.target_area

    def du(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        return np.zeros_like(u, dtype=float)

    def dm(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        grad = signed_area_gradient(_surface_nodes(m, self.n_surface))
        return _pad_surface_covector(grad, np.asarray(m).size)


class RadiusConstraint(Functional):
    """C_i(m) = |m_i - center| - r_min for one surface node."""

    depends_on_state = False

    def __init__(self, node: int, r_min: float, center: Sequence[float] = (0.0, 0.0)):
        self.node = int(node)
        self.r_min = float(r_min)
        self.center = np.asarray(center, dtype=float)
        self.name = f"radius_{node}"

    def _offset(self, m: np.ndarray) -> np.ndarray:
        return np.asarray(m, dtype=float)[DIM * self.node:DIM * self.node + DIM] - self.center

    def value(self, u: np.ndarray, m: np.ndarray) -> float:
        return float(np.linalg.norm(self._offset(m))) - self.r_min

    def du(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        return np.zeros_like(u, dtype=float)

    def dm(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        offset = self._offset(m)
        grad = np.zeros(np.asarray(m).size)
        distance = float(np.linalg.norm(offset))
        # zero is a subgradient of |x| at the center
        if distance > 0.0:
            grad[DIM * self.node:DIM * self.node + DIM] = offset / distance
        return grad


# ---------------------------------------------------------------------------
# Sources b(m)
# ---------------------------------------------------------------------------

class Source(ABC):
    """Nodal right-hand side b(m), one value per mesh node."""

    @abstractmethod
    def value(self, nodes: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def vjp(self, nodes: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(D_m b)^T v, flattened like m."""


class GaussianSource(Source):
    """b_i = exp(-|m_i - x_src|^2 / sigma^2)."""

    def __init__(self, center: Sequence[float] = (0.4, 0.3), width: float = 1.0):
        if width <= 0.0:
            raise InvalidParameterError("source_width", "must be positive")
        self.center = np.asarray(center, dtype=float)
        self.width = float(width)

    def value(self, nodes: np.ndarray) -> np.ndarray:
        offsets = nodes - self.center
        return np.exp(-np.sum(offsets ** 2, axis=1) / self.width ** 2)

    def vjp(self, nodes: np.ndarray, v: np.ndarray) -> np.ndarray:
        offsets = nodes - self.center
        factor = -2.0 / self.width ** 2 * self.value(nodes) * v
        return (factor[:, None] * offsets).reshape(-1)


class LinearSource(Source):
    """b_i = b0 + <a, m_i>."""

    def __init__(self, gradient: Sequence[float] = (1.0, 0.5), offset: float = 0.0):
        self.gradient = np.asarray(gradient, dtype=float)
        self.offset = float(offset)

    def value(self, nodes: np.ndarray) -> np.ndarray:
        return self.offset + nodes @ self.gradient

    def vjp(self, nodes: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (v[:, None] * self.gradient[None, :]).reshape(-1)


class ConstantSource(Source):
    """b independent of m."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def value(self, nodes: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.values, (nodes.shape[0],)).copy()

    def vjp(self, nodes: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.zeros(nodes.size)


# ---------------------------------------------------------------------------
# Model problems
# ---------------------------------------------------------------------------

class ModelProblem(ABC):
    """Fixed-point state problem with objective, equality and inequality functionals."""

    objective: Functional
    equalities: List[Functional]
    inequalities: List[Functional]

    @property
    @abstractmethod
    def n_state(self) -> int:
        ...

    @abstractmethod
    def G(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def DuG_t(self, u: np.ndarray, m: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(D_u G)^T v."""

    @abstractmethod
    def DmG_t(self, u: np.ndarray, m: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(D_m G)^T v."""

    @property
    def functionals(self) -> List[Functional]:
        return [self.objective, *self.equalities, *self.inequalities]

    def functional(self, name: str) -> Functional:
        for candidate in self.functionals:
            if candidate.name == name:
                return candidate
        raise InvalidParameterError("functional", f"unknown functional '{name}'")


class DampedLinearProblem(ModelProblem):
    """
    G(u, m) = u - omega (A u - b(m)) for a fixed symmetric positive definite A.

    omega defaults to 1 / (1 + max row sum of |A|), which keeps the spectral
    radius of I - omega A below one.
    """

    def __init__(self, matrix, source: Source, objective: Functional,
                 equalities: Optional[List[Functional]] = None,
                 inequalities: Optional[List[Functional]] = None,
                 omega: Optional[float] = None):
        self.A = sp.csr_matrix(matrix, dtype=float)
        if self.A.shape[0] != self.A.shape[1]:
            raise DimensionMismatchError("A", "square", self.A.shape)
        if omega is None:
            omega = 1.0 / (1.0 + float(np.max(abs(self.A).sum(axis=1))))
        if omega <= 0.0:
            raise InvalidParameterError("omega", "must be positive")
        self.omega = float(omega)
        self.source = source
        self.objective = objective
        self.equalities = list(equalities or [])
        self.inequalities = list(inequalities or [])

    @property
    def n_state(self) -> int:
        return self.A.shape[0]

    def _nodes(self, m: np.ndarray) -> np.ndarray:
        return np.asarray(m, dtype=float).reshape(-1, DIM)

    def rhs(self, m: np.ndarray) -> np.ndarray:
        b = self.source.value(self._nodes(m))
        if b.shape[0] != self.n_state:
            raise DimensionMismatchError("b(m)", self.n_state, b.shape[0])
        return b

    def G(self, u: np.ndarray, m: np.ndarray) -> np.ndarray:
        return u - self.omega * (self.A @ u - self.rhs(m))

    def DuG_t(self, u: np.ndarray, m: np.ndarray, v: np.ndarray) -> np.ndarray:
        return v - self.omega * (self.A.T @ v)

    def DmG_t(self, u: np.ndarray, m: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.omega * self.source.vjp(self._nodes(m), v)


def graph_laplacian(edges: np.ndarray, n: int) -> sp.csr_matrix:
    """Unit-weight graph Laplacian D - Adj."""
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adjacency = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    degree = sp.diags(np.asarray(adjacency.sum(axis=1)).ravel())
    return sp.csr_matrix(degree - adjacency)


class AnnulusBenchmark(DampedLinearProblem):
    """
    Desk-scale stand-in for a flow solver on the annulus between the design
    curve and an outer circle.

    A = I + w L with L the graph Laplacian of the volume connectivity; the state
    lives on the volume nodes and the objective tracks it on the surface nodes.
    The area equality pins the enclosed area to A0 (baseline area by default)
    and radius inequalities keep every surface node outside r_min.
    """

    def __init__(self, n_s: int = 32, radius: float = 1.0, layers: int = 4,
                 outer_radius: float = 3.0, source: Optional[Source] = None,
                 target=0.0, gamma: float = 0.1, area_constraint: bool = True,
                 area_target: Optional[float] = None, r_min: Optional[float] = None,
                 laplacian_weight: float = 1.0, omega: Optional[float] = None,
                 state_weight: float = 1.0):
        if laplacian_weight < 0.0:
            raise InvalidParameterError("laplacian_weight", "must be non-negative")
        self.baseline = unit_circle_surface(n_s, radius)
        self.radius = radius
        self.volume, self.deformer = build_volume(self.baseline, layers, outer_radius)
        n_nodes = self.volume.n_nodes
        matrix = sp.identity(n_nodes, format="csr") + laplacian_weight * graph_laplacian(
            self.volume.connectivity, n_nodes
        )

        objective = TrackingObjective(np.arange(n_s), target, gamma=gamma, n_surface=n_s, weight=state_weight)
        equalities: List[Functional] = []
        if area_constraint:
            self.area_target = signed_area(self.baseline) if area_target is None else float(area_target)
            equalities.append(AreaConstraint(n_s, self.area_target))
        else:
            self.area_target = None
        inequalities: List[Functional] = []
        if r_min is not None:
            inequalities = [RadiusConstraint(i, r_min) for i in range(n_s)]
        self.r_min = r_min

        super().__init__(
            matrix,
            source if source is not None else GaussianSource(),
            objective,
            equalities,
            inequalities,
            omega=omega,
        )
        logger.debug(
            f"Annulus benchmark: n_s={n_s}, layers={layers}, n_state={self.n_state}, "
            f"omega={self.omega:.4f}, n_E={len(self.equalities)}, n_C={len(self.inequalities)}"
        )

    @property
    def n_surface(self) -> int:
        return self.baseline.n_nodes

    def design_map(self, param) -> DesignMap:
        return DesignMap(param, self.deformer, self.volume.connectivity)


# ---------------------------------------------------------------------------
# Fixed-point solves
# ---------------------------------------------------------------------------

@dataclass
class FixedPointResult:
    """Converged fixed point; iterations counts applied updates."""
    solution: np.ndarray
    iterations: int
    residual: float
    residual_history: List[float] = field(default_factory=list)
    functional: Optional[str] = None


def _fixed_point(update, x0: np.ndarray, tol: float, max_iter: int, kind: str,
                 functional: Optional[str] = None) -> FixedPointResult:
    if tol <= 0.0:
        raise InvalidParameterError("tol", "must be positive")
    x = np.array(x0, dtype=float)
    history: List[float] = []
    residual = np.inf
    for k in range(max_iter + 1):
        x_next = update(x)
        residual = float(np.max(np.abs(x_next - x))) if x.size else 0.0
        history.append(residual)
        if residual <= tol:
            log_solver(kind, k, residual, converged=True, functional=functional)
            return FixedPointResult(x, k, residual, history, functional)
        if not np.isfinite(residual) or k == max_iter:
            break
        x = x_next
    log_solver(kind, len(history) - 1, residual, converged=False, functional=functional)
    raise ConvergenceError(kind, len(history) - 1, residual, tol)


def solve_state(problem: ModelProblem, m: np.ndarray, tol: Optional[float] = None,
                max_iter: Optional[int] = None, u0: Optional[np.ndarray] = None) -> FixedPointResult:
    """Iterate u <- G(u, m) until ||G(u, m) - u||_inf <= tol."""
    settings = get_settings()
    tol = settings.state_tol if tol is None else tol
    max_iter = settings.state_max_iter if max_iter is None else max_iter
    u0 = np.zeros(problem.n_state) if u0 is None else u0
    if np.asarray(u0).shape != (problem.n_state,):
        raise DimensionMismatchError("u0", problem.n_state, np.asarray(u0).shape)
    return _fixed_point(lambda u: problem.G(u, m), u0, tol, max_iter, "state")


def _resolve_functional(problem: ModelProblem, functional: Union[str, Functional]) -> Functional:
    if isinstance(functional, Functional):
        return functional
    return problem.functional(functional)


def _solution(value: Union[np.ndarray, FixedPointResult]) -> np.ndarray:
    return value.solution if isinstance(value, FixedPointResult) else np.asarray(value, dtype=float)


def solve_adjoint(problem: ModelProblem, u: Union[np.ndarray, FixedPointResult], m: np.ndarray,
                  functional: Union[str, Functional] = OBJECTIVE, tol: Optional[float] = None,
                  max_iter: Optional[int] = None, lam0: Optional[np.ndarray] = None) -> FixedPointResult:
    """Iterate lambda <- (D_u G)^T lambda + (D_u f)^T at the converged state."""
    settings = get_settings()
    tol = settings.state_tol if tol is None else tol
    max_iter = settings.state_max_iter if max_iter is None else max_iter
    target = _resolve_functional(problem, functional)
    u = _solution(u)
    if not target.depends_on_state:
        return FixedPointResult(np.zeros(problem.n_state), 0, 0.0, [0.0], target.name)
    seed = target.du(u, m)
    lam0 = np.zeros(problem.n_state) if lam0 is None else lam0
    return _fixed_point(lambda lam: problem.DuG_t(u, m, lam) + seed, lam0, tol, max_iter,
                        "adjoint", target.name)


def contraction_factor(problem: ModelProblem, u: np.ndarray, m: np.ndarray,
                       tol: float = 1e-10, max_iter: int = 10000) -> PowerIterationResult:
    """Power-iteration estimate of the spectral radius of D_u G at (u, m)."""
    u = _solution(u)
    result = power_iteration(lambda v: problem.DuG_t(u, m, v), n=problem.n_state, tol=tol, max_iter=max_iter)
    return PowerIterationResult(abs(result.value), result.iterations, result.converged)


# ---------------------------------------------------------------------------
# Piggyback iteration and shifted Lagrangian
# ---------------------------------------------------------------------------

@dataclass
class PiggybackState:
    """Primal state and one adjoint per functional, advanced together."""
    u: np.ndarray
    lambda_F: np.ndarray
    lambda_E: List[np.ndarray]
    lambda_C: List[np.ndarray]
    primal_residual: float = float("inf")
    adjoint_residual: float = float("inf")

    @classmethod
    def zeros(cls, problem: ModelProblem) -> "PiggybackState":
        n = problem.n_state
        return cls(
            u=np.zeros(n),
            lambda_F=np.zeros(n),
            lambda_E=[np.zeros(n) for _ in problem.equalities],
            lambda_C=[np.zeros(n) for _ in problem.inequalities],
        )

    def adjoints(self, problem: ModelProblem) -> Dict[str, np.ndarray]:
        pairs = [(problem.objective, self.lambda_F)]
        pairs += list(zip(problem.equalities, self.lambda_E))
        pairs += list(zip(problem.inequalities, self.lambda_C))
        return {functional.name: lam for functional, lam in pairs}

    def with_adjoints_reset(self) -> "PiggybackState":
        return PiggybackState(
            u=self.u.copy(),
            lambda_F=np.zeros_like(self.lambda_F),
            lambda_E=[np.zeros_like(lam) for lam in self.lambda_E],
            lambda_C=[np.zeros_like(lam) for lam in self.lambda_C],
        )


def piggyback_step(problem: ModelProblem, state: PiggybackState, m: np.ndarray) -> PiggybackState:
    """
    One coupled update: u' = G(u, m) and lambda' = (D_u G)^T lambda + (D_u f)^T
    for every functional, all evaluated at the incoming (u, lambda).
    """
    n = problem.n_state
    for name, vector in [("u", state.u), ("lambda_F", state.lambda_F)]:
        if vector.shape != (n,):
            raise DimensionMismatchError(name, n, vector.shape)
    if len(state.lambda_E) != len(problem.equalities) or len(state.lambda_C) != len(problem.inequalities):
        raise DimensionMismatchError(
            "adjoint count",
            (len(problem.equalities), len(problem.inequalities)),
            (len(state.lambda_E), len(state.lambda_C)),
        )

    def advance(functional: Functional, lam: np.ndarray) -> np.ndarray:
        if not functional.depends_on_state:
            return lam
        return problem.DuG_t(state.u, m, lam) + functional.du(state.u, m)

    u_next = problem.G(state.u, m)
    lambda_F = advance(problem.objective, state.lambda_F)
    lambda_E = [advance(f, lam) for f, lam in zip(problem.equalities, state.lambda_E)]
    lambda_C = [advance(f, lam) for f, lam in zip(problem.inequalities, state.lambda_C)]

    adjoint_changes = [np.max(np.abs(new - old)) for new, old in zip(
        [lambda_F, *lambda_E, *lambda_C], [state.lambda_F, *state.lambda_E, *state.lambda_C]
    )]
    return PiggybackState(
        u=u_next,
        lambda_F=lambda_F,
        lambda_E=lambda_E,
        lambda_C=lambda_C,
        primal_residual=float(np.max(np.abs(u_next - state.u))),
        adjoint_residual=float(max(adjoint_changes)),
    )


def shifted_lagrangian_value(problem: ModelProblem, u: np.ndarray, lam: np.ndarray, m: np.ndarray,
                             functional: Union[str, Functional] = OBJECTIVE) -> float:
    """N(u, lambda, m) = f(u, m) + lambda^T G(u, m)."""
    target = _resolve_functional(problem, functional)
    u = _solution(u)
    return target.value(u, m) + float(_solution(lam) @ problem.G(u, m))


def shifted_lagrangian_dm(problem: ModelProblem, u: np.ndarray, lam: np.ndarray, m: np.ndarray,
                          functional: Union[str, Functional] = OBJECTIVE) -> np.ndarray:
    """Mesh covector D_m N = D_m f + (D_m G)^T lambda."""
    target = _resolve_functional(problem, functional)
    u = _solution(u)
    covector = target.dm(u, m)
    if target.depends_on_state:
        covector = covector + problem.DmG_t(u, m, _solution(lam))
    return covector


# ---------------------------------------------------------------------------
# Reduced derivatives
# ---------------------------------------------------------------------------

def reduced_gradient(problem: ModelProblem, design: DesignMap, p: np.ndarray,
                     u: Union[np.ndarray, FixedPointResult],
                     lam: Union[np.ndarray, FixedPointResult],
                     functional: Union[str, Functional] = OBJECTIVE,
                     m: Optional[np.ndarray] = None) -> np.ndarray:
    """g = vjp_M((D_m G)^T lambda + (D_m f)^T) for converged (u, lambda)."""
    target = _resolve_functional(problem, functional)
    if isinstance(lam, FixedPointResult) and lam.functional is not None and lam.functional != target.name:
        raise StaleAdjointError(target.name, lam.functional)
    m = design.mesh(p) if m is None else m
    return design.vjp(p, shifted_lagrangian_dm(problem, u, lam, m, target))


@dataclass
class ConstraintData:
    """Constraint values and reduced Jacobians."""
    E: np.ndarray
    C: np.ndarray
    J_E: np.ndarray
    J_C: np.ndarray


def constraint_values_and_jacobians(problem: ModelProblem, design: DesignMap, p: np.ndarray,
                                    u: Union[np.ndarray, FixedPointResult],
                                    lambdas_E: Optional[Sequence] = None,
                                    lambdas_C: Optional[Sequence] = None,
                                    m: Optional[np.ndarray] = None) -> ConstraintData:
    """Rows computed like reduced_gradient, one per functional; geometric rows need no adjoint."""
    m = design.mesh(p) if m is None else m
    state = _solution(u)
    n_p = design.n_params

    def rows(functionals: List[Functional], adjoints: Optional[Sequence]):
        adjoints = list(adjoints) if adjoints is not None else [None] * len(functionals)
        if len(adjoints) != len(functionals):
            raise DimensionMismatchError("adjoints", len(functionals), len(adjoints))
        values, jacobian = [], []
        for functional, lam in zip(functionals, adjoints):
            if lam is None:
                if functional.depends_on_state:
                    raise StaleAdjointError(functional.name, "missing")
                lam = np.zeros(problem.n_state)
            values.append(functional.value(state, m))
            jacobian.append(reduced_gradient(problem, design, p, state, lam, functional, m))
        return np.asarray(values, dtype=float), np.asarray(jacobian, dtype=float).reshape(len(functionals), n_p)

    E, J_E = rows(problem.equalities, lambdas_E)
    C, J_C = rows(problem.inequalities, lambdas_C)
    return ConstraintData(E, C, J_E, J_C)


@dataclass
class DesignEvaluation:
    """Everything one optimizer iteration needs at a design p."""
    p: np.ndarray
    m: np.ndarray
    state: FixedPointResult
    adjoints: Dict[str, FixedPointResult]
    objective: float
    gradient: np.ndarray
    constraints: ConstraintData

    @property
    def sweeps(self) -> int:
        """Primal plus adjoint fixed-point updates spent on this design."""
        return self.state.iterations + sum(a.iterations for a in self.adjoints.values())


def evaluate_design(problem: ModelProblem, design: DesignMap, p: np.ndarray,
                    tol: Optional[float] = None, max_iter: Optional[int] = None,
                    warm: Optional[DesignEvaluation] = None) -> DesignEvaluation:
    """Deform, solve state and all adjoints, then build reduced gradient and constraint Jacobians."""
    p = np.asarray(p, dtype=float)
    m = design.mesh(p)
    u0 = warm.state.solution if warm is not None else None
    state = solve_state(problem, m, tol, max_iter, u0=u0)

    adjoints: Dict[str, FixedPointResult] = {}
    for functional in problem.functionals:
        lam0 = None
        if warm is not None and functional.name in warm.adjoints:
            lam0 = warm.adjoints[functional.name].solution
        adjoints[functional.name] = solve_adjoint(problem, state, m, functional, tol, max_iter, lam0)

    gradient = reduced_gradient(problem, design, p, state, adjoints[problem.objective.name], problem.objective, m)
    constraints = constraint_values_and_jacobians(
        problem, design, p, state,
        [adjoints[f.name] for f in problem.equalities],
        [adjoints[f.name] for f in problem.inequalities],
        m,
    )
    return DesignEvaluation(
        p=p,
        m=m,
        state=state,
        adjoints=adjoints,
        objective=problem.objective.value(state.solution, m),
        gradient=gradient,
        constraints=constraints,
    )


def reduced_objective(problem: ModelProblem, design: DesignMap, p: np.ndarray,
                      tol: Optional[float] = None, max_iter: Optional[int] = None,
                      functional: Union[str, Functional] = OBJECTIVE) -> float:
    """F~(p) with the state fully converged."""
    target = _resolve_functional(problem, functional)
    m = design.mesh(p)
    u = solve_state(problem, m, tol, max_iter).solution if target.depends_on_state else np.zeros(problem.n_state)
    return target.value(u, m)
