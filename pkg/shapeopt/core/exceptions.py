from typing import Any, Dict, Iterable, Optional, Sequence

from shapeopt.core.logging import log_error


class ShapeOptException(Exception):
    """Base exception class for the shapeopt toolkit"""
    def __init__(self, message: str, code: str = "SHAPEOPT_ERROR", details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.code = code
        self.details = details or {}
        super().__init__(self.message)


class InvalidMeshError(ShapeOptException):
    """Raised when mesh data violates its invariants"""
    def __init__(self, error: str, **details: Any):
        super().__init__(
            message=f"Invalid mesh: {error}",
            code="INVALID_MESH",
            details={"error": error, **details}
        )


class UnsupportedOperationError(ShapeOptException):
    """Raised when an operation is not defined for the given object"""
    def __init__(self, operation: str, reason: str):
        super().__init__(
            message=f"Operation '{operation}' is not supported: {reason}",
            code="UNSUPPORTED_OPERATION",
            details={"operation": operation, "reason": reason}
        )


class DimensionMismatchError(ShapeOptException):
    """Raised when a vector or matrix has the wrong size"""
    def __init__(self, name: str, expected: Any, actual: Any):
        super().__init__(
            message=f"Dimension mismatch for '{name}': expected {expected}, got {actual}",
            code="DIMENSION_MISMATCH",
            details={"name": name, "expected": expected, "actual": actual}
        )


class DomainError(ShapeOptException):
    """Raised when an argument lies outside the domain of a function"""
    def __init__(self, name: str, value: Any, domain: str):
        super().__init__(
            message=f"Argument '{name}'={value} outside domain {domain}",
            code="DOMAIN_ERROR",
            details={"name": name, "value": value, "domain": domain}
        )


class InvalidParameterError(ShapeOptException):
    """Raised when a numerical parameter combination is invalid"""
    def __init__(self, parameter: str, error: str):
        super().__init__(
            message=f"Invalid parameter '{parameter}': {error}",
            code="INVALID_PARAMETER",
            details={"parameter": parameter, "error": error}
        )


class ConvergenceError(ShapeOptException):
    """Raised when a fixed-point iteration hits its iteration cap"""
    def __init__(self, kind: str, iterations: int, residual: float, tol: float):
        super().__init__(
            message=f"{kind} iteration did not converge in {iterations} iterations "
                    f"(residual {residual:.3e} > tol {tol:.1e})",
            code="NON_CONVERGENCE",
            details={"kind": kind, "iterations": iterations, "residual": residual, "tol": tol}
        )
        self.residual = residual
        self.iterations = iterations


class StaleAdjointError(ShapeOptException):
    """Raised when an adjoint belongs to a different functional"""
    def __init__(self, expected: str, actual: str):
        super().__init__(
            message=f"Adjoint was solved for '{actual}' but is used for '{expected}'",
            code="STALE_ADJOINT",
            details={"expected": expected, "actual": actual}
        )


class AssemblyError(ShapeOptException):
    """Raised when finite element assembly meets a degenerate element"""
    def __init__(self, element: int, error: str):
        super().__init__(
            message=f"Assembly failed at element {element}: {error}",
            code="ASSEMBLY_ERROR",
            details={"element": element, "error": error}
        )


class SingularMatrixError(ShapeOptException):
    """Raised when a factorization meets a zero pivot"""
    def __init__(self, pivot: int, value: float):
        super().__init__(
            message=f"Matrix is singular to working precision at pivot {pivot} (|d|={value:.3e})",
            code="SINGULAR_MATRIX",
            details={"pivot": pivot, "value": value}
        )
        self.pivot = pivot


class NotPositiveDefiniteError(ShapeOptException):
    """Raised when a matrix that must be SPD is not"""
    def __init__(self, name: str, pivot: int):
        super().__init__(
            message=f"Matrix '{name}' is not positive definite (failed at pivot {pivot})",
            code="NOT_POSITIVE_DEFINITE",
            details={"name": name, "pivot": pivot}
        )
        self.pivot = pivot


class RankDeficientConstraintError(ShapeOptException):
    """Raised when a constraint Jacobian row depends on earlier rows"""
    def __init__(self, row: int):
        super().__init__(
            message=f"Equality constraint row {row} is linearly dependent on the preceding rows",
            code="RANK_DEFICIENT_CONSTRAINTS",
            details={"row": row}
        )
        self.row = row


class QPInfeasibleError(ShapeOptException):
    """Raised when the linearized constraints admit no step"""
    def __init__(self, violated: Sequence[int]):
        super().__init__(
            message=f"Quadratic subproblem is infeasible; violated inequalities {list(violated)}",
            code="QP_INFEASIBLE",
            details={"violated": list(violated)}
        )
        self.violated = list(violated)


class QPCyclingError(ShapeOptException):
    """Raised when the active-set loop exceeds its change limit"""
    def __init__(self, changes: int, working_set: Iterable[int]):
        super().__init__(
            message=f"Active-set method did not settle after {changes} working-set changes",
            code="QP_CYCLING",
            details={"changes": changes, "working_set": sorted(working_set)}
        )


class RegularizationError(ShapeOptException):
    """Raised when no regularization shift makes a matrix SPD"""
    def __init__(self, largest_shift: float):
        super().__init__(
            message=f"No shift up to {largest_shift:.1e} makes the matrix positive definite",
            code="REGULARIZATION_FAILED",
            details={"largest_shift": largest_shift}
        )


class SizeGuardError(ShapeOptException):
    """Raised when a brute-force oracle is asked for a problem that is too large"""
    def __init__(self, operation: str, size: int, limit: int):
        super().__init__(
            message=f"'{operation}' refuses size {size} (limit {limit})",
            code="SIZE_GUARD",
            details={"operation": operation, "size": size, "limit": limit}
        )


class PiggybackDivergenceError(ShapeOptException):
    """Raised when the coupled primal/adjoint iteration or the design update blows up"""
    def __init__(self, outer_iteration: int, start_residual: float, end_residual: float, factor: float,
                 quantity: str = "residual"):
        super().__init__(
            message=f"Piggyback iteration diverged at outer iteration {outer_iteration}: "
                    f"{quantity} {start_residual:.3e} -> {end_residual:.3e} (growth limit {factor})",
            code="PIGGYBACK_DIVERGENCE",
            details={
                "outer_iteration": outer_iteration,
                "quantity": quantity,
                "start_residual": start_residual,
                "end_residual": end_residual,
                "factor": factor,
            }
        )


class OptimizationError(ShapeOptException):
    """Raised when an optimizer iteration fails; wraps the inner error"""
    def __init__(self, algorithm: str, iteration: int, error: ShapeOptException):
        super().__init__(
            message=f"{algorithm} failed at iteration {iteration}: {error.message}",
            code=error.code,
            details={"algorithm": algorithm, "iteration": iteration, **error.details}
        )
        self.cause = error


class ConfigurationException(ShapeOptException):
    """Raised when configuration is invalid"""
    def __init__(self, setting: str, error: str):
        super().__init__(
            message=f"Configuration error for '{setting}': {error}",
            code="CONFIGURATION_ERROR",
            details={"setting": setting, "error": error}
        )
        self.setting = setting


class CheckFailedError(ShapeOptException):
    """Raised when a verification check exceeds its tolerance"""
    def __init__(self, check_id: str, measured: float, tolerance: float):
        super().__init__(
            message=f"Check '{check_id}' failed: measured {measured:.3e} > tolerance {tolerance:.1e}",
            code="CHECK_FAILED",
            details={"check": check_id, "measured": measured, "tolerance": tolerance}
        )


EXIT_SUCCESS = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def exit_code_for(exc: Exception) -> int:
    """Map an exception to a process exit code"""
    if isinstance(exc, ConfigurationException):
        return EXIT_USAGE
    return EXIT_FAILURE


def handle_cli_exception(exc: Exception, command: str) -> int:
    """Log an exception raised by a CLI command and return its exit code"""
    context: Dict[str, Any] = {"command": command, "exception_type": type(exc).__name__}
    if isinstance(exc, ShapeOptException):
        context.update({"error_code": exc.code, "details": exc.details})
    log_error(error=exc, context=context)
    return exit_code_for(exc)
