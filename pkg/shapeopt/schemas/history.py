from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

HISTORY_COLUMNS = ["iter", "objective", "E_max", "C_min", "grad_norm", "step_norm", "step_scale", "time_s"]
PIGGYBACK_COLUMNS = ["outer_iter", "inner_step", "primal_residual", "adjoint_residual"]


class IterationRecord(BaseModel):
    """Schema for one optimizer iteration."""
    iter: int = Field(..., ge=0, description="Iteration index, 0 is the starting design")
    objective: float = Field(..., description="Objective value at the design")
    E_max: float = Field(0.0, description="Largest absolute equality constraint value")
    C_min: Optional[float] = Field(None, description="Smallest inequality constraint value")
    grad_norm: float = Field(..., description="Infinity norm of the reduced Lagrangian gradient")
    step_norm: float = Field(0.0, description="Infinity norm of the step that produced this design")
    step_scale: float = Field(1.0, description="Limiter scale applied to that step")
    time_s: float = Field(0.0, description="Elapsed wall time when the record was taken")
    sweeps: int = Field(0, description="Primal plus adjoint fixed-point updates spent so far")
    nu: List[float] = Field(default_factory=list, description="Equality multipliers of the last subproblem")
    mu: List[float] = Field(default_factory=list, description="Inequality multipliers of the last subproblem")


class PiggybackRecord(BaseModel):
    """Schema for one piggyback step inside a One Shot outer iteration."""
    outer_iter: int = Field(..., ge=0)
    inner_step: int = Field(..., ge=0)
    primal_residual: float
    adjoint_residual: float


class OptHistory(BaseModel):
    """Append-only optimizer trace."""
    algorithm: str = Field(..., description="Optimizer that produced the trace")
    records: List[IterationRecord] = Field(default_factory=list)
    piggyback_trace: List[PiggybackRecord] = Field(default_factory=list)
    termination: str = Field("running", description="converged, max_iter or running")
    final_p: List[float] = Field(default_factory=list, description="Design parameters after the last record")
    wall_time_s: float = Field(0.0, description="Total wall time of the run")

    def append(self, record: IterationRecord) -> None:
        if self.records and record.iter <= self.records[-1].iter:
            raise ValueError(f"iteration {record.iter} does not follow {self.records[-1].iter}")
        self.records.append(record)

    @property
    def iterations(self) -> int:
        """Number of design updates taken."""
        return max(len(self.records) - 1, 0)

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    @property
    def total_sweeps(self) -> int:
        return self.records[-1].sweeps if self.records else 0

    def table(self, record_time: bool = False) -> np.ndarray:
        rows = [
            [
                r.iter, r.objective, r.E_max,
                np.nan if r.C_min is None else r.C_min,
                r.grad_norm, r.step_norm, r.step_scale,
                r.time_s if record_time else 0.0,
            ]
            for r in self.records
        ]
        return np.asarray(rows, dtype=float).reshape(len(rows), len(HISTORY_COLUMNS))

    def to_csv(self, path: Union[str, Path], record_time: bool = False) -> Path:
        """Write the fixed-header CSV; time_s is zero unless record_time is set."""
        path = Path(path)
        np.savetxt(
            path, self.table(record_time), delimiter=",", header=",".join(HISTORY_COLUMNS), comments="",
            fmt=["%d"] + ["%.17g"] * (len(HISTORY_COLUMNS) - 1),
        )
        return path

    def piggyback_to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        table = np.asarray(
            [[r.outer_iter, r.inner_step, r.primal_residual, r.adjoint_residual] for r in self.piggyback_trace],
            dtype=float,
        ).reshape(len(self.piggyback_trace), len(PIGGYBACK_COLUMNS))
        np.savetxt(path, table, delimiter=",", header=",".join(PIGGYBACK_COLUMNS), comments="",
                   fmt=["%d", "%d", "%.17g", "%.17g"])
        return path


class LoadedHistory(BaseModel):
    """History columns read back from CSV."""
    path: str
    iter: List[int]
    objective: List[float]
    E_max: List[float]
    C_min: List[Optional[float]]
    grad_norm: List[float]
    time_s: List[float]

    @property
    def iterations(self) -> int:
        return max(len(self.iter) - 1, 0)


def read_history_csv(path: Union[str, Path]) -> LoadedHistory:
    """Read a history CSV written by OptHistory.to_csv."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        header = handle.readline().strip().split(",")
    if header != HISTORY_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[0] == 0:
        raise ValueError(f"{path}: history holds no records")
    columns = {name: table[:, i] for i, name in enumerate(HISTORY_COLUMNS)}
    return LoadedHistory(
        path=str(path),
        iter=columns["iter"].astype(int).tolist(),
        objective=columns["objective"].tolist(),
        E_max=columns["E_max"].tolist(),
        C_min=[None if np.isnan(v) else float(v) for v in columns["C_min"]],
        grad_norm=columns["grad_norm"].tolist(),
        time_s=columns["time_s"].tolist(),
    )


class RunSummary(BaseModel):
    """Schema for the JSON summary written next to the history."""
    name: str = Field(..., description="Run name from the configuration")
    algorithm: str
    termination: str
    iterations: int
    initial_objective: float
    final_objective: float
    E_max: float
    C_min: Optional[float] = None
    grad_norm: float
    total_sweeps: int = Field(..., description="Primal plus adjoint fixed-point updates of the whole run")
    single_solve_sweeps: Optional[int] = Field(None, description="Updates of one converged state solve at p0")
    wall_time_s: float
    nu: List[float] = Field(default_factory=list)
    mu: List[float] = Field(default_factory=list)
    final_p: List[float] = Field(default_factory=list)
    seed: int = 0

    @classmethod
    def from_history(cls, name: str, history: OptHistory, seed: int = 0,
                     single_solve_sweeps: Optional[int] = None) -> "RunSummary":
        first, last = history.records[0], history.final
        return cls(
            name=name,
            algorithm=history.algorithm,
            termination=history.termination,
            iterations=history.iterations,
            initial_objective=first.objective,
            final_objective=last.objective,
            E_max=last.E_max,
            C_min=last.C_min,
            grad_norm=last.grad_norm,
            total_sweeps=history.total_sweeps,
            single_solve_sweeps=single_solve_sweeps,
            wall_time_s=history.wall_time_s,
            nu=last.nu,
            mu=last.mu,
            final_p=history.final_p,
            seed=seed,
        )
