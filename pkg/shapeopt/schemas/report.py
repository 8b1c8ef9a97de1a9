import csv
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, Field


class CheckResult(BaseModel):
    """Schema for one verification check."""
    check_id: str = Field(..., description="Stable identifier, e.g. gradient.fd_directional")
    passed: bool
    measured: float = Field(..., description="Measured error or quantity")
    tolerance: float = Field(..., description="Declared tolerance")
    detail: str = Field("", description="Free-form context")


class VerificationReport(BaseModel):
    """Schema for the structured text report written by `verify`."""
    level: str
    seed: int
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]

    def to_text(self) -> str:
        lines = [f"level: {self.level}", f"seed: {self.seed}", f"checks: {len(self.checks)}",
                 f"status: {'PASS' if self.passed else 'FAIL'}", ""]
        for check in self.checks:
            lines.extend([
                f"[{check.check_id}]",
                f"status: {'PASS' if check.passed else 'FAIL'}",
                f"measured: {check.measured:.6e}",
                f"tolerance: {check.tolerance:.1e}",
            ])
            if check.detail:
                lines.append(f"detail: {check.detail}")
            lines.append("")
        return "\n".join(lines)


class ComparisonRow(BaseModel):
    """Schema for one run in the `report` comparison table."""
    run: str
    algorithm: Optional[str] = None
    final_objective: float
    E_max: float
    C_min: Optional[float] = None
    iterations: int
    sweeps: Optional[int] = None
    wall_time_s: float
    time_factor: Optional[float] = None
    iter_factor: Optional[float] = None


COMPARISON_COLUMNS = list(ComparisonRow.model_fields.keys())


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_comparison_csv(rows: List[ComparisonRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(COMPARISON_COLUMNS)
        for row in rows:
            data = row.model_dump()
            writer.writerow([_cell(data[column]) for column in COMPARISON_COLUMNS])
    return path


def format_comparison(rows: List[ComparisonRow]) -> str:
    """Aligned text table."""
    table = [COMPARISON_COLUMNS] + [[_cell(row.model_dump()[c]) for c in COMPARISON_COLUMNS] for row in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(COMPARISON_COLUMNS))]
    return "\n".join("  ".join(cell.ljust(width) for cell, width in zip(r, widths)).rstrip() for r in table)
