import copy
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from shapeopt.core.exceptions import ConfigurationException

ALGORITHMS = ("sqp_eq", "sqp_mixed", "grad_desc", "oneshot", "oneshot_constrained")


class ProblemConfig(BaseModel):
    """Annulus model problem."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["annulus"] = "annulus"
    n_s: int = Field(32, ge=3, description="Surface nodes")
    radius: float = Field(1.0, gt=0.0, description="Baseline circle radius")
    layers: int = Field(4, ge=1, description="Volume layers L")
    outer_radius: float = Field(3.0, gt=0.0)
    source: Literal["gaussian", "linear", "constant"] = "gaussian"
    source_center: Tuple[float, float] = (0.4, 0.3)
    source_width: float = Field(1.0, gt=0.0)
    source_gradient: Tuple[float, float] = (1.0, 0.5)
    source_offset: float = 0.0
    source_value: float = 1.0
    target: float = Field(0.0, description="u_target on every surface node")
    gamma: float = Field(0.1, ge=0.0, description="Perimeter weight")
    state_weight: float = Field(1.0, ge=0.0, description="0 drops the state tracking term")
    area_constraint: bool = True
    area_target: Optional[float] = Field(None, description="A0; baseline area when omitted")
    r_min: Optional[float] = Field(None, gt=0.0, description="Radius bound; no inequalities when omitted")
    laplacian_weight: float = Field(1.0, ge=0.0)
    omega: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def _outer_encloses(self):
        if self.outer_radius <= self.radius:
            raise ValueError("outer_radius must exceed radius")
        return self


class ParameterizationConfig(BaseModel):
    """Design parameterization."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["hicks_henne", "ffd", "radial", "free_node"] = "hicks_henne"
    per_side: int = Field(6, ge=1, description="Hicks-Henne bumps per side")
    airfoil_preset: bool = Field(False, description="38 bumps with peaks 0.05 .. 0.95")
    peaks: Optional[List[float]] = None
    sides: Optional[List[Literal["upper", "lower"]]] = None
    exponent: float = Field(3.0, ge=1.0)
    lattice: Tuple[int, int] = (4, 3)
    margin: float = Field(0.1, ge=0.0)
    movable_axis: Optional[Literal[0, 1]] = 1
    basis: Literal["fourier", "nodal"] = "fourier"
    n_basis: int = Field(7, ge=1)
    alpha: float = Field(0.0, ge=0.0)
    p0: Optional[List[float]] = Field(None, description="Initial design; zeros when omitted")
    p0_random_scale: float = Field(0.0, ge=0.0, description="Seeded random initial design amplitude")
    p0_modes: Optional[Dict[int, float]] = Field(
        None, description="Initial radial offsets sum_k a_k cos(k theta); nodal radial basis only"
    )

    @model_validator(mode="after")
    def _peaks_and_sides(self):
        if (self.peaks is None) != (self.sides is None):
            raise ValueError("peaks and sides must be given together")
        if self.peaks is not None and len(self.peaks) != len(self.sides):
            raise ValueError("peaks and sides must have equal length")
        return self

    @model_validator(mode="after")
    def _modes_need_nodal_radial(self):
        if self.p0_modes is None:
            return self
        if self.kind != "radial" or self.basis != "nodal":
            raise ValueError("p0_modes needs kind radial with the nodal basis")
        if self.p0 is not None:
            raise ValueError("p0 and p0_modes are exclusive")
        if any(k < 0 for k in self.p0_modes):
            raise ValueError("p0_modes wave numbers must be non-negative")
        return self


class SmoothingConfig(BaseModel):
    """Hybrid operator B."""
    model_config = ConfigDict(extra="forbid")

    eps1: float = Field(1.0, ge=0.0)
    eps2: float = Field(0.0625, ge=0.0)
    eps3: float = Field(0.0, ge=0.0)
    formulation: Literal["surface", "volume"] = "surface"
    identity_as_matrix: bool = False
    regularization: Optional[Union[Literal["none", "auto"], float]] = None
    reassemble: bool = Field(False, description="Rebuild B every iteration even for linear maps")

    @field_validator("regularization")
    @classmethod
    def _non_negative_shift(cls, value):
        if isinstance(value, float) and value < 0.0:
            raise ValueError("regularization shift must be non-negative")
        return value

    @model_validator(mode="after")
    def _not_all_zero(self):
        if self.eps1 == 0.0 and self.eps2 == 0.0 and self.eps3 == 0.0:
            raise ValueError("eps1, eps2 and eps3 are all zero")
        return self


class OptimizerConfig(BaseModel):
    """Optimizer selection and knobs."""
    model_config = ConfigDict(extra="forbid")

    algorithm: Literal["sqp_eq", "sqp_mixed", "grad_desc", "oneshot", "oneshot_constrained"] = "sqp_mixed"
    hessian: Literal["sobolev", "identity"] = "sobolev"
    tol: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(100, ge=0)
    step: float = Field(1.0, gt=0.0, description="Gradient-descent step length")
    max_design_update: Optional[float] = Field(None, gt=0.0, description="Step cap / One Shot limiter")
    solver_tol: Optional[float] = Field(None, gt=0.0, description="Fixed-point tolerance; settings default")
    inner_steps: int = Field(10, ge=1, description="One Shot piggyback steps J")
    inner_tol: Optional[float] = Field(None, gt=0.0)
    adjoint_carryover: bool = True
    initial_solve: bool = False


class OutputConfig(BaseModel):
    """Artifacts of a run."""
    model_config = ConfigDict(extra="forbid")

    directory: str = "runs/default"
    record_time: bool = Field(False, description="Write wall time into the history CSV")
    write_volume: bool = False
    write_operators: bool = False


class RunConfig(BaseModel):
    """Schema for a run configuration file."""
    model_config = ConfigDict(extra="forbid")

    name: str = "run"
    preset: Optional[str] = None
    seed: int = 0
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    parameterization: ParameterizationConfig = Field(default_factory=ParameterizationConfig)
    smoothing: SmoothingConfig = Field(default_factory=SmoothingConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)


PRESETS: Dict[str, Dict[str, Any]] = {
    "naca-analogue-sobolev": {
        "problem": {"n_s": 64, "gamma": 0.1},
        "parameterization": {"kind": "hicks_henne", "airfoil_preset": True},
        "smoothing": {"eps1": 1.0, "eps2": 0.0625, "eps3": 0.0, "regularization": "auto"},
        "optimizer": {"algorithm": "sqp_eq", "tol": 1e-6, "max_iter": 30, "max_design_update": 0.05},
    },
    "naca-analogue-sobolev-wide": {
        "problem": {"n_s": 64, "gamma": 0.1},
        "parameterization": {"kind": "hicks_henne", "airfoil_preset": True},
        "smoothing": {"eps1": 1.0, "eps2": 0.625, "eps3": 0.0, "regularization": "auto"},
        "optimizer": {"algorithm": "sqp_eq", "tol": 1e-6, "max_iter": 30, "max_design_update": 0.05},
    },
    "naca-analogue-gradient-descent": {
        "problem": {"n_s": 64, "gamma": 0.1},
        "parameterization": {"kind": "hicks_henne", "airfoil_preset": True},
        "optimizer": {"algorithm": "grad_desc", "hessian": "identity", "step": 0.5, "tol": 1e-6,
                      "max_iter": 200, "max_design_update": 0.05},
    },
    "onera-analogue-surface": {
        "problem": {"r_min": 0.9},
        "smoothing": {"eps1": 56.9, "eps2": 0.9, "eps3": 0.1, "formulation": "surface"},
        "optimizer": {"algorithm": "sqp_mixed", "tol": 1e-6, "max_iter": 500},
    },
    "onera-analogue-volume": {
        "problem": {"r_min": 0.9},
        "smoothing": {"eps1": 0.0, "eps2": 7.1, "eps3": 0.1, "formulation": "volume"},
        "optimizer": {"algorithm": "sqp_mixed", "tol": 1e-6, "max_iter": 500},
    },
    "onera-analogue-oneshot": {
        "problem": {"r_min": 0.9},
        "smoothing": {"eps1": 56.9, "eps2": 0.9, "eps3": 0.1, "formulation": "surface"},
        "optimizer": {"algorithm": "oneshot_constrained", "inner_steps": 10, "max_design_update": 5e-3,
                      "tol": 1e-6, "max_iter": 400},
    },
    "perimeter-sobolev": {
        "problem": {"n_s": 32, "layers": 2, "gamma": 0.1, "state_weight": 0.0},
        "parameterization": {"kind": "radial", "basis": "nodal", "p0_modes": {2: 0.05, 4: 0.02}},
        "smoothing": {"eps1": 1.0, "eps2": 0.0625, "eps3": 0.0},
        "optimizer": {"algorithm": "sqp_eq", "tol": 1e-6, "max_iter": 100},
    },
    "perimeter-descent": {
        "problem": {"n_s": 32, "layers": 2, "gamma": 0.1, "state_weight": 0.0},
        "parameterization": {"kind": "radial", "basis": "nodal", "p0_modes": {2: 0.05, 4: 0.02}},
        "optimizer": {"algorithm": "grad_desc", "hessian": "identity", "step": 0.4, "tol": 1e-6,
                      "max_iter": 3000},
    },
}


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; override wins on leaves."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _field_path(loc) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def build_run_config(data: Dict[str, Any]) -> RunConfig:
    """Validate a raw mapping, applying its preset first."""
    if not isinstance(data, dict):
        raise ConfigurationException("<root>", "configuration must be a mapping")
    preset = data.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationException("preset", f"unknown preset '{preset}' (known: {', '.join(sorted(PRESETS))})")
        data = deep_merge(PRESETS[preset], data)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        path = _field_path(first["loc"])
        raise ConfigurationException(path, first["msg"])


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read a YAML or JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationException(str(path), f"cannot read configuration: {e}")
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationException(str(path), f"cannot parse configuration: {e}")
    return build_run_config(data or {})
