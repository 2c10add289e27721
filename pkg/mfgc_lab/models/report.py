from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from mfgc_lab.models.solver import SCHEMA_VERSION, ExperimentConfig, ParticleSettings, Problem


class BoundCheck(BaseModel):
    name: str = Field(..., description="Short identifier of the check.")
    anchor: str = Field(..., description="The estimate or identity being verified.")
    lhs: float = Field(..., description="Computed left-hand side.")
    rhs: float = Field(..., description="Computed right-hand side.")
    margin: float = Field(..., description="rhs - lhs.")
    satisfied: bool = Field(..., description="lhs <= rhs + tolerance.")
    tolerance: float = Field(0.0, ge=0, description="Additive slack allowed.")

    class Config:
        json_schema_extra = {
            "example": {
                "name": "max_principle",
                "anchor": "maximum principle for u",
                "lhs": 0.12,
                "rhs": 0.17,
                "margin": 0.05,
                "satisfied": True,
                "tolerance": 1e-6,
            }
        }

    @classmethod
    def evaluate(
        cls, name: str, anchor: str, lhs: float, rhs: float, tolerance: float = 0.0
    ) -> "BoundCheck":
        lhs = float(lhs)
        rhs = float(rhs)
        return cls(
            name=name,
            anchor=anchor,
            lhs=lhs,
            rhs=rhs,
            margin=rhs - lhs,
            satisfied=bool(lhs <= rhs + tolerance),
            tolerance=float(tolerance),
        )


class MuSolveReport(BaseModel):
    iterations: int = Field(..., ge=0, description="Map applications that moved alpha.")
    final_delta: float = Field(..., ge=0, description="Last sup-norm change in alpha.")
    observed_ratio: float = Field(
        ..., ge=0, description="Geometric mean of successive delta ratios."
    )
    lambda_qprime: float = Field(..., ge=0, description="Lambda_{q'} of the result.")
    lambda_inf: float = Field(..., ge=0, description="Lambda_inf of the result.")
    lambda_bound: float = Field(
        ..., ge=0, description="Right-hand side of the applicable Lambda bound."
    )
    bound_satisfied: bool = Field(..., description="Lambda bound holds up to tol_mu.")
    residual: float = Field(..., ge=0, description="Sup defect of the fixed point.")
    dual_start_gap: Optional[float] = Field(
        None, description="Distance between the two-sided starts (monotone solve)."
    )


class StageReport(BaseModel):
    scale: float = Field(..., ge=0, le=1, description="Continuation value.")
    iterations: int = Field(
        ..., ge=0, description="Sweeps whose change exceeded tol_outer."
    )
    sweeps: int = Field(..., ge=0, description="Sweeps performed.")
    residuals: List[float] = Field(default_factory=list, description="Outer residuals.")
    contraction_ratio: float = Field(
        0.0, ge=0, description="Geometric mean of outer residual ratios."
    )
    max_mu_iterations: int = Field(0, ge=0, description="Worst inner iteration count.")
    max_mu_ratio: float = Field(0.0, ge=0, description="Worst inner observed ratio.")
    converged: bool = Field(True, description="Stage met tol_outer.")


class SolveReport(BaseModel):
    schema_version: str = Field(SCHEMA_VERSION, description="Report schema.")
    problem: Problem
    converged: bool
    final_scale: float = Field(..., ge=0, le=1)
    stages: List[StageReport] = Field(default_factory=list)
    max_mu_residual: float = Field(0.0, ge=0, description="Worst mu defect at the end.")
    message: Optional[str] = Field(None, description="Failure detail, if any.")
    config: Optional[ExperimentConfig] = Field(None, description="Full resolved config.")


class CheckTable(BaseModel):
    schema_version: str = Field(SCHEMA_VERSION, description="Report schema.")
    all_satisfied: bool
    checks: List[BoundCheck]


class ParticleReport(BaseModel):
    schema_version: str = Field(SCHEMA_VERSION, description="Report schema.")
    boundary: str
    n_particles: int = Field(..., ge=1)
    seed: int = Field(..., ge=0)
    metric: str = Field(..., description="absorbed_fraction_gap or dstar.")
    value: float
    tolerance: float
    within_tolerance: bool
    live_fraction: float = Field(..., ge=0, le=1)
    details: Dict[str, float] = Field(default_factory=dict)


class ToleranceSample(BaseModel):
    n_particles: int = Field(..., ge=1)
    dstar: float = Field(..., ge=0, description="d* of the particle m(T) against the PDE.")


class ToleranceCalibration(BaseModel):
    """Tolerance-curve constants fitted on a zero-drift reflected run."""

    schema_version: str = Field(SCHEMA_VERSION, description="Report schema.")
    c_stat: float = Field(..., ge=0)
    c_h: float = Field(..., ge=0)
    c_t: float = Field(..., ge=0)
    safety: float = Field(2.0, gt=0, description="Factor applied to the fitted constants.")
    h: float = Field(..., gt=0, description="Grid spacing of the calibration run.")
    dt: float = Field(..., gt=0, description="Time step of the calibration run.")
    seed: int = Field(0, ge=0)
    samples: List[ToleranceSample] = Field(default_factory=list)

    def apply(self, settings: Optional[ParticleSettings] = None) -> ParticleSettings:
        settings = settings or ParticleSettings()
        return settings.model_copy(update={"c_stat": self.c_stat, "c_h": self.c_h, "c_t": self.c_t})

class SweepRow(BaseModel):
    """One long-format row of sweep.csv."""

    point_id: str = Field(..., description="Zero-padded index of the sweep point.")
    parameters: str = Field(..., description="JSON object of the swept values.")
    name: str = Field(..., description="Check name, 'convergence' or a horizon probe.")
    anchor: str = Field("", description="The estimate or outcome recorded.")
    lhs: float = Field(float("nan"))
    rhs: float = Field(float("nan"))
    margin: float = Field(float("nan"))
    satisfied: bool = False
    status: str = Field("ok", description="ok, rejected, non_convergence or error.")
    message: str = ""
