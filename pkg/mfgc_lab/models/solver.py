from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from mfgc_lab.models.spec import ModelConfig, ModelVariant

SCHEMA_VERSION = "1.0"


class Problem(str, Enum):
    P1 = "p1"
    P2 = "p2"


class SolverConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "problem": "p1",
                "tol_outer": 1e-8,
                "max_outer": 200,
                "damping": 0.5,
                "continuation_steps": [0.25, 0.5, 0.75, 1.0],
                "tol_mu": 1e-10,
                "max_iter_mu": 200,
            }
        },
    )

    problem: Problem = Field(
        Problem.P1, description="p1: continuation in lambda; p2: continuation in theta."
    )
    tol_outer: float = Field(
        1e-8, gt=0, description="Sup-norm change in (u, m) that ends a stage."
    )
    max_outer: int = Field(200, ge=1, description="Picard sweeps allowed per stage.")
    damping: float = Field(0.5, gt=0, le=1, description="Weight of the fresh iterate.")
    continuation_steps: List[float] = Field(
        default_factory=lambda: [0.25, 0.5, 0.75, 1.0],
        description="Increasing scale values ending at 1.",
    )
    tol_mu: float = Field(1e-10, gt=0, description="Tolerance of the mu fixed point.")
    max_iter_mu: int = Field(200, ge=1, description="Iterations allowed for mu.")

    @field_validator("continuation_steps")
    @classmethod
    def _check_steps(cls, steps: List[float]) -> List[float]:
        if not steps:
            raise ValueError("continuation_steps must not be empty")
        if any(s < 0 or s > 1 for s in steps):
            raise ValueError("continuation_steps must lie in [0, 1]")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("continuation_steps must be strictly increasing")
        if steps[-1] != 1.0:
            raise ValueError("continuation_steps must end at 1")
        return steps


class EstimateSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    discretization_constant: float = Field(
        1.0, ge=0, description="C in the additive C*(h^2 + dt) slack."
    )
    identity_constant: float = Field(
        10.0, ge=0, description="C_id of the energy-identity tolerance."
    )
    duality_constant: float = Field(
        5.0, ge=0, description="C in the duality tolerance 2*tol_mu + C*h^2."
    )
    scaling_band: float = Field(
        1.25, ge=1, description="Non-explosion band of the gradient scaling check."
    )
    theta_band: float = Field(
        2.0, ge=1, description="Non-explosion band of the theta scaling check."
    )
    scaling_values: List[float] = Field(
        default_factory=lambda: [0.25, 0.5, 1.0],
        description="Scale values probed by the scaling checks (must contain 1).",
    )
    include_scaling: bool = Field(
        True, description="Run the re-solving scaling checks in the default suite."
    )
    audit_samples: int = Field(1000, ge=1, description="Samples per assumption audit.")

    @field_validator("scaling_values")
    @classmethod
    def _check_scales(cls, values: List[float]) -> List[float]:
        if not values or 1.0 not in values:
            raise ValueError("scaling_values must contain 1")
        if any(v <= 0 or v > 1 for v in values):
            raise ValueError("scaling_values must lie in (0, 1]")
        return sorted(values)


class ParticleSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_particles: int = Field(100_000, ge=1, description="Number of particles.")
    n_substeps: int = Field(8, ge=1, description="Euler-Maruyama substeps per time step.")
    block_size: int = Field(
        4096, ge=1, description="Particles per RNG block (one seed per block)."
    )
    c_stat: float = Field(0.65, ge=0, description="Sampling term of the tolerance curve.")
    c_h: float = Field(0.1, ge=0, description="Grid term of the tolerance curve.")
    c_t: float = Field(0.1, ge=0, description="Time-step term of the tolerance curve.")
    c_absorbed: float = Field(
        1.0, ge=0, description="Discretization slack on the absorbed fraction, per (h + sqrt(dt))."
    )
    snapshot_particles: int = Field(
        100, ge=0, description="Particles written to the trajectory CSV."
    )
    snapshot_levels: int = Field(
        16, ge=1, description="Approximate number of recorded time levels."
    )


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal["1.0"] = Field(SCHEMA_VERSION, description="Config schema.")
    model: ModelConfig
    solver: SolverConfig = Field(default_factory=SolverConfig)
    estimates: EstimateSettings = Field(default_factory=EstimateSettings)
    particles: ParticleSettings = Field(default_factory=ParticleSettings)
    seed: int = Field(0, ge=0, description="Seed for every randomized step.")

    @model_validator(mode="after")
    def _check_problem(self):
        if (
            self.solver.problem == Problem.P2
            and self.model.variant != ModelVariant.P2_MONOTONE
        ):
            raise ValueError("problem p2 needs the p2_monotone variant")
        return self


class HorizonProbeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t_lo: float = Field(..., gt=0, description="Horizon known or assumed to be unique.")
    t_hi: float = Field(..., gt=0, description="Largest horizon to probe.")
    n_bisect: int = Field(4, ge=1, description="Bisection steps.")
    n_starts: int = Field(2, ge=2, description="Initial guesses per probe.")

    @model_validator(mode="after")
    def _check_order(self):
        if self.t_hi <= self.t_lo:
            raise ValueError("t_hi must exceed t_lo")
        return self


class SweepConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "base": "<ExperimentConfig>",
                "parameters": {
                    "model.kappa": [0.1, 0.2, 0.4],
                    "model.grid.boundary": ["neumann", "dirichlet"],
                },
            }
        },
    )

    schema_version: Literal["1.0"] = Field(SCHEMA_VERSION, description="Config schema.")
    base: ExperimentConfig
    parameters: Dict[str, List[Any]] = Field(
        default_factory=dict,
        description="Dotted config paths mapped to the values to sweep.",
    )
    uniqueness_horizon: Optional[HorizonProbeConfig] = Field(
        None, description="Short-horizon uniqueness bisection over T."
    )
