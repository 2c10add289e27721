from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from mfgc_lab.grid import Grid1D, TimeMesh


class ModelVariant(str, Enum):
    P1_QUADRATIC = "p1_quadratic"
    P2_MONOTONE = "p2_monotone"


class ProfileKind(str, Enum):
    ZERO = "zero"
    CONSTANT = "constant"
    COSINE = "cosine"
    SINE = "sine"
    GAUSSIAN = "gaussian"


class ProfileConfig(BaseModel):
    """A node profile: offset + amplitude * shape(x)."""

    model_config = ConfigDict(
        frozen=True,
        extra="forbid",
        json_schema_extra={
            "example": {"kind": "cosine", "amplitude": 0.1, "offset": 0.0, "mode": 1}
        },
    )

    kind: ProfileKind = Field(ProfileKind.ZERO, description="Shape of the profile.")
    amplitude: float = Field(0.0, description="Multiplier of the shape.")
    offset: float = Field(0.0, description="Constant added to the shape.")
    mode: int = Field(
        1, ge=1, description="Half-wavelengths across the domain (cosine/sine)."
    )
    center: float = Field(0.5, description="Center of the gaussian bump.")
    width: float = Field(0.1, gt=0, description="Standard deviation of the bump.")

    def evaluate(self, grid: Grid1D) -> np.ndarray:
        x = grid.nodes
        s = (x - grid.x_lo) / grid.width
        if self.kind == ProfileKind.ZERO:
            return np.zeros_like(x)
        if self.kind == ProfileKind.CONSTANT:
            shape = np.ones_like(x)
        elif self.kind == ProfileKind.COSINE:
            shape = np.cos(self.mode * np.pi * s)
        elif self.kind == ProfileKind.SINE:
            shape = np.sin(self.mode * np.pi * s)
        else:
            shape = np.exp(-0.5 * ((x - self.center) / self.width) ** 2)
        return self.offset + self.amplitude * shape


class ModelConstants(BaseModel):
    model_config = ConfigDict(
        frozen=True,
        extra="forbid",
        json_schema_extra={
            "example": {"C0": 2.0, "lambda0": 0.3, "lambda1": 0.0, "lambda2": 0.0}
        },
    )

    C0: float = Field(..., gt=0, description="Growth constant C0 of the assumptions.")
    lambda0: float = Field(
        ..., ge=0, lt=1, description="Weight of the control moment in the D_pH growth."
    )
    lambda1: float = Field(
        0.0, ge=0, description="Weight of the control moment in the coercivity bound."
    )
    lambda2: float = Field(
        0.0, ge=0, description="Weight of the control moment in the bound on H(., 0, mu)."
    )


class ModelConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "variant": "p1_quadratic",
                "kappa": 0.3,
                "nu": 0.2,
                "c_f": 0.0,
                "c_g": 0.1,
                "kernel_width": 0.1,
                "potential": {"kind": "cosine", "amplitude": 0.05},
                "terminal_base": {"kind": "cosine", "amplitude": 0.1},
                "initial_density": {"kind": "cosine", "amplitude": 0.3, "offset": 1.0},
                "grid": {"x_lo": 0.0, "x_hi": 1.0, "n_cells": 128, "boundary": "neumann"},
                "mesh": {"T": 1.0, "n_steps": 256},
            }
        },
    )

    variant: ModelVariant = Field(
        ModelVariant.P1_QUADRATIC, description="Hamiltonian/Lagrangian family."
    )
    kappa: float = Field(
        0.3, ge=0, description="Control-interaction strength, the Lipschitz constant L1."
    )
    nu: float = Field(0.2, gt=0, description="Diffusion coefficient.")
    c_f: float = Field(0.0, ge=0, description="Strength of the running coupling f.")
    c_g: float = Field(0.0, ge=0, description="Strength of the terminal coupling g.")
    kernel_width: float = Field(
        0.1, gt=0, description="Width of the truncated Gaussian smoothing kernel."
    )
    q: float = Field(2.0, ge=2.0, le=2.0, description="Growth exponent of H in p.")
    q0: float = Field(
        2.0, ge=1.0, le=2.0, description="Exponent of the control moment in A4-A7."
    )
    potential: ProfileConfig = Field(
        default_factory=ProfileConfig, description="State cost phi(x) inside H."
    )
    terminal_base: ProfileConfig = Field(
        default_factory=ProfileConfig, description="Base terminal cost G0(x) inside g."
    )
    initial_density: ProfileConfig = Field(
        default_factory=lambda: ProfileConfig(kind=ProfileKind.CONSTANT, amplitude=1.0),
        description="Initial density m0, renormalized to unit mass.",
    )
    constants: Optional[ModelConstants] = Field(
        None, description="Declared assumption constants; derived when omitted."
    )
    grid: Grid1D = Field(..., description="Spatial grid.")
    mesh: TimeMesh = Field(..., description="Time mesh.")
