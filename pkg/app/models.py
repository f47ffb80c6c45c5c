from typing import List, Optional, Literal, Tuple
from pydantic import BaseModel, ConfigDict, Field, model_validator
from app.config import config


class DimensionalParams(BaseModel):
    """Dimensional model constants (cells/cm^3, 1/s, cm^2/s, M)"""
    model_config = ConfigDict(frozen=True)

    K1: float = Field(..., gt=0, description="Carrying capacity of normal tissue (cells/cm^3)")
    K2: float = Field(..., gt=0, description="Carrying capacity of tumor tissue (cells/cm^3)")
    r1: float = Field(..., gt=0, description="Normal tissue growth rate (1/s)")
    r2: float = Field(..., gt=0, description="Tumor growth rate (1/s)")
    D_N2: float = Field(..., gt=0, description="Tumor diffusion constant (cm^2/s)")
    D_N3: float = Field(..., gt=0, description="H+ diffusion constant (cm^2/s)")
    r3: float = Field(..., gt=0, description="Acid production rate (M cm^3/(cell s))")
    d3: float = Field(..., gt=0, description="Acid reabsorption rate (1/s)")
    d1: float = Field(..., gt=0, description="Acid-induced death rate (1/(M s))")

    @classmethod
    def reference(cls, d1: float) -> "DimensionalParams":
        """Literature values for every constant except the acid death rate d1"""
        return cls(
            K1=5e7, K2=5e7, r1=1e-6, r2=1e-6,
            D_N2=2e-10, D_N3=5e-6, r3=2.2e-17, d3=1.1e-4, d1=d1,
        )


class NondimParams(BaseModel):
    """The four dimensionless groups of the model"""
    model_config = ConfigDict(frozen=True)

    delta1: float = Field(..., ge=0, description="Destructive influence of excess H+ on normal tissue")
    rho2: float = Field(..., gt=0, description="Relative tumor growth rate")
    D2: float = Field(..., gt=0, description="Relative tumor diffusivity")
    delta3: float = Field(..., gt=0, description="Relative acid reabsorption rate")

    def with_delta1(self, delta1: float) -> "NondimParams":
        """Copy with a different delta1 (validated)"""
        return NondimParams(delta1=delta1, rho2=self.rho2, D2=self.D2, delta3=self.delta3)

    def is_admissible(self, bounds: Tuple[float, float]) -> bool:
        lo, hi = bounds
        return lo <= self.delta1 <= hi


class NondimScales(BaseModel):
    """Scales recovering dimensional quantities from the dimensionless ones"""
    model_config = ConfigDict(frozen=True)

    L0: float = Field(..., description="Acid concentration scale r3*K2/d3 (M)")
    time_scale: float = Field(..., description="Seconds per dimensionless time unit (1/r1)")
    length_scale: float = Field(..., description="Centimetres per dimensionless length unit")


class NewtonOptions(BaseModel):
    """Stopping rule of the per-step Newton iteration"""
    model_config = ConfigDict(frozen=True)

    tol: float = Field(default_factory=lambda: config.NEWTON_TOL, gt=0,
                       description="Absolute tolerance on the max-norm of the step residual")
    max_iter: int = Field(default_factory=lambda: config.NEWTON_MAX_ITER, ge=1,
                          description="Newton iterations allowed per time step")


class OptimOptions(BaseModel):
    """Options of the projected secant-Newton minimizer"""
    model_config = ConfigDict(frozen=True)

    bounds: Tuple[float, float] = Field(default_factory=config.bounds, description="Admissible interval [lo, hi]")
    grad_tol: Optional[float] = Field(
        None, gt=0,
        description="Projected-gradient tolerance; None means 1e-8 * (1 + |J(delta1_0)|)",
    )
    step_tol: float = Field(1e-10, gt=0, description="Smallest accepted step length")
    max_iter: int = Field(100, ge=1, description="Maximum number of iterations")
    c1: float = Field(1e-4, gt=0, lt=1, description="Armijo sufficient-decrease constant")
    backtrack: float = Field(0.5, gt=0, lt=1, description="Step reduction factor of the line search")
    max_backtracks: int = Field(40, ge=1, description="Line-search trials per iteration")
    curvature_offset: float = Field(
        1e-2, gt=0, lt=1,
        description="Relative offset (of hi - lo) of the extra gradient seeding the secant curvature",
    )

    @model_validator(mode="after")
    def _check_bounds(self) -> "OptimOptions":
        lo, hi = self.bounds
        if not lo < hi:
            raise ValueError(f"bounds must satisfy lo < hi, got {self.bounds}")
        return self


class TraceEntry(BaseModel):
    """One optimizer iterate"""
    iteration: int = Field(..., ge=0)
    delta1: float
    J: float
    grad: float


class FitResult(BaseModel):
    """Outcome of a delta1 fit"""
    delta1_star: float = Field(..., description="Recovered delta1")
    J_star: float = Field(..., description="Misfit at delta1_star")
    grad_star: float = Field(..., description="Adjoint gradient at delta1_star")
    iterations: int = Field(..., ge=0)
    trace: List[TraceEntry] = Field(default_factory=list)
    converged: bool
    termination: Literal["gradient", "step", "max_iter", "line_search"]
    bounds: Tuple[float, float]
    forward_solves: int = Field(0, ge=0)
    adjoint_solves: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_consistency(self) -> "FitResult":
        if len(self.trace) != self.iterations:
            raise ValueError(f"trace length {len(self.trace)} != iterations {self.iterations}")
        lo, hi = self.bounds
        if not lo <= self.delta1_star <= hi:
            raise ValueError(f"delta1_star {self.delta1_star} outside bounds {self.bounds}")
        return self


class StudyRow(BaseModel):
    """Aggregate of the fits for one noise level"""
    sigma: float = Field(..., ge=0)
    mean: Optional[float] = Field(..., description="Mean recovered delta1, None if every trial failed")
    std: Optional[float] = Field(..., ge=0, description="Sample standard deviation S")
    rel_error: Optional[float] = Field(..., ge=0, description="|delta1_hat - mean| / delta1_hat")
    trials: int = Field(..., ge=1)
    failures: int = Field(0, ge=0)
    flagged: bool = Field(False, description="More than 10% of the trials failed")


class RecoveryRow(BaseModel):
    """Aggregate of noiseless fits from random starts for one delta1_hat"""
    delta1_hat: float
    mean: Optional[float]
    std: Optional[float] = Field(..., ge=0)
    trials: int = Field(..., ge=1)
    failures: int = Field(0, ge=0)


class RefinementRow(BaseModel):
    """Adjoint against finite-difference gradient on one discretization level"""
    nod: int
    tau: float
    delta1: float
    J: float
    grad_adjoint: float
    grad_fd: float
    rel_error: float = Field(..., ge=0)


class ProblemSpec(BaseModel):
    """Model parameters other than delta1 plus the discretization"""
    rho2: float = Field(1.0, gt=0)
    D2: float = Field(4e-5, gt=0)
    delta3: float = Field(1.0, gt=0)
    nod: int = Field(default_factory=lambda: config.DEFAULT_NOD, ge=3)
    tau: float = Field(default_factory=lambda: config.DEFAULT_TAU, gt=0)
    t_final: float = Field(default_factory=lambda: config.DEFAULT_T_FINAL, gt=0)
    front_width: float = Field(default_factory=lambda: config.DEFAULT_FRONT_WIDTH, gt=0, lt=1)

    def params(self, delta1: float) -> NondimParams:
        return NondimParams(delta1=delta1, rho2=self.rho2, D2=self.D2, delta3=self.delta3)


class ExperimentConfig(ProblemSpec):
    """Configuration of synthetic-data experiments"""
    delta1_hat: float = Field(12.5, gt=0, description="delta1 generating the synthetic data")
    sigmas: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
    trials: int = Field(30, ge=1)
    delta1_init: Optional[float] = Field(
        8.0, description="Fixed starting value; None draws uniformly from the bounds per trial"
    )
    bounds: Tuple[float, float] = Field(default_factory=config.bounds)
    seed: int = Field(default_factory=lambda: config.DEFAULT_SEED, ge=0)
    out: Optional[str] = Field(None, description="Output CSV path")

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if any(s < 0 for s in self.sigmas):
            raise ValueError(f"sigmas must be nonnegative, got {self.sigmas}")
        lo, hi = self.bounds
        if not lo < hi:
            raise ValueError(f"bounds must satisfy lo < hi, got {self.bounds}")
        if self.delta1_init is not None and not lo <= self.delta1_init <= hi:
            raise ValueError(f"delta1_init {self.delta1_init} outside bounds {self.bounds}")
        return self


# HTTP request/response models

class ForwardRequest(ProblemSpec):
    """Request for a forward solve"""
    delta1: float = Field(..., ge=0)
    gap_threshold: float = Field(0.1, gt=0, lt=1)


class ForwardResponse(BaseModel):
    """Final-time profiles of a forward solve"""
    delta1: float
    t: float = Field(..., description="Time of the returned profiles")
    x: List[float]
    u1: List[float]
    u2: List[float]
    u3: List[float]
    gap_intervals: List[Tuple[float, float]] = Field(
        ..., description="x-intervals where u1 and u2 are both below gap_threshold"
    )
    newton_iterations: int


class GradientRequest(ProblemSpec):
    """Request for J and its gradient against synthetic noiseless data"""
    delta1_hat: float = Field(..., gt=0)
    delta1: float = Field(..., ge=0)
    finite_difference: bool = Field(False, description="Also compute the central FD gradient")


class GradientResponse(BaseModel):
    J: float
    grad_adjoint: float
    grad_fd: Optional[float] = None
    rel_error: Optional[float] = None


class FitRequest(ProblemSpec):
    """Request for a fit against synthetic data"""
    delta1_hat: float = Field(..., gt=0)
    delta1_init: float = Field(8.0, ge=0)
    sigma: float = Field(0.0, ge=0)
    seed: int = Field(default_factory=lambda: config.DEFAULT_SEED, ge=0)


class SweepRequest(ProblemSpec):
    """Request for samples of the reduced functional"""
    delta1_hat: float = Field(..., gt=0)
    lo: float = Field(0.0, ge=0)
    hi: float = Field(20.0, gt=0)
    samples: int = Field(41, ge=2, le=1001)


class SweepSample(BaseModel):
    delta1: float
    J: float


class SweepResponse(BaseModel):
    samples: List[SweepSample]
    argmin: float


class ErrorResponse(BaseModel):
    """Error response model"""
    error: str = Field(..., description="Error message")
    detail: Optional[str] = Field(None, description="Additional error details")
