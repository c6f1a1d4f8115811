"""Pydantic models shared by the experiment config file, the HTTP service
and the CLI."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class XvaSection(StrictModel):
    lambda_b: Union[float, list[float]] = Field(description="seller hazard rate(s); a list sweeps cases")
    lambda_c: float
    recovery_b: float = Field(ge=0.0, le=1.0)
    recovery_c: float = Field(ge=0.0, le=1.0)
    rate: float
    funding_spread: Union[Literal["rule"], float] = "rule"

    @model_validator(mode="after")
    def check_sweep(self):
        values = self.lambda_b if isinstance(self.lambda_b, list) else [self.lambda_b]
        if not values:
            raise ValueError("lambda_b sweep must not be empty")
        for v in values:
            if not 0.0 <= v <= 0.1:
                raise ValueError("lambda_b values must lie in [0, 0.1]")
        return self

    @property
    def sweep(self):
        return list(self.lambda_b) if isinstance(self.lambda_b, list) else [self.lambda_b]


class ModelSection(StrictModel):
    kind: Literal["bs1d", "basket_average", "basket_worst_of", "heston"]
    option: Literal["put", "call"] = "put"
    strike: float = Field(gt=0)
    maturity: float = Field(gt=0)
    xva: XvaSection
    # one-asset lognormal
    sigma: Optional[float] = None
    repo_rate: Optional[float] = None
    # two-asset lognormal
    sigma1: Optional[float] = None
    sigma2: Optional[float] = None
    repo_rate1: Optional[float] = None
    repo_rate2: Optional[float] = None
    corr: Optional[float] = None
    # stochastic variance
    kappa: Optional[float] = None
    eta: Optional[float] = None
    strict_neumann: bool = False
    # domain truncation (multiples of strike unless *_abs given)
    s_max_strikes: float = 4.0
    v_max: float = 3.0

    @model_validator(mode="after")
    def check_kind_fields(self):
        required = {
            "bs1d": ("sigma", "repo_rate"),
            "basket_average": ("sigma1", "sigma2", "repo_rate1", "repo_rate2", "corr"),
            "basket_worst_of": ("sigma1", "sigma2", "repo_rate1", "repo_rate2", "corr"),
            "heston": ("sigma", "repo_rate", "kappa", "eta", "corr"),
        }[self.kind]
        for name in required:
            if getattr(self, name) is None:
                raise ValueError(f"model.{name} is required for kind={self.kind}")
        return self


class GridSection(StrictModel):
    n_t: int = Field(ge=2)
    n_s: Optional[int] = Field(default=None, ge=2)
    n_s1: Optional[int] = Field(default=None, ge=2)
    n_s2: Optional[int] = Field(default=None, ge=2)
    n_v: Optional[int] = Field(default=None, ge=2)


class NetworkSection(StrictModel):
    hidden_layers: int = Field(default=4, ge=1)
    width: int = Field(default=40, ge=1)
    activation: Literal["tanh"] = "tanh"
    input_scaling: bool = True


class DecaySection(StrictModel):
    delta: float = Field(gt=0)
    a: int = Field(gt=0)


class TrainingSection(StrictModel):
    adam_steps: int = Field(ge=0)
    lbfgs_steps: int = Field(ge=0)
    lr0: float = Field(default=1e-3, gt=0)
    decay: Optional[DecaySection] = None
    lbfgs_memory: int = Field(default=10, ge=1)
    log_every: int = Field(default=100, ge=1)
    mode: Literal["pde-boundary", "classic"] = "pde-boundary"
    n_trials: int = Field(default=1, ge=1)
    base_seed: int = 0
    seeds: Optional[list[int]] = None

    @property
    def seed_list(self):
        if self.seeds is not None:
            return list(self.seeds)
        return [self.base_seed + k for k in range(self.n_trials)]


class FdSection(StrictModel):
    """Resolutions of a finite-difference reference solve."""

    n_t: int = Field(ge=4)
    n_s: Optional[int] = Field(default=None, ge=4)
    n_s1: Optional[int] = Field(default=None, ge=4)
    n_s2: Optional[int] = Field(default=None, ge=4)
    n_v: Optional[int] = Field(default=None, ge=4)
    fixed_point_tol: float = Field(default=1e-10, gt=0)
    max_iters: int = Field(default=50, ge=1)


class EvaluationSection(StrictModel):
    eval_grid_multiplier: int = Field(default=2, ge=1)
    near_strike_band: float = Field(default=0.2, gt=0, le=1.0)
    fd_reference: Optional[FdSection] = None


class ExperimentConfig(StrictModel):
    model: ModelSection
    grid: GridSection
    network: NetworkSection = NetworkSection()
    training: TrainingSection
    evaluation: EvaluationSection = EvaluationSection()


# -- request / response bodies -------------------------------------------------


class PriceRequest(StrictModel):
    model: ModelSection
    points: list[list[float]] = Field(description="rows (t, S)")
    risky: bool = True
    greeks: bool = False

    @model_validator(mode="after")
    def check_kind(self):
        if self.model.kind != "bs1d":
            raise ValueError("closed-form pricing is available for kind=bs1d only")
        return self


class PriceResponse(StrictModel):
    prices: list[float]
    deltas: Optional[list[float]] = None
    gammas: Optional[list[float]] = None


class FellerRequest(StrictModel):
    model: ModelSection


class FellerResponse(StrictModel):
    feller_satisfied: bool


class FdRequest(StrictModel):
    model: ModelSection
    fd: FdSection
    lambda_b: Optional[float] = None
    tag: str = "surface"


class FdResponse(StrictModel):
    csv_path: str
    meta_path: str
    fixed_point: dict
    final_min: float
    final_max: float


class GreeksRequest(StrictModel):
    checkpoint: str
    model: ModelSection
    lambda_b: Optional[float] = None
    points: list[list[float]]


class GreeksResponse(StrictModel):
    columns: list[str]
    rows: list[list[float]]


class CompareRequest(StrictModel):
    checkpoint: str
    model: ModelSection
    lambda_b: Optional[float] = None
    surface_csv: Optional[str] = None  # closed form when omitted (bs1d only)


class CompareResponse(StrictModel):
    report: dict
    points_csv: Optional[str] = None


class TrainJobRequest(StrictModel):
    config: ExperimentConfig
    tag: str = "job"


class TrainJobStatus(StrictModel):
    job_id: str
    state: Literal["queued", "running", "done", "failed"]
    detail: Optional[str] = None
    output_dir: Optional[str] = None
    summary: Optional[dict] = None
