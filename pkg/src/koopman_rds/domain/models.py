import logging
import math
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from koopman_rds.domain.enums import (
    HankelEstimator,
    Layout,
    ModelKind,
    ObservableKind,
    Scheme,
)

SCHEMA_VERSION = "1.0"

# Canonical parameter names per model kind, with the default values used by
# the experiment registry.
MODEL_DEFAULTS: Dict[ModelKind, Dict[str, float]] = {
    ModelKind.NOISY_ROTATION: {"theta": math.pi / 320, "delta": 0.01},
    ModelKind.DISCRETE_LINEAR: {"p1": 0.75, "omega1": 1.0, "omega2": 2.0},
    ModelKind.SWITCHING_LINEAR_RDE: {
        "a1": -0.1,
        "a2": 0.1,
        "b": 2.0,
        "p1": 0.5,
        "switch_dt": math.pi / 30,
    },
    ModelKind.OU_LINEAR_SDE: {"mu": -0.5, "sigma": 0.001},
    ModelKind.SCALAR_PITCHFORK_SDE: {"mu": -0.5, "sigma": 0.001},
    ModelKind.STUART_LANDAU: {"delta": 0.5, "beta": 1.0, "gamma": 1.0, "epsilon": 0.03},
    ModelKind.VAN_DER_POL: {"mu": 0.3, "epsilon": 0.005},
    ModelKind.LOTKA_VOLTERRA: {
        "a1": 1.0,
        "b1": 0.5,
        "c1": 0.01,
        "a2": 0.75,
        "b2": 0.25,
        "c2": 0.01,
        "sigma1": 0.05,
        "sigma2": 0.05,
    },
}

NOISE_PARAMS: Dict[ModelKind, Tuple[str, ...]] = {
    ModelKind.NOISY_ROTATION: ("delta",),
    ModelKind.DISCRETE_LINEAR: (),
    ModelKind.SWITCHING_LINEAR_RDE: (),
    ModelKind.OU_LINEAR_SDE: ("sigma",),
    ModelKind.SCALAR_PITCHFORK_SDE: ("sigma",),
    ModelKind.STUART_LANDAU: ("epsilon",),
    ModelKind.VAN_DER_POL: ("epsilon",),
    ModelKind.LOTKA_VOLTERRA: ("sigma1", "sigma2"),
}

STATE_DIM: Dict[ModelKind, int] = {
    ModelKind.NOISY_ROTATION: 1,
    ModelKind.DISCRETE_LINEAR: 2,
    ModelKind.SWITCHING_LINEAR_RDE: 2,
    ModelKind.OU_LINEAR_SDE: 1,
    ModelKind.SCALAR_PITCHFORK_SDE: 1,
    ModelKind.STUART_LANDAU: 2,
    ModelKind.VAN_DER_POL: 2,
    ModelKind.LOTKA_VOLTERRA: 2,
}

# Number of independent Wiener components driving each SDE.
WIENER_DIM: Dict[ModelKind, int] = {
    ModelKind.OU_LINEAR_SDE: 1,
    ModelKind.SCALAR_PITCHFORK_SDE: 1,
    ModelKind.STUART_LANDAU: 2,
    ModelKind.VAN_DER_POL: 1,
    ModelKind.LOTKA_VOLTERRA: 2,
}


class ModelSpec(BaseModel):
    """One system of the catalog with its named parameters.

    Missing parameters take the catalog defaults; unknown names are rejected.
    """

    model_config = ConfigDict(frozen=True)

    kind: ModelKind
    params: Dict[str, float] = Field(default_factory=dict, examples=[{"mu": -0.5}])

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "kind" not in data:
            return data
        kind = ModelKind(data["kind"])
        given = dict(data.get("params") or {})
        unknown = sorted(set(given) - set(MODEL_DEFAULTS[kind]))
        if unknown:
            raise ValueError(f"Unknown parameters for {kind.value}: {unknown}")
        params = {**MODEL_DEFAULTS[kind], **{k: float(v) for k, v in given.items()}}
        for name in NOISE_PARAMS[kind]:
            if params[name] < 0:
                raise ValueError(f"Noise amplitude {name} must be >= 0")
        if "p1" in params and not 0.0 <= params["p1"] <= 1.0:
            raise ValueError("p1 must lie in [0, 1]")
        if kind == ModelKind.SWITCHING_LINEAR_RDE and params["switch_dt"] <= 0:
            raise ValueError("switch_dt must be > 0")
        return {**data, "kind": kind, "params": params}

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    @property
    def dim(self) -> int:
        return STATE_DIM[self.kind]

    @property
    def wiener_dim(self) -> int:
        return WIENER_DIM.get(self.kind, 0)

    @property
    def noise_amplitudes(self) -> Dict[str, float]:
        return {name: self.params[name] for name in NOISE_PARAMS[self.kind]}

    @property
    def is_deterministic(self) -> bool:
        if self.kind in (ModelKind.DISCRETE_LINEAR, ModelKind.SWITCHING_LINEAR_RDE):
            return self.params["p1"] in (0.0, 1.0)
        return all(v == 0.0 for v in self.noise_amplitudes.values())

    def deterministic(self) -> "ModelSpec":
        """Counterpart with every noise source switched off."""
        if self.kind in (ModelKind.DISCRETE_LINEAR, ModelKind.SWITCHING_LINEAR_RDE):
            overrides = {"p1": 1.0}
        else:
            overrides = {name: 0.0 for name in NOISE_PARAMS[self.kind]}
        return self.with_params(**overrides)

    def with_params(self, **overrides: float) -> "ModelSpec":
        return ModelSpec(kind=self.kind, params={**self.params, **overrides})


class ObservableSet(BaseModel):
    """Dictionary of observables, see `services.observables` for the evaluation rules."""

    model_config = ConfigDict(frozen=True)

    kind: ObservableKind
    max_degree: int = Field(default=1, ge=1)
    n1: int = Field(default=1, ge=1)
    count: int = Field(default=1, ge=1)
    state_dim: int = Field(default=1, ge=1)
    alpha: float = Field(default=1.0, gt=0)
    model: Optional[ModelSpec] = None
    harmonics: int = Field(default=5, ge=1)
    radius_reference: Literal["sqrt_delta", "delta"] = "sqrt_delta"

    @model_validator(mode="after")
    def _check_model(self) -> "ObservableSet":
        needs_model = self.kind in (
            ObservableKind.ANALYTIC_EIGENFUNCTIONS,
            ObservableKind.SCALAR_COMBO,
        )
        if needs_model and self.model is None:
            raise ValueError(f"{self.kind.value} observables need a model")
        return self

    @property
    def n(self) -> int:
        match self.kind:
            case ObservableKind.FULL_STATE:
                return self.state_dim
            case ObservableKind.MONOMIALS | ObservableKind.HERMITE:
                return self.max_degree
            case ObservableKind.FOURIER_CIRCLE | ObservableKind.FOURIER_EXP:
                return 2 * self.n1
            case ObservableKind.ANALYTIC_EIGENFUNCTIONS:
                return self.count
            case ObservableKind.SCALAR_COMBO:
                return 1
        raise AssertionError(self.kind)

    @property
    def input_dim(self) -> int:
        if self.kind == ObservableKind.FULL_STATE:
            return self.state_dim
        if self.model is not None:
            return self.model.dim
        return 1


class DmdOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    eps: float = Field(default=1e-12, gt=0, lt=1)
    residual_threshold: float = Field(default=1e-3, gt=0)
    scale_columns: bool = True
    max_rank: Optional[int] = Field(default=None, ge=1)


class HankelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_rows: int = Field(ge=1)
    m_cols: int = Field(ge=1)
    observable: ObservableSet
    averaging_N: int = Field(default=1, ge=1)
    estimator: HankelEstimator = HankelEstimator.CONTINUATION

    @model_validator(mode="after")
    def _check_shape(self) -> "HankelSpec":
        if self.observable.n != 1:
            raise ValueError("Hankel matrices need a scalar observable")
        if self.n_rows < self.m_cols:
            logging.warning(
                f"Hankel spec has fewer rows ({self.n_rows}) than columns ({self.m_cols})"
            )
        return self


class AssemblyParams(BaseModel):
    """How snapshot matrices are assembled for one experiment variant."""

    layout: Layout
    dt: float = Field(gt=0, examples=[0.01])
    substeps: int = Field(default=1, ge=1)
    scheme: Scheme = Scheme.AUTO
    m: int = Field(default=100, ge=1)
    k: int = Field(default=1, ge=1)
    N: int = Field(default=1, ge=1)
    n_rows: int = Field(default=0, ge=0)
    estimator: HankelEstimator = HankelEstimator.CONTINUATION
    sampling: Literal["grid", "random"] = "grid"
    box: List[Tuple[float, float]] = Field(default_factory=lambda: [(-1.0, 1.0)])
    x0: List[float] = Field(default_factory=lambda: [1.0])


class CheckResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    name: str
    value: float
    tolerance: float
    passed: bool


class MatchedPair(BaseModel):
    computed_re: float
    computed_im: float
    reference_re: float
    reference_im: float
    abs_error: float


class EigMatchReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    pairs: List[MatchedPair]
    l1: float
    l2: float
    linf: float
    unmatched_computed: int
    unmatched_reference: int


class VariantReport(BaseModel):
    name: str
    rank: int
    retained: int
    rejected: int
    match: Optional[EigMatchReport] = None


class ExperimentReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    experiment: str
    seed: int
    passed: bool
    checks: List[CheckResult]
    variants: List[VariantReport] = Field(default_factory=list)


class ExperimentConfig(BaseModel):
    """Complete, JSON round-trippable description of one experiment run."""

    experiment: str = Field(examples=["ou", "rotation"])
    model: ModelSpec
    observable: ObservableSet
    assembly: AssemblyParams
    dmd: DmdOptions = Field(default_factory=DmdOptions)
    seed: int = 20190528
    output_dir: Optional[str] = None
    tolerances: Dict[str, float] = Field(default_factory=dict)
    extras: Dict[str, Any] = Field(default_factory=dict)


class RunMetadata(BaseModel):
    schema_version: str = SCHEMA_VERSION
    package_version: str
    started_at: datetime
    finished_at: datetime
    seed: int
    config: ExperimentConfig
