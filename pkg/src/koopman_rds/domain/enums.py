from enum import Enum

EXPERIMENT_ORDER = [
    "rotation",
    "discrete-linear-sweep",
    "switching-linear",
    "ou",
    "pitchfork",
    "stuart-landau",
    "van-der-pol",
    "lotka-volterra",
]


class ModelKind(str, Enum):
    NOISY_ROTATION = "noisy_rotation"
    DISCRETE_LINEAR = "discrete_linear"
    SWITCHING_LINEAR_RDE = "switching_linear_rde"
    OU_LINEAR_SDE = "ou_linear_sde"
    SCALAR_PITCHFORK_SDE = "scalar_pitchfork_sde"
    STUART_LANDAU = "stuart_landau"
    VAN_DER_POL = "van_der_pol"
    LOTKA_VOLTERRA = "lotka_volterra"

    @property
    def is_discrete(self) -> bool:
        return self in (ModelKind.NOISY_ROTATION, ModelKind.DISCRETE_LINEAR)

    @property
    def is_sde(self) -> bool:
        return self in (
            ModelKind.OU_LINEAR_SDE,
            ModelKind.SCALAR_PITCHFORK_SDE,
            ModelKind.STUART_LANDAU,
            ModelKind.VAN_DER_POL,
            ModelKind.LOTKA_VOLTERRA,
        )


class Layout(str, Enum):
    ENSEMBLE_PAIRS = "ensemble_pairs"
    TIME_DELAYED = "time_delayed"
    HANKEL = "hankel"


class ObservableKind(str, Enum):
    FULL_STATE = "full_state"
    MONOMIALS = "monomials"
    FOURIER_CIRCLE = "fourier_circle"
    FOURIER_EXP = "fourier_exp"
    HERMITE = "hermite"
    ANALYTIC_EIGENFUNCTIONS = "analytic_eigenfunctions"
    SCALAR_COMBO = "scalar_combo"


class Scheme(str, Enum):
    AUTO = "auto"
    EULER_MARUYAMA = "em"
    SRK = "srk"
    RK4 = "rk4"


class HankelEstimator(str, Enum):
    CONTINUATION = "continuation"
    SHARED_NOISE = "shared_noise"
    PILOT = "pilot"
    MEAN_PATH = "mean_path"


class DivergencePolicy(str, Enum):
    RAISE = "raise"
    DROP = "drop"


class Boundary(str, Enum):
    REFLECTING = "reflecting"
    ABSORBING = "absorbing"
