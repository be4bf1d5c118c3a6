"""Right-hand sides and step maps of the model catalog.

All functions are vectorized over leading axes: a state array has shape
``(..., dim)``. Stuart–Landau states are polar ``(r, theta)``.
"""

from typing import Optional

import numpy as np

from koopman_rds.domain.enums import ModelKind
from koopman_rds.domain.models import ModelSpec
from koopman_rds.errors import InvalidArgumentError
from koopman_rds.services.noise import SwitchingSignal


def _check_state(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != model.dim:
        raise InvalidArgumentError(
            f"{model.kind.value} expects states of dimension {model.dim}, got shape {x.shape}"
        )
    return x


def discrete_linear_matrix(omega: float) -> np.ndarray:
    return np.array([[0.0, omega], [-omega, 0.0]])


def switching_matrix(model: ModelSpec, value: float) -> np.ndarray:
    """Generator ``A(w) = [[w, 1], [-b^2, w]]`` of the switching linear RDE."""
    b = model["b"]
    return np.array([[value, 1.0], [-(b**2), value]])


def step_discrete(model: ModelSpec, x: np.ndarray, noise_draw) -> np.ndarray:
    """One application of the random map with the given noise realization.

    For the noisy rotation the draw is the additive perturbation; for the
    discrete linear system it is the matrix parameter ``omega``.
    """
    x = _check_state(model, x)
    draw = np.asarray(noise_draw, dtype=float)
    match model.kind:
        case ModelKind.NOISY_ROTATION:
            return np.mod(x + model["theta"] + draw[..., None], 1.0)
        case ModelKind.DISCRETE_LINEAR:
            return np.stack([draw * x[..., 1], -draw * x[..., 0]], axis=-1)
    raise InvalidArgumentError(f"{model.kind.value} is not a discrete-time system")


def drift(
    model: ModelSpec,
    x: np.ndarray,
    t: float = 0.0,
    signal: Optional[SwitchingSignal] = None,
) -> np.ndarray:
    if model.kind.is_discrete:
        raise InvalidArgumentError(f"{model.kind.value} is not a continuous-time system")
    x = _check_state(model, x)
    p = model.params
    if model.kind == ModelKind.SWITCHING_LINEAR_RDE:
        if signal is None:
            raise InvalidArgumentError("switching_linear_rde drift needs a switching signal")
        return x @ switching_matrix(model, signal.value_at(t)).T
    if signal is not None:
        raise InvalidArgumentError(f"{model.kind.value} takes no switching signal")

    match model.kind:
        case ModelKind.OU_LINEAR_SDE:
            return p["mu"] * x
        case ModelKind.SCALAR_PITCHFORK_SDE:
            return p["mu"] * x - x**3
        case ModelKind.STUART_LANDAU:
            r = x[..., 0]
            dr = p["delta"] * r - r**3 + p["epsilon"] ** 2 / r
            dtheta = p["gamma"] - p["beta"] * r**2
            return np.stack([dr, dtheta], axis=-1)
        case ModelKind.VAN_DER_POL:
            x1, x2 = x[..., 0], x[..., 1]
            return np.stack([x2, p["mu"] * (1.0 - x1**2) * x2 - x1], axis=-1)
        case ModelKind.LOTKA_VOLTERRA:
            x1, x2 = x[..., 0], x[..., 1]
            f1 = (p["a1"] - p["b1"] * x2 - p["c1"] * x1) * x1
            f2 = (-p["a2"] + p["b2"] * x1 - p["c2"] * x2) * x2
            return np.stack([f1, f2], axis=-1)
    raise AssertionError(model.kind)


def diffusion(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Diffusion matrix of shape ``(..., dim, wiener_dim)``."""
    if not model.kind.is_sde:
        raise InvalidArgumentError(f"{model.kind.value} is not an SDE")
    x = _check_state(model, x)
    p = model.params
    lead = x.shape[:-1]
    out = np.zeros(lead + (model.dim, model.wiener_dim))
    match model.kind:
        case ModelKind.OU_LINEAR_SDE | ModelKind.SCALAR_PITCHFORK_SDE:
            out[..., 0, 0] = p["sigma"]
        case ModelKind.STUART_LANDAU:
            out[..., 0, 0] = p["epsilon"]
            out[..., 1, 1] = p["epsilon"] / x[..., 0]
        case ModelKind.VAN_DER_POL:
            out[..., 1, 0] = np.sqrt(2.0 * p["epsilon"])
        case ModelKind.LOTKA_VOLTERRA:
            out[..., 0, 0] = p["sigma1"] * x[..., 0]
            out[..., 1, 1] = p["sigma2"] * x[..., 1]
    return out


def state_is_valid(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Per-row validity mask: finite, and positive radius for Stuart–Landau."""
    ok = np.all(np.isfinite(x), axis=-1)
    if model.kind == ModelKind.STUART_LANDAU:
        ok &= x[..., 0] > 0
    return ok


def lotka_volterra_equilibrium(model: ModelSpec, *, ito_corrected: bool) -> np.ndarray:
    """Interior fixed point; with ``ito_corrected`` the growth rates are shifted by ``sigma_i^2/2``."""
    if model.kind != ModelKind.LOTKA_VOLTERRA:
        raise InvalidArgumentError("equilibrium is only defined for lotka_volterra")
    p = model.params
    a1, a2 = p["a1"], p["a2"]
    if ito_corrected:
        a1 = a1 - p["sigma1"] ** 2 / 2
        a2 = a2 + p["sigma2"] ** 2 / 2
    lhs = np.array([[p["c1"], p["b1"]], [p["b2"], -p["c2"]]])
    return np.linalg.solve(lhs, np.array([a1, a2]))


def lotka_volterra_jacobian(model: ModelSpec, point: np.ndarray) -> np.ndarray:
    p = model.params
    x1, x2 = point
    return np.array(
        [
            [-p["c1"] * x1, -p["b1"] * x1],
            [p["b2"] * x2, -p["c2"] * x2],
        ]
    )
