"""Observable dictionaries evaluated on states and along trajectories.

Output is always complex. Ordering conventions:

* ``fourier_circle(n1)``: ``cos(2 pi j x)`` for j = 1..n1, then ``sin(2 pi j x)`` for j = 1..n1
* ``fourier_exp(n1)``: ``exp(2 pi i j x)`` for j = 1..n1, then j = -1..-n1
* ``monomials(d)``: ``x, x^2, ..., x^d``
* ``hermite(d)``: physicists' ``H_1(alpha x) .. H_d(alpha x)``
* ``analytic_eigenfunctions(count)``: the model's closed-form eigenfunctions, index 0..count-1
"""

import math

import numpy as np
from scipy.special import eval_hermite

from koopman_rds.domain.enums import ModelKind, ObservableKind
from koopman_rds.domain.models import ObservableSet
from koopman_rds.errors import InvalidArgumentError, UnsupportedError
from koopman_rds.services.integrators import Trajectory
from koopman_rds.services.oracle import hermite_scale


def _states(obs: ObservableSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != obs.input_dim:
        raise InvalidArgumentError(
            f"{obs.kind.value} observables expect {obs.input_dim}-dimensional states, "
            f"got shape {x.shape}"
        )
    return x


def stuart_landau_phase(obs: ObservableSet, x: np.ndarray) -> np.ndarray:
    """``theta - beta log(r / rho)`` with rho = sqrt(delta) or delta."""
    p = obs.model.params
    rho = math.sqrt(p["delta"]) if obs.radius_reference == "sqrt_delta" else p["delta"]
    return x[..., 1] - p["beta"] * np.log(x[..., 0] / rho)


def _analytic(obs: ObservableSet, x: np.ndarray) -> np.ndarray:
    model = obs.model
    degrees = np.arange(obs.count)
    match model.kind:
        case ModelKind.SCALAR_PITCHFORK_SDE:
            u = x[..., 0] / np.sqrt(x[..., 0] ** 2 + abs(model["mu"]))
            return u[..., None] ** degrees
        case ModelKind.OU_LINEAR_SDE:
            if model["sigma"] == 0:
                return x[..., :1] ** degrees
            alpha = hermite_scale(model["mu"], model["sigma"])
            return eval_hermite(degrees, alpha * x[..., :1])
        case ModelKind.NOISY_ROTATION:
            return np.exp(2j * np.pi * degrees * x[..., :1])
    raise UnsupportedError(f"No closed-form eigenfunctions for {model.kind.value}")


def _scalar_combo(obs: ObservableSet, x: np.ndarray) -> np.ndarray:
    match obs.model.kind:
        case ModelKind.STUART_LANDAU:
            psi = stuart_landau_phase(obs, x)
            k = np.arange(1, obs.harmonics + 1)
            return (2.0 * np.cos(k * psi[..., None])).sum(axis=-1, keepdims=True)
        case ModelKind.VAN_DER_POL:
            x1, x2 = x[..., 0], x[..., 1]
            return (x1 + x2 + np.sqrt(x1**2 + x2**2))[..., None]
        case ModelKind.LOTKA_VOLTERRA:
            return (x[..., 0] + x[..., 1])[..., None]
    raise UnsupportedError(f"No scalar observable defined for {obs.model.kind.value}")


def evaluate(obs: ObservableSet, x) -> np.ndarray:
    """Evaluate the dictionary at one state ``(dim,)`` or a batch ``(..., dim)``.

    Returns complex values of shape ``(..., n)``.
    """
    x = _states(obs, x)
    match obs.kind:
        case ObservableKind.FULL_STATE:
            values = x
        case ObservableKind.MONOMIALS:
            values = x[..., :1] ** np.arange(1, obs.max_degree + 1)
        case ObservableKind.HERMITE:
            values = eval_hermite(np.arange(1, obs.max_degree + 1), obs.alpha * x[..., :1])
        case ObservableKind.FOURIER_CIRCLE:
            arg = 2 * np.pi * np.arange(1, obs.n1 + 1) * x[..., :1]
            values = np.concatenate([np.cos(arg), np.sin(arg)], axis=-1)
        case ObservableKind.FOURIER_EXP:
            j = np.arange(1, obs.n1 + 1)
            values = np.exp(2j * np.pi * np.concatenate([j, -j]) * x[..., :1])
        case ObservableKind.ANALYTIC_EIGENFUNCTIONS:
            values = _analytic(obs, x)
        case ObservableKind.SCALAR_COMBO:
            values = _scalar_combo(obs, x)
        case _:
            raise UnsupportedError(obs.kind)
    return np.asarray(values, dtype=complex)


def evaluate_along(obs: ObservableSet, traj: Trajectory) -> np.ndarray:
    """Matrix ``[n x len]`` whose column k is the dictionary at state k."""
    return evaluate(obs, traj.states).T
