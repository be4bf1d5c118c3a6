"""Time steppers: RK4, Euler–Maruyama, a strong order 1 stochastic Runge–Kutta
scheme, exact stepping of the switching linear RDE and the discrete random maps.

Paths are advanced in batches of shape ``(P, dim)``. Each path owns its
`RngStream`, and its Wiener increments are drawn step-major in fixed chunks,
so a path is reproduced bit for bit whatever batch or thread simulates it.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from koopman_rds.domain.enums import DivergencePolicy, ModelKind, Scheme
from koopman_rds.domain.models import ModelSpec
from koopman_rds.errors import IntegrationDivergedError, InvalidArgumentError
from koopman_rds.services.noise import (
    DiscreteDistribution,
    RngStream,
    discrete_iid,
    switching_signal,
    uniform_symmetric,
)
from koopman_rds.services.systems import (
    diffusion,
    drift,
    state_is_valid,
    step_discrete,
    switching_matrix,
)
from koopman_rds.utils import chunk_ranges, ordered_map

INCREMENT_CHUNK = 512
PATH_CHUNK = 256

Record = Literal["all", "last"]


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len, dim)
    seed: Optional[int] = None
    stream_id: Optional[int] = None

    def __post_init__(self) -> None:
        if len(self.times) != len(self.states):
            raise InvalidArgumentError("times and states must have the same length")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class Ensemble:
    times: np.ndarray
    states: np.ndarray  # (N, len, dim)
    base_stream: RngStream
    path_ids: np.ndarray  # stream offsets of the retained members

    def __len__(self) -> int:
        return self.states.shape[0]

    def trajectory(self, k: int) -> Trajectory:
        stream = self.base_stream.spawn(int(self.path_ids[k]))
        return Trajectory(self.times, self.states[k], stream.seed, stream.stream_id)

    @property
    def trajectories(self) -> List[Trajectory]:
        return [self.trajectory(k) for k in range(len(self))]

    def mean_state(self) -> np.ndarray:
        return self.states.mean(axis=0)


def resolve_scheme(model: ModelSpec, scheme: Scheme) -> Scheme:
    if scheme == Scheme.AUTO:
        return Scheme.RK4 if model.is_deterministic else Scheme.SRK
    if scheme == Scheme.RK4 and not model.is_deterministic:
        raise InvalidArgumentError("rk4 integrates noise-free models only")
    return scheme


def _em_step(model: ModelSpec, x: np.ndarray, h: float, dw: np.ndarray) -> np.ndarray:
    return x + drift(model, x) * h + np.einsum("pdr,pr->pd", diffusion(model, x), dw)


def _srk_step(model: ModelSpec, x: np.ndarray, h: float, dw: np.ndarray) -> np.ndarray:
    # Roessler SRI2 tableau with the diagonal repeated Ito integrals
    # I_kk = (dW_k^2 - h) / 2; off-diagonal I_jk are dropped, which keeps
    # strong order 1 for scalar and diagonal noise.
    sqrth = math.sqrt(h)
    g = diffusion(model, x)  # (P, d, r)
    i_kk = 0.5 * (dw**2 - h)
    sum1 = g * (i_kk / sqrth)[:, None, :]
    fnh = drift(model, x) * h
    h20 = x + fnh
    h2 = h20[:, :, None] + sum1
    h3 = h20[:, :, None] - sum1
    x_next = x + 0.5 * (fnh + drift(model, h20) * h) + np.einsum("pdr,pr->pd", g, dw)
    for k in range(g.shape[2]):
        up = diffusion(model, h2[:, :, k])[:, :, k]
        down = diffusion(model, h3[:, :, k])[:, :, k]
        x_next += 0.5 * sqrth * (up - down)
    return x_next


def _rk4_step(model: ModelSpec, x: np.ndarray, h: float, dw: np.ndarray) -> np.ndarray:
    k1 = drift(model, x)
    k2 = drift(model, x + 0.5 * h * k1)
    k3 = drift(model, x + 0.5 * h * k2)
    k4 = drift(model, x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


_STEPPERS = {
    Scheme.EULER_MARUYAMA: _em_step,
    Scheme.SRK: _srk_step,
    Scheme.RK4: _rk4_step,
}


def _check_common(dt: float, n_steps: int, x0s: np.ndarray, model: ModelSpec) -> np.ndarray:
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be > 0, got {dt}")
    if n_steps < 0:
        raise InvalidArgumentError("n_steps must be >= 0")
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if x0s.shape[1] != model.dim:
        raise InvalidArgumentError(
            f"{model.kind.value} expects {model.dim}-dimensional states, got {x0s.shape[1]}"
        )
    return x0s


class _Recorder:
    def __init__(self, x0s: np.ndarray, n_records: int, record: Record) -> None:
        self.record = record
        if record == "all":
            self.out = np.empty((x0s.shape[0], n_records + 1, x0s.shape[1]))
            self.out[:, 0] = x0s
        else:
            self.out = np.empty((x0s.shape[0], 1, x0s.shape[1]))
            self.out[:, 0] = x0s

    def put(self, index: int, x: np.ndarray) -> None:
        if self.record == "all":
            self.out[:, index] = x
        else:
            self.out[:, 0] = x


class _DivergenceGuard:
    def __init__(self, model: ModelSpec, ids: np.ndarray, policy: DivergencePolicy) -> None:
        self.model = model
        self.ids = ids
        self.policy = policy
        self.alive = np.ones(len(ids), dtype=bool)

    def accept(self, step: int, x_old: np.ndarray, x_new: np.ndarray) -> np.ndarray:
        ok = state_is_valid(self.model, x_new)
        bad = self.alive & ~ok
        if bad.any():
            first = int(np.flatnonzero(bad)[0])
            if self.policy == DivergencePolicy.RAISE:
                raise IntegrationDivergedError(step=step, path=int(self.ids[first]))
            self.alive &= ok
        return np.where(self.alive[:, None], x_new, x_old)


def _draw_chunk(
    gens: Sequence[np.random.Generator], n: int, r: int, h: float
) -> np.ndarray:
    sqrth = math.sqrt(h)
    return np.stack([g.standard_normal((n, r)) for g in gens]) * sqrth


def _simulate_sde(
    model: ModelSpec,
    x0s: np.ndarray,
    dt: float,
    n_steps: int,
    streams: Optional[Sequence[RngStream]],
    scheme: Scheme,
    substeps: int,
    record: Record,
    increments: Optional[np.ndarray],
    guard: _DivergenceGuard,
) -> np.ndarray:
    h = dt / substeps
    n_total = n_steps * substeps
    stepper = _STEPPERS[scheme]
    r = max(model.wiener_dim, 1)
    noisy = scheme != Scheme.RK4 and not (model.is_deterministic and increments is None)
    if noisy and increments is None and streams is None:
        raise InvalidArgumentError("stochastic integration needs a stream per path")
    if increments is not None and increments.shape != (len(x0s), n_total, r):
        raise InvalidArgumentError(
            f"increments must have shape {(len(x0s), n_total, r)}, got {increments.shape}"
        )
    gens = [s.generator() for s in streams] if noisy and increments is None else []

    rec = _Recorder(x0s, n_steps, record)
    x = x0s.copy()
    zeros = np.zeros((len(x0s), r))
    chunk_start, chunk = 0, None
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for step in range(n_total):
            if not noisy:
                dw = zeros
            else:
                if step % INCREMENT_CHUNK == 0:
                    chunk_start = step
                    c = min(INCREMENT_CHUNK, n_total - step)
                    if increments is not None:
                        chunk = increments[:, step : step + c]
                    else:
                        chunk = _draw_chunk(gens, c, r, h)
                dw = chunk[:, step - chunk_start]
            x = guard.accept(step + 1, x, stepper(model, x, h, dw))
            if (step + 1) % substeps == 0:
                rec.put((step + 1) // substeps, x)
    return rec.out


def _simulate_discrete(
    model: ModelSpec,
    x0s: np.ndarray,
    n_steps: int,
    streams: Optional[Sequence[RngStream]],
    record: Record,
    guard: _DivergenceGuard,
) -> np.ndarray:
    draws = _discrete_draws(model, len(x0s), n_steps, streams)
    rec = _Recorder(x0s, n_steps, record)
    x = x0s.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            x = guard.accept(k + 1, x, step_discrete(model, x, draws[:, k]))
            rec.put(k + 1, x)
    return rec.out


def _discrete_draws(
    model: ModelSpec,
    n_paths: int,
    n_steps: int,
    streams: Optional[Sequence[RngStream]],
) -> np.ndarray:
    if model.kind == ModelKind.NOISY_ROTATION:
        if model["delta"] == 0.0:
            return np.zeros((n_paths, n_steps))
        _require_streams(streams)
        return np.stack([uniform_symmetric(s, model["delta"], n_steps) for s in streams])
    dist = DiscreteDistribution.two_point(model["omega1"], model["omega2"], model["p1"])
    if model.is_deterministic:
        value = model["omega1"] if model["p1"] == 1.0 else model["omega2"]
        return np.full((n_paths, n_steps), value)
    _require_streams(streams)
    return np.stack([discrete_iid(s, dist, n_steps) for s in streams])


def _require_streams(streams: Optional[Sequence[RngStream]]) -> None:
    if streams is None:
        raise InvalidArgumentError("random maps need a stream per path")


def _switch_ratio(switch_dt: float, dt: float) -> int:
    ratio = switch_dt / dt
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9 * max(ratio, 1.0):
        raise InvalidArgumentError(
            f"dt={dt} must divide switch_dt={switch_dt} (ratio {ratio})"
        )
    return k


def _simulate_switching(
    model: ModelSpec,
    x0s: np.ndarray,
    dt: float,
    n_steps: int,
    streams: Optional[Sequence[RngStream]],
    record: Record,
) -> np.ndarray:
    per_switch = _switch_ratio(model["switch_dt"], dt)
    n_switches = max(math.ceil(n_steps / per_switch), 1)
    values = (model["a1"], model["a2"])
    flows = np.stack([expm(switching_matrix(model, v) * dt) for v in values])
    if model.is_deterministic:
        which = 0 if model["p1"] == 1.0 else 1
        idx = np.full((len(x0s), n_switches), which)
    else:
        _require_streams(streams)
        dist = DiscreteDistribution.two_point(values[0], values[1], model["p1"])
        idx = np.stack(
            [
                np.where(
                    switching_signal(s, dist, model["switch_dt"], n_switches).values
                    == values[0],
                    0,
                    1,
                )
                for s in streams
            ]
        )
    rec = _Recorder(x0s, n_steps, record)
    x = x0s.copy()
    for j in range(n_steps):
        x = np.einsum("pij,pj->pi", flows[idx[:, j // per_switch]], x)
        rec.put(j + 1, x)
    return rec.out


def simulate_paths(
    model: ModelSpec,
    x0s: np.ndarray,
    *,
    dt: float,
    n_steps: int,
    streams: Optional[Sequence[RngStream]] = None,
    scheme: Scheme = Scheme.AUTO,
    substeps: int = 1,
    record: Record = "all",
    increments: Optional[np.ndarray] = None,
    on_divergence: DivergencePolicy = DivergencePolicy.RAISE,
    path_ids: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Advance a batch of paths; the batch core behind every integrator.

    `dt` is the sampling interval and ``dt / substeps`` the integration
    step. For discrete maps `dt` only labels time. Returns the recorded
    states, shape ``(P, n_steps + 1, dim)`` (or ``(P, 1, dim)`` with
    ``record="last"``), and the mask of paths that did not diverge.
    """
    x0s = _check_common(dt, n_steps, x0s, model)
    if substeps < 1:
        raise InvalidArgumentError("substeps must be >= 1")
    if streams is not None and len(streams) != len(x0s):
        raise InvalidArgumentError("one stream per initial state is required")
    ids = np.arange(len(x0s)) if path_ids is None else np.asarray(path_ids)
    guard = _DivergenceGuard(model, ids, on_divergence)

    if model.kind.is_discrete:
        states = _simulate_discrete(model, x0s, n_steps, streams, record, guard)
    elif model.kind == ModelKind.SWITCHING_LINEAR_RDE:
        states = _simulate_switching(model, x0s, dt, n_steps, streams, record)
    else:
        resolved = resolve_scheme(model, scheme)
        states = _simulate_sde(
            model, x0s, dt, n_steps, streams, resolved, substeps, record, increments, guard
        )

    if not guard.alive.all():
        logging.warning(
            f"Dropped {int((~guard.alive).sum())} diverged paths out of {len(x0s)}"
        )
    return states, guard.alive


def simulate_batched(
    model: ModelSpec,
    x0s: np.ndarray,
    streams: Sequence[RngStream],
    *,
    max_workers: int = 1,
    path_ids: Optional[np.ndarray] = None,
    **kwargs,
) -> Tuple[np.ndarray, np.ndarray]:
    """`simulate_paths` over path chunks, optionally in a thread pool, results in path order."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    ids = np.arange(len(x0s)) if path_ids is None else np.asarray(path_ids)

    def run(bounds: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = bounds
        return simulate_paths(
            model, x0s[lo:hi], streams=streams[lo:hi], path_ids=ids[lo:hi], **kwargs
        )

    parts = ordered_map(run, chunk_ranges(len(x0s), PATH_CHUNK), max_workers=max_workers)
    states = np.concatenate([p[0] for p in parts])
    alive = np.concatenate([p[1] for p in parts])
    return states, alive


def _single(
    model: ModelSpec,
    x0,
    dt: float,
    n_steps: int,
    stream: Optional[RngStream],
    scheme: Scheme,
    substeps: int = 1,
) -> Trajectory:
    states, _ = simulate_paths(
        model,
        np.asarray(x0, dtype=float).reshape(1, model.dim),
        dt=dt,
        n_steps=n_steps,
        streams=None if stream is None else [stream],
        scheme=scheme,
        substeps=substeps,
    )
    times = dt * np.arange(n_steps + 1)
    return Trajectory(
        times,
        states[0],
        None if stream is None else stream.seed,
        None if stream is None else stream.stream_id,
    )


def integrate_em(
    model: ModelSpec, x0, dt: float, n_steps: int, stream: RngStream, *, substeps: int = 1
) -> Trajectory:
    """Euler–Maruyama: ``X + G(X) dt + sigma(X) dW``."""
    return _single(model, x0, dt, n_steps, stream, Scheme.EULER_MARUYAMA, substeps)


def integrate_srk(
    model: ModelSpec, x0, dt: float, n_steps: int, stream: RngStream, *, substeps: int = 1
) -> Trajectory:
    """Stochastic Runge–Kutta (Roessler SRI2), strong order 1 for diagonal noise."""
    return _single(model, x0, dt, n_steps, stream, Scheme.SRK, substeps)


def integrate_rk4(
    model: ModelSpec, x0, dt: float, n_steps: int, *, substeps: int = 1
) -> Trajectory:
    return _single(model, x0, dt, n_steps, None, Scheme.RK4, substeps)


def integrate(
    model: ModelSpec,
    x0,
    dt: float,
    n_steps: int,
    stream: Optional[RngStream] = None,
    *,
    scheme: Scheme = Scheme.AUTO,
    substeps: int = 1,
) -> Trajectory:
    """Single path of any catalog model with the scheme suited to it."""
    return _single(model, x0, dt, n_steps, stream, scheme, substeps)


def iterate_map(model: ModelSpec, x0, n_steps: int, stream: Optional[RngStream]) -> Trajectory:
    if not model.kind.is_discrete:
        raise InvalidArgumentError(f"{model.kind.value} is not a discrete-time system")
    return _single(model, x0, 1.0, n_steps, stream, Scheme.AUTO)


def iterate_linear_normalized(
    model: ModelSpec,
    x0s: np.ndarray,
    n_steps: int,
    streams: Sequence[RngStream],
) -> Tuple[np.ndarray, np.ndarray]:
    """Discrete linear RDS iterated on unit vectors.

    Returns ``(Z, W)`` of shape ``(P, n_steps, 2)`` with ``Z[:, k]`` the
    normalized k-th iterate and ``W[:, k] = A(omega_k) Z[:, k]``. Column
    pairs of a linear map keep their one-step relation under this
    renormalization, and long products never overflow.
    """
    if model.kind != ModelKind.DISCRETE_LINEAR:
        raise InvalidArgumentError("normalized iteration is defined for discrete_linear")
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    norms = np.linalg.norm(x0s, axis=1)
    if np.any(norms == 0):
        raise InvalidArgumentError("initial states must be nonzero")
    draws = _discrete_draws(model, len(x0s), n_steps, streams)
    z = x0s / norms[:, None]
    zs = np.empty((len(x0s), n_steps, 2))
    ws = np.empty((len(x0s), n_steps, 2))
    for k in range(n_steps):
        w = step_discrete(model, z, draws[:, k])
        zs[:, k], ws[:, k] = z, w
        z = w / np.linalg.norm(w, axis=1)[:, None]
    return zs, ws


def integrate_switching_linear(
    a1: float,
    a2: float,
    b: float,
    p1: float,
    switch_dt: float,
    x0,
    dt: float,
    n_steps: int,
    stream: Optional[RngStream],
) -> Trajectory:
    """Exact pathwise solution: ``expm(A(w_i) dt)`` applied on each sub-step."""
    model = ModelSpec(
        kind=ModelKind.SWITCHING_LINEAR_RDE,
        params={"a1": a1, "a2": a2, "b": b, "p1": p1, "switch_dt": switch_dt},
    )
    return _single(model, x0, dt, n_steps, stream, Scheme.AUTO)


def run_ensemble(
    model: ModelSpec,
    x0,
    dt: float,
    n_steps: int,
    N: int,
    base_stream: RngStream,
    *,
    scheme: Scheme = Scheme.AUTO,
    substeps: int = 1,
    on_divergence: DivergencePolicy = DivergencePolicy.RAISE,
    max_workers: int = 1,
) -> Ensemble:
    """N paths from a common initial state; member k uses stream ``base + k``."""
    if N < 1:
        raise InvalidArgumentError("N must be >= 1")
    x0s = np.tile(np.asarray(x0, dtype=float).reshape(1, model.dim), (N, 1))
    streams = [base_stream.spawn(k) for k in range(N)]
    states, alive = simulate_batched(
        model,
        x0s,
        streams,
        max_workers=max_workers,
        dt=dt,
        n_steps=n_steps,
        scheme=scheme,
        substeps=substeps,
        on_divergence=on_divergence,
    )
    logging.debug(f"Ensemble of {N} paths, {n_steps} steps of {dt}")
    return Ensemble(
        times=dt * np.arange(n_steps + 1),
        states=states[alive],
        base_stream=base_stream,
        path_ids=np.flatnonzero(alive),
    )
