"""Assembly of snapshot matrices from simulated paths.

Stream schedule (all offsets relative to ``base_stream``):

* ensemble pairs: point j, path p uses offset ``j * N + p``
* time delayed: path p uses offset ``p``
* stochastic Hankel: the pilot path uses 0; continuation path p of row i
  uses ``1 + i * N + p``, or ``1 + p`` in every row with shared noise;
  mean-path member p uses ``1 + p``
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from koopman_rds.domain.enums import DivergencePolicy, HankelEstimator, Layout, Scheme
from koopman_rds.domain.models import HankelSpec, ModelSpec, ObservableSet
from koopman_rds.errors import IntegrationDivergedError, InvalidArgumentError
from koopman_rds.services.dmd import SnapshotMatrices, SnapshotMoments
from koopman_rds.services.integrators import (
    iterate_linear_normalized,
    simulate_batched,
)
from koopman_rds.services.noise import RngStream
from koopman_rds.services.observables import evaluate
from koopman_rds.utils import chunk_ranges

EVAL_CHUNK = 64
HANKEL_ROW_CHUNK = 32


@dataclass(frozen=True)
class ExpectationEstimate:
    values: np.ndarray
    n_samples: int
    standard_error: np.ndarray


def estimate_expectation(samples: np.ndarray) -> ExpectationEstimate:
    """Sample mean over axis 0 with per-entry CLT standard error ``std / sqrt(N)``."""
    samples = np.asarray(samples)
    n = samples.shape[0]
    if n < 1:
        raise InvalidArgumentError("at least one sample is required")
    mean = samples.mean(axis=0)
    if n == 1:
        return ExpectationEstimate(mean, 1, np.zeros(mean.shape))
    return ExpectationEstimate(mean, n, samples.std(axis=0, ddof=1) / math.sqrt(n))


class _Accumulator:
    """Running sums for the mean and standard error of observable values."""

    def __init__(self) -> None:
        self.total = None
        self.total_sq = None
        self.count = 0

    def add(self, values: np.ndarray) -> None:
        s = values.sum(axis=0)
        sq = (np.abs(values) ** 2).sum(axis=0)
        self.total = s if self.total is None else self.total + s
        self.total_sq = sq if self.total_sq is None else self.total_sq + sq
        self.count += values.shape[0]

    def estimate(self) -> ExpectationEstimate:
        n = self.count
        mean = self.total / n
        if n == 1:
            return ExpectationEstimate(mean, 1, np.zeros(mean.shape))
        var = np.maximum(self.total_sq - n * np.abs(mean) ** 2, 0.0) / (n - 1)
        return ExpectationEstimate(mean, n, np.sqrt(var / n))


def _observable_mean(obs: ObservableSet, states: np.ndarray) -> ExpectationEstimate:
    """Mean over axis 0 of ``f(states)`` for states ``(N, T, dim)``; values ``(T, n)``."""
    acc = _Accumulator()
    for lo, hi in chunk_ranges(states.shape[0], EVAL_CHUNK):
        acc.add(evaluate(obs, states[lo:hi]))
    return acc.estimate()


def sample_initial_points(
    box: Sequence[Tuple[float, float]],
    count: int,
    *,
    mode: Literal["grid", "random"] = "grid",
    stream: Optional[RngStream] = None,
) -> np.ndarray:
    """``count`` points in an axis-aligned box.

    ``grid`` places cell midpoints of a regular grid (row-major, truncated to
    ``count``); ``random`` draws uniformly from `stream`.
    """
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    if np.any(hi <= lo):
        raise InvalidArgumentError(f"empty box {box}")
    if mode == "random":
        if stream is None:
            raise InvalidArgumentError("random sampling needs a stream")
        return stream.generator().uniform(lo, hi, size=(count, len(box)))
    per_axis = math.ceil(count ** (1.0 / len(box)) - 1e-9)
    axes = [l + (np.arange(per_axis) + 0.5) * (h - l) / per_axis for l, h in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(box))
    return grid[:count]


def ensemble_pair_estimates(
    model: ModelSpec,
    initial_points: np.ndarray,
    observable: ObservableSet,
    lags: Sequence[int],
    dt: float,
    N: int,
    base_stream: RngStream,
    *,
    scheme: Scheme = Scheme.AUTO,
    substeps: int = 1,
    on_divergence: DivergencePolicy = DivergencePolicy.RAISE,
    max_workers: int = 1,
) -> Tuple[np.ndarray, List[ExpectationEstimate]]:
    """Exact ``X`` and one Monte Carlo estimate of ``Y`` per lag.

    Returns ``X`` of shape ``(n, m)`` and, for each lag k, an estimate whose
    values have shape ``(m, n)``.
    """
    points = np.atleast_2d(np.asarray(initial_points, dtype=float))
    m = points.shape[0]
    if m < 2:
        raise InvalidArgumentError("need at least 2 initial points")
    if N < 1:
        raise InvalidArgumentError("N must be >= 1")
    if not lags or min(lags) < 1:
        raise InvalidArgumentError("lags must be >= 1")
    horizon = max(lags)
    x0s = np.repeat(points, N, axis=0)
    streams = [base_stream.spawn(i) for i in range(m * N)]
    single = len(lags) == 1
    try:
        states, alive = simulate_batched(
            model,
            x0s,
            streams,
            max_workers=max_workers,
            dt=dt,
            n_steps=horizon,
            scheme=scheme,
            substeps=substeps,
            record="last" if single else "all",
            on_divergence=on_divergence,
        )
    except IntegrationDivergedError as e:
        raise e.with_context(f"point {e.path // N}") from e

    X = evaluate(observable, points).T
    alive_pm = alive.reshape(m, N)
    counts = alive_pm.sum(axis=1)
    if np.any(counts == 0):
        j = int(np.flatnonzero(counts == 0)[0])
        raise IntegrationDivergedError(
            step=horizon * substeps, path=j * N, context=f"every path from point {j} diverged"
        )
    n_alive = int(counts.min())
    counts = counts[:, None]
    estimates = []
    for k in lags:
        at_k = states[:, 0] if single else states[:, k]
        values = evaluate(observable, at_k).reshape(m, N, -1)
        values = np.where(alive_pm[:, :, None], values, 0.0)
        mean = values.sum(axis=1) / counts
        sq = (np.abs(values) ** 2).sum(axis=1)
        var = np.maximum(sq - counts * np.abs(mean) ** 2, 0.0) / np.maximum(counts - 1, 1)
        se = np.where(counts > 1, np.sqrt(var / counts), 0.0)
        estimates.append(ExpectationEstimate(values=mean, n_samples=n_alive, standard_error=se))
    return X, estimates


def assemble_ensemble_pairs(
    model: ModelSpec,
    initial_points: np.ndarray,
    observable: ObservableSet,
    k: int,
    dt: float,
    N: int,
    base_stream: RngStream,
    **kwargs,
) -> SnapshotMatrices:
    """``X[:, j] = f(x_j)`` exactly and ``Y[:, j]`` the mean of ``f(phi(k dt) x_j)`` over N paths."""
    if k < 1:
        raise InvalidArgumentError("lag k must be >= 1")
    X, (estimate,) = ensemble_pair_estimates(
        model, initial_points, observable, [k], dt, N, base_stream, **kwargs
    )
    return SnapshotMatrices(X=X, Y=estimate.values.T, layout=Layout.ENSEMBLE_PAIRS, dt=k * dt)


def assemble_ensemble_pairs_series(
    model: ModelSpec,
    initial_points: np.ndarray,
    observable: ObservableSet,
    lags: Sequence[int],
    dt: float,
    N: int,
    base_stream: RngStream,
    **kwargs,
) -> List[SnapshotMatrices]:
    """One ensemble-pairs data set per lag, all from the same simulated paths."""
    X, estimates = ensemble_pair_estimates(
        model, initial_points, observable, lags, dt, N, base_stream, **kwargs
    )
    return [
        SnapshotMatrices(X=X, Y=e.values.T, layout=Layout.ENSEMBLE_PAIRS, dt=k * dt)
        for k, e in zip(lags, estimates)
    ]


def time_delayed_estimate(
    model: ModelSpec,
    x0,
    observable: ObservableSet,
    n_samples: int,
    dt: float,
    N: int,
    base_stream: RngStream,
    *,
    scheme: Scheme = Scheme.AUTO,
    substeps: int = 1,
    on_divergence: DivergencePolicy = DivergencePolicy.RAISE,
    max_workers: int = 1,
) -> ExpectationEstimate:
    """Monte Carlo estimate of ``E[f(phi(k dt) x0)]`` for k = 0..n_samples-1, values ``(T, n)``."""
    if N < 1:
        raise InvalidArgumentError("N must be >= 1")
    x0s = np.tile(np.asarray(x0, dtype=float).reshape(1, model.dim), (N, 1))
    streams = [base_stream.spawn(p) for p in range(N)]
    states, alive = simulate_batched(
        model,
        x0s,
        streams,
        max_workers=max_workers,
        dt=dt,
        n_steps=n_samples - 1,
        scheme=scheme,
        substeps=substeps,
        on_divergence=on_divergence,
    )
    return _observable_mean(observable, states[alive])


def assemble_time_delayed(
    model: ModelSpec,
    x0,
    observable: ObservableSet,
    m: int,
    dt: float,
    N: int,
    base_stream: RngStream,
    **kwargs,
) -> SnapshotMatrices:
    """Columns ``f^0 .. f^{m-1}`` and ``f^1 .. f^m`` of the expected observable series from x0.

    With N = 1 this is the single-realization (ergodic) construction.
    """
    if m < 2:
        raise InvalidArgumentError("m must be >= 2")
    series = time_delayed_estimate(model, x0, observable, m + 1, dt, N, base_stream, **kwargs)
    F = series.values.T
    return SnapshotMatrices(X=F[:, :m], Y=F[:, 1:], layout=Layout.TIME_DELAYED, dt=dt)


def accumulate_time_delayed_moments(
    model: ModelSpec,
    x0,
    observable: ObservableSet,
    m: int,
    dt: float,
    trajectories: int,
    base_stream: RngStream,
    *,
    scale_columns: bool = True,
    scheme: Scheme = Scheme.AUTO,
    substeps: int = 1,
    on_divergence: DivergencePolicy = DivergencePolicy.RAISE,
    max_workers: int = 1,
) -> SnapshotMoments:
    """Moments of the single-realization time-delayed pairs of independent trajectories.

    Trajectory p uses offset p, so trajectory 0 is the path behind
    ``assemble_time_delayed(..., N=1)``.
    """
    if m < 2:
        raise InvalidArgumentError("m must be >= 2")
    if trajectories < 1:
        raise InvalidArgumentError("trajectories must be >= 1")
    x0s = np.tile(np.asarray(x0, dtype=float).reshape(1, model.dim), (trajectories, 1))
    streams = [base_stream.spawn(p) for p in range(trajectories)]
    try:
        states, alive = simulate_batched(
            model,
            x0s,
            streams,
            max_workers=max_workers,
            dt=dt,
            n_steps=m,
            scheme=scheme,
            substeps=substeps,
            on_divergence=on_divergence,
        )
    except IntegrationDivergedError as e:
        raise e.with_context(f"trajectory {e.path}") from e
    if not alive.any():
        raise IntegrationDivergedError(
            step=m * substeps, path=0, context="every trajectory diverged"
        )

    moments = None
    for p in np.flatnonzero(alive):
        F = evaluate(observable, states[p]).T
        if moments is None:
            moments = SnapshotMoments(
                n=F.shape[0], layout=Layout.TIME_DELAYED, dt=dt, scale_columns=scale_columns
            )
        moments.add(F[:, :m], F[:, 1:])
    logging.info(
        f"Accumulated moments of {moments.count} snapshot pairs from {int(alive.sum())} trajectories"
    )
    return moments


def _hankel_from_series(series: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    idx = np.arange(n_rows)[:, None] + np.arange(n_cols)[None, :]
    return series[idx]


def stochastic_hankel_matrix(
    model: ModelSpec,
    x0,
    spec: HankelSpec,
    dt: float,
    base_stream: RngStream,
    *,
    scheme: Scheme = Scheme.AUTO,
    substeps: int = 1,
    on_divergence: DivergencePolicy = DivergencePolicy.RAISE,
    max_workers: int = 1,
) -> np.ndarray:
    """The ``n_rows x (m_cols + 1)`` stochastic Hankel matrix for the chosen estimator."""
    obs = spec.observable
    N = spec.averaging_N
    n_rows, n_cols = spec.n_rows, spec.m_cols + 1
    sim = dict(scheme=scheme, substeps=substeps, on_divergence=on_divergence)
    x0 = np.asarray(x0, dtype=float).reshape(1, model.dim)

    if spec.estimator == HankelEstimator.MEAN_PATH:
        series = time_delayed_estimate(
            model,
            x0[0],
            obs,
            n_rows + n_cols - 1,
            dt,
            N,
            base_stream.spawn(1),
            max_workers=max_workers,
            **sim,
        )
        return _hankel_from_series(series.values[:, 0], n_rows, n_cols)

    pilot, _ = simulate_batched(
        model,
        x0,
        [base_stream],
        path_ids=np.array([0]),
        dt=dt,
        n_steps=n_rows + n_cols - 2,
        **sim,
    )
    pilot = pilot[0]
    if spec.estimator == HankelEstimator.PILOT:
        series = evaluate(obs, pilot)[:, 0]
        return _hankel_from_series(series, n_rows, n_cols)

    # with shared noise, continuation p of every row draws the increments of stream 1 + p
    shared = spec.estimator == HankelEstimator.SHARED_NOISE
    H = np.empty((n_rows, n_cols), dtype=complex)
    for lo, hi in chunk_ranges(n_rows, HANKEL_ROW_CHUNK):
        starts = np.repeat(pilot[lo:hi], N, axis=0)
        offsets = 1 + np.arange(lo * N, hi * N)
        if shared:
            streams = [base_stream.spawn(1 + int(o - 1) % N) for o in offsets]
        else:
            streams = [base_stream.spawn(int(o)) for o in offsets]
        try:
            states, alive = simulate_batched(
                model,
                starts,
                streams,
                max_workers=max_workers,
                path_ids=offsets,
                dt=dt,
                n_steps=n_cols - 1,
                **sim,
            )
        except IntegrationDivergedError as e:
            row = (e.path - 1) // N
            col = math.ceil(e.step / substeps)
            raise e.with_context(f"row {row}, col {col}") from e
        for i in range(hi - lo):
            rows = slice(i * N, (i + 1) * N)
            keep = alive[rows]
            if not keep.any():
                raise IntegrationDivergedError(
                    step=(n_cols - 1) * substeps,
                    path=int(offsets[i * N]),
                    context=f"every continuation of Hankel row {lo + i} diverged",
                )
            H[lo + i] = _observable_mean(obs, states[rows][keep]).values[:, 0]
    noise = "shared" if shared else "independent"
    logging.info(
        f"Stochastic Hankel matrix {H.shape} from {N} continuations per row, {noise} noise"
    )
    return H


def assemble_stochastic_hankel(
    model: ModelSpec,
    x0,
    spec: HankelSpec,
    dt: float,
    base_stream: RngStream,
    **kwargs,
) -> SnapshotMatrices:
    """X = first m columns, Y = last m columns of the stochastic Hankel matrix."""
    H = stochastic_hankel_matrix(model, x0, spec, dt, base_stream, **kwargs)
    return SnapshotMatrices(X=H[:, :-1], Y=H[:, 1:], layout=Layout.HANKEL, dt=dt)


def assemble_normalized_pairs(
    model: ModelSpec,
    initial_points: np.ndarray,
    m: int,
    base_stream: RngStream,
) -> List[SnapshotMatrices]:
    """Per-trajectory full-state snapshot pairs of the discrete linear RDS.

    Trajectory j uses stream offset j and is renormalized at every step.
    """
    points = np.atleast_2d(np.asarray(initial_points, dtype=float))
    streams = [base_stream.spawn(j) for j in range(len(points))]
    Z, W = iterate_linear_normalized(model, points, m, streams)
    return [
        SnapshotMatrices(X=Z[j].T, Y=W[j].T, layout=Layout.TIME_DELAYED, dt=1.0)
        for j in range(len(points))
    ]


def empirical_gram(values: np.ndarray) -> np.ndarray:
    """Time-averaged Gram matrix ``(1/T) F F^H`` of observable samples ``F`` ``[n x T]``."""
    values = np.asarray(values)
    return values @ values.conj().T / values.shape[1]
