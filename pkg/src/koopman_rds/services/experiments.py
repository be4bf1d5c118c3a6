"""Experiment registry and runners.

Each registered experiment ships a default `ExperimentConfig` at the
published parameters and a runner that assembles data, runs DMD, compares
against the reference spectrum and collects named checks. A run passes iff
every check passes. `ExperimentService` writes the artifacts.

Stream ids: variant v of a run uses offsets from ``v * VARIANT_STRIDE``;
initial points are drawn from ``POINTS_STREAM``.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from koopman_rds import __version__
from koopman_rds.config import get_settings
from koopman_rds.domain.enums import (
    EXPERIMENT_ORDER,
    HankelEstimator,
    Layout,
    ModelKind,
    ObservableKind,
)
from koopman_rds.domain.models import (
    AssemblyParams,
    CheckResult,
    DmdOptions,
    EigMatchReport,
    ExperimentConfig,
    ExperimentReport,
    HankelSpec,
    ModelSpec,
    ObservableSet,
    RunMetadata,
    VariantReport,
)
from koopman_rds.errors import ExperimentError, InvalidArgumentError, KoopmanError
from koopman_rds.repositories.run_artifacts_repo import RunArtifactsRepo
from koopman_rds.services.dmd import (
    DmdResult,
    SnapshotMatrices,
    SnapshotMoments,
    dmd_rrr,
    dmd_rrr_moments,
    dmd_standard,
    eigenfunction_coefficients,
    evaluate_eigenfunctions,
)
from koopman_rds.services.integrators import integrate_rk4
from koopman_rds.services.io import (
    EIGENFUNCTION_COLUMNS,
    EIGENVALUE_COLUMNS,
    eigenfunction_rows,
    eigenvalue_rows,
    merge_config,
    rows_frame,
)
from koopman_rds.services.matching import match_eigenvalues
from koopman_rds.services.noise import DiscreteDistribution, RngStream
from koopman_rds.services.observables import evaluate
from koopman_rds.services.oracle import (
    AnalyticSpectrum,
    discrete_linear_spectrum,
    linear_rde_principal_eigenfunctions,
    lognormal_regime_reached,
    model_fd_spectrum,
    oracle_for,
    rotation_spectrum,
    sde_spectra,
    switching_linear_spectrum,
    van_der_pol_omega0,
)
from koopman_rds.services.pipeline import (
    accumulate_time_delayed_moments,
    assemble_ensemble_pairs,
    assemble_ensemble_pairs_series,
    assemble_normalized_pairs,
    assemble_stochastic_hankel,
    assemble_time_delayed,
    sample_initial_points,
)
from koopman_rds.utils import chunk_ranges, loglog_slope, normalized_correlation

VARIANT_STRIDE = 1 << 40
POINTS_STREAM = 1 << 62
SWEEP_CHUNK = 100
EIGENFUNCTIONS_PER_VARIANT = 3
LATTICE_HARMONICS = 40


@dataclass
class ExperimentOutcome:
    """Everything a runner produces before it is persisted."""

    checks: List[CheckResult] = field(default_factory=list)
    variants: List[VariantReport] = field(default_factory=list)
    eigenvalue_rows: List[Dict[str, Any]] = field(default_factory=list)
    eigenfunction_rows: List[Dict[str, Any]] = field(default_factory=list)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    ritz_vectors: Dict[str, np.ndarray] = field(default_factory=dict)

    def check(
        self, name: str, value: float, tolerance: float, *, passed: Optional[bool] = None
    ) -> bool:
        """Record a check; by default it passes when ``value <= tolerance``."""
        value = float(value)
        ok = value <= tolerance if passed is None else passed
        ok = bool(ok) and not math.isnan(value)
        self.checks.append(
            CheckResult(name=name, value=value, tolerance=float(tolerance), passed=ok)
        )
        logging.info(
            f"Check {name}: {value:.6g} (tolerance {tolerance:.6g}) "
            f"{'passed' if ok else 'FAILED'}"
        )
        return ok

    def add_result(
        self, variant: str, result: DmdResult, *, match: Optional[EigMatchReport] = None
    ) -> None:
        self.variants.append(
            VariantReport(
                name=variant,
                rank=result.rank,
                retained=len(result.pairs),
                rejected=len(result.rejected),
                match=match,
            )
        )
        self.eigenvalue_rows.extend(eigenvalue_rows(variant, result))

    def add_eigenfunctions(
        self,
        variant: str,
        eigenvalues: Sequence[complex],
        samples: np.ndarray,
        abscissa: np.ndarray,
    ) -> None:
        self.eigenfunction_rows.extend(
            eigenfunction_rows(variant, eigenvalues, samples, abscissa)
        )


@dataclass(frozen=True)
class ExperimentDefinition:
    name: str
    summary: str
    default_config: Callable[[], ExperimentConfig]
    run: Callable[[ExperimentConfig, int], ExperimentOutcome]
    oracle: Callable[[ExperimentConfig], AnalyticSpectrum]


# --------------------------------------------------------------------------- helpers


def _tolerance(config: ExperimentConfig, name: str) -> float:
    try:
        return float(config.tolerances[name])
    except KeyError as e:
        raise InvalidArgumentError(
            f"'{config.experiment}' config has no tolerance '{name}'"
        ) from e


def _extra(config: ExperimentConfig, name: str) -> Any:
    try:
        return config.extras[name]
    except KeyError as e:
        raise InvalidArgumentError(f"'{config.experiment}' config has no extra '{name}'") from e


def _variant_stream(config: ExperimentConfig, index: int) -> RngStream:
    return RngStream(config.seed, index * VARIANT_STRIDE)


def _points(config: ExperimentConfig, count: int) -> np.ndarray:
    a = config.assembly
    return sample_initial_points(
        a.box, count, mode=a.sampling, stream=RngStream(config.seed, POINTS_STREAM)
    )


def _sim_kwargs(config: ExperimentConfig, max_workers: int) -> Dict[str, Any]:
    a = config.assembly
    return {"scheme": a.scheme, "substeps": a.substeps, "max_workers": max_workers}


def _bound_observable(config: ExperimentConfig, model: ModelSpec) -> ObservableSet:
    obs = config.observable
    if obs.model is not None:
        obs = obs.model_copy(update={"model": model})
    return obs


def _match(computed: np.ndarray, reference: np.ndarray) -> Optional[EigMatchReport]:
    if len(computed) == 0 or len(reference) == 0:
        return None
    return match_eigenvalues(computed, reference)


def _check_match(
    out: ExperimentOutcome, prefix: str, match: Optional[EigMatchReport], tol: float, n_ref: int
) -> None:
    out.check(f"{prefix}_linf", math.inf if match is None else match.linf, tol)
    unmatched = n_ref if match is None else match.unmatched_reference
    out.check(f"{prefix}_unmatched_reference", unmatched, 0)


def _captured(computed: np.ndarray, reference: np.ndarray, tol: float) -> int:
    match = _match(computed, reference)
    if match is None:
        return 0
    return sum(p.abs_error <= tol for p in match.pairs)


def _nearest(values: np.ndarray, target: complex) -> int:
    return int(np.argmin(np.abs(values - target)))


def _dictionary_samples(
    result: DmdResult,
    data: Union[SnapshotMatrices, SnapshotMoments],
    obs: ObservableSet,
    points: np.ndarray,
) -> np.ndarray:
    """Eigenfunctions of the retained pairs sampled at `points`, ``[k x P]``."""
    xi = eigenfunction_coefficients(result, data)
    return evaluate_eigenfunctions(xi, evaluate(obs, points).T)


def _leading(result: DmdResult, count: int = EIGENFUNCTIONS_PER_VARIANT) -> np.ndarray:
    return np.argsort(-np.abs(result.eigenvalues()), kind="stable")[:count]


def _record_dictionary_eigenfunctions(
    out: ExperimentOutcome,
    variant: str,
    result: DmdResult,
    samples: np.ndarray,
    abscissa: np.ndarray,
    indices: Optional[Sequence[int]] = None,
) -> None:
    if not result.pairs:
        return
    idx = _leading(result) if indices is None else np.asarray(indices)
    out.add_eigenfunctions(variant, result.eigenvalues()[idx], samples[idx], abscissa)


def _record_hankel_eigenfunctions(
    out: ExperimentOutcome, variant: str, result: DmdResult, data: SnapshotMatrices
) -> None:
    if not result.pairs:
        return
    vectors = eigenfunction_coefficients(result, data)
    out.ritz_vectors[variant] = vectors
    idx = _leading(result)
    times = data.dt * np.arange(data.n)
    out.add_eigenfunctions(variant, result.eigenvalues()[idx], vectors[:, idx].T, times)


def _hankel_data(
    config: ExperimentConfig,
    model: ModelSpec,
    x0: Sequence[float],
    *,
    estimator: HankelEstimator,
    n_rows: int,
    m_cols: int,
    stream: RngStream,
    max_workers: int,
) -> SnapshotMatrices:
    a = config.assembly
    spec = HankelSpec(
        n_rows=n_rows,
        m_cols=m_cols,
        observable=_bound_observable(config, model),
        averaging_N=a.N,
        estimator=estimator,
    )
    return assemble_stochastic_hankel(
        model, x0, spec, a.dt, stream, **_sim_kwargs(config, max_workers)
    )


def _generator_reference(model: ModelSpec, obs: ObservableSet) -> np.ndarray:
    """Generator eigenvalues a dictionary can represent: the constant only if it holds one."""
    with_constant = obs.kind == ObservableKind.ANALYTIC_EIGENFUNCTIONS
    spectrum = sde_spectra(model, count=obs.n if with_constant else obs.n + 1)
    return spectrum.eigenvalues if with_constant else spectrum.eigenvalues[1:]


# --------------------------------------------------------------------------- rotation


def _rotation_config() -> ExperimentConfig:
    return ExperimentConfig(
        experiment="rotation",
        model=ModelSpec(kind=ModelKind.NOISY_ROTATION),
        observable=ObservableSet(kind=ObservableKind.FOURIER_CIRCLE, n1=150),
        assembly=AssemblyParams(layout=Layout.TIME_DELAYED, dt=1.0, m=5000, N=1, x0=[0.1]),
        seed=get_settings().DEFAULT_SEED,
        tolerances={"linf": 1e-3, "unit_circle": 1e-6, "eigenfunction_correlation": 0.99},
        # the error of harmonic j shrinks like 1 / sqrt(m * trajectories)
        extras={"compared": 20, "trajectories": 50},
    )


def _rotation_oracle(config: ExperimentConfig) -> AnalyticSpectrum:
    model = config.model
    return rotation_spectrum(model["theta"], model["delta"], int(_extra(config, "compared")) // 2)


def _run_rotation(config: ExperimentConfig, max_workers: int) -> ExperimentOutcome:
    out = ExperimentOutcome()
    model, a, obs = config.model, config.assembly, config.observable
    if a.N != 1:
        raise InvalidArgumentError(
            "rotation uses single-realization trajectories; set extras.trajectories, not assembly.N"
        )
    j_max = int(_extra(config, "compared")) // 2
    trajectories = int(_extra(config, "trajectories"))
    js = np.arange(-j_max, j_max + 1)
    reference = rotation_spectrum(model["theta"], model["delta"], j_max).eigenvalues[js != 0]

    moments = accumulate_time_delayed_moments(
        model,
        a.x0,
        obs,
        a.m,
        a.dt,
        trajectories,
        _variant_stream(config, 0),
        scale_columns=config.dmd.scale_columns,
        max_workers=max_workers,
    )
    result = dmd_rrr_moments(moments, config.dmd)
    match = _match(result.eigenvalues(), reference)
    out.add_result("stochastic", result, match=match)
    out.check("linf", math.inf if match is None else match.linf, _tolerance(config, "linf"))
    out.check("unmatched_reference", len(reference) if match is None else match.unmatched_reference, 0)

    # diagnostic: error of harmonic j over its Monte Carlo band 4 sqrt((1 - sinc^2(j delta)) / M)
    lin = _tolerance(config, "linf")
    worst = math.inf
    if match is not None:
        worst = 0.0
        for pair in match.pairs:
            spread = math.sqrt(max(1.0 - (pair.reference_re**2 + pair.reference_im**2), 0.0))
            band = max(lin, 4.0 * spread / math.sqrt(moments.count))
            worst = max(worst, pair.abs_error / band)
    out.check("linf_over_clt_band", worst, 1.0)

    grid = np.linspace(0.0, 1.0, 256, endpoint=False)[:, None]
    if result.pairs:
        samples = _dictionary_samples(result, moments, obs, grid)
        target = np.sinc(model["delta"]) * np.exp(2j * np.pi * model["theta"])
        idx = _nearest(result.eigenvalues(), target)
        corr = normalized_correlation(samples[idx], np.exp(2j * np.pi * grid[:, 0]))
        _record_dictionary_eigenfunctions(out, "stochastic", result, samples, grid[:, 0])
    else:
        corr = 0.0
    tol_corr = _tolerance(config, "eigenfunction_correlation")
    out.check("eigenfunction_correlation_j1", corr, tol_corr, passed=corr >= tol_corr)

    det = model.deterministic()
    det_data = assemble_time_delayed(det, a.x0, obs, a.m, a.dt, 1, _variant_stream(config, 1))
    det_result = dmd_rrr(det_data, config.dmd)
    det_reference = rotation_spectrum(det["theta"], 0.0, j_max).eigenvalues[js != 0]
    out.add_result(
        "deterministic", det_result, match=_match(det_result.eigenvalues(), det_reference)
    )
    lam = det_result.eigenvalues()
    deviation = float(np.max(np.abs(np.abs(lam) - 1.0))) if lam.size else math.inf
    out.check("unit_circle_deviation", deviation, _tolerance(config, "unit_circle"))
    return out


# --------------------------------------------------------------------------- discrete linear


def _sweep_config() -> ExperimentConfig:
    return ExperimentConfig(
        experiment="discrete-linear-sweep",
        model=ModelSpec(kind=ModelKind.DISCRETE_LINEAR, params={"p1": 0.75}),
        observable=ObservableSet(kind=ObservableKind.FULL_STATE, state_dim=2),
        assembly=AssemblyParams(
            layout=Layout.TIME_DELAYED,
            dt=1.0,
            m=10000,
            sampling="random",
            box=[(0.0, 1.0), (0.0, 1.0)],
            x0=[1.0, 0.0],
        ),
        seed=get_settings().DEFAULT_SEED,
        tolerances={"slope": 0.15, "monotone_violations": 0},
        extras={"m_values": [100, 1000, 10000], "trajectories": 1000, "expected_slope": -0.5},
    )


def _sweep_oracle(config: ExperimentConfig) -> AnalyticSpectrum:
    return oracle_for(config.model)


def _run_discrete_linear_sweep(config: ExperimentConfig, max_workers: int) -> ExperimentOutcome:
    out = ExperimentOutcome()
    model = config.model
    m_values = [int(m) for m in _extra(config, "m_values")]
    count = int(_extra(config, "trajectories"))
    if len(m_values) < 2 or sorted(m_values) != m_values:
        raise InvalidArgumentError("m_values must hold at least two increasing sizes")
    points = _points(config, count)
    dist = DiscreteDistribution.two_point(model["omega1"], model["omega2"], model["p1"])
    reference = discrete_linear_spectrum(dist).eigenvalues
    base = _variant_stream(config, 0)

    rows = []
    for m in m_values:
        errors: List[float] = []
        first: Optional[DmdResult] = None
        first_data: Optional[SnapshotMatrices] = None
        for lo, hi in chunk_ranges(count, SWEEP_CHUNK):
            for data in assemble_normalized_pairs(model, points[lo:hi], m, base.spawn(lo)):
                result = dmd_rrr(data, config.dmd)
                computed = np.array([p.eigenvalue for p in result.all_pairs])
                errors.extend(p.abs_error for p in match_eigenvalues(computed, reference).pairs)
                if first is None:
                    first, first_data = result, data
        e = np.asarray(errors)
        rows.append(
            {
                "m": m,
                "trajectories": count,
                "l1": float(e.mean()),
                "l2": float(np.sqrt(np.mean(e**2))),
                "linf": float(e.max()),
            }
        )
        logging.info(f"m={m}: mean error {rows[-1]['l1']:.3g}, max {rows[-1]['linf']:.3g}")
        variant = f"m={m}"
        out.add_result(variant, first, match=_match(first.eigenvalues(), reference))
        samples = _dictionary_samples(first, first_data, config.observable, points)
        _record_dictionary_eigenfunctions(
            out, variant, first, samples, np.arange(count, dtype=float)
        )

    sweep = pd.DataFrame(rows)
    out.tables["sweep.csv"] = sweep
    violations = sum(
        int(np.sum(np.diff(sweep[col].to_numpy()) >= 0)) for col in ("l1", "l2", "linf")
    )
    out.check("monotone_violations", violations, _tolerance(config, "monotone_violations"))
    slope = loglog_slope(sweep["m"], sweep["l2"])
    logging.info(f"Log-log slope of the L2 error: {slope:.3f}")
    out.check(
        "l2_slope_deviation",
        abs(slope - float(_extra(config, "expected_slope"))),
        _tolerance(config, "slope"),
    )
    return out


# --------------------------------------------------------------------------- switching linear


def _switching_config() -> ExperimentConfig:
    return ExperimentConfig(
        experiment="switching-linear",
        model=ModelSpec(kind=ModelKind.SWITCHING_LINEAR_RDE),
        observable=ObservableSet(kind=ObservableKind.FULL_STATE, state_dim=2),
        assembly=AssemblyParams(
            layout=Layout.ENSEMBLE_PAIRS,
            dt=math.pi / 60,
            m=100,
            N=100,
            box=[(-1.0, 1.0), (-1.0, 1.0)],
            x0=[1.0, 0.0],
        ),
        seed=get_settings().DEFAULT_SEED,
        tolerances={
            "relative_error": 0.10,
            "variance_violations": 0,
            "eigenfunction_correlation": 0.99,
        },
        extras={"p1_values": [0.25, 0.5, 0.75], "t_check": 5.0, "t_max": 10.0, "replicates": 10},
    )


def _switching_oracle(config: ExperimentConfig) -> AnalyticSpectrum:
    return oracle_for(config.model)


def _run_switching_linear(config: ExperimentConfig, max_workers: int) -> ExperimentOutcome:
    out = ExperimentOutcome()
    a = config.assembly
    p1_values = [float(p) for p in _extra(config, "p1_values")]
    t_check = float(_extra(config, "t_check"))
    replicates = int(_extra(config, "replicates"))
    if replicates < 2:
        raise InvalidArgumentError("replicates must be >= 2")
    # the log-normal reference is only defined at whole switch intervals
    per_switch = max(round(config.model["switch_dt"] / a.dt), 1)
    n_lags = max(round(float(_extra(config, "t_max")) / (per_switch * a.dt)), 3)
    lags = [per_switch * k for k in range(1, n_lags + 1)]
    times = a.dt * np.asarray(lags)
    compared = times <= t_check + 1e-12
    short_horizon = ~lognormal_regime_reached(config.model["switch_dt"], times)
    check_index = int(np.argmin(np.abs(times - t_check)))
    points = _points(config, a.m)
    tol_corr = _tolerance(config, "eigenfunction_correlation")

    error_rows = []
    worst_relative = 0.0
    variance_violations = 0
    worst_corr = 1.0
    for v, p1 in enumerate(p1_values):
        model = config.model.with_params(p1=p1)
        references = switching_linear_spectrum(
            model["a1"], model["a2"], model["b"], p1, model["switch_dt"], times
        )
        errors = np.empty((replicates, n_lags), dtype=complex)
        for r in range(replicates):
            series = assemble_ensemble_pairs_series(
                model,
                points,
                config.observable,
                lags,
                a.dt,
                a.N,
                _variant_stream(config, v * replicates + r),
                max_workers=max_workers,
            )
            for i, data in enumerate(series):
                result = dmd_rrr(data, config.dmd)
                reference = references[i]
                computed = np.array([p.eigenvalue for p in result.all_pairs])
                match = match_eigenvalues(computed, reference)
                relative = max(
                    p.abs_error / abs(complex(p.reference_re, p.reference_im))
                    for p in match.pairs
                )
                if compared[i]:
                    worst_relative = max(worst_relative, relative)
                errors[r, i] = computed[_nearest(computed, reference[0])] - reference[0]
                if r > 0:
                    continue
                variant = f"p1={p1:g}"
                error_rows.append(
                    {
                        "p1": p1,
                        "t": times[i],
                        "computed_re": computed[_nearest(computed, reference[0])].real,
                        "computed_im": computed[_nearest(computed, reference[0])].imag,
                        "reference_re": reference[0].real,
                        "reference_im": reference[0].imag,
                        "relative_error": relative,
                        "short_horizon": bool(short_horizon[i]),
                    }
                )
                if i != check_index:
                    out.eigenvalue_rows.extend(eigenvalue_rows(f"{variant},t={times[i]:.6f}", result))
                    continue
                out.add_result(variant, result, match=match)
                samples = _dictionary_samples(result, data, config.observable, points)
                lam = result.eigenvalues()
                indices = []
                for lam_gen, phi in linear_rde_principal_eigenfunctions(model):
                    idx = _nearest(lam, np.exp(lam_gen * times[i]))
                    indices.append(idx)
                    worst_corr = min(worst_corr, normalized_correlation(samples[idx], phi(points)))
                _record_dictionary_eigenfunctions(
                    out, variant, result, samples, np.arange(a.m, dtype=float), indices
                )

        variance = np.mean(np.abs(errors - errors.mean(axis=0)) ** 2, axis=0)
        windows = [float(w.mean()) for w in np.array_split(variance, 3)]
        logging.info(f"p1={p1:g}: windowed error variance {windows}")
        variance_violations += sum(later < earlier for earlier, later in itertools.pairwise(windows))
        for row in error_rows:
            if row["p1"] == p1:
                row["error_variance"] = float(
                    variance[int(round(row["t"] / (per_switch * a.dt))) - 1]
                )

    out.tables["switching_errors.csv"] = pd.DataFrame(error_rows)
    out.check("relative_error_max", worst_relative, _tolerance(config, "relative_error"))
    # informational: compared times where the log-normal reference is not yet reliable
    out.check(
        "short_horizon_comparisons",
        int((short_horizon & compared).sum()),
        int(compared.sum()),
        passed=True,
    )
    out.check(
        "variance_violations", variance_violations, _tolerance(config, "variance_violations")
    )
    out.check("principal_eigenfunction_correlation", worst_corr, tol_corr, passed=worst_corr >= tol_corr)
    return out


# --------------------------------------------------------------------------- scalar SDEs


def _scalar_sde_config(name: str, kind: ModelKind, observable: ObservableSet) -> ExperimentConfig:
    return ExperimentConfig(
        experiment=name,
        model=ModelSpec(kind=kind),
        observable=observable,
        assembly=AssemblyParams(
            layout=Layout.ENSEMBLE_PAIRS, dt=0.01, k=100, m=100, N=1000, box=[(-1.0, 1.0)]
        ),
        seed=get_settings().DEFAULT_SEED,
        extras={"delayed": {"dt": 0.005, "m": 2000, "N": 1000, "x0": [1.0]}},
    )


def _ou_config() -> ExperimentConfig:
    config = _scalar_sde_config(
        "ou", ModelKind.OU_LINEAR_SDE, ObservableSet(kind=ObservableKind.MONOMIALS, max_degree=10)
    )
    return config.model_copy(
        update={
            "tolerances": {
                "eigenvalue": 1e-2,
                "eigenfunction_correlation": 0.99,
                "delayed_captured": 4,
            },
            "extras": {**config.extras, "hermite_degrees": 3},
        }
    )


def _pitchfork_config() -> ExperimentConfig:
    model = ModelSpec(kind=ModelKind.SCALAR_PITCHFORK_SDE)
    config = _scalar_sde_config(
        "pitchfork",
        ModelKind.SCALAR_PITCHFORK_SDE,
        ObservableSet(kind=ObservableKind.ANALYTIC_EIGENFUNCTIONS, count=5, model=model),
    )
    return config.model_copy(
        update={
            "tolerances": {"eigenvalue": 2e-2, "delayed_captured": 3},
            "extras": {**config.extras, "fd_grid": 2000},
        }
    )


def _ou_oracle(config: ExperimentConfig) -> AnalyticSpectrum:
    return sde_spectra(config.model, count=config.observable.n + 1)


def _pitchfork_oracle(config: ExperimentConfig) -> AnalyticSpectrum:
    return model_fd_spectrum(config.model, int(_extra(config, "fd_grid")), config.observable.n)


def _run_delayed(
    out: ExperimentOutcome,
    config: ExperimentConfig,
    reference: np.ndarray,
    tol: float,
    max_workers: int,
) -> None:
    delayed = _extra(config, "delayed")
    obs = _bound_observable(config, config.model)
    data = assemble_time_delayed(
        config.model,
        delayed["x0"],
        obs,
        int(delayed["m"]),
        float(delayed["dt"]),
        int(delayed["N"]),
        _variant_stream(config, 1),
        **_sim_kwargs(config, max_workers),
    )
    result = dmd_rrr(data, config.dmd)
    cont = result.continuous_eigenvalues()
    out.add_result("time_delayed", result, match=_match(cont, reference))
    captured = _captured(cont, reference, tol)
    need = _tolerance(config, "delayed_captured")
    out.check("time_delayed_captured", captured, need, passed=captured >= need)


def _ensemble(
    config: ExperimentConfig, max_workers: int
) -> tuple[SnapshotMatrices, DmdResult, np.ndarray, ObservableSet]:
    a = config.assembly
    obs = _bound_observable(config, config.model)
    data = assemble_ensemble_pairs(
        config.model,
        _points(config, a.m),
        obs,
        a.k,
        a.dt,
        a.N,
        _variant_stream(config, 0),
        **_sim_kwargs(config, max_workers),
    )
    result = dmd_rrr(data, config.dmd)
    lo, hi = a.box[0]
    grid = np.linspace(lo, hi, 201)[:, None]
    return data, result, grid, obs


def _run_ou(config: ExperimentConfig, max_workers: int) -> ExperimentOutcome:
    out = ExperimentOutcome()
    model = config.model
    data, result, grid, obs = _ensemble(config, max_workers)
    reference = _generator_reference(model, obs)
    tol = _tolerance(config, "eigenvalue")
    cont = result.continuous_eigenvalues()
    match = _match(cont, reference)
    out.add_result("ensemble_pairs", result, match=match)
    _check_match(out, "ensemble", match, tol, len(reference))

    tol_corr = _tolerance(config, "eigenfunction_correlation")
    degrees = range(1, int(_extra(config, "hermite_degrees")) + 1)
    worst = 0.0
    if result.pairs:
        samples = _dictionary_samples(result, data, obs, grid)
        eigenfunctions = sde_spectra(model, count=max(degrees) + 1).eigenfunctions
        indices = [_nearest(cont, n * model["mu"]) for n in degrees]
        worst = min(
            normalized_correlation(samples[idx], eigenfunctions[n](grid))
            for n, idx in zip(degrees, indices)
        )
        _record_dictionary_eigenfunctions(
            out, "ensemble_pairs", result, samples, grid[:, 0], indices
        )
    out.check("hermite_correlation_min", worst, tol_corr, passed=worst >= tol_corr)

    _run_delayed(out, config, reference, tol, max_workers)
    return out


def _run_pitchfork(config: ExperimentConfig, max_workers: int) -> ExperimentOutcome:
    out = ExperimentOutcome()
    data, result, grid, obs = _ensemble(config, max_workers)
    reference = _pitchfork_oracle(config).eigenvalues
    tol = _tolerance(config, "eigenvalue")
    match = _match(result.continuous_eigenvalues(), reference)
    out.add_result("ensemble_pairs", result, match=match)
    _check_match(out, "ensemble", match, tol, len(reference))
    if result.pairs:
        samples = _dictionary_samples(result, data, obs, grid)
        _record_dictionary_eigenfunctions(out, "ensemble_pairs", result, samples, grid[:, 0])
    _run_delayed(out, config, reference, tol, max_workers)
    return out


# --------------------------------------------------------------------------- oscillators


def _hankel_config(
    name: str,
    kind: ModelKind,
    *,
    x0: List[float],
    n_rows: int,
    m_cols: int,
    substeps: int,
    tolerances: Dict[str, float],
    extras: Dict[str, Any],
) -> ExperimentConfig:
    model = ModelSpec(kind=kind)
    return ExperimentConfig(
        experiment=name,
        model=model,
        observable=ObservableSet(kind=ObservableKind.SCALAR_COMBO, model=model),
        assembly=AssemblyParams(
            layout=Layout.HANKEL,
            dt=0.1,
            substeps=substeps,
            m=m_cols,
            n_rows=n_rows,
            N=1000,
            estimator=HankelEstimator.SHARED_NOISE,
            x0=x0,
        ),
        seed=get_settings().DEFAULT_SEED,
        tolerances=tolerances,
        extras=extras,
    )


def _deterministic_shape(config: ExperimentConfig) -> tuple[int, int]:
    a = config.assembly
    return (
        int(config.extras.get("deterministic_n_rows", a.n_rows)),
        int(config.extras.get("deterministic_m_cols", a.m)),
    )


def _hankel_variant(
    out: ExperimentOutcome,
    config: ExperimentConfig,
    variant: str,
    model: ModelSpec,
    x0: Sequence[float],
    *,
    estimator: HankelEstimator,
    shape: tuple[int, int],
    options: DmdOptions,
    stream_index: int,
    max_workers: int,
    reference: Optional[np.ndarray] = None,
) -> tuple[SnapshotMatrices, DmdResult, Optional[EigMatchReport]]:
    n_rows, m_cols = shape
    if n_rows < 1:
        raise InvalidArgumentError("Hankel experiments need assembly.n_rows >= 1")
    data = _hankel_data(
        config,
        model,
        x0,
        estimator=estimator,
        n_rows=n_rows,
        m_cols=m_cols,
        stream=_variant_stream(config, stream_index),
        max_workers=max_workers,
    )
    result = dmd_rrr(data, options)
    match = None if reference is None else _match(result.continuous_eigenvalues(), reference)
    out.add_result(variant, result, match=match)
    _record_hankel_eigenfunctions(out, variant, result, data)
    return data, result, match


def _stuart_landau_config() -> ExperimentConfig:
    return _hankel_config(
        "stuart-landau",
        ModelKind.STUART_LANDAU,
        x0=[math.sqrt(0.5), 0.0],
        n_rows=300,
        m_cols=250,
        substeps=5,
        tolerances={"imaginary": 1e-2, "real_part_log2_ratio": 1.0},
        extras={"deterministic_n_rows": 1000},
    )


def _stuart_landau_oracle(config: ExperimentConfig) -> AnalyticSpectrum:
    return sde_spectra(config.model, count=config.observable.harmonics)


def _principal_branch(model: ModelSpec, harmonics: int) -> np.ndarray:
    """``lambda_{0,n}`` for n = 1..harmonics."""
    spectrum = sde_spectra(model, count=harmonics)
    return np.array(
        [spectrum.eigenvalues[spectrum.labels.index(f"l=0,n={n}")] for n in range(1, harmonics + 1)]
    )


def _check_harmonics(
    out: ExperimentOutcome,
    variant: str,
    result: DmdResult,
    predicted: np.ndarray,
    tol_im: float,
    *,
    tol_ratio: Optional[float] = None,
) -> None:
    cont = result.continuous_eigenvalues()
    if cont.size == 0:
        out.check(f"{variant}_imaginary_error", math.inf, tol_im)
        return
    found = np.array([cont[_nearest(cont, lam)] for lam in predicted])
    out.check(f"{variant}_imaginary_error", np.max(np.abs(found.imag - predicted.imag)), tol_im)
    if tol_ratio is None:
        return
    ratio = found.real / predicted.real
    worst = math.inf if np.any(ratio <= 0) else float(np.max(np.abs(np.log2(ratio))))
    out.check(f"{variant}_real_part_log2_ratio", worst, tol_ratio)


def _run_stuart_landau(config: ExperimentConfig, max_workers: int) -> ExperimentOutcome:
    out = ExperimentOutcome()
    model, a = config.model, config.assembly
    harmonics = config.observable.harmonics
    tol_im = _tolerance(config, "imaginary")

    det = model.deterministic()
    det_predicted = _principal_branch(det, harmonics)
    _, det_result, _ = _hankel_variant(
        out,
        config,
        "deterministic",
        det,
        a.x0,
        estimator=HankelEstimator.PILOT,
        shape=_deterministic_shape(config),
        options=config.dmd,
        stream_index=0,
        max_workers=max_workers,
        reference=np.concatenate([det_predicted, det_predicted.conj()]),
    )
    _check_harmonics(out, "deterministic", det_result, det_predicted, tol_im)

    if model.is_deterministic:
        return out
    predicted = _principal_branch(model, harmonics)
    _, result, _ = _hankel_variant(
        out,
        config,
        "stochastic",
        model,
        a.x0,
        estimator=a.estimator,
        shape=(a.n_rows, a.m),
        options=config.dmd,
        stream_index=1,
        max_workers=max_workers,
        reference=np.concatenate([predicted, predicted.conj()]),
    )
    _check_harmonics(
        out,
        "stochastic",
        result,
        predicted,
        tol_im,
        tol_ratio=_tolerance(config, "real_part_log2_ratio"),
    )
    return out


def _van_der_pol_config() -> ExperimentConfig:
    return _hankel_config(
        "van-der-pol",
        ModelKind.VAN_DER_POL,
        x0=[2.0, 0.0],
        n_rows=750,
        m_cols=250,
        substeps=10,
        tolerances={"base_frequency": 1e-3, "lattice": 5e-2},
        extras={"burn_in": 50.0},
    )


def _van_der_pol_oracle(config: ExperimentConfig) -> AnalyticSpectrum:
    return sde_spectra(config.model, count=5)


def _lattice_distance(values: np.ndarray, mu: float, omega0: float) -> np.ndarray:
    k = np.arange(-LATTICE_HARMONICS, LATTICE_HARMONICS + 1)
    lattice = np.concatenate([1j * k * omega0, -mu + 1j * k * omega0])
    return np.min(np.abs(values[:, None] - lattice[None, :]), axis=1)


def _run_van_der_pol(config: ExperimentConfig, max_workers: int) -> ExperimentOutcome:
    out = ExperimentOutcome()
    model, a = config.model, config.assembly
    det = model.deterministic()
    x0 = np.asarray(a.x0, dtype=float)
    burn_in = float(config.extras.get("burn_in", 0.0))
    if burn_in > 0:
        steps = max(round(burn_in / a.dt), 1)
        x0 = integrate_rk4(det, x0, a.dt, steps, substeps=a.substeps).final
        logging.info(f"Van der Pol start after burn-in of {burn_in}: {x0}")

    omega0, expansion = van_der_pol_omega0(model["mu"])
    tol_lattice = _tolerance(config, "lattice")
    det_data, det_result, _ = _hankel_variant(
        out,
        config,
        "deterministic",
        det,
        x0,
        estimator=HankelEstimator.PILOT,
        shape=_deterministic_shape(config),
        options=config.dmd,
        stream_index=0,
        max_workers=max_workers,
    )
    cont = det_result.continuous_eigenvalues()
    distance = _lattice_distance(cont, model["mu"], omega0)
    out.check("lattice_distance", float(distance.max()) if cont.size else math.inf, tol_lattice)
    fundamental = cont[(np.abs(cont.real) <= tol_lattice) & (cont.imag > 0.5)]
    base = float(fundamental.imag.min()) if fundamental.size else math.nan
    logging.info(f"Base frequency {base:.7f} (reference {omega0}, 1 - mu^2/16 = {expansion:.7f})")
    out.check("base_frequency_error", abs(base - omega0), _tolerance(config, "base_frequency"))
    residuals = det_result.residuals()
    out.check(
        "max_retained_residual",
        float(residuals.max()) if residuals.size else 0.0,
        config.dmd.residual_threshold,
    )

    standard = dmd_standard(det_data, eps=config.dmd.eps)
    std_cont = standard.continuous_eigenvalues()
    std_distance = _lattice_distance(std_cont, model["mu"], omega0)
    spurious = std_distance > tol_lattice
    out.tables["standard_dmd.csv"] = pd.DataFrame(
        {
            "continuous_re": std_cont.real,
            "continuous_im": std_cont.imag,
            "residual": standard.residuals(),
            "lattice_distance": std_distance,
            "spurious": spurious,
        }
    )
    out.variants.append(
        VariantReport(
            name="deterministic/standard",
            rank=standard.rank,
            retained=len(standard.pairs),
            rejected=0,
        )
    )
    logging.info(
        f"Standard DMD: {int(spurious.sum())} of {len(std_cont)} eigenvalues off the lattice"
    )

    if not model.is_deterministic:
        _hankel_variant(
            out,
            config,
            "stochastic",
            model,
            x0,
            estimator=a.estimator,
            shape=(a.n_rows, a.m),
            options=config.dmd,
            stream_index=1,
            max_workers=max_workers,
        )
    return out


def _lotka_volterra_config() -> ExperimentConfig:
    return _hankel_config(
        "lotka-volterra",
        ModelKind.LOTKA_VOLTERRA,
        x0=[3.5, 2.2],
        n_rows=750,
        m_cols=250,
        substeps=5,
        tolerances={"deterministic_principal": 1e-4, "stochastic_principal": 5e-3},
        extras={"deterministic_n_rows": 250, "deterministic_m_cols": 100},
    )


def _lotka_volterra_oracle(config: ExperimentConfig) -> AnalyticSpectrum:
    return sde_spectra(config.model)


def _run_lotka_volterra(config: ExperimentConfig, max_workers: int) -> ExperimentOutcome:
    out = ExperimentOutcome()
    model, a = config.model, config.assembly

    det = model.deterministic()
    det_reference = sde_spectra(det).eigenvalues[1:]
    _, _, det_match = _hankel_variant(
        out,
        config,
        "deterministic",
        det,
        a.x0,
        estimator=HankelEstimator.PILOT,
        shape=_deterministic_shape(config),
        options=config.dmd,
        stream_index=0,
        max_workers=max_workers,
        reference=det_reference,
    )
    _check_match(
        out,
        "deterministic_principal",
        det_match,
        _tolerance(config, "deterministic_principal"),
        len(det_reference),
    )

    if model.is_deterministic:
        return out
    reference = sde_spectra(model).eigenvalues[1:]
    _, _, match = _hankel_variant(
        out,
        config,
        "stochastic",
        model,
        a.x0,
        estimator=a.estimator,
        shape=(a.n_rows, a.m),
        options=config.dmd,
        stream_index=1,
        max_workers=max_workers,
        reference=reference,
    )
    _check_match(
        out, "stochastic_principal", match, _tolerance(config, "stochastic_principal"), len(reference)
    )
    return out


# --------------------------------------------------------------------------- registry

EXPERIMENTS: Dict[str, ExperimentDefinition] = {
    d.name: d
    for d in (
        ExperimentDefinition(
            "rotation",
            "noisy circle rotation, Fourier dictionary, independent trajectories",
            _rotation_config,
            _run_rotation,
            _rotation_oracle,
        ),
        ExperimentDefinition(
            "discrete-linear-sweep",
            "discrete linear RDS, error decay over trajectory length",
            _sweep_config,
            _run_discrete_linear_sweep,
            _sweep_oracle,
        ),
        ExperimentDefinition(
            "switching-linear",
            "linear RDE with a switching parameter, time-dependent eigenvalues",
            _switching_config,
            _run_switching_linear,
            _switching_oracle,
        ),
        ExperimentDefinition(
            "ou",
            "Ornstein-Uhlenbeck process, monomial dictionary",
            _ou_config,
            _run_ou,
            _ou_oracle,
        ),
        ExperimentDefinition(
            "pitchfork",
            "scalar pitchfork SDE against the finite-difference generator",
            _pitchfork_config,
            _run_pitchfork,
            _pitchfork_oracle,
        ),
        ExperimentDefinition(
            "stuart-landau",
            "Stuart-Landau limit cycle, Hankel DMD",
            _stuart_landau_config,
            _run_stuart_landau,
            _stuart_landau_oracle,
        ),
        ExperimentDefinition(
            "van-der-pol",
            "Van der Pol limit cycle, eigenvalue lattice",
            _van_der_pol_config,
            _run_van_der_pol,
            _van_der_pol_oracle,
        ),
        ExperimentDefinition(
            "lotka-volterra",
            "Lotka-Volterra predator-prey, principal eigenvalues",
            _lotka_volterra_config,
            _run_lotka_volterra,
            _lotka_volterra_oracle,
        ),
    )
}


def get_experiment(name: str) -> ExperimentDefinition:
    try:
        return EXPERIMENTS[name]
    except KeyError as e:
        raise InvalidArgumentError(
            f"Unknown experiment '{name}'. Choose one of: {', '.join(EXPERIMENT_ORDER)}"
        ) from e


def default_config(name: str) -> ExperimentConfig:
    return get_experiment(name).default_config()


def resolve_config(
    name: str,
    *,
    overrides: Optional[Mapping[str, Any]] = None,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    """Registry default, deep-merged with `overrides`, then `seed` and `output_dir` applied."""
    config = merge_config(default_config(name), overrides)
    update: Dict[str, Any] = {}
    if seed is not None:
        update["seed"] = seed
    if output_dir is not None:
        update["output_dir"] = output_dir
    return config.model_copy(update=update) if update else config


def oracle_spectrum(config: ExperimentConfig) -> AnalyticSpectrum:
    """Reference spectrum the named experiment compares against."""
    return get_experiment(config.experiment).oracle(config)


class ExperimentService:
    """Runs one registered experiment and persists its artifacts."""

    def __init__(self, *, artifacts: RunArtifactsRepo, max_workers: int = 1) -> None:
        self.artifacts = artifacts
        self.max_workers = max_workers

    def run(self, config: ExperimentConfig) -> ExperimentReport:
        definition = get_experiment(config.experiment)
        started_at = datetime.now(timezone.utc)
        logging.info(f"Running experiment '{config.experiment}' with seed {config.seed}")
        try:
            outcome = definition.run(config, self.max_workers)
        except KoopmanError as e:
            raise ExperimentError(config.experiment, e) from e

        report = ExperimentReport(
            experiment=config.experiment,
            seed=config.seed,
            passed=all(c.passed for c in outcome.checks),
            checks=outcome.checks,
            variants=outcome.variants,
        )
        seed = config.seed
        self.artifacts.write_eigenvalues(
            rows_frame(outcome.eigenvalue_rows, EIGENVALUE_COLUMNS), seed=seed
        )
        self.artifacts.write_eigenfunctions(
            rows_frame(outcome.eigenfunction_rows, EIGENFUNCTION_COLUMNS), seed=seed
        )
        for name, df in outcome.tables.items():
            self.artifacts.write_frame(name, df, seed=seed)
        for variant, vectors in outcome.ritz_vectors.items():
            self.artifacts.write_ritz_vectors(variant, vectors)
        self.artifacts.write_report(report)
        self.artifacts.write_metadata(
            RunMetadata(
                package_version=__version__,
                started_at=started_at,
                finished_at=datetime.now(timezone.utc),
                seed=seed,
                config=config,
            )
        )
        failed = [c.name for c in report.checks if not c.passed]
        if failed:
            logging.warning(f"'{config.experiment}' failed checks: {', '.join(failed)}")
        else:
            logging.info(f"'{config.experiment}' passed all {len(report.checks)} checks")
        return report


def run_experiment(
    config: ExperimentConfig,
    *,
    output_dir: Optional[Path] = None,
    max_workers: Optional[int] = None,
) -> ExperimentReport:
    """Run `config` and write its artifacts to `output_dir`, the config's
    ``output_dir`` or ``<OUTPUT_DIR>/<experiment>``, in that order."""
    settings = get_settings()
    run_dir = Path(output_dir or config.output_dir or settings.OUTPUT_DIR / config.experiment)
    service = ExperimentService(
        artifacts=RunArtifactsRepo(run_dir),
        max_workers=max_workers or settings.MAX_WORKERS,
    )
    return service.run(config)
