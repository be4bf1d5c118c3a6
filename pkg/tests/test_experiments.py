import math

import pandas as pd
import pytest

from koopman_rds.config import get_settings
from koopman_rds.domain.enums import EXPERIMENT_ORDER, HankelEstimator
from koopman_rds.domain.models import ExperimentConfig
from koopman_rds.errors import ExperimentError, InvalidArgumentError, is_usage_error
from koopman_rds.repositories.run_artifacts_repo import RunArtifactsRepo
from koopman_rds.services.experiments import (
    EXPERIMENTS,
    ExperimentOutcome,
    default_config,
    get_experiment,
    oracle_spectrum,
    resolve_config,
    run_experiment,
)

SMALL_ROTATION = {
    "observable": {"n1": 10},
    "assembly": {"m": 500},
    "extras": {"compared": 4, "trajectories": 4},
}


def test_registry_follows_experiment_order():
    assert list(EXPERIMENTS) == EXPERIMENT_ORDER
    with pytest.raises(InvalidArgumentError):
        get_experiment("nope")


@pytest.mark.parametrize("name", EXPERIMENT_ORDER)
def test_default_configs_round_trip_through_json(name):
    config = default_config(name)
    assert config.experiment == name
    assert ExperimentConfig.model_validate_json(config.model_dump_json()) == config


@pytest.mark.parametrize("name", ["stuart-landau", "van-der-pol", "lotka-volterra"])
def test_hankel_experiments_filter_at_the_standard_threshold(name):
    config = default_config(name)
    assert config.dmd.residual_threshold == 1e-3
    assert config.dmd.max_rank is None
    assert config.assembly.estimator == HankelEstimator.SHARED_NOISE
    assert not any(key.startswith("stochastic_") for key in config.extras)


def test_default_seed_comes_from_settings(monkeypatch):
    monkeypatch.setenv("KOOPMAN_RDS_DEFAULT_SEED", "99")
    get_settings.cache_clear()
    assert default_config("ou").seed == 99


def test_resolve_config_applies_seed_and_output_dir():
    config = resolve_config("ou", overrides={"model": {"params": {"mu": -1.0}}}, seed=3, output_dir="x")
    assert config.model["mu"] == -1.0
    assert config.seed == 3
    assert config.output_dir == "x"


def test_outcome_checks():
    out = ExperimentOutcome()
    assert out.check("below", 0.5, 1.0)
    assert not out.check("above", 2.0, 1.0)
    assert not out.check("nan", math.nan, 1.0)
    assert out.check("explicit", 0.995, 0.99, passed=True)
    assert [c.passed for c in out.checks] == [True, False, False, True]


def test_oracle_spectrum_for_switching():
    spectrum = oracle_spectrum(default_config("switching-linear"))
    assert spectrum.time_scale == "generator"
    assert len(spectrum.eigenvalues) == 2


def test_small_rotation_run_writes_artifacts(tmp_path):
    config = resolve_config("rotation", overrides=SMALL_ROTATION)
    report = run_experiment(config, output_dir=tmp_path)
    for name in ("eigenvalues.csv", "eigenfunctions.csv", "report.json", "metadata.json"):
        assert (tmp_path / name).exists()
    assert {v.name for v in report.variants} == {"stochastic", "deterministic"}
    checks = {c.name: c for c in report.checks}
    assert checks["unit_circle_deviation"].passed
    assert report.passed == all(c.passed for c in report.checks)
    eigenvalues = RunArtifactsRepo(tmp_path).read_frame("eigenvalues.csv")
    assert "deterministic" in set(eigenvalues["variant"])


def test_rotation_checks_the_raw_error_and_reports_the_band(tmp_path):
    config = resolve_config("rotation", overrides=SMALL_ROTATION)
    report = run_experiment(config, output_dir=tmp_path)
    checks = {c.name: c for c in report.checks}
    stochastic = next(v for v in report.variants if v.name == "stochastic")
    assert checks["linf"].tolerance == 1e-3
    assert checks["linf"].value == pytest.approx(stochastic.match.linf)
    assert checks["linf"].passed == (stochastic.match.linf < 1e-3)
    assert checks["linf_over_clt_band"].tolerance == 1.0
    assert stochastic.rank == 20


def test_rotation_rejects_ensemble_averaging(tmp_path):
    overrides = {**SMALL_ROTATION, "assembly": {"m": 500, "N": 2}}
    with pytest.raises(ExperimentError) as info:
        run_experiment(resolve_config("rotation", overrides=overrides), output_dir=tmp_path)
    assert is_usage_error(info.value)


def test_runs_are_reproducible(tmp_path):
    config = resolve_config("rotation", overrides=SMALL_ROTATION)
    run_experiment(config, output_dir=tmp_path / "a")
    run_experiment(config, output_dir=tmp_path / "b")
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert (tmp_path / "a" / "eigenvalues.csv").read_bytes() == (
        tmp_path / "b" / "eigenvalues.csv"
    ).read_bytes()


def test_small_discrete_linear_sweep(tmp_path):
    config = resolve_config("discrete-linear-sweep", overrides={"extras": {"trajectories": 50}})
    report = run_experiment(config, output_dir=tmp_path)
    sweep = pd.read_csv(tmp_path / "sweep.csv", comment="#")
    assert list(sweep["m"]) == [100, 1000, 10000]
    assert report.passed, report.checks


def test_switching_run_flags_short_horizons(tmp_path):
    overrides = {
        "assembly": {"m": 20, "N": 10},
        "extras": {"p1_values": [0.5], "replicates": 2, "t_max": 4.0, "t_check": 2.0},
    }
    config = resolve_config("switching-linear", overrides=overrides)
    report = run_experiment(config, output_dir=tmp_path)
    errors = pd.read_csv(tmp_path / "switching_errors.csv", comment="#")
    tau = math.pi / 30
    assert errors["t"].to_numpy() / tau == pytest.approx(range(1, len(errors) + 1))
    # 4 / tau is about 38 switch intervals
    assert errors["short_horizon"].tolist() == [k < 30 for k in range(1, len(errors) + 1)]
    flagged = {c.name: c for c in report.checks}["short_horizon_comparisons"]
    assert flagged.value == flagged.tolerance == 19


def test_usage_errors_inside_runners_are_wrapped(tmp_path):
    config = resolve_config("switching-linear", overrides={"extras": {"replicates": 1}})
    with pytest.raises(ExperimentError) as info:
        run_experiment(config, output_dir=tmp_path)
    assert is_usage_error(info.value)
    assert info.value.experiment == "switching-linear"


@pytest.mark.slow
@pytest.mark.parametrize("name", EXPERIMENT_ORDER)
def test_default_experiment_passes(name, tmp_path):
    report = run_experiment(default_config(name), output_dir=tmp_path)
    assert report.passed, [c for c in report.checks if not c.passed]
