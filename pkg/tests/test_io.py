import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from koopman_rds.domain.enums import Layout, ModelKind
from koopman_rds.domain.models import CheckResult, ExperimentReport, ModelSpec
from koopman_rds.errors import InvalidArgumentError
from koopman_rds.repositories.run_artifacts_repo import RunArtifactsRepo
from koopman_rds.services.dmd import SnapshotMatrices, dmd_rrr
from koopman_rds.services.experiments import default_config
from koopman_rds.services.integrators import integrate
from koopman_rds.services.io import (
    EIGENVALUE_COLUMNS,
    deep_merge,
    eigenfunction_rows,
    eigenvalue_rows,
    merge_config,
    read_config_overrides,
    rows_frame,
)
from koopman_rds.services.noise import RngStream


def test_deep_merge_keeps_siblings():
    merged = deep_merge({"a": {"b": 1, "c": 2}, "d": 3}, {"a": {"b": 5}, "e": 6})
    assert merged == {"a": {"b": 5, "c": 2}, "d": 3, "e": 6}


def test_merge_config_overrides_nested_fields():
    config = merge_config(default_config("ou"), {"model": {"params": {"sigma": 0.01}}, "seed": 7})
    assert config.model["sigma"] == 0.01
    assert config.model["mu"] == -0.5
    assert config.seed == 7
    assert config.assembly == default_config("ou").assembly


def test_observable_model_follows_model_override():
    config = merge_config(
        default_config("stuart-landau"), {"model": {"params": {"epsilon": 0.01}}}
    )
    assert config.observable.model == config.model


def test_merge_config_rejects_other_experiment_and_bad_values():
    with pytest.raises(InvalidArgumentError):
        merge_config(default_config("ou"), {"experiment": "rotation"})
    with pytest.raises(ValidationError):
        merge_config(default_config("ou"), {"assembly": {"dt": -1.0}})


def test_read_config_overrides(tmp_path):
    with pytest.raises(InvalidArgumentError):
        read_config_overrides(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(InvalidArgumentError):
        read_config_overrides(bad)

    config = default_config("ou").model_dump(mode="json")
    meta = tmp_path / "metadata.json"
    meta.write_text(json.dumps({"started_at": "2024-01-01T00:00:00Z", "config": config}))
    assert read_config_overrides(meta) == config


def test_csv_files_start_with_seed_comment(tmp_path):
    repo = RunArtifactsRepo(tmp_path / "run")
    X = np.random.default_rng(0).standard_normal((3, 8))
    result = dmd_rrr(SnapshotMatrices(X, 0.5 * X, Layout.TIME_DELAYED, 0.1))
    path = repo.write_eigenvalues(rows_frame(eigenvalue_rows("v", result), EIGENVALUE_COLUMNS), seed=42)
    assert path.read_text().splitlines()[0] == "# seed=42"
    df = repo.read_frame("eigenvalues.csv")
    assert list(df.columns) == EIGENVALUE_COLUMNS
    np.testing.assert_allclose(df["re"], 0.5)
    np.testing.assert_allclose(df["continuous_re"], np.log(0.5) / 0.1)


def test_eigenfunction_rows_are_unit_normalized():
    samples = np.array([[3.0, 4.0], [0.0, 0.0]])
    df = pd.DataFrame(eigenfunction_rows("v", [0.5, 0.1j], samples, np.array([0.0, 1.0])))
    first = df[df["eigen_index"] == 0]
    np.testing.assert_allclose(first["re"], [0.6, 0.8])
    assert len(df) == 4


def test_trajectory_sidecar(tmp_path):
    model = ModelSpec(kind=ModelKind.OU_LINEAR_SDE)
    traj = integrate(model, [1.0], 0.01, 10, RngStream(3, 5))
    repo = RunArtifactsRepo(tmp_path)
    repo.write_trajectory("path", traj, model=model)
    assert (tmp_path / "path.csv").read_text().splitlines()[0] == "# seed=3 stream_id=5"
    df = repo.read_frame("path.csv")
    assert list(df.columns) == ["t", "x1"]
    sidecar = json.loads((tmp_path / "path.json").read_text())
    assert sidecar["n_steps"] == 10
    assert sidecar["model"]["kind"] == "ou_linear_sde"


def test_snapshots_long_format(tmp_path):
    data = SnapshotMatrices(np.ones((2, 3)), 2 * np.ones((2, 3)), Layout.HANKEL, 1.0)
    repo = RunArtifactsRepo(tmp_path)
    repo.write_snapshots("snapshots", data, seed=1)
    df = repo.read_frame("snapshots.csv")
    assert len(df) == 12
    assert set(df["matrix"]) == {"X", "Y"}


def test_report_round_trip(tmp_path):
    report = ExperimentReport(
        experiment="ou",
        seed=1,
        passed=False,
        checks=[CheckResult(name="x", value=0.5, tolerance=0.1, passed=False)],
    )
    repo = RunArtifactsRepo(tmp_path)
    repo.write_report(report)
    assert repo.read_report() == report
