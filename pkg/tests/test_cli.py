import json

import pytest

from koopman_rds.cli import EXIT_PASSED, EXIT_TOLERANCE, EXIT_USAGE, main
from koopman_rds.domain.enums import EXPERIMENT_ORDER


def test_list(capsys):
    assert main(["list"]) == EXIT_PASSED
    out = capsys.readouterr().out
    for name in EXPERIMENT_ORDER:
        assert name in out


def test_unknown_experiment():
    assert main(["run", "nope"]) == EXIT_USAGE


def test_missing_and_invalid_config(tmp_path):
    assert main(["run", "ou", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"assembly": {"dt": -1.0}}), encoding="utf-8")
    assert main(["run", "ou", "--config", str(bad)]) == EXIT_USAGE


def test_missing_subcommand():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_oracle_prints_json(capsys):
    assert main(["oracle", "ou"]) == EXIT_PASSED
    payload = json.loads(capsys.readouterr().out)
    assert payload["experiment"] == "ou"
    assert payload["eigenvalues"][0]["label"] == "n=0"


def test_run_and_rerun_from_metadata(tmp_path, capsys):
    overrides = tmp_path / "small.json"
    overrides.write_text(
        json.dumps({"observable": {"n1": 10}, "assembly": {"m": 500}, "extras": {"compared": 4}}),
        encoding="utf-8",
    )
    first = tmp_path / "first"
    code = main(["run", "rotation", "--config", str(overrides), "--seed", "5", "--out", str(first)])
    assert code in (EXIT_PASSED, EXIT_TOLERANCE)
    assert "rotation:" in capsys.readouterr().out

    second = tmp_path / "second"
    again = main(["run", "rotation", "--config", str(first / "metadata.json"), "--out", str(second)])
    assert again == code
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()
