import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from koopman_rds.domain.models import ExperimentConfig
from koopman_rds.errors import InvalidArgumentError
from koopman_rds.services.dmd import DmdResult, SnapshotMatrices
from koopman_rds.services.integrators import Trajectory

EIGENVALUE_COLUMNS = [
    "variant",
    "index",
    "re",
    "im",
    "abs",
    "continuous_re",
    "continuous_im",
    "residual",
    "threshold",
]
EIGENFUNCTION_COLUMNS = [
    "variant",
    "eigen_index",
    "eigenvalue_re",
    "eigenvalue_im",
    "sample",
    "abscissa",
    "re",
    "im",
]


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge `override` into a copy of `base`; non-dict values replace."""
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def read_config_overrides(path: Path) -> Dict[str, Any]:
    """Read a config JSON file. A run's metadata.json is accepted too (its ``config`` key)."""
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise InvalidArgumentError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise InvalidArgumentError(f"Invalid JSON in {path}: {e}") from e
    if not isinstance(doc, dict):
        raise InvalidArgumentError(f"{path} must hold a JSON object")
    if "config" in doc and "started_at" in doc:
        logging.info(f"Using the config recorded in run metadata {path}")
        doc = doc["config"]
    return doc


def merge_config(
    default: ExperimentConfig, overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """Validate `overrides` deep-merged over an experiment's default config."""
    overrides = dict(overrides or {})
    name = overrides.get("experiment", default.experiment)
    if name != default.experiment:
        raise InvalidArgumentError(
            f"Config is for experiment '{name}', not '{default.experiment}'"
        )
    merged = deep_merge(default.model_dump(mode="json"), overrides)
    # the observable's model follows the run's model unless given explicitly
    obs_override = overrides.get("observable") or {}
    if "model" in overrides and "model" not in obs_override and merged["observable"].get("model"):
        merged["observable"]["model"] = merged["model"]
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError:
        logging.error(f"Invalid configuration for '{default.experiment}'")
        raise


def eigenvalue_rows(variant: str, result: DmdResult) -> List[Dict[str, Any]]:
    """One row per retained Ritz pair, in the result's order."""
    return [
        {
            "variant": variant,
            "index": i,
            "re": p.eigenvalue.real,
            "im": p.eigenvalue.imag,
            "abs": abs(p.eigenvalue),
            "continuous_re": p.continuous_eigenvalue.real,
            "continuous_im": p.continuous_eigenvalue.imag,
            "residual": p.residual,
            "threshold": result.residual_threshold,
        }
        for i, p in enumerate(result.pairs)
    ]


def eigenfunction_rows(
    variant: str,
    eigenvalues: Sequence[complex],
    samples: np.ndarray,
    abscissa: np.ndarray,
) -> List[Dict[str, Any]]:
    """Long-format rows of sampled eigenfunctions ``samples [k x P]``, each scaled to unit norm."""
    rows = []
    for i, (lam, values) in enumerate(zip(eigenvalues, np.atleast_2d(samples))):
        norm = np.linalg.norm(values)
        values = values / norm if norm > 0 else values
        for j, (a, v) in enumerate(zip(abscissa, values)):
            rows.append(
                {
                    "variant": variant,
                    "eigen_index": i,
                    "eigenvalue_re": float(np.real(lam)),
                    "eigenvalue_im": float(np.imag(lam)),
                    "sample": j,
                    "abscissa": float(a),
                    "re": float(v.real),
                    "im": float(v.imag),
                }
            )
    return rows


def rows_frame(rows: List[Dict[str, Any]], columns: List[str]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=columns)


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    df = pd.DataFrame(
        traj.states, columns=[f"x{i + 1}" for i in range(traj.states.shape[1])]
    )
    df.insert(0, "t", traj.times)
    return df


def snapshot_frame(data: SnapshotMatrices) -> pd.DataFrame:
    """Both snapshot matrices in long format: ``matrix, row, col, re, im``."""
    frames = []
    for name, M in (("X", data.X), ("Y", data.Y)):
        rows, cols = np.indices(M.shape)
        frames.append(
            pd.DataFrame(
                {
                    "matrix": name,
                    "row": rows.ravel(),
                    "col": cols.ravel(),
                    "re": np.real(M).ravel(),
                    "im": np.imag(M).ravel(),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)
