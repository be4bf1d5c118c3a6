import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from koopman_rds.domain.models import (
    SCHEMA_VERSION,
    ExperimentReport,
    ModelSpec,
    RunMetadata,
)
from koopman_rds.services.dmd import SnapshotMatrices
from koopman_rds.services.integrators import Trajectory
from koopman_rds.services.io import snapshot_frame, trajectory_frame


class RunArtifactsRepo:
    """Repository for the files of one experiment run directory.

    CSV files open with a ``# seed=... stream_id=...`` comment line; read
    them back with `read_frame` (or ``pd.read_csv(path, comment="#")``).
    """

    def __init__(self, run_dir: Path) -> None:
        self.run_dir = Path(run_dir)

    def _path(self, name: str) -> Path:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        return self.run_dir / name

    def write_frame(
        self, name: str, df: pd.DataFrame, *, seed: int, stream_id: Optional[int] = None
    ) -> Path:
        path = self._path(name)
        header = f"# seed={seed}" + ("" if stream_id is None else f" stream_id={stream_id}")
        with path.open("w", newline="", encoding="utf-8") as f:
            f.write(header + "\n")
            df.to_csv(f, index=False)
        logging.info(f"Wrote {len(df)} rows to {path}")
        return path

    def read_frame(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.run_dir / name, comment="#")

    def write_eigenvalues(self, df: pd.DataFrame, *, seed: int) -> Path:
        return self.write_frame("eigenvalues.csv", df, seed=seed)

    def write_eigenfunctions(self, df: pd.DataFrame, *, seed: int) -> Path:
        return self.write_frame("eigenfunctions.csv", df, seed=seed)

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self._path(name)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def write_report(self, report: ExperimentReport) -> Path:
        path = self._path("report.json")
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logging.info(f"Report written to {path}")
        return path

    def read_report(self) -> ExperimentReport:
        return ExperimentReport.model_validate_json(
            (self.run_dir / "report.json").read_text(encoding="utf-8")
        )

    def write_metadata(self, metadata: RunMetadata) -> Path:
        path = self._path("metadata.json")
        path.write_text(metadata.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return path

    def write_ritz_vectors(self, variant: str, vectors: np.ndarray) -> Path:
        path = self._path(f"ritz_vectors_{_slug(variant)}.npy")
        np.save(path, vectors)
        return path

    def write_trajectory(self, name: str, traj: Trajectory, *, model: ModelSpec) -> Path:
        """``<name>.csv`` with columns ``t, x1..xd`` and a ``<name>.json`` sidecar."""
        seed = -1 if traj.seed is None else traj.seed
        path = self.write_frame(f"{name}.csv", trajectory_frame(traj), seed=seed, stream_id=traj.stream_id)
        self.write_json(
            f"{name}.json",
            {
                "schema_version": SCHEMA_VERSION,
                "model": model.model_dump(mode="json"),
                "seed": traj.seed,
                "stream_id": traj.stream_id,
                "dt": traj.dt,
                "n_steps": len(traj.times) - 1,
            },
        )
        return path

    def write_snapshots(self, name: str, data: SnapshotMatrices, *, seed: int) -> Path:
        return self.write_frame(f"{name}.csv", snapshot_frame(data), seed=seed)


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in text).strip("_")
