"""Writers for run artifacts: trajectory CSVs, JSON reports and manifests."""

import hashlib
import json
import logging
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ..core.config import settings
from ..models.population import CompartmentSet
from ..models.reports import RunManifest
from ..models.reports import SimReport
from ..models.results import EquilibriumSolution

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["t", "group", "compartment", "p", "u", "alpha_S", "alpha_I", "alpha_R", "nu", "Z"]


def _jsonable(value: Any) -> Any:
    """``json.dumps`` fallback for numpy, enum, datetime and pydantic values."""
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def to_json(payload: Any) -> str:
    """Stable JSON text (sorted keys, two-space indent)."""
    return json.dumps(payload, indent=2, sort_keys=True, default=_jsonable, allow_nan=True) + "\n"


def git_blob_sha1(payload: Any) -> str:
    """Content hash of ``payload`` computed the way git hashes a blob."""
    data = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable).encode("utf-8")
    header = f"blob {len(data)}\0".encode()
    return hashlib.sha1(header + data).hexdigest()


def trajectories_frame(solution: EquilibriumSolution) -> pd.DataFrame:
    """Long-format table: one row per (time, group, compartment).

    Controls and the aggregate are per group and repeat across the
    compartment rows of that group. D rows only appear for SIRD.
    """
    compartments = solution.variant.compartments
    n_times = len(solution.times)
    k = len(solution.labels)
    c = len(compartments)
    positions = [comp.position for comp in compartments]
    p = solution.output_distributions()[:, :, positions]
    u = np.asarray(solution.u)[:, :, positions]

    def per_group(values: np.ndarray) -> np.ndarray:
        return np.repeat(values[:, :, None], c, axis=2).ravel()

    frame = pd.DataFrame(
        {
            "t": np.repeat(solution.times, k * c),
            "group": np.tile(np.repeat(np.array(solution.labels, dtype=object), c), n_times),
            "compartment": np.tile(np.array([comp.value for comp in compartments], dtype=object), n_times * k),
            "p": p.ravel(),
            "u": u.ravel(),
            "alpha_S": per_group(solution.alpha[:, :, 0]),
            "alpha_I": per_group(solution.alpha[:, :, 1]),
            "alpha_R": per_group(solution.alpha[:, :, 2]),
            "nu": per_group(np.asarray(solution.nu)),
            "Z": per_group(np.asarray(solution.z)),
        },
        columns=TRAJECTORY_COLUMNS,
    )
    return frame


def sim_frames(sim: SimReport, reference: EquilibriumSolution, variant: CompartmentSet) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Per-replica and averaged empirical paths in long format."""
    compartments = list(variant.compartments)
    positions = [comp.position for comp in compartments]
    names = np.array([comp.value for comp in compartments], dtype=object)
    labels = np.array(sim.labels, dtype=object)
    n_times = len(sim.times)
    k = len(labels)
    c = len(positions)

    def long(values: np.ndarray) -> dict[str, Any]:
        return {
            "t": np.repeat(sim.times, k * c),
            "group": np.tile(np.repeat(labels, c), n_times),
            "compartment": np.tile(names, n_times * k),
            "p": values[:, :, positions].ravel(),
        }

    replicas = pd.concat(
        [pd.DataFrame({"replica": r, **long(sim.replica_paths[r])}) for r in range(sim.n_replicas)],
        ignore_index=True,
    )
    mean = pd.DataFrame(long(sim.mean_paths))
    mean["mean_field_p"] = reference.output_distributions()[:, :, positions].ravel()
    return replicas, mean


class ArtifactWriter:
    """Writes the files of one run into an output directory."""

    def __init__(self, out_dir: str | Path, significant_digits: int | None = None) -> None:
        """Initialize the writer.

        Args:
            out_dir: Target directory, created if missing.
            significant_digits: CSV precision; defaults to
                ``settings.csv_significant_digits``.
        """
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        digits = significant_digits or settings.csv_significant_digits
        self.float_format = f"%.{digits}g"
        self.written: list[Path] = []

    def _path(self, filename: str) -> Path:
        path = self.out_dir / filename
        self.written.append(path)
        return path

    def write_csv(self, frame: pd.DataFrame, filename: str) -> Path:
        """Write a frame with fixed significant-digit formatting."""
        path = self._path(filename)
        frame.to_csv(path, index=False, float_format=self.float_format, lineterminator="\n")
        logger.debug(f"Wrote {len(frame)} row(s) to {path}")
        return path

    def write_trajectories(self, solution: EquilibriumSolution, filename: str = "trajectories.csv") -> Path:
        """Trajectory table of a solution."""
        return self.write_csv(trajectories_frame(solution), filename)

    def write_json(self, payload: Any, filename: str) -> Path:
        """Structured report."""
        path = self._path(filename)
        path.write_text(to_json(payload), encoding="utf-8")
        logger.debug(f"Wrote {path}")
        return path

    def write_sim(self, sim: SimReport, reference: EquilibriumSolution, prefix: str = "sim") -> list[Path]:
        """Simulation paths (per replica and averaged) and summary."""
        replicas, mean = sim_frames(sim, reference, reference.variant)
        return [
            self.write_csv(replicas, f"{prefix}_replicas.csv"),
            self.write_csv(mean, f"{prefix}_mean.csv"),
            self.write_json(sim.summary(), f"{prefix}_summary.json"),
        ]

    def write_manifest(
        self,
        command: str,
        scenario_ref: str,
        scenario_names: list[str],
        resolved_config: dict[str, Any],
        started_at: datetime,
        diagnostics: dict[str, Any],
        seed: int | None = None,
    ) -> Path:
        """Manifest reconstructing the run; the hash covers the resolved config."""
        from .. import __version__

        solver = resolved_config.get("solver", {})
        if "members" in resolved_config:
            solver = next(iter(resolved_config["members"].values()), {}).get("solver", {})
        manifest = RunManifest(
            command=command,
            scenario_ref=scenario_ref,
            scenario_names=scenario_names,
            resolved_config=resolved_config,
            config_hash=git_blob_sha1(resolved_config),
            solver=solver,
            output_dir=str(self.out_dir),
            started_at=started_at,
            finished_at=datetime.now(),
            diagnostics=diagnostics,
            seed=seed,
            version=__version__,
        )
        path = self._path("manifest.json")
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info(f"Run manifest written to {path} (config {manifest.config_hash[:12]})")
        return path

