"""Report models for metrics, validation checks and run manifests."""

from dataclasses import dataclass
from dataclasses import field
from datetime import datetime
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel
from pydantic import Field
from pydantic import model_validator


class Quantity(str, Enum):
    """Per-group time series that metrics are computed on."""

    INFECTED = "infected"
    SOCIALIZATION = "socialization"
    VACCINATION = "vaccination"

    @property
    def uses_trough(self) -> bool:
        """Socialization "peaks" are minima; the other quantities use maxima."""
        return self is Quantity.SOCIALIZATION


class MetricKind(str, Enum):
    """Comparison metrics."""

    PEAK_DIFFERENCE = "peak_difference"
    PEAK_TIME_SPAN = "peak_time_span"
    GROUP_DISPARITY = "group_disparity"


class MetricReport(BaseModel):
    """One evaluated metric."""

    metric: MetricKind
    quantity: Quantity
    subjects: list[str] = Field(..., description="Groups or scenarios compared")
    value: float
    peak_times: dict[str, float] | None = None

    @model_validator(mode="after")
    def check_sign(self) -> "MetricReport":
        """Peak differences and spans are nonnegative; disparities are signed."""
        if self.metric is not MetricKind.GROUP_DISPARITY and self.value < 0:
            raise ValueError(f"{self.metric.value} must be nonnegative")
        return self


class CheckResult(BaseModel):
    """Outcome of one validation check."""

    name: str
    passed: bool
    value: float | None = None
    threshold: float | None = None
    details: dict[str, Any] = Field(default_factory=dict)


class ValidationReport(BaseModel):
    """All checks run against one solved scenario."""

    scenario: str
    checks: list[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Whether every check passed."""
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        """Names of failing checks."""
        return [c.name for c in self.checks if not c.passed]


class RunManifest(BaseModel):
    """Everything needed to reproduce a run."""

    command: str
    scenario_ref: str
    scenario_names: list[str]
    resolved_config: dict[str, Any]
    config_hash: str = Field(..., description="git blob sha1 of resolved_config")
    solver: dict[str, Any]
    output_dir: str
    started_at: datetime
    finished_at: datetime
    diagnostics: dict[str, Any] = Field(default_factory=dict)
    seed: int | None = None
    version: str


@dataclass(frozen=True)
class SimReport:
    """Result of a finite-population simulation.

    ``replica_paths`` has shape ``[replicas, n_steps + 1, K, 4]`` and holds
    exact count ratios ``counts / group_size``.
    """

    n_agents: int
    n_replicas: int
    seed: int
    rng: str
    labels: tuple[str, ...]
    group_sizes: tuple[int, ...]
    times: np.ndarray
    replica_paths: np.ndarray
    mean_paths: np.ndarray
    sup_deviation: float
    replica_deviations: np.ndarray
    events: tuple[int, ...] = field(default=())
    majorant_violations: int = 0

    def summary(self) -> dict[str, Any]:
        """JSON-friendly summary of the run."""
        return {
            "n_agents": self.n_agents,
            "n_replicas": self.n_replicas,
            "seed": self.seed,
            "rng": self.rng,
            "group_sizes": dict(zip(self.labels, self.group_sizes, strict=True)),
            "sup_deviation": self.sup_deviation,
            "replica_deviations": [float(x) for x in self.replica_deviations],
            "replica_deviation_std": float(np.std(self.replica_deviations)),
            "events": list(self.events),
            "majorant_violations": self.majorant_violations,
        }
