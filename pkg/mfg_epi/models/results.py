"""Array containers for solved paths."""

from collections.abc import Mapping
from dataclasses import dataclass
from dataclasses import field
from typing import Any

import numpy as np

from ..core.exceptions import UnknownGroupError
from .population import CompartmentSet
from .reports import Quantity
from .scenario import Integrator
from .scenario import TimeGrid


def _freeze(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ControlSlice:
    """Best-response controls at a single time node.

    ``alpha`` has shape ``[K, 3]`` over (S, I, R) and ``nu`` shape ``[K]``.
    ``clipped`` flags groups whose unconstrained formula left the box.
    """

    alpha: np.ndarray
    nu: np.ndarray
    clipped: np.ndarray

    @property
    def clip_count(self) -> int:
        """Number of clipped groups."""
        return int(np.count_nonzero(self.clipped))


@dataclass(frozen=True)
class ControlPath:
    """Controls on the full grid for one or more groups."""

    alpha: np.ndarray  # [n+1, K, 3]
    nu: np.ndarray  # [n+1, K]
    vaccination_cap: float = 10.0
    labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrajectoryBundle:
    """Per-group time series of the metric quantities.

    ``series`` maps each :class:`Quantity` to a ``[n+1, K]`` array.
    """

    times: np.ndarray
    labels: tuple[str, ...]
    series: Mapping[Quantity, np.ndarray]

    def group_index(self, group: str | int) -> int:
        """Resolve a label or index to a column index."""
        if isinstance(group, int) and not isinstance(group, bool):
            if 0 <= group < len(self.labels):
                return group
        elif group in self.labels:
            return self.labels.index(group)
        raise UnknownGroupError(group, list(self.labels))

    def quantity(self, quantity: Quantity, group: str | int) -> np.ndarray:
        """Series of one group."""
        if quantity not in self.series:
            raise KeyError(f"bundle has no {quantity.value} series")
        return np.asarray(self.series[quantity])[:, self.group_index(group)]

    @property
    def dt(self) -> float:
        """Grid spacing."""
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


@dataclass(frozen=True)
class EquilibriumSolution:
    """Converged (or flagged) output of the fixed-point solver.

    Arrays always carry the four compartments (S, I, R, D); for the SIR
    variant the D column is identically zero and dropped on output.
    """

    scenario_name: str
    labels: tuple[str, ...]
    variant: CompartmentSet
    grid: TimeGrid
    integrator: Integrator
    p: np.ndarray  # [n+1, K, 4]
    u: np.ndarray  # [n+1, K, 4]
    alpha: np.ndarray  # [n+1, K, 3]
    nu: np.ndarray  # [n+1, K]
    z: np.ndarray  # [n+1, K]
    iterations: int
    residual_history: tuple[tuple[float, float], ...]
    clip_events: int
    converged: bool
    epsilon: float
    vaccination_cap: float = 10.0
    failed_patch: int | None = None
    patches: int = 1
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("p", "u", "alpha", "nu", "z"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    @property
    def times(self) -> np.ndarray:
        """Node times."""
        return self.grid.times

    @property
    def final_residual(self) -> tuple[float, float]:
        """(p, u) residual of the last iteration."""
        return self.residual_history[-1] if self.residual_history else (0.0, 0.0)

    @property
    def controls(self) -> ControlPath:
        """Control paths as a :class:`ControlPath`."""
        return ControlPath(self.alpha, self.nu, self.vaccination_cap, self.labels)

    def group_index(self, group: str | int) -> int:
        """Resolve a label or index to a column index."""
        return self.to_bundle().group_index(group)

    def to_bundle(self) -> TrajectoryBundle:
        """Metric-ready view of this solution."""
        return TrajectoryBundle(
            times=self.times,
            labels=self.labels,
            series={
                Quantity.INFECTED: self.p[:, :, 1],
                Quantity.SOCIALIZATION: self.alpha[:, :, 0],
                Quantity.VACCINATION: self.nu,
            },
        )

    def output_distributions(self) -> np.ndarray:
        """Distributions clamped to [0, 1] for reporting."""
        return np.clip(self.p, 0.0, 1.0)

    def diagnostics_summary(self) -> dict[str, Any]:
        """Convergence information for manifests and logs."""
        res_p, res_u = self.final_residual
        return {
            "scenario": self.scenario_name,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_p": res_p,
            "residual_u": res_u,
            "epsilon": self.epsilon,
            "clip_events": self.clip_events,
            "patches": self.patches,
            "failed_patch": self.failed_patch,
            **self.diagnostics,
        }
