"""Horizon calibration against a target infection disparity."""

import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Any

from scipy.optimize import minimize_scalar

from ..core.exceptions import ModelInputError
from ..models.reports import Quantity
from ..models.scenario import Scenario
from .metrics import group_disparity
from .solver import solve

logger = logging.getLogger(__name__)

DEFAULT_TARGET = 0.03859
DEFAULT_PAIR = ("LI", "HF")


@dataclass
class CalibrationResult:
    """Best-fit horizon and the disparity it produces."""

    scenario: str
    pair: tuple[str, str]
    target: float
    horizon: float
    disparity: float
    tolerance: float
    converged: bool
    evaluations: dict[float, float] = field(default_factory=dict)

    @property
    def error(self) -> float:
        """Absolute distance to the target."""
        return abs(self.disparity - self.target)

    @property
    def hit(self) -> bool:
        """Whether the target was reached within tolerance."""
        return self.error <= self.tolerance

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly form."""
        return {
            "scenario": self.scenario,
            "pair": list(self.pair),
            "target": self.target,
            "horizon": self.horizon,
            "disparity": self.disparity,
            "error": self.error,
            "tolerance": self.tolerance,
            "hit": self.hit,
            "solutions_converged": self.converged,
            "evaluations": {f"{t:g}": d for t, d in sorted(self.evaluations.items())},
        }


def calibrate_horizon(
    scenario: Scenario,
    target: float = DEFAULT_TARGET,
    bounds: tuple[float, float] = (60.0, 160.0),
    pair: tuple[str, str] = DEFAULT_PAIR,
    tolerance: float = 1e-3,
    max_evaluations: int = 20,
) -> CalibrationResult:
    """Find the horizon whose equilibrium matches a target infection disparity.

    Horizons are snapped to multiples of the scenario's dt; the bounded
    scalar minimiser works on ``|disparity(T) - target|``.

    Raises:
        ModelInputError: If the bounds are empty or shorter than one step.
    """
    lo, hi = bounds
    dt = scenario.grid.dt
    if not 0.0 < lo < hi or hi - lo < dt:
        raise ModelInputError(f"invalid horizon bounds {bounds}")
    for label in pair:
        scenario.group(label)

    evaluations: dict[float, float] = {}
    converged = True

    def disparity_at(horizon: float) -> float:
        nonlocal converged
        snapped = max(dt, round(horizon / dt) * dt)
        if snapped not in evaluations:
            solution = solve(scenario.with_solver(horizon=snapped))
            converged = converged and solution.converged
            evaluations[snapped] = group_disparity(solution, pair[0], pair[1], Quantity.INFECTED)
            logger.info(f"T={snapped:g}: disparity {evaluations[snapped]:.5f} (target {target:.5f})")
        return evaluations[snapped]

    result = minimize_scalar(
        lambda t: abs(disparity_at(t) - target),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": dt, "maxiter": max_evaluations},
    )
    best = min(evaluations, key=lambda t: abs(evaluations[t] - target))
    if not result.success:
        logger.warning(f"Horizon search stopped early: {result.message}")

    return CalibrationResult(
        scenario=scenario.name,
        pair=(pair[0], pair[1]),
        target=target,
        horizon=best,
        disparity=evaluations[best],
        tolerance=tolerance,
        converged=converged,
        evaluations=evaluations,
    )
