"""Comparison metrics over solved trajectories.

"Peak" means maximum for infected proportions and vaccination levels and
minimum (trough) for socialization levels. Extremes are taken on the grid
with earliest-index tie-breaking; times are reported as ``index * dt``.
"""

from collections.abc import Iterable
from collections.abc import Sequence
from typing import Any

import numpy as np

from ..core.exceptions import GridMismatchError
from ..models.reports import MetricKind
from ..models.reports import MetricReport
from ..models.reports import Quantity
from ..models.results import EquilibriumSolution
from ..models.results import TrajectoryBundle

Trajectories = EquilibriumSolution | TrajectoryBundle


def _bundle(source: Trajectories) -> TrajectoryBundle:
    if isinstance(source, EquilibriumSolution):
        return source.to_bundle()
    return source


def quantity_series(solution: Trajectories, quantity: Quantity) -> np.ndarray:
    """All groups' series of one quantity, shape ``[n+1, K]``."""
    return np.asarray(_bundle(solution).series[quantity], dtype=float)


def peak_index(series: np.ndarray, quantity: Quantity) -> int:
    """Index of the first extreme of a 1-D series."""
    series = np.asarray(series, dtype=float)
    return int(np.argmin(series) if quantity.uses_trough else np.argmax(series))


def peak_value(series: np.ndarray, quantity: Quantity) -> float:
    """Extreme value of a 1-D series."""
    series = np.asarray(series, dtype=float)
    return float(np.min(series) if quantity.uses_trough else np.max(series))


def peak_difference(series_a: Sequence[float] | np.ndarray, series_b: Sequence[float] | np.ndarray, quantity: Quantity) -> float:
    """Absolute difference between the peaks of two series on the same grid.

    Raises:
        GridMismatchError: If the series have different lengths.
    """
    a = np.asarray(series_a, dtype=float)
    b = np.asarray(series_b, dtype=float)
    if a.shape != b.shape:
        raise GridMismatchError(a.shape[0], b.shape[0])
    return abs(peak_value(a, quantity) - peak_value(b, quantity))


def peak_time_span(
    solution: Trajectories,
    quantity: Quantity = Quantity.INFECTED,
    groups: Iterable[str | int] | None = None,
) -> float:
    """Latest minus earliest per-group peak time."""
    times = peak_times(solution, quantity, groups)
    if not times:
        return 0.0
    return max(times.values()) - min(times.values())


def peak_times(
    solution: Trajectories,
    quantity: Quantity = Quantity.INFECTED,
    groups: Iterable[str | int] | None = None,
) -> dict[str, float]:
    """Peak time of each group."""
    bundle = _bundle(solution)
    selected = list(bundle.labels) if groups is None else list(groups)
    out: dict[str, float] = {}
    for group in selected:
        idx = bundle.group_index(group)
        series = bundle.quantity(quantity, idx)
        out[bundle.labels[idx]] = float(bundle.times[peak_index(series, quantity)])
    return out


def group_disparity(solution: Trajectories, k: str | int, l: str | int, quantity: Quantity) -> float:  # noqa: E741
    """Signed maximum over time of ``x_k(t) - x_l(t)``.

    Raises:
        UnknownGroupError: If either group is not part of the solution.
    """
    bundle = _bundle(solution)
    diff = bundle.quantity(quantity, k) - bundle.quantity(quantity, l)
    return float(np.max(diff))


def peak_summary(solution: Trajectories, quantity: Quantity) -> dict[str, dict[str, float]]:
    """Per-group peak value and time."""
    bundle = _bundle(solution)
    summary = {}
    for idx, label in enumerate(bundle.labels):
        series = bundle.quantity(quantity, idx)
        i = peak_index(series, quantity)
        summary[label] = {"value": float(series[i]), "time": float(bundle.times[i])}
    return summary


def all_group_disparities(solution: Trajectories, quantity: Quantity) -> dict[str, float]:
    """Disparity for every ordered pair of distinct groups, keyed ``"k-l"``."""
    bundle = _bundle(solution)
    return {
        f"{a}-{b}": group_disparity(bundle, a, b, quantity)
        for a in bundle.labels
        for b in bundle.labels
        if a != b
    }


def largest_disparity(solution: Trajectories, quantity: Quantity) -> tuple[str, float] | None:
    """Ordered pair with the largest disparity, or ``None`` for a single group."""
    disparities = all_group_disparities(solution, quantity)
    if not disparities:
        return None
    pair = max(disparities, key=lambda key: disparities[key])
    return pair, disparities[pair]


def disparity_report(solution: Trajectories, k: str, l: str, quantity: Quantity) -> MetricReport:  # noqa: E741
    """Group disparity wrapped as a :class:`MetricReport`."""
    return MetricReport(
        metric=MetricKind.GROUP_DISPARITY,
        quantity=quantity,
        subjects=[k, l],
        value=group_disparity(solution, k, l, quantity),
    )


def span_report(solution: Trajectories, quantity: Quantity = Quantity.INFECTED) -> MetricReport:
    """Peak time span wrapped as a :class:`MetricReport`."""
    times = peak_times(solution, quantity)
    return MetricReport(
        metric=MetricKind.PEAK_TIME_SPAN,
        quantity=quantity,
        subjects=list(times),
        value=max(times.values()) - min(times.values()),
        peak_times=times,
    )


def solution_metrics(solution: EquilibriumSolution, disparity_pair: tuple[str, str] | None = None) -> dict[str, Any]:
    """Metric summary of a single solved scenario."""
    out: dict[str, Any] = {"scenario": solution.scenario_name, "quantities": {}}
    for quantity in Quantity:
        entry: dict[str, Any] = {
            "peaks": peak_summary(solution, quantity),
            "peak_time_span": peak_time_span(solution, quantity),
        }
        largest = largest_disparity(solution, quantity)
        if largest is not None:
            entry["largest_disparity"] = {"pair": largest[0], "value": largest[1]}
        if disparity_pair is not None and all(g in solution.labels for g in disparity_pair):
            entry["disparity"] = disparity_report(solution, *disparity_pair, quantity).model_dump(mode="json")
        out["quantities"][quantity.value] = entry
    if solution.variant.value == "SIRD":
        final = solution.output_distributions()[-1, :, 3]
        out["final_deceased"] = dict(zip(solution.labels, map(float, final), strict=True))
    return out


def compare_solutions(
    baseline: EquilibriumSolution,
    treatment: EquilibriumSolution,
    group_mapping: Sequence[tuple[str, str]],
    quantities: Iterable[Quantity] = tuple(Quantity),
    disparity_pair: tuple[str, str] | None = ("LI", "HF"),
) -> dict[str, Any]:
    """Peak differences per mapped group plus per-member spans and disparities."""
    result: dict[str, Any] = {
        "baseline": baseline.scenario_name,
        "treatment": treatment.scenario_name,
        "peak_difference": {},
        "largest_peak_difference": {},
        "smallest_peak_difference": {},
    }
    for quantity in quantities:
        diffs = {}
        for a, b in group_mapping:
            value = peak_difference(
                baseline.to_bundle().quantity(quantity, a),
                treatment.to_bundle().quantity(quantity, b),
                quantity,
            )
            diffs[a if a == b else f"{a}->{b}"] = value
        result["peak_difference"][quantity.value] = diffs
        if diffs:
            top = max(diffs, key=lambda key: diffs[key])
            low = min(diffs, key=lambda key: diffs[key])
            result["largest_peak_difference"][quantity.value] = {"group": top, "value": diffs[top]}
            result["smallest_peak_difference"][quantity.value] = {"group": low, "value": diffs[low]}

    result["members"] = {
        "baseline": solution_metrics(baseline, disparity_pair),
        "treatment": solution_metrics(treatment, disparity_pair),
    }
    result["peak_time_span"] = {
        "baseline": peak_time_span(baseline),
        "treatment": peak_time_span(treatment),
    }
    return result
