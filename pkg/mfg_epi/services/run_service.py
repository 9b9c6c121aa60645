"""Orchestration of the CLI commands: resolve, solve, measure and write."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from datetime import datetime
from pathlib import Path
from typing import Any

from ..core.config import Settings
from ..core.exceptions import NonConvergenceError
from ..core.exceptions import ScenarioError
from ..core.exceptions import ValidationFailedError
from ..models.reports import Quantity
from ..models.results import EquilibriumSolution
from ..models.scenario import Scenario
from ..models.scenario import ScenarioPair
from ..models.scenario import ScenarioSuite
from ..utils.plotting import plot_comparison
from ..utils.plotting import plot_peaks
from ..utils.plotting import plot_solution
from ..utils.scenario_loader import load_scenario
from ..utils.scenario_loader import scenario_to_file_data
from ..utils.trajectory_writer import ArtifactWriter
from .calibration import calibrate_horizon
from .metrics import compare_solutions
from .metrics import peak_summary
from .metrics import peak_time_span
from .metrics import solution_metrics
from .scenario_catalog import CatalogEntry
from .scenario_catalog import builtin
from .solver import solve
from .validator import perturb_controls
from .validator import validate_solution

logger = logging.getLogger(__name__)

DISPARITY_PAIR = ("LI", "HF")


@dataclass
class RunOutcome:
    """What a command produced."""

    command: str
    out_dir: Path
    files: list[Path] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)


def _check_converged(solutions: list[EquilibriumSolution], allow_nonconverged: bool) -> None:
    for solution in solutions:
        if solution.converged:
            continue
        if allow_nonconverged:
            logger.warning(f"{solution.scenario_name}: keeping non-converged solution")
            continue
        res_p, res_u = solution.final_residual
        raise NonConvergenceError(solution.iterations, max(res_p, res_u), solution.failed_patch)


class RunService:
    """Service class behind every CLI command."""

    def __init__(self, settings: Settings):
        """Initialize the service with settings."""
        self.settings = settings

    def resolve(self, ref: str) -> CatalogEntry:
        """Catalog name or path to a scenario file."""
        path = Path(ref)
        if path.suffix.lower() in (".yaml", ".yml") or path.is_file():
            return load_scenario(path)
        return builtin(ref)

    def _resolve_as(self, ref: str, kind: type, command: str, overrides: dict[str, Any]) -> Any:
        entry = self.resolve(ref)
        if not isinstance(entry, kind):
            raise ScenarioError(
                f"'{ref}' is a {type(entry).__name__}; {command} expects a {kind.__name__}"
            )
        clean = {k: v for k, v in overrides.items() if v is not None}
        return entry.with_solver(**clean) if clean else entry

    def _out_dir(self, out_dir: str | Path | None, name: str) -> Path:
        return Path(out_dir) if out_dir else Path(self.settings.output_dir) / name

    def _solve_many(self, scenarios: list[Scenario]) -> list[EquilibriumSolution]:
        workers = self.settings.worker_count(len(scenarios))
        logger.debug(f"Solving {len(scenarios)} scenario(s) on {workers} thread(s)")
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve, scenarios))

    def run(
        self,
        ref: str,
        overrides: dict[str, Any],
        out_dir: str | Path | None = None,
        allow_nonconverged: bool = False,
    ) -> RunOutcome:
        """Solve one scenario; write trajectories, metrics, plots and manifest."""
        started = datetime.now()
        scenario: Scenario = self._resolve_as(ref, Scenario, "run", overrides)
        solution = solve(scenario)

        writer = ArtifactWriter(self._out_dir(out_dir, scenario.name), self.settings.csv_significant_digits)
        writer.write_trajectories(solution)
        metrics = solution_metrics(solution, DISPARITY_PAIR)
        metrics["diagnostics"] = solution.diagnostics_summary()
        writer.write_json(metrics, "metrics.json")
        figures = plot_solution(solution, scenario, writer.out_dir)
        writer.write_manifest(
            "run", ref, [scenario.name], scenario_to_file_data(scenario), started, solution.diagnostics_summary()
        )
        _check_converged([solution], allow_nonconverged)
        return RunOutcome("run", writer.out_dir, writer.written + figures, metrics["diagnostics"])

    def compare(
        self,
        ref: str,
        overrides: dict[str, Any],
        out_dir: str | Path | None = None,
        allow_nonconverged: bool = False,
    ) -> RunOutcome:
        """Solve both members of a pair concurrently and compare them."""
        started = datetime.now()
        pair: ScenarioPair = self._resolve_as(ref, ScenarioPair, "compare", overrides)
        baseline, treatment = self._solve_many([pair.baseline, pair.treatment])

        writer = ArtifactWriter(self._out_dir(out_dir, pair.name), self.settings.csv_significant_digits)
        writer.write_trajectories(baseline, "trajectories_baseline.csv")
        writer.write_trajectories(treatment, "trajectories_treatment.csv")
        comparison = compare_solutions(
            baseline, treatment, pair.mapped_groups(), pair.comparison_quantities, DISPARITY_PAIR
        )
        comparison["pair"] = pair.name
        comparison["diagnostics"] = {
            "baseline": baseline.diagnostics_summary(),
            "treatment": treatment.diagnostics_summary(),
        }
        writer.write_json(comparison, "comparison.json")
        figures = plot_comparison(baseline, treatment, pair.mapped_groups(), writer.out_dir)
        resolved = {
            "members": {
                "baseline": scenario_to_file_data(pair.baseline),
                "treatment": scenario_to_file_data(pair.treatment),
            },
            "group_mapping": dict(pair.mapped_groups()),
        }
        writer.write_manifest(
            "compare",
            ref,
            [pair.baseline.name, pair.treatment.name],
            resolved,
            started,
            comparison["diagnostics"],
        )
        _check_converged([baseline, treatment], allow_nonconverged)
        return RunOutcome("compare", writer.out_dir, writer.written + figures, comparison["diagnostics"])

    def validate(
        self,
        ref: str,
        overrides: dict[str, Any],
        out_dir: str | Path | None = None,
        n_agents: int | None = None,
        n_replicas: int = 1,
        seed: int = 0,
        allow_nonconverged: bool = False,
        inject_perturbation: float | None = None,
    ) -> RunOutcome:
        """Solve and run every equilibrium check.

        Raises:
            ValidationFailedError: After writing the report, if any check fails.
        """
        started = datetime.now()
        scenario: Scenario = self._resolve_as(ref, Scenario, "validate", overrides)
        solution = solve(scenario)
        _check_converged([solution], allow_nonconverged)
        if inject_perturbation:
            logger.warning(f"Injecting a control perturbation of {inject_perturbation:+g} into alpha(S)")
            solution = perturb_controls(solution, inject_perturbation)

        report, sim = validate_solution(solution, scenario, n_agents, n_replicas, seed)
        writer = ArtifactWriter(self._out_dir(out_dir, scenario.name), self.settings.csv_significant_digits)
        payload = {**report.model_dump(mode="json"), "passed": report.passed, "failed": report.failed}
        if sim is None:
            logger.info("No --agents given; finite-N simulation skipped")
            payload["finite_n"] = {"skipped": True}
        else:
            payload["finite_n"] = {"skipped": False, "n_agents": n_agents, "n_replicas": n_replicas, "seed": seed}
        writer.write_json(payload, "validation.json")
        if sim is not None:
            writer.write_sim(sim, solution)
        writer.write_manifest(
            "validate",
            ref,
            [scenario.name],
            scenario_to_file_data(scenario),
            started,
            solution.diagnostics_summary(),
            seed=seed if n_agents is not None else None,
        )
        if not report.passed:
            raise ValidationFailedError(report.failed)
        return RunOutcome("validate", writer.out_dir, writer.written, {"passed": True})

    def peaks(
        self,
        ref: str,
        overrides: dict[str, Any],
        out_dir: str | Path | None = None,
        allow_nonconverged: bool = False,
    ) -> RunOutcome:
        """Infection peak times and values across the members of a suite."""
        started = datetime.now()
        suite: ScenarioSuite = self._resolve_as(ref, ScenarioSuite, "peaks", overrides)
        solutions = self._solve_many(list(suite.members))
        by_name = {s.scenario_name: s for s in solutions}
        reference = by_name[suite.reference]

        peaks = {name: peak_summary(sol, Quantity.INFECTED) for name, sol in by_name.items()}
        shifts = {
            name: {
                label: {
                    "time": peaks[name][label]["time"] - peaks[suite.reference][label]["time"],
                    "value": peaks[name][label]["value"] - peaks[suite.reference][label]["value"],
                }
                for label in reference.labels
                if label in peaks[name]
            }
            for name in by_name
            if name != suite.reference
        }
        payload = {
            "suite": suite.name,
            "reference": suite.reference,
            "peaks": peaks,
            "peak_time_span": {name: peak_time_span(sol) for name, sol in by_name.items()},
            "shift_from_reference": shifts,
            "diagnostics": {name: sol.diagnostics_summary() for name, sol in by_name.items()},
        }

        writer = ArtifactWriter(self._out_dir(out_dir, suite.name), self.settings.csv_significant_digits)
        for name, sol in by_name.items():
            writer.write_trajectories(sol, f"trajectories_{name}.csv")
        writer.write_json(payload, "peaks.json")
        figure = plot_peaks(peaks, writer.out_dir)
        resolved = {"members": {m.name: scenario_to_file_data(m) for m in suite.members}, "reference": suite.reference}
        writer.write_manifest("peaks", ref, list(by_name), resolved, started, payload["diagnostics"])
        _check_converged(solutions, allow_nonconverged)
        return RunOutcome("peaks", writer.out_dir, [*writer.written, figure], payload["peak_time_span"])

    def calibrate(
        self,
        ref: str,
        overrides: dict[str, Any],
        out_dir: str | Path | None = None,
        target: float = 0.03859,
        bounds: tuple[float, float] = (60.0, 160.0),
        tolerance: float = 1e-3,
    ) -> RunOutcome:
        """Fit the horizon to a target LI-HF infection disparity."""
        started = datetime.now()
        scenario: Scenario = self._resolve_as(ref, Scenario, "calibrate", overrides)
        result = calibrate_horizon(scenario, target, bounds, DISPARITY_PAIR, tolerance)
        writer = ArtifactWriter(self._out_dir(out_dir, f"{scenario.name}-calibration"))
        writer.write_json(result.to_dict(), "calibration.json")
        writer.write_manifest(
            "calibrate", ref, [scenario.name], scenario_to_file_data(scenario), started, result.to_dict()
        )
        if not result.hit:
            logger.warning(
                f"Target {target:.5f} not reached: best T={result.horizon:g} gives {result.disparity:.5f}"
            )
        return RunOutcome("calibrate", writer.out_dir, writer.written, result.to_dict())
