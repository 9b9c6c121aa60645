"""SVG line plots of solved trajectories.

Figures use the Agg backend and a fixed SVG hash salt with no date stamp, so
identical inputs produce identical files.
"""

import logging
from collections.abc import Mapping
from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..models.results import EquilibriumSolution  # noqa: E402
from ..models.scenario import Scenario  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "mfg-epi"
plt.rcParams["svg.fonttype"] = "path"

FOLLOWER_STYLE = "-"
INDIFFERENT_STYLE = ":"
TREATMENT_STYLE = "--"

_TITLES = {
    "p_S": "Susceptible proportion",
    "p_I": "Infected proportion",
    "p_R": "Recovered proportion",
    "p_D": "Deceased proportion",
    "alpha_S": "Socialization of susceptibles",
    "nu": "Vaccination level",
}


def series_names(solution: EquilibriumSolution) -> list[str]:
    """Plotted quantities of a solution, in file order."""
    states = [f"p_{c.value}" for c in solution.variant.compartments]
    return [*states, "alpha_S", "nu"]


def series(solution: EquilibriumSolution, name: str) -> np.ndarray:
    """``[n+1, K]`` values of one plotted quantity."""
    if name == "alpha_S":
        return np.asarray(solution.alpha)[:, :, 0]
    if name == "nu":
        return np.asarray(solution.nu)
    positions = {"p_S": 0, "p_I": 1, "p_R": 2, "p_D": 3}
    return solution.output_distributions()[:, :, positions[name]]


def _colors(labels: Sequence[str]) -> dict[str, tuple[float, ...]]:
    cmap = plt.get_cmap("tab10")
    return {label: cmap(i % 10) for i, label in enumerate(labels)}


def _save(fig: plt.Figure, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug(f"Wrote figure {path}")
    return path


def plot_solution(solution: EquilibriumSolution, scenario: Scenario, out_dir: str | Path) -> list[Path]:
    """One figure per quantity with a line per group.

    Followers are drawn solid, indifferents dotted.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    colors = _colors(solution.labels)
    followers = {g.label for g in scenario.groups if g.is_follower}
    paths = []
    for name in series_names(solution):
        values = series(solution, name)
        fig, ax = plt.subplots(figsize=(6, 4))
        for k, label in enumerate(solution.labels):
            style = FOLLOWER_STYLE if label in followers else INDIFFERENT_STYLE
            ax.plot(solution.times, values[:, k], linestyle=style, color=colors[label], label=label)
        ax.set_title(f"{_TITLES[name]} ({solution.scenario_name})")
        ax.set_xlabel("time")
        ax.grid(alpha=0.3)
        ax.legend(ncol=2, fontsize="small")
        paths.append(_save(fig, out / f"{name}.svg"))
    return paths


def plot_comparison(
    baseline: EquilibriumSolution,
    treatment: EquilibriumSolution,
    mapping: Sequence[tuple[str, str]],
    out_dir: str | Path,
) -> list[Path]:
    """Overlay of two solutions; baseline solid, treatment dashed.

    Mapped groups share a color.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    colors = _colors([a for a, _ in mapping])
    names = [n for n in series_names(baseline) if n in series_names(treatment)]
    paths = []
    for name in names:
        base_values = series(baseline, name)
        treat_values = series(treatment, name)
        fig, ax = plt.subplots(figsize=(6, 4))
        for a, b in mapping:
            color = colors[a]
            ax.plot(
                baseline.times,
                base_values[:, baseline.group_index(a)],
                linestyle=FOLLOWER_STYLE,
                color=color,
                label=f"{a} ({baseline.scenario_name})",
            )
            ax.plot(
                treatment.times,
                treat_values[:, treatment.group_index(b)],
                linestyle=TREATMENT_STYLE,
                color=color,
                label=f"{b} ({treatment.scenario_name})",
            )
        ax.set_title(f"{_TITLES[name]}: {baseline.scenario_name} vs {treatment.scenario_name}")
        ax.set_xlabel("time")
        ax.grid(alpha=0.3)
        ax.legend(ncol=2, fontsize="x-small")
        paths.append(_save(fig, out / f"compare_{name}.svg"))
    return paths


def plot_peaks(
    peaks: Mapping[str, Mapping[str, Mapping[str, float]]],
    out_dir: str | Path,
    filename: str = "peaks.svg",
) -> Path:
    """Peak time against peak value of infection, one marker per scenario.

    ``peaks`` maps scenario name to ``{group: {"time": t, "value": v}}``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    markers = ("o", "s", "^", "D", "v", "P", "X")
    labels = sorted({g for groups in peaks.values() for g in groups})
    colors = _colors(labels)
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, (scenario, groups) in enumerate(peaks.items()):
        for label, peak in groups.items():
            ax.scatter(
                peak["time"],
                peak["value"],
                marker=markers[i % len(markers)],
                color=colors[label],
                label=f"{label} ({scenario})",
            )
    ax.set_xlabel("peak time")
    ax.set_ylabel("peak infected proportion")
    ax.grid(alpha=0.3)
    ax.legend(ncol=3, fontsize="xx-small")
    return _save(fig, out / filename)
