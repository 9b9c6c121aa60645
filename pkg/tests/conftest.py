"""Global pytest configuration and fixtures."""

import logging
import tempfile
from collections.abc import Callable
from functools import lru_cache
from pathlib import Path
from typing import Any

import pytest

from mfg_epi.models.policy import PolicySchedule
from mfg_epi.models.population import AuthorityKind
from mfg_epi.models.population import Compartment
from mfg_epi.models.population import CompartmentSet
from mfg_epi.models.population import ContactMatrix
from mfg_epi.models.population import CostParams
from mfg_epi.models.population import EpidemicParams
from mfg_epi.models.population import GroupId
from mfg_epi.models.population import GroupSpec
from mfg_epi.models.results import EquilibriumSolution
from mfg_epi.models.scenario import Scenario
from mfg_epi.models.scenario import SolverConfig
from mfg_epi.models.scenario import TimeGrid

SMALL_SCENARIO_YAML = """\
name: two-groups
description: Follower and indifferent group on a short horizon
variant: SIR
groups:
  - label: A
    kind: follower
    proportion: 0.6
    epi: {beta: 0.4, gamma: 0.143, eta: 0.004, kappa: 0.03}
    cost: {c_lambda: 1.0, c_nu: 1.4, c_infected: 1.05}
  - label: B
    kind: indifferent
    proportion: 0.4
    epi: {beta: 0.35, gamma: 0.143, eta: 0.004, kappa: 0.03}
    cost: {c_lambda: 1.0, c_nu: 1.0, c_infected: 0.8, xi_infected: 0.97}
contacts:
  - [1.0, 0.95]
  - [0.95, 1.0]
policy:
  default: 0.9
initial:
  A: {S: 0.95, I: 0.05}
  B: {S: 0.95, I: 0.05}
grid:
  horizon: 10.0
  dt: 0.1
"""


def make_group(
    label: str = "A",
    index: int = 0,
    kind: AuthorityKind = AuthorityKind.FOLLOWER,
    proportion: float = 1.0,
    beta: float = 0.4,
    gamma: float = 0.143,
    eta: float = 0.004,
    kappa: float = 0.03,
    rho: float = 0.0,
    c_lambda: float = 1.0,
    c_nu: float = 1.4,
    c_infected: float = 1.05,
    xi_infected: float | None = None,
    death_cost: float = 0.0,
) -> GroupSpec:
    """Group spec with the low-income follower parameters."""
    if kind is AuthorityKind.INDIFFERENT and xi_infected is None:
        xi_infected = 0.97
    return GroupSpec(
        id=GroupId(index=index, label=label),
        kind=kind,
        proportion=proportion,
        epi=EpidemicParams(beta=beta, gamma=gamma, eta=eta, kappa=kappa, rho=rho),
        cost=CostParams(
            c_lambda=c_lambda,
            c_nu=c_nu,
            c_infected=c_infected,
            xi_infected=xi_infected,
            death_cost=death_cost,
        ),
    )


def make_scenario(
    groups: list[GroupSpec] | None = None,
    contacts: list[list[float]] | None = None,
    policy: PolicySchedule | None = None,
    infected: float = 0.05,
    initial: dict[str, dict[Compartment, float]] | None = None,
    horizon: float = 10.0,
    dt: float = 0.1,
    variant: CompartmentSet = CompartmentSet.SIR,
    name: str = "synthetic",
    **solver: Any,
) -> Scenario:
    """Scenario around ``groups`` (one default follower group if omitted)."""
    groups = groups or [make_group()]
    k = len(groups)
    if contacts is None:
        contacts = [[1.0 if a == b else 0.95 for b in range(k)] for a in range(k)]
    if initial is None:
        initial = {g.label: {Compartment.S: 1.0 - infected, Compartment.I: infected} for g in groups}
    grid = TimeGrid(horizon=horizon, dt=dt)
    return Scenario(
        name=name,
        variant=variant,
        groups=groups,
        contacts=ContactMatrix(w=contacts),
        policy=policy or PolicySchedule.constant(0.9),
        initial=initial,
        grid=grid,
        solver=SolverConfig(grid=grid, **solver),
    )


def two_group_scenario(**overrides: Any) -> Scenario:
    """Follower group A and indifferent group B."""
    groups = [
        make_group("A", 0, proportion=0.6),
        make_group(
            "B",
            1,
            kind=AuthorityKind.INDIFFERENT,
            proportion=0.4,
            beta=0.35,
            c_nu=1.0,
            c_infected=0.8,
        ),
    ]
    return make_scenario(groups=groups, name="two-groups", **overrides)


@lru_cache(maxsize=None)
def _solve_cached(key: str) -> EquilibriumSolution:
    from mfg_epi.services.scenario_catalog import builtin
    from mfg_epi.services.solver import solve

    return solve(builtin(key))


@pytest.fixture(scope="session")
def group_factory() -> Callable[..., GroupSpec]:
    """Builder for group specs."""
    return make_group


@pytest.fixture(scope="session")
def scenario_factory() -> Callable[..., Scenario]:
    """Builder for synthetic scenarios."""
    return make_scenario


@pytest.fixture(scope="session")
def small_scenario() -> Scenario:
    """Two groups, T=10, dt=0.1."""
    return two_group_scenario()


@pytest.fixture(scope="session")
def small_solution(small_scenario: Scenario) -> EquilibriumSolution:
    """Converged equilibrium of the two-group scenario."""
    from mfg_epi.services.solver import solve

    solution = solve(small_scenario)
    assert solution.converged
    return solution


@pytest.fixture(scope="session")
def solved_builtin() -> Callable[[str], EquilibriumSolution]:
    """Solve built-in scenarios once per session."""
    return _solve_cached


@pytest.fixture
def temp_dir():
    """Create and clean up temporary directory."""
    with tempfile.TemporaryDirectory() as tmp_dir:
        yield Path(tmp_dir)


@pytest.fixture
def scenario_file(temp_dir: Path) -> Path:
    """The two-group scenario as a YAML file."""
    path = temp_dir / "two-groups.yaml"
    path.write_text(SMALL_SCENARIO_YAML, encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def _restore_root_logging():
    """Undo handler changes made by setup_logging during a test."""
    root = logging.getLogger()
    handlers = root.handlers[:]
    level = root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture(scope="session")
def two_group_factory() -> Callable[..., Scenario]:
    """Builder for the two-group scenario with solver or grid overrides."""
    return two_group_scenario
