"""Pydantic models for time grids, solver settings and scenarios."""

from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import model_validator

from .policy import PolicySchedule
from .population import Compartment
from .population import CompartmentSet
from .population import ContactMatrix
from .population import GroupSpec
from .reports import Quantity

PROPORTION_TOLERANCE = 1e-12
SIMPLEX_TOLERANCE = 1e-9


class Integrator(str, Enum):
    """Time stepping scheme for both sweeps."""

    EULER = "euler"
    RK4 = "rk4"


class Coupling(str, Enum):
    """How the forward sweep obtains the aggregate Z.

    ``gauss_seidel`` recomputes Z from the distribution being integrated;
    ``jacobi`` freezes Z at the previous iterate.
    """

    GAUSS_SEIDEL = "gauss_seidel"
    JACOBI = "jacobi"


class TimeGrid(BaseModel):
    """Uniform grid on [0, T]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    horizon: float = Field(default=100.0, gt=0.0, description="Horizon T")
    dt: float = Field(default=0.1, gt=0.0, description="Step size")

    @model_validator(mode="after")
    def check_divisible(self) -> "TimeGrid":
        """T must be an integer multiple of dt."""
        n = round(self.horizon / self.dt)
        if n < 1:
            raise ValueError("dt must not exceed the horizon")
        if abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(
                f"horizon {self.horizon} is not a multiple of dt {self.dt}"
            )
        return self

    @property
    def n_steps(self) -> int:
        """Number of steps; there are ``n_steps + 1`` nodes."""
        return round(self.horizon / self.dt)

    @property
    def times(self) -> np.ndarray:
        """Node times ``index * dt``."""
        return np.arange(self.n_steps + 1) * self.dt


class SolverConfig(BaseModel):
    """Settings of the damped fixed-point iteration."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    grid: TimeGrid = Field(default_factory=TimeGrid)
    epsilon: float = Field(default=1e-6, gt=0.0)
    max_iters: int = Field(default=500, ge=1)
    damping: float = Field(default=0.5, gt=0.0, le=1.0)
    integrator: Integrator = Integrator.EULER
    coupling: Coupling = Coupling.GAUSS_SEIDEL
    patch_length: float | None = Field(default=None, gt=0.0)
    vaccination_cap: float = Field(default=10.0, gt=0.0, description="Cap V on nu")

    @model_validator(mode="after")
    def check_patch(self) -> "SolverConfig":
        """A patch cannot be shorter than one step or longer than the horizon."""
        if self.patch_length is not None:
            if self.patch_length > self.grid.horizon + 1e-12:
                raise ValueError("patch_length must not exceed the horizon")
            if self.patch_length < self.grid.dt - 1e-12:
                raise ValueError("patch_length must be at least one time step")
        return self

    @property
    def patch_steps(self) -> int | None:
        """Steps per patch, or None when patching is off."""
        if self.patch_length is None:
            return None
        return max(1, round(self.patch_length / self.grid.dt))


class Scenario(BaseModel):
    """Complete input of one equilibrium computation."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(..., min_length=1)
    description: str = ""
    variant: CompartmentSet = CompartmentSet.SIR
    groups: list[GroupSpec] = Field(..., min_length=1)
    contacts: ContactMatrix
    policy: PolicySchedule = Field(default_factory=PolicySchedule)
    initial: dict[str, dict[Compartment, float]]
    grid: TimeGrid = Field(default_factory=TimeGrid)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    source_proportions: dict[str, float] | None = Field(
        default=None, description="Group shares before renormalisation"
    )

    @model_validator(mode="before")
    @classmethod
    def share_grid(cls, data: Any) -> Any:
        """Let the solver section inherit the scenario grid."""
        if isinstance(data, dict) and "grid" not in data:
            solver = data.get("solver")
            if isinstance(solver, SolverConfig):
                data = {**data, "grid": solver.grid}
            elif isinstance(solver, dict) and "grid" in solver:
                data = {**data, "grid": solver["grid"]}
        if isinstance(data, dict) and "grid" in data:
            solver = data.get("solver")
            if solver is None:
                data = {**data, "solver": {"grid": data["grid"]}}
            elif isinstance(solver, dict) and "grid" not in solver:
                data = {**data, "solver": {**solver, "grid": data["grid"]}}
        return data

    @model_validator(mode="after")
    def check_consistency(self) -> "Scenario":
        """Cross-field invariants of the population."""
        labels = [g.label for g in self.groups]
        if len(set(labels)) != len(labels):
            raise ValueError("group labels must be unique")
        for k, group in enumerate(self.groups):
            if group.id.index != k:
                raise ValueError(
                    f"group {group.label} has index {group.id.index}, expected {k}"
                )
        total = sum(g.proportion for g in self.groups)
        if abs(total - 1.0) > PROPORTION_TOLERANCE:
            raise ValueError(f"group proportion values must sum to 1 (got {total:.12g})")
        if self.contacts.size != len(self.groups):
            raise ValueError(
                f"contact matrix is {self.contacts.size}x{self.contacts.size} "
                f"but there are {len(self.groups)} groups"
            )
        if self.solver.grid != self.grid:
            raise ValueError("solver grid differs from scenario grid")
        if self.variant is CompartmentSet.SIR:
            for g in self.groups:
                if g.epi.rho != 0.0 or g.cost.death_cost != 0.0:
                    raise ValueError(
                        f"group {g.label}: rho and death_cost require variant SIRD"
                    )
        self._check_initial(labels)
        return self

    def _check_initial(self, labels: list[str]) -> None:
        if set(self.initial) != set(labels):
            raise ValueError("initial distribution must list every group exactly once")
        for label, dist in self.initial.items():
            if any(v < 0.0 for v in dist.values()):
                raise ValueError(f"initial distribution of {label} has negative mass")
            if abs(sum(dist.values()) - 1.0) > SIMPLEX_TOLERANCE:
                raise ValueError(f"initial distribution of {label} must sum to 1")
            if self.variant is CompartmentSet.SIR and dist.get(Compartment.D, 0.0) > 0:
                raise ValueError(f"initial distribution of {label} has D mass in SIR")

    @property
    def labels(self) -> list[str]:
        """Group labels in index order."""
        return [g.label for g in self.groups]

    @property
    def n_groups(self) -> int:
        """Number of groups K."""
        return len(self.groups)

    def group(self, label: str) -> GroupSpec:
        """Look up a group by label."""
        for g in self.groups:
            if g.label == label:
                return g
        from ..core.exceptions import UnknownGroupError

        raise UnknownGroupError(label, self.labels)

    def initial_array(self) -> np.ndarray:
        """Initial distribution as a ``[K, 4]`` array over (S, I, R, D)."""
        out = np.zeros((self.n_groups, 4))
        for k, label in enumerate(self.labels):
            for compartment, value in self.initial[label].items():
                out[k, compartment.position] = value
        return out

    def with_solver(self, **overrides: Any) -> "Scenario":
        """Copy with solver and grid overrides applied and re-validated.

        Accepts any :class:`SolverConfig` field plus ``horizon`` and ``dt``.
        """
        grid = self.grid.model_dump()
        for key in ("horizon", "dt"):
            if overrides.get(key) is not None:
                grid[key] = overrides.pop(key)
        solver = self.solver.model_dump()
        solver.update({k: v for k, v in overrides.items() if v is not None})
        solver["grid"] = grid
        data = self.model_dump()
        data.update(grid=grid, solver=solver)
        return Scenario.model_validate(data)

    def derive(self, name: str, **updates: Any) -> "Scenario":
        """Copy with top-level fields replaced and re-validated."""
        data = self.model_dump()
        data.update(updates)
        data["name"] = name
        return Scenario.model_validate(data)


class ScenarioPair(BaseModel):
    """Two scenarios compared side by side."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    description: str = ""
    baseline: Scenario
    treatment: Scenario
    comparison_quantities: list[Quantity] = Field(
        default_factory=lambda: list(Quantity)
    )
    group_mapping: dict[str, str] | None = Field(
        default=None,
        description="Baseline label to treatment label; None means identical labels",
    )

    @model_validator(mode="after")
    def check_grids(self) -> "ScenarioPair":
        """Both members must share the same grid and mappable groups."""
        if self.baseline.grid != self.treatment.grid:
            raise ValueError("pair members must use identical grids")
        for a, b in self.mapped_groups():
            if a not in self.baseline.labels or b not in self.treatment.labels:
                raise ValueError(f"group mapping {a} -> {b} does not match the members")
        return self

    def mapped_groups(self) -> list[tuple[str, str]]:
        """(baseline label, treatment label) pairs that are compared."""
        if self.group_mapping is not None:
            return list(self.group_mapping.items())
        return [(label, label) for label in self.baseline.labels]

    def with_solver(self, **overrides: Any) -> "ScenarioPair":
        """Apply the same solver overrides to both members."""
        return self.model_copy(
            update={
                "baseline": self.baseline.with_solver(**overrides),
                "treatment": self.treatment.with_solver(**overrides),
            }
        )


class ScenarioSuite(BaseModel):
    """Several scenarios compared jointly against a reference member."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    description: str = ""
    reference: str = Field(..., description="Name of the reference member")
    members: list[Scenario] = Field(..., min_length=2)

    @model_validator(mode="after")
    def check_members(self) -> "ScenarioSuite":
        """Members share a grid and the reference is one of them."""
        if self.reference not in [m.name for m in self.members]:
            raise ValueError(f"reference {self.reference} is not a member")
        grids = {m.grid for m in self.members}
        if len(grids) != 1:
            raise ValueError("suite members must use identical grids")
        return self

    def with_solver(self, **overrides: Any) -> "ScenarioSuite":
        """Apply the same solver overrides to every member."""
        return self.model_copy(
            update={"members": [m.with_solver(**overrides) for m in self.members]}
        )
