"""Public health guideline schedules lambda_t^{k,e}."""

from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import field_validator
from pydantic import model_validator

from .population import CONTROLLED
from .population import Compartment


class PolicyRule(BaseModel):
    """Piecewise-constant guideline for a subset of groups and compartments.

    ``breakpoints`` is a list of ``(start_time, level)`` pairs; each level holds
    from its start time until the next breakpoint. ``None`` for ``groups`` or
    ``compartments`` means "all".
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    groups: list[str] | None = Field(default=None, description="Group labels")
    compartments: list[Compartment] | None = Field(default=None)
    breakpoints: list[tuple[float, float]] = Field(..., min_length=1)

    @field_validator("compartments")
    @classmethod
    def validate_compartments(
        cls, v: list[Compartment] | None
    ) -> list[Compartment] | None:
        """Guidelines only exist for S, I and R."""
        if v is not None and Compartment.D in v:
            raise ValueError("deceased individuals have no guideline")
        return v

    @field_validator("breakpoints")
    @classmethod
    def validate_breakpoints(
        cls, v: list[tuple[float, float]]
    ) -> list[tuple[float, float]]:
        """Breakpoints start at t=0 and are strictly increasing in time."""
        if v[0][0] != 0.0:
            raise ValueError("first breakpoint must start at t=0")
        starts = [start for start, _ in v]
        if any(b <= a for a, b in zip(starts, starts[1:], strict=False)):
            raise ValueError("breakpoint times must be strictly increasing")
        return v

    def applies_to(self, label: str, compartment: Compartment) -> bool:
        """Whether this rule covers the (group, compartment) pair."""
        group_ok = self.groups is None or label in self.groups
        comp_ok = self.compartments is None or compartment in self.compartments
        return group_ok and comp_ok

    def level(self, t: float) -> float:
        """Level in force at time ``t``."""
        value = self.breakpoints[0][1]
        for start, level in self.breakpoints:
            if t + 1e-12 >= start:
                value = level
            else:
                break
        return value

    def sample(self, times: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`level` over an array of times."""
        starts = np.array([start for start, _ in self.breakpoints])
        levels = np.array([level for _, level in self.breakpoints])
        idx = np.searchsorted(starts, np.asarray(times) + 1e-12, side="right") - 1
        return levels[np.clip(idx, 0, len(levels) - 1)]


class PolicySchedule(BaseModel):
    """Time- and state-dependent guideline lambda_t^{k,e}.

    The ``default`` level applies everywhere; later rules override earlier ones.
    Continuity in time is not required: piecewise-constant schedules are
    accepted.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_bar: float = Field(default=1.0, gt=0.0, description="Upper bound")
    default: float = Field(default=0.9, ge=0.0)
    rules: list[PolicyRule] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_bounds(self) -> "PolicySchedule":
        """All levels must lie in [0, lambda_bar]."""
        levels = [self.default]
        for rule in self.rules:
            levels.extend(level for _, level in rule.breakpoints)
        for level in levels:
            if not 0.0 <= level <= self.lambda_bar:
                raise ValueError(
                    f"policy level {level} outside [0, {self.lambda_bar}]"
                )
        return self

    @classmethod
    def constant(cls, level: float, lambda_bar: float = 1.0) -> "PolicySchedule":
        """Same level for every group, state and time."""
        return cls(lambda_bar=lambda_bar, default=level)

    def level(self, t: float, label: str, compartment: Compartment) -> float:
        """Guideline level for group ``label`` in ``compartment`` at time ``t``."""
        if compartment not in CONTROLLED:
            raise ValueError("deceased individuals have no guideline")
        value = self.default
        for rule in self.rules:
            if rule.applies_to(label, compartment):
                value = rule.level(t)
        return value

    def sample(self, times: Sequence[float] | np.ndarray, labels: Sequence[str]) -> np.ndarray:
        """Guideline levels on a time grid.

        Returns:
            Array of shape ``[len(times), len(labels), 3]`` over (S, I, R).
        """
        times = np.asarray(times, dtype=float)
        out = np.full((times.size, len(labels), len(CONTROLLED)), self.default)
        for rule in self.rules:
            values = rule.sample(times)
            for k, label in enumerate(labels):
                for e, compartment in enumerate(CONTROLLED):
                    if rule.applies_to(label, compartment):
                        out[:, k, e] = values
        return out

    def is_constant(self) -> bool:
        """Whether all rules are single-segment."""
        return all(len(rule.breakpoints) == 1 for rule in self.rules)
