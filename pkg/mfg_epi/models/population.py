"""Pydantic models describing the population groups and their parameters."""

from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import field_validator
from pydantic import model_validator


class Compartment(str, Enum):
    """Infection state of an individual."""

    S = "S"
    I = "I"  # noqa: E741
    R = "R"
    D = "D"

    @property
    def position(self) -> int:
        """Position of the compartment in state arrays."""
        return _COMPARTMENT_ORDER.index(self)


_COMPARTMENT_ORDER = (Compartment.S, Compartment.I, Compartment.R, Compartment.D)

# Compartments in which an individual chooses a socialization level.
CONTROLLED = (Compartment.S, Compartment.I, Compartment.R)


class CompartmentSet(str, Enum):
    """Model variant: SIR or SIRD."""

    SIR = "SIR"
    SIRD = "SIRD"

    @property
    def compartments(self) -> tuple[Compartment, ...]:
        """Compartments present in this variant, in array order."""
        if self is CompartmentSet.SIRD:
            return _COMPARTMENT_ORDER
        return _COMPARTMENT_ORDER[:3]


class AuthorityKind(str, Enum):
    """Perception of authority of a group."""

    FOLLOWER = "follower"
    INDIFFERENT = "indifferent"


class GroupId(BaseModel):
    """Index and label of a population group."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    index: int = Field(..., ge=0, description="Position k of the group")
    label: str = Field(..., min_length=1, description="Group label such as LF")


class EpidemicParams(BaseModel):
    """Transition rates of a group."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    beta: float = Field(..., ge=0.0, description="Base transmission rate")
    gamma: float = Field(..., gt=0.0, description="Recovery rate")
    eta: float = Field(..., ge=0.0, description="Waning immunity rate")
    kappa: float = Field(..., ge=0.0, description="Vaccination efficacy")
    rho: float = Field(default=0.0, ge=0.0, le=1.0, description="Mortality share")


class CostParams(BaseModel):
    """Cost weights of a group."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    c_lambda: float = Field(..., gt=0.0, description="Weight of socialization deviation")
    c_nu: float = Field(..., gt=0.0, description="Weight of vaccination effort")
    c_infected: float = Field(..., ge=0.0, description="Cost rate of being infected")
    xi_infected: float | None = Field(
        default=None,
        ge=0.0,
        le=1.0,
        description="Intrinsic socialization when infected (indifferents only)",
    )
    death_cost: float = Field(default=0.0, ge=0.0, description="Terminal cost in D")


class GroupSpec(BaseModel):
    """One homogeneous population group."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: GroupId
    kind: AuthorityKind
    proportion: float = Field(..., gt=0.0, le=1.0, description="Group mass m^k")
    epi: EpidemicParams
    cost: CostParams

    @model_validator(mode="after")
    def check_intrinsic_level(self) -> "GroupSpec":
        """Indifferent groups carry xi_infected, followers must not."""
        has_xi = self.cost.xi_infected is not None
        if self.kind is AuthorityKind.INDIFFERENT and not has_xi:
            raise ValueError(
                f"group {self.id.label}: xi_infected is required for indifferent groups"
            )
        if self.kind is AuthorityKind.FOLLOWER and has_xi:
            raise ValueError(
                f"group {self.id.label}: xi_infected is only defined for indifferent groups"
            )
        return self

    @property
    def label(self) -> str:
        """Shortcut to the group label."""
        return self.id.label

    @property
    def is_follower(self) -> bool:
        """Whether the group anchors on the published guideline."""
        return self.kind is AuthorityKind.FOLLOWER


class ContactMatrix(BaseModel):
    """Connection strengths w(k, l) between groups."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    w: list[list[float]]

    @field_validator("w")
    @classmethod
    def validate_entries(cls, v: list[list[float]]) -> list[list[float]]:
        """Validate shape and range of the matrix."""
        if not v:
            raise ValueError("contact matrix must have at least one row")
        size = len(v)
        for row in v:
            if len(row) != size:
                raise ValueError("contact matrix must be square")
            for entry in row:
                if not 0.0 <= entry <= 1.0:
                    raise ValueError("contact matrix entries must be in [0, 1]")
        return v

    @property
    def size(self) -> int:
        """Number of groups the matrix covers."""
        return len(self.w)

    def as_array(self) -> np.ndarray:
        """Return the matrix as a float array."""
        return np.asarray(self.w, dtype=float)

    @classmethod
    def from_array(cls, array: Any) -> "ContactMatrix":
        """Build a contact matrix from any 2-D array-like."""
        return cls(w=np.asarray(array, dtype=float).tolist())
