import numpy as np
import pytest
from pydantic import ValidationError

from mfg_epi.models.population import CONTROLLED
from mfg_epi.models.population import AuthorityKind
from mfg_epi.models.population import Compartment
from mfg_epi.models.population import CompartmentSet
from mfg_epi.models.population import ContactMatrix
from mfg_epi.models.population import CostParams
from mfg_epi.models.population import EpidemicParams
from mfg_epi.models.population import GroupId
from mfg_epi.models.population import GroupSpec


class TestCompartments:
    """Test compartment enums."""

    def test_positions(self):
        """Test array positions of the compartments."""
        assert [c.position for c in Compartment] == [0, 1, 2, 3]

    def test_variants(self):
        """Test compartments present per variant."""
        assert CompartmentSet.SIR.compartments == (Compartment.S, Compartment.I, Compartment.R)
        assert CompartmentSet.SIRD.compartments[-1] is Compartment.D
        assert Compartment.D not in CONTROLLED


class TestGroupSpec:
    """Test group validation."""

    def _group(self, kind: AuthorityKind, xi: float | None) -> GroupSpec:
        return GroupSpec(
            id=GroupId(index=0, label="LF"),
            kind=kind,
            proportion=0.5,
            epi=EpidemicParams(beta=0.4, gamma=0.143, eta=0.004, kappa=0.03),
            cost=CostParams(c_lambda=1.0, c_nu=1.4, c_infected=1.05, xi_infected=xi),
        )

    def test_follower(self):
        """Test a valid follower group."""
        group = self._group(AuthorityKind.FOLLOWER, None)

        assert group.label == "LF"
        assert group.is_follower
        assert group.epi.rho == 0.0
        assert group.cost.death_cost == 0.0

    def test_indifferent_requires_xi(self):
        """Test that indifferent groups need xi_infected."""
        with pytest.raises(ValidationError, match="xi_infected is required"):
            self._group(AuthorityKind.INDIFFERENT, None)

    def test_follower_rejects_xi(self):
        """Test that followers must not carry xi_infected."""
        with pytest.raises(ValidationError, match="only defined for indifferent"):
            self._group(AuthorityKind.FOLLOWER, 0.97)

    def test_parameter_ranges(self):
        """Test field bounds."""
        with pytest.raises(ValidationError):
            EpidemicParams(beta=-0.1, gamma=0.143, eta=0.0, kappa=0.0)
        with pytest.raises(ValidationError):
            EpidemicParams(beta=0.4, gamma=0.0, eta=0.0, kappa=0.0)
        with pytest.raises(ValidationError):
            EpidemicParams(beta=0.4, gamma=0.143, eta=0.0, kappa=0.0, rho=1.5)
        with pytest.raises(ValidationError):
            CostParams(c_lambda=0.0, c_nu=1.0, c_infected=1.0)

    def test_frozen(self):
        """Test that groups are immutable."""
        group = self._group(AuthorityKind.FOLLOWER, None)
        with pytest.raises(ValidationError):
            group.proportion = 0.3


class TestContactMatrix:
    """Test contact matrix validation."""

    def test_valid_matrix(self):
        """Test a valid matrix."""
        w = ContactMatrix(w=[[1.0, 0.95], [0.95, 1.0]])

        assert w.size == 2
        np.testing.assert_array_equal(w.as_array(), [[1.0, 0.95], [0.95, 1.0]])

    def test_from_array(self):
        """Test building from a numpy array."""
        w = ContactMatrix.from_array(np.eye(3))

        assert w.size == 3
        assert w.w[1][1] == 1.0

    def test_not_square(self):
        """Test that non-square matrices are rejected."""
        with pytest.raises(ValidationError, match="must be square"):
            ContactMatrix(w=[[1.0, 0.9], [0.9]])

    def test_entry_range(self):
        """Test that entries must lie in [0, 1]."""
        with pytest.raises(ValidationError, match=r"entries must be in \[0, 1\]"):
            ContactMatrix(w=[[1.2]])

    def test_empty(self):
        """Test that an empty matrix is rejected."""
        with pytest.raises(ValidationError, match="at least one row"):
            ContactMatrix(w=[])
