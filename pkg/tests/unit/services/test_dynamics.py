import numpy as np
import pytest

from mfg_epi.core.exceptions import ModelInputError
from mfg_epi.models.policy import PolicyRule
from mfg_epi.models.policy import PolicySchedule
from mfg_epi.models.population import AuthorityKind
from mfg_epi.models.population import Compartment
from mfg_epi.models.population import CompartmentSet
from mfg_epi.models.population import ContactMatrix
from mfg_epi.models.scenario import TimeGrid
from mfg_epi.services.dynamics import FbodeSystem
from mfg_epi.services.dynamics import best_response_controls
from mfg_epi.services.dynamics import closed_form_controls
from mfg_epi.services.dynamics import compute_aggregate
from mfg_epi.services.dynamics import hamiltonian
from mfg_epi.services.dynamics import running_cost
from mfg_epi.services.dynamics import transition_rates
from mfg_epi.services.scenario_catalog import mixed_population

POLICY = PolicySchedule.constant(0.9)
GRID = TimeGrid(horizon=1.0, dt=0.1)


class TestTransitionRates:
    """Test generator rows."""

    def test_infection_rate(self, group_factory):
        """Test the S to I rate as a product of three factors."""
        row = transition_rates(group_factory(beta=0.4), Compartment.S, alpha=0.9, nu=0.0, z=0.009)

        assert row[1] == pytest.approx(0.00324)
        assert row[0] == pytest.approx(-row[1:].sum())

    def test_vaccination_rate(self, group_factory):
        """Test the S to R rate."""
        row = transition_rates(group_factory(kappa=0.03), Compartment.S, alpha=0.9, nu=2.0, z=0.0)

        assert row[2] == pytest.approx(0.06)
        assert row[1] == 0.0

    def test_recovery_sir(self, group_factory):
        """Test that SIR rows have no death entry."""
        row = transition_rates(group_factory(gamma=0.143), Compartment.I)

        assert len(row) == 3
        assert row[2] == pytest.approx(0.143)
        assert row[1] == pytest.approx(-0.143)

    def test_recovery_sird(self, group_factory):
        """Test the split of gamma by rho."""
        group = group_factory(gamma=0.143, rho=0.005)
        row = transition_rates(group, Compartment.I, variant=CompartmentSet.SIRD)

        assert row[2] == pytest.approx(0.142285)
        assert row[3] == pytest.approx(0.000715)
        assert row.sum() == pytest.approx(0.0, abs=1e-15)

    def test_waning(self, group_factory):
        """Test the R to S rate."""
        row = transition_rates(group_factory(eta=0.004), Compartment.R)

        assert row[0] == pytest.approx(0.004)
        assert row[2] == pytest.approx(-0.004)

    def test_deceased_is_absorbing(self, group_factory):
        """Test that D has no outflow."""
        row = transition_rates(group_factory(), Compartment.D, variant=CompartmentSet.SIRD)

        np.testing.assert_array_equal(row, np.zeros(4))

    def test_invalid_inputs(self, group_factory):
        """Test input validation."""
        group = group_factory()
        with pytest.raises(ModelInputError, match="alpha must be in"):
            transition_rates(group, Compartment.S, alpha=1.2, z=0.1)
        with pytest.raises(ModelInputError, match="nu must be nonnegative"):
            transition_rates(group, Compartment.S, alpha=0.5, nu=-1.0)
        with pytest.raises(ModelInputError, match="aggregate z"):
            transition_rates(group, Compartment.S, alpha=0.5, z=-0.1)
        with pytest.raises(ModelInputError, match="alpha is required"):
            transition_rates(group, Compartment.S)
        with pytest.raises(ModelInputError, match="does not exist"):
            transition_rates(group, Compartment.D)
        with pytest.raises(ModelInputError, match="no controls"):
            transition_rates(group, Compartment.D, alpha=0.5, variant=CompartmentSet.SIRD)


class TestRunningCost:
    """Test running cost rates."""

    def test_exact_compliance(self, group_factory):
        """Test a follower complying with the guideline."""
        assert running_cost(group_factory(), Compartment.S, 0.0, 0.9, 0.0, POLICY) == 0.0

    def test_indifferent_infected(self, group_factory):
        """Test an indifferent infected agent at its intrinsic level."""
        group = group_factory(kind=AuthorityKind.INDIFFERENT, xi_infected=0.97, c_infected=1.05)

        assert running_cost(group, Compartment.I, 0.0, 0.97, 0.0, POLICY) == pytest.approx(1.05)

    def test_quadratic_terms(self, group_factory):
        """Test deviation and vaccination terms."""
        group = group_factory(c_lambda=1.0, c_nu=1.4)

        assert running_cost(group, Compartment.S, 0.0, 0.8, 0.1, POLICY) == pytest.approx(0.024)

    def test_indifferent_anchors_at_one(self, group_factory):
        """Test that indifferent S and R agents anchor at full socialization."""
        group = group_factory(kind=AuthorityKind.INDIFFERENT)

        assert running_cost(group, Compartment.S, 0.0, 1.0, 0.0, POLICY) == 0.0
        assert running_cost(group, Compartment.R, 0.0, 0.9, 0.0, POLICY) == pytest.approx(0.01)

    def test_time_dependent_guideline(self, group_factory):
        """Test that followers track a changing guideline."""
        policy = PolicySchedule(default=0.9, rules=[PolicyRule(breakpoints=[(0.0, 0.9), (5.0, 0.6)])])
        group = group_factory()

        assert running_cost(group, Compartment.R, 1.0, 0.9, 0.0, policy) == 0.0
        assert running_cost(group, Compartment.R, 6.0, 0.9, 0.0, policy) == pytest.approx(0.09)

    def test_deceased(self, group_factory):
        """Test that D has no running cost."""
        with pytest.raises(ModelInputError):
            running_cost(group_factory(), Compartment.D, 0.0, 0.0, 0.0, POLICY)


class TestComputeAggregate:
    """Test the weighted infected socialization."""

    def test_single_group(self, group_factory):
        """Test the single-term sum."""
        z = compute_aggregate(
            0,
            np.array([[0.99, 0.01, 0.0, 0.0]]),
            np.array([0.9]),
            ContactMatrix(w=[[1.0]]),
            [group_factory()],
        )

        assert z[0] == pytest.approx(0.009)

    def test_no_infected(self, group_factory):
        """Test that Z vanishes without infected agents."""
        groups = [group_factory("A", 0, proportion=0.5), group_factory("B", 1, proportion=0.5)]
        p = np.array([[1.0, 0.0, 0.0], [0.7, 0.0, 0.3]])

        z = compute_aggregate(0, p, np.array([0.9, 0.9]), ContactMatrix(w=[[1.0, 0.9], [0.9, 1.0]]), groups)

        np.testing.assert_array_equal(z, [0.0, 0.0])

    def test_six_groups_against_loop(self):
        """Test the matrix product against an explicit double sum."""
        groups, contacts, _ = mixed_population()
        w = contacts.as_array()
        p = np.tile([0.99, 0.01, 0.0, 0.0], (6, 1))
        alpha_i = np.full(6, 0.9)

        z = compute_aggregate(0, p, alpha_i, contacts, groups)

        expected = [
            sum(w[k, l] * alpha_i[l] * p[l, 1] * groups[l].proportion for l in range(6))  # noqa: E741
            for k in range(6)
        ]
        np.testing.assert_allclose(z, expected, rtol=1e-14)

    def test_path_input(self, group_factory):
        """Test indexing into full paths."""
        p = np.zeros((3, 1, 4))
        p[:, 0, 0] = 1.0
        p[2, 0] = [0.8, 0.2, 0.0, 0.0]
        alpha_i = np.full((3, 1), 0.5)

        z = compute_aggregate(2, p, alpha_i, ContactMatrix(w=[[1.0]]), [group_factory()])

        assert z[0] == pytest.approx(0.1)

    def test_dimension_mismatch(self, group_factory):
        """Test inconsistent shapes."""
        with pytest.raises(ModelInputError, match="dimension mismatch"):
            compute_aggregate(
                0, np.zeros((2, 4)), np.zeros(2), ContactMatrix(w=[[1.0]]), [group_factory()]
            )


class TestBestResponseControls:
    """Test closed-form control minimisers."""

    def test_zero_values(self, group_factory):
        """Test that zero value differences reproduce the guideline."""
        out = best_response_controls(0, np.zeros((1, 3)), np.array([0.01]), [group_factory()], POLICY, GRID)

        assert out.alpha[0, 0] == pytest.approx(0.9)
        assert out.nu[0] == 0.0
        assert out.clip_count == 0

    def test_no_vaccination_gain(self, group_factory):
        """Test that u(S) = u(R) gives no vaccination."""
        values = np.array([[3.0, 5.0, 3.0]])
        group = group_factory(kappa=0.5, c_nu=0.1)

        out = best_response_controls(0, values, np.array([0.01]), [group], POLICY, GRID)

        assert out.nu[0] == 0.0

    def test_socialization_correction(self, group_factory):
        """Test the closed form against a fine grid minimisation of the Hamiltonian."""
        group = group_factory(beta=0.4, c_lambda=1.0)
        values = np.array([0.0, 5.0, 0.0])

        out = best_response_controls(0, values[None], np.array([0.009]), [group], POLICY, GRID)

        assert out.alpha[0, 0] == pytest.approx(0.891)
        alphas = np.linspace(0.85, 0.95, 10001)
        h = [hamiltonian(group, Compartment.S, 0.0, values, a, 0.0, 0.009, POLICY) for a in alphas]
        assert alphas[int(np.argmin(h))] == pytest.approx(0.891, abs=1e-5)

    def test_vaccination_formula(self, group_factory):
        """Test nu = kappa (u(S) - u(R)) / (2 c_nu)."""
        group = group_factory(kappa=0.03, c_nu=1.5)

        out = best_response_controls(0, np.array([[10.0, 12.0, 0.0]]), np.array([0.0]), [group], POLICY, GRID)

        assert out.nu[0] == pytest.approx(0.1)

    def test_clipping(self, group_factory):
        """Test that out-of-box minimisers are clipped and flagged."""
        group = group_factory(beta=10.0)

        out = best_response_controls(0, np.array([[0.0, 100.0, 0.0]]), np.array([1.0]), [group], POLICY, GRID)

        assert out.alpha[0, 0] == 0.0
        assert out.clip_count == 1

    def test_vaccination_cap(self, group_factory):
        """Test the upper bound on nu."""
        group = group_factory(kappa=1.0, c_nu=0.01)

        out = best_response_controls(
            0, np.array([[100.0, 0.0, 0.0]]), np.array([0.0]), [group], POLICY, GRID, vaccination_cap=10.0
        )

        assert out.nu[0] == 10.0

    def test_indifferent_infected_level(self, group_factory):
        """Test that indifferent infected agents keep their intrinsic level."""
        group = group_factory(kind=AuthorityKind.INDIFFERENT, xi_infected=0.97)

        out = best_response_controls(0, np.zeros((1, 4)), np.array([0.0]), [group], POLICY, GRID)

        np.testing.assert_allclose(out.alpha[0], [1.0, 0.97, 1.0])

    def test_invalid_values(self, group_factory):
        """Test rejection of non-finite values and negative aggregates."""
        with pytest.raises(ModelInputError, match="non-finite"):
            best_response_controls(0, np.array([[np.nan, 0.0, 0.0]]), np.array([0.0]), [group_factory()], POLICY, GRID)
        with pytest.raises(ModelInputError, match="nonnegative"):
            best_response_controls(0, np.zeros((1, 3)), np.array([-0.1]), [group_factory()], POLICY, GRID)


class TestFbodeSystem:
    """Test the vectorised right-hand sides."""

    def test_flows_conserve_mass(self, small_scenario):
        """Test that flows sum to zero per group."""
        system = FbodeSystem.from_scenario(small_scenario)
        p = small_scenario.initial_array()
        dp = system.flows(p, np.array([0.9, 0.95]), np.array([0.2, 0.1]), np.array([0.05, 0.04]))

        np.testing.assert_allclose(dp.sum(axis=-1), 0.0, atol=1e-15)

    def test_anchors(self, small_scenario):
        """Test follower and indifferent anchors."""
        system = FbodeSystem.from_scenario(small_scenario)

        np.testing.assert_allclose(system.node_anchors[0, 0], [0.9, 0.9, 0.9])
        np.testing.assert_allclose(system.node_anchors[0, 1], [1.0, 0.97, 1.0])

    def test_hamiltonian_matches_scalar(self, small_scenario):
        """Test the vectorised Hamiltonian against the per-agent one."""
        system = FbodeSystem.from_scenario(small_scenario)
        u = np.array([[1.0, 4.0, 0.5, 0.0], [0.8, 3.0, 0.2, 0.0]])
        alpha = np.array([[0.85, 0.9, 0.9], [0.95, 0.97, 1.0]])
        nu = np.array([0.1, 0.2])
        z = np.array([0.03, 0.02])

        h = system.hamiltonian(u, alpha, nu, z, system.node_anchors[0])

        for k, group in enumerate(small_scenario.groups):
            for e, compartment in enumerate((Compartment.S, Compartment.I, Compartment.R)):
                expected = hamiltonian(
                    group, compartment, 0.0, u[k, :3], alpha[k, e], nu[k], z[k], small_scenario.policy
                )
                assert h[k, e] == pytest.approx(expected)

    def test_closed_form_broadcasts(self):
        """Test broadcasting over a leading time axis."""
        u = np.zeros((5, 2, 4))
        anchors = np.full((5, 2, 3), 0.9)
        one = np.ones(2)

        alpha, nu, clipped = closed_form_controls(u, np.zeros((5, 2)), anchors, one, one, one, one, 10.0)

        assert alpha.shape == (5, 2, 3)
        assert nu.shape == (5, 2)
        assert not clipped.any()
