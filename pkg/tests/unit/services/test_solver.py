import itertools

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mfg_epi.core.exceptions import ModelInputError
from mfg_epi.core.exceptions import NumericalBlowUpError
from mfg_epi.models.policy import PolicySchedule
from mfg_epi.models.population import CompartmentSet
from mfg_epi.models.population import ContactMatrix
from mfg_epi.models.results import ControlPath
from mfg_epi.models.scenario import Coupling
from mfg_epi.models.scenario import Integrator
from mfg_epi.models.scenario import TimeGrid
from mfg_epi.services.solver import backward_sweep
from mfg_epi.services.solver import forward_sweep
from mfg_epi.services.solver import hermite_midpoints
from mfg_epi.services.solver import solve
from mfg_epi.services.solver import solve_fixed_point
from mfg_epi.services.solver import solve_patched

GRID = TimeGrid(horizon=10.0, dt=0.1)


def _constant_controls(n: int, k: int, alpha_s: float, alpha_i: float = 0.9, nu: float = 0.0) -> ControlPath:
    alpha = np.empty((n + 1, k, 3))
    alpha[..., 0] = alpha_s
    alpha[..., 1] = alpha_i
    alpha[..., 2] = 0.9
    return ControlPath(alpha=alpha, nu=np.full((n + 1, k), nu))


class TestHermiteMidpoints:
    """Test cubic Hermite interpolation."""

    def test_exact_for_cubics(self):
        """Test that cubic paths are reproduced exactly."""
        t = np.linspace(0.0, 1.0, 11)
        y = t**3 - 2 * t
        dy = 3 * t**2 - 2

        mids = hermite_midpoints(y, dy, 0.1)

        tm = t[:-1] + 0.05
        np.testing.assert_allclose(mids, tm**3 - 2 * tm, atol=1e-14)


class TestForwardSweep:
    """Test forward integration of the distribution."""

    def test_no_flows(self, group_factory):
        """Test that p stays constant when every flow vanishes."""
        group = group_factory(beta=0.0, kappa=0.0, eta=0.0)
        p0 = np.array([[0.7, 0.0, 0.3]])

        p = forward_sweep(_constant_controls(GRID.n_steps, 1, 0.9), None, p0, [group], GRID, contacts=ContactMatrix(w=[[1.0]]))

        assert p.shape == (GRID.n_steps + 1, 1, 4)
        np.testing.assert_allclose(p[:, 0, :3], np.tile(p0[0], (GRID.n_steps + 1, 1)))

    def test_simplex_conservation(self, group_factory):
        """Test that every slice stays on the simplex."""
        groups = [group_factory("A", 0, proportion=0.5), group_factory("B", 1, proportion=0.5, beta=0.3)]
        p0 = np.array([[0.95, 0.05, 0.0], [0.9, 0.1, 0.0]])

        p = forward_sweep(
            _constant_controls(GRID.n_steps, 2, 0.8, nu=0.5),
            None,
            p0,
            groups,
            GRID,
            contacts=ContactMatrix(w=[[1.0, 0.9], [0.9, 1.0]]),
        )

        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(p >= 0.0)

    def test_matches_reference_integrator(self, group_factory):
        """Test RK4 against a tight-tolerance reference solution of the controlled SIR system."""
        beta, gamma, alpha_s, alpha_i = 0.4, 0.143, 0.8, 0.9
        group = group_factory(beta=beta, gamma=gamma, kappa=0.0, eta=0.0)
        p0 = np.array([[0.9, 0.1, 0.0]])

        p = forward_sweep(
            _constant_controls(GRID.n_steps, 1, alpha_s, alpha_i),
            None,
            p0,
            [group],
            GRID,
            contacts=ContactMatrix(w=[[1.0]]),
            integrator=Integrator.RK4,
        )

        def rhs(_t, y):
            infection = beta * alpha_s * alpha_i * y[1] * y[0]
            return [-infection, infection - gamma * y[1], gamma * y[1]]

        ref = solve_ivp(rhs, (0.0, 10.0), p0[0], method="DOP853", t_eval=GRID.times, rtol=1e-12, atol=1e-14)
        assert np.max(np.abs(p[:, 0, :3] - ref.y.T)) < 1e-6

    def test_frozen_aggregates(self, group_factory):
        """Test integration against a given aggregate path."""
        group = group_factory(beta=0.5, kappa=0.0, eta=0.0)
        z = np.full((GRID.n_steps + 1, 1), 0.1)

        p = forward_sweep(_constant_controls(GRID.n_steps, 1, 1.0), z, np.array([[1.0, 0.0, 0.0]]), [group], GRID)

        # S decays at rate beta * z when nobody recovers into S
        assert p[-1, 0, 0] == pytest.approx((1.0 - 0.1 * 0.05) ** GRID.n_steps)

    def test_sird_deaths(self, group_factory):
        """Test that deaths accumulate rho * gamma * p(I)."""
        group = group_factory(rho=0.005, death_cost=80.0)
        p = forward_sweep(
            _constant_controls(GRID.n_steps, 1, 0.9),
            None,
            np.array([[0.9, 0.1, 0.0, 0.0]]),
            [group],
            GRID,
            CompartmentSet.SIRD,
            contacts=ContactMatrix(w=[[1.0]]),
        )

        deaths = p[:, 0, 3]
        assert np.all(np.diff(deaths) >= 0.0)
        expected = 0.005 * 0.143 * GRID.dt * p[:-1, 0, 1].sum()
        assert deaths[-1] == pytest.approx(expected, rel=1e-9)

    def test_input_validation(self, group_factory):
        """Test shape and simplex checks."""
        controls = _constant_controls(GRID.n_steps, 1, 0.9)
        with pytest.raises(ModelInputError, match="contacts are required"):
            forward_sweep(controls, None, np.array([[1.0, 0.0, 0.0]]), [group_factory()], GRID)
        with pytest.raises(ModelInputError, match="simplex"):
            forward_sweep(controls, np.zeros((GRID.n_steps + 1, 1)), np.array([[0.5, 0.0, 0.0]]), [group_factory()], GRID)
        with pytest.raises(ModelInputError, match="every grid node"):
            forward_sweep(_constant_controls(5, 1, 0.9), np.zeros((6, 1)), np.array([[1.0, 0.0, 0.0]]), [group_factory()], GRID)

    def test_blow_up(self, group_factory):
        """Test that an unstable step raises."""
        group = group_factory(beta=1.0, gamma=50.0)
        grid = TimeGrid(horizon=1.0, dt=0.5)

        with pytest.raises(NumericalBlowUpError):
            forward_sweep(
                _constant_controls(grid.n_steps, 1, 1.0),
                np.zeros((grid.n_steps + 1, 1)),
                np.array([[0.0, 1.0, 0.0]]),
                [group],
                grid,
            )


class TestBackwardSweep:
    """Test backward integration of the value function."""

    def test_infected_value_closed_form(self, group_factory):
        """Test u(I) = (c_I / gamma) (1 - exp(-gamma (T - t))) without waning."""
        c_inf, gamma = 1.05, 0.143
        group = group_factory(c_infected=c_inf, gamma=gamma, eta=0.0)
        p = np.tile([0.95, 0.05, 0.0], (GRID.n_steps + 1, 1, 1))

        u, _ = backward_sweep(
            p,
            np.full((GRID.n_steps + 1, 1), 0.02),
            [group],
            GRID,
            PolicySchedule.constant(0.9),
            integrator=Integrator.RK4,
        )

        expected = c_inf / gamma * (1.0 - np.exp(-gamma * (10.0 - GRID.times)))
        assert np.max(np.abs(u[:, 0, 1] - expected)) < 1e-5
        np.testing.assert_allclose(u[:, 0, 2], 0.0, atol=1e-15)

    def test_zero_cost_gives_zero_value(self, group_factory):
        """Test u = 0 when nothing is costly."""
        group = group_factory(c_infected=0.0, beta=0.0, kappa=0.0)
        p = np.tile([0.95, 0.05, 0.0], (GRID.n_steps + 1, 1, 1))

        u, controls = backward_sweep(p, None, [group], GRID, PolicySchedule.constant(0.9), contacts=ContactMatrix(w=[[1.0]]))

        np.testing.assert_array_equal(u, 0.0)
        np.testing.assert_allclose(controls.alpha[..., 0], 0.9)

    def test_terminal_slice(self, group_factory):
        """Test the terminal condition of the SIRD variant."""
        group = group_factory(rho=0.005, death_cost=80.0)
        p = np.tile([0.95, 0.05, 0.0, 0.0], (GRID.n_steps + 1, 1, 1))

        u, _ = backward_sweep(
            p,
            None,
            [group],
            GRID,
            PolicySchedule.constant(0.9),
            CompartmentSet.SIRD,
            contacts=ContactMatrix(w=[[1.0]]),
        )

        np.testing.assert_array_equal(u[-1, 0], [0.0, 0.0, 0.0, 80.0])
        np.testing.assert_array_equal(u[:, 0, 3], 80.0)

    def test_controls_from_values(self, group_factory):
        """Test that returned controls satisfy the closed form."""
        group = group_factory()
        p = np.tile([0.9, 0.1, 0.0], (GRID.n_steps + 1, 1, 1))
        z = np.full((GRID.n_steps + 1, 1), 0.05)

        u, controls = backward_sweep(p, z, [group], GRID, PolicySchedule.constant(0.9))

        expected = 0.9 + 0.4 * 0.05 * (u[1:, 0, 0] - u[1:, 0, 1]) / 2.0
        np.testing.assert_allclose(controls.alpha[:-1, 0, 0], np.clip(expected, 0.0, 1.0))
        # the last step sees the terminal value, so only earlier nodes move off the guideline
        assert np.all(controls.alpha[:-2, 0, 0] < 0.9)
        assert controls.alpha[-2, 0, 0] == pytest.approx(0.9)


class TestSolveFixedPoint:
    """Test the damped fixed-point solver."""

    def test_converges(self, small_solution):
        """Test convergence diagnostics of the two-group scenario."""
        assert small_solution.converged
        assert small_solution.iterations >= 2
        res_p, res_u = small_solution.final_residual
        assert max(res_p, res_u) < small_solution.epsilon
        assert small_solution.p.shape == (101, 2, 4)
        assert small_solution.alpha.shape == (101, 2, 3)
        assert small_solution.nu.shape == (101, 2)

    def test_simplex_and_terminal(self, small_solution):
        """Test conservation and the terminal condition."""
        np.testing.assert_allclose(small_solution.p.sum(axis=-1), 1.0, atol=1e-8)
        np.testing.assert_array_equal(small_solution.u[-1], 0.0)

    def test_arrays_are_read_only(self, small_solution):
        """Test that solution arrays cannot be modified."""
        with pytest.raises(ValueError):
            small_solution.p[0, 0, 0] = 1.0

    def test_decoupled_system(self, group_factory, scenario_factory):
        """Test that beta = 0 converges in two undamped iterations at the guideline."""
        groups = [group_factory("A", 0, proportion=0.5, beta=0.0, kappa=0.0), group_factory("B", 1, proportion=0.5, beta=0.0, kappa=0.0)]
        scenario = scenario_factory(groups=groups, damping=1.0)

        solution = solve_fixed_point(scenario)

        assert solution.converged
        assert solution.iterations <= 2
        np.testing.assert_allclose(solution.alpha[..., 0], 0.9)
        np.testing.assert_array_equal(solution.nu, 0.0)

    def test_sird_without_mortality_equals_sir(self, two_group_factory):
        """Test that SIRD with rho = 0 and no death cost reproduces SIR exactly."""
        sir = two_group_factory()
        sird = sir.derive(sir.name, variant=CompartmentSet.SIRD)

        a = solve(sir)
        b = solve(sird)

        np.testing.assert_array_equal(a.p, b.p)
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(b.p[..., 3], 0.0)

    def test_jacobi_coupling(self, two_group_factory, small_solution):
        """Test that both couplings reach the same equilibrium."""
        solution = solve(two_group_factory(coupling=Coupling.JACOBI))

        assert solution.converged
        assert np.max(np.abs(solution.p - small_solution.p)) < 1e-4

    def test_rk4(self, two_group_factory):
        """Test that RK4 converges with controls taken from u at the same node."""
        solution = solve(two_group_factory(integrator=Integrator.RK4))

        assert solution.converged
        np.testing.assert_allclose(solution.p.sum(axis=-1), 1.0, atol=1e-8)

    def test_non_convergence_is_flagged(self, two_group_factory):
        """Test that hitting the iteration cap returns a flagged solution."""
        solution = solve(two_group_factory(max_iters=2))

        assert not solution.converged
        assert solution.iterations == 2
        assert len(solution.residual_history) == 2
        assert solution.diagnostics_summary()["converged"] is False

    def test_grid_search_oracle_on_tiny_grid(self, group_factory, scenario_factory):
        """Test equilibrium controls against enumeration of all piecewise-constant paths."""
        beta, gamma, c_inf, dt = 2.0, 0.143, 1.05, 1.0
        group = group_factory(beta=beta, gamma=gamma, eta=0.0, kappa=0.0, c_infected=c_inf)
        scenario = scenario_factory(groups=[group], infected=0.3, horizon=3.0, dt=dt, epsilon=1e-10, max_iters=2000)
        solution = solve_fixed_point(scenario)
        assert solution.converged
        z = solution.z[:, 0]

        levels = np.round(np.arange(101) * 0.01, 2)
        paths = np.array(list(itertools.product(levels, repeat=3)))
        s = np.full(len(paths), 0.7)
        i = np.full(len(paths), 0.3)
        cost = np.zeros(len(paths))
        for n in range(3):
            a = paths[:, n]
            cost += dt * ((0.9 - a) ** 2 * s + c_inf * i)
            infection = beta * a * z[n] * s
            s, i = s - dt * infection, i + dt * (infection - gamma * i)
        best = paths[int(np.argmin(cost))]

        assert np.max(np.abs(best - solution.alpha[:3, 0, 0])) <= 0.02


class TestSolvePatched:
    """Test time-patching."""

    def test_single_patch_is_unpatched(self, two_group_factory):
        """Test that a patch as long as the horizon delegates to the plain solver."""
        plain = solve(two_group_factory())
        patched = solve_patched(two_group_factory(patch_length=10.0))

        np.testing.assert_array_equal(patched.p, plain.p)
        np.testing.assert_array_equal(patched.u, plain.u)

    def test_two_patches_match(self, two_group_factory):
        """Test that stitched patches reproduce the unpatched equilibrium."""
        epsilon = 1e-9
        plain = solve(two_group_factory(epsilon=epsilon, max_iters=2000))
        patched = solve(two_group_factory(epsilon=epsilon, max_iters=2000, patch_length=5.0))

        assert patched.converged
        assert patched.patches == 2
        assert np.max(np.abs(patched.p - plain.p)) < 1e-6
        assert np.max(np.abs(patched.u - plain.u)) < 1e-6

    def test_requires_patch_length(self, small_scenario):
        """Test that patching needs a patch length."""
        with pytest.raises(ModelInputError, match="patch_length"):
            solve_patched(small_scenario)

    def test_initial_and_terminal_data(self, two_group_factory):
        """Test the boundary slices of a patched solution."""
        scenario = two_group_factory(patch_length=2.5)
        solution = solve(scenario)

        assert solution.patches == 4
        np.testing.assert_array_equal(solution.p[0], scenario.initial_array())
        np.testing.assert_array_equal(solution.u[-1], 0.0)
