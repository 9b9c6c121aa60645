"""Damped fixed-point solver for the forward-backward equilibrium system.

Discretisation
--------------
With explicit Euler the control applied on ``[t_n, t_{n+1})`` minimises the
Hamiltonian at ``(u_{n+1}, Z_n, lambda_n)``; the backward step is then
``u_n = u_{n+1} + dt * min H`` and the forward step ``p_{n+1} = p_n + dt p_n Q_n``.
The backward sweep is therefore the exact dynamic programme of the
discretised forward chain.

With RK4 the control at time t minimises the Hamiltonian at ``u(t)``; values
between nodes come from cubic Hermite interpolation of the stored paths.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from ..core.exceptions import ModelInputError
from ..core.exceptions import NumericalBlowUpError
from ..models.policy import PolicySchedule
from ..models.population import CompartmentSet
from ..models.population import ContactMatrix
from ..models.population import GroupSpec
from ..models.results import ControlPath
from ..models.results import EquilibriumSolution
from ..models.scenario import Coupling
from ..models.scenario import Integrator
from ..models.scenario import Scenario
from ..models.scenario import SolverConfig
from ..models.scenario import TimeGrid
from .dynamics import N_STATES
from .dynamics import I
from .dynamics import S
from .dynamics import FbodeSystem

logger = logging.getLogger(__name__)

BLOW_UP_BOUND = 2.0
DRIFT_WARNING = 1e-6

# stage index passed to right-hand sides: node k, midpoint, node k + 1
NODE, MID, NEXT = 0, 1, 2

Rate = Callable[[int, int, np.ndarray], np.ndarray]


def hermite_midpoints(y: np.ndarray, dy: np.ndarray, dt: float) -> np.ndarray:
    """Cubic Hermite interpolant of a node path at the step midpoints."""
    return 0.5 * (y[:-1] + y[1:]) + dt / 8.0 * (dy[:-1] - dy[1:])


def _march_forward(
    p0: np.ndarray, n: int, dt: float, integrator: Integrator, rate: Rate, offset: int = 0
) -> tuple[np.ndarray, float]:
    """Integrate ``dp/dt = rate`` forward; renormalise each step.

    Returns the path and the largest pre-renormalisation drift.
    """
    p = np.empty((n + 1,) + p0.shape)
    p[0] = p0
    max_drift = 0.0
    for k in range(n):
        if integrator is Integrator.EULER:
            step = rate(k, NODE, p[k])
        else:
            k1 = rate(k, NODE, p[k])
            k2 = rate(k, MID, p[k] + 0.5 * dt * k1)
            k3 = rate(k, MID, p[k] + 0.5 * dt * k2)
            k4 = rate(k, NEXT, p[k] + dt * k3)
            step = (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        nxt = p[k] + dt * step

        if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > BLOW_UP_BOUND:
            bad = nxt[np.isfinite(nxt)]
            value = float(np.max(np.abs(bad))) if bad.size else float("nan")
            raise NumericalBlowUpError("distribution", offset + k + 1, value)

        totals = nxt.sum(axis=-1)
        drift = float(np.max(np.abs(totals - 1.0)))
        max_drift = max(max_drift, drift)
        p[k + 1] = nxt / totals[..., None]

    if max_drift > DRIFT_WARNING:
        logger.warning(f"Normalisation drift {max_drift:.2e} exceeds {DRIFT_WARNING:g}")
    elif max_drift > 0.0:
        logger.debug(f"Normalisation drift {max_drift:.2e}")
    return p, max_drift


def _march_backward(
    u_term: np.ndarray, n: int, dt: float, integrator: Integrator, drift: Rate, offset: int = 0
) -> np.ndarray:
    """Integrate ``du/dt = drift`` backward from the terminal slice.

    For Euler, ``drift(k, NODE, u_{k+1})`` is evaluated with node-k data and
    the next value, which is what makes the sweep a dynamic programme.
    """
    u = np.empty((n + 1,) + u_term.shape)
    u[n] = u_term
    for k in range(n - 1, -1, -1):
        if integrator is Integrator.EULER:
            u[k] = u[k + 1] - dt * drift(k, NODE, u[k + 1])
        else:
            k1 = drift(k, NEXT, u[k + 1])
            k2 = drift(k, MID, u[k + 1] - 0.5 * dt * k1)
            k3 = drift(k, MID, u[k + 1] - 0.5 * dt * k2)
            k4 = drift(k, NODE, u[k + 1] - dt * k3)
            u[k] = u[k + 1] - dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not np.all(np.isfinite(u[k])):
            raise NumericalBlowUpError("value function", offset + k, float("nan"))
    return u


def _stage(nodes: np.ndarray, mids: np.ndarray | None, k: int, stage: int) -> np.ndarray:
    if stage == NODE:
        return nodes[k]
    if stage == NEXT:
        return nodes[k + 1]
    assert mids is not None
    return mids[k]


@dataclass
class _Window:
    """Node range ``[start, start + n]`` of the global grid."""

    start: int
    n: int

    @property
    def stop(self) -> int:
        return self.start + self.n


@dataclass
class _IterationResult:
    p: np.ndarray
    u: np.ndarray
    iterations: int
    converged: bool
    history: list[tuple[float, float]] = field(default_factory=list)
    max_drift: float = 0.0


class _Sweeps:
    """Forward and backward sweeps of one system restricted to a window."""

    def __init__(self, system: FbodeSystem, config: SolverConfig, window: _Window) -> None:
        self.system = system
        self.config = config
        self.window = window
        self.dt = config.grid.dt
        self.anchors = system.node_anchors[window.start : window.stop + 1]
        self.mid_anchors = system.mid_anchors[window.start : window.stop]

    @property
    def rk4(self) -> bool:
        return self.config.integrator is Integrator.RK4

    def costate_nodes(self, u: np.ndarray) -> np.ndarray:
        """Value slice used to pick the control at each node."""
        if self.rk4:
            return u
        return np.concatenate([u[1:], u[-1:]], axis=0)

    def node_controls(self, p: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Aggregates and controls on every node of the window."""
        z = self.system.aggregate(p, self.anchors)
        alpha, nu, clipped = self.system.controls(self.costate_nodes(u), z, self.anchors)
        return z, alpha, nu, clipped

    def forward(self, p0: np.ndarray, u: np.ndarray, p_prev: np.ndarray) -> tuple[np.ndarray, float]:
        system = self.system
        z_nodes = system.aggregate(p_prev, self.anchors)
        z_mids = None
        u_mids = None
        if self.rk4:
            u_dot = system.value_drift(u, z_nodes, self.anchors)
            u_mids = hermite_midpoints(u, u_dot, self.dt)
            if self.config.coupling is Coupling.JACOBI:
                p_dot = system.distribution_drift(p_prev, u, z_nodes, self.anchors)
                z_mids = system.aggregate(hermite_midpoints(p_prev, p_dot, self.dt), self.mid_anchors)
        gauss_seidel = self.config.coupling is Coupling.GAUSS_SEIDEL

        def rate(k: int, stage: int, p: np.ndarray) -> np.ndarray:
            anchors = _stage(self.anchors, self.mid_anchors, k, stage)
            if self.rk4:
                costate = _stage(u, u_mids, k, stage)
            else:
                costate = u[k + 1]
            z = system.aggregate(p, anchors) if gauss_seidel else _stage(z_nodes, z_mids, k, stage)
            return system.distribution_drift(p, costate, z, anchors)

        return _march_forward(p0, self.window.n, self.dt, self.config.integrator, rate, self.window.start)

    def backward(self, p: np.ndarray, u_prev: np.ndarray, u_term: np.ndarray) -> np.ndarray:
        system = self.system
        z_nodes = system.aggregate(p, self.anchors)
        z_mids = None
        if self.rk4:
            p_dot = system.distribution_drift(p, u_prev, z_nodes, self.anchors)
            z_mids = system.aggregate(hermite_midpoints(p, p_dot, self.dt), self.mid_anchors)

        def drift(k: int, stage: int, u: np.ndarray) -> np.ndarray:
            anchors = _stage(self.anchors, self.mid_anchors, k, stage)
            z = _stage(z_nodes, z_mids, k, stage)
            return system.value_drift(u, z, anchors)

        return _march_backward(u_term, self.window.n, self.dt, self.config.integrator, drift, self.window.start)


def _iterate(
    sweeps: _Sweeps,
    p0: np.ndarray,
    u_term: np.ndarray,
    p_guess: np.ndarray,
    u_guess: np.ndarray,
    tolerance: float,
) -> _IterationResult:
    """Damped fixed-point iteration on one window.

    Order per iteration: forward sweep, relax p, backward sweep against the
    relaxed p, relax u. Residuals are undamped sup-norm changes.
    """
    config = sweeps.config
    delta = config.damping
    p = np.array(p_guess, copy=True)
    u = np.array(u_guess, copy=True)
    p[0] = p0
    u[-1] = u_term
    history: list[tuple[float, float]] = []
    max_drift = 0.0

    for iteration in range(1, config.max_iters + 1):
        p_new, drift = sweeps.forward(p0, u, p)
        max_drift = max(max_drift, drift)
        res_p = float(np.max(np.abs(p_new - p)))
        p = (1.0 - delta) * p + delta * p_new

        u_new = sweeps.backward(p, u, u_term)
        res_u = float(np.max(np.abs(u_new - u)))
        u = (1.0 - delta) * u + delta * u_new

        history.append((res_p, res_u))
        logger.debug(f"iteration {iteration}: |dp|={res_p:.3e} |du|={res_u:.3e}")
        if res_p < tolerance and res_u < tolerance:
            return _IterationResult(p, u, iteration, True, history, max_drift)

    return _IterationResult(p, u, config.max_iters, False, history, max_drift)


def _assemble(
    scenario: Scenario,
    system: FbodeSystem,
    config: SolverConfig,
    p: np.ndarray,
    u: np.ndarray,
    iterations: int,
    history: list[tuple[float, float]],
    converged: bool,
    failed_patch: int | None = None,
    patches: int = 1,
    diagnostics: dict[str, object] | None = None,
) -> EquilibriumSolution:
    sweeps = _Sweeps(system, config, _Window(0, config.grid.n_steps))
    z, alpha, nu, clipped = sweeps.node_controls(p, u)
    clip_events = int(np.count_nonzero(clipped))
    if clip_events:
        logger.info(f"{scenario.name}: control clipping active at {clip_events} node(s)")
    solution = EquilibriumSolution(
        scenario_name=scenario.name,
        labels=tuple(scenario.labels),
        variant=scenario.variant,
        grid=config.grid,
        integrator=config.integrator,
        p=p,
        u=u,
        alpha=alpha,
        nu=nu,
        z=z,
        iterations=iterations,
        residual_history=tuple(history),
        clip_events=clip_events,
        converged=converged,
        epsilon=config.epsilon,
        vaccination_cap=config.vaccination_cap,
        failed_patch=failed_patch,
        patches=patches,
        diagnostics=dict(diagnostics or {}),
    )
    res_p, res_u = solution.final_residual
    if converged:
        logger.info(
            f"{scenario.name}: converged in {iterations} iteration(s) "
            f"(|dp|={res_p:.2e}, |du|={res_u:.2e})"
        )
    else:
        where = "" if failed_patch is None else f" (patch {failed_patch})"
        logger.warning(
            f"{scenario.name}: not converged after {iterations} iteration(s){where} "
            f"(|dp|={res_p:.2e}, |du|={res_u:.2e})"
        )
    return solution


def _resolve(scenario: Scenario, solver_config: SolverConfig | None) -> tuple[SolverConfig, FbodeSystem]:
    config = solver_config or scenario.solver
    system = FbodeSystem.from_scenario(scenario, grid=config.grid, vaccination_cap=config.vaccination_cap)
    return config, system


def solve_fixed_point(scenario: Scenario, solver_config: SolverConfig | None = None) -> EquilibriumSolution:
    """Solve the equilibrium system on the whole horizon.

    Non-convergence is returned as a solution with ``converged=False``.

    Raises:
        NumericalBlowUpError: If a sweep leaves the admissible range.
    """
    config, system = _resolve(scenario, solver_config)
    n = config.grid.n_steps
    p0 = scenario.initial_array()
    p_guess = np.repeat(p0[None], n + 1, axis=0)
    u_guess = np.repeat(system.terminal[None], n + 1, axis=0)

    logger.info(
        f"Solving {scenario.name}: K={system.n_groups}, n_steps={n}, "
        f"integrator={config.integrator.value}, damping={config.damping}"
    )
    sweeps = _Sweeps(system, config, _Window(0, n))
    result = _iterate(sweeps, p0, system.terminal, p_guess, u_guess, config.epsilon)
    return _assemble(
        scenario,
        system,
        config,
        result.p,
        result.u,
        result.iterations,
        result.history,
        result.converged,
        diagnostics={"max_normalisation_drift": result.max_drift},
    )


def solve_patched(scenario: Scenario, solver_config: SolverConfig | None = None) -> EquilibriumSolution:
    """Solve by time-patching: short windows stitched to joint consistency.

    Each outer iteration sweeps the windows from last to first and back,
    solving each window with its initial slice from the earlier window and
    its terminal slice from the later one. Stops when the stitched paths
    change by less than epsilon in sup-norm.
    """
    config, system = _resolve(scenario, solver_config)
    steps = config.patch_steps
    if steps is None:
        raise ModelInputError("solve_patched requires solver.patch_length")
    n = config.grid.n_steps
    if steps >= n:
        return solve_fixed_point(scenario, config)

    windows = [_Window(a, min(steps, n - a)) for a in range(0, n, steps)]
    logger.info(f"Solving {scenario.name} with {len(windows)} patches of {steps} step(s)")
    p0 = scenario.initial_array()
    p = np.repeat(p0[None], n + 1, axis=0)
    u = np.repeat(system.terminal[None], n + 1, axis=0)
    inner_tolerance = config.epsilon / 10.0
    history: list[tuple[float, float]] = []
    inner_iterations = 0
    max_drift = 0.0

    order = list(range(len(windows) - 1, -1, -1)) + list(range(len(windows)))
    for outer in range(1, config.max_iters + 1):
        p_before = p.copy()
        u_before = u.copy()
        for j in order:
            w = windows[j]
            sweeps = _Sweeps(system, config, w)
            result = _iterate(
                sweeps,
                p[w.start],
                u[w.stop],
                p[w.start : w.stop + 1],
                u[w.start : w.stop + 1],
                inner_tolerance,
            )
            inner_iterations += result.iterations
            max_drift = max(max_drift, result.max_drift)
            if not result.converged:
                p[w.start : w.stop + 1] = result.p
                u[w.start : w.stop + 1] = result.u
                history.append(result.history[-1])
                return _assemble(
                    scenario,
                    system,
                    config,
                    p,
                    u,
                    outer,
                    history,
                    False,
                    failed_patch=j,
                    patches=len(windows),
                    diagnostics={"inner_iterations": inner_iterations},
                )
            p[w.start : w.stop + 1] = result.p
            u[w.start : w.stop + 1] = result.u

        change = (float(np.max(np.abs(p - p_before))), float(np.max(np.abs(u - u_before))))
        history.append(change)
        logger.debug(f"patch sweep {outer}: |dp|={change[0]:.3e} |du|={change[1]:.3e}")
        if change[0] < config.epsilon and change[1] < config.epsilon:
            return _assemble(
                scenario,
                system,
                config,
                p,
                u,
                outer,
                history,
                True,
                patches=len(windows),
                diagnostics={"inner_iterations": inner_iterations, "max_normalisation_drift": max_drift},
            )

    return _assemble(
        scenario,
        system,
        config,
        p,
        u,
        config.max_iters,
        history,
        False,
        patches=len(windows),
        diagnostics={"inner_iterations": inner_iterations},
    )


def solve(scenario: Scenario, solver_config: SolverConfig | None = None) -> EquilibriumSolution:
    """Dispatch to the patched solver when a patch length is configured."""
    config = solver_config or scenario.solver
    if config.patch_length is not None:
        return solve_patched(scenario, config)
    return solve_fixed_point(scenario, config)


def _standalone_system(
    groups: list[GroupSpec],
    grid: TimeGrid,
    variant: CompartmentSet,
    contacts: ContactMatrix | None,
    policy: PolicySchedule | None,
    vaccination_cap: float,
) -> FbodeSystem:
    if contacts is None:
        contacts = ContactMatrix.from_array(np.zeros((len(groups), len(groups))))
    return FbodeSystem(groups, contacts, policy or PolicySchedule(), variant, grid, vaccination_cap)


def _as_states(array: np.ndarray) -> np.ndarray:
    """Pad a ``[..., 3]`` SIR array to four compartments."""
    array = np.asarray(array, dtype=float)
    if array.shape[-1] == N_STATES:
        return array
    pad = np.zeros(array.shape[:-1] + (N_STATES - array.shape[-1],))
    return np.concatenate([array, pad], axis=-1)


def forward_sweep(
    controls: ControlPath,
    aggregates: np.ndarray | None,
    initial_distribution: np.ndarray,
    groups: list[GroupSpec],
    grid: TimeGrid,
    variant: CompartmentSet = CompartmentSet.SIR,
    *,
    contacts: ContactMatrix | None = None,
    integrator: Integrator = Integrator.EULER,
) -> np.ndarray:
    """Integrate the distribution forward under given control paths.

    When ``aggregates`` is None the aggregate is recomputed from the
    distribution being integrated, using ``controls.alpha[..., I]`` and
    ``contacts``. Between nodes, controls are linearly interpolated.

    Returns:
        Distribution path ``[n+1, K, 4]``.
    """
    n = grid.n_steps
    alpha = np.asarray(controls.alpha, dtype=float)
    nu = np.asarray(controls.nu, dtype=float)
    if alpha.shape[0] != n + 1 or nu.shape[0] != n + 1:
        raise ModelInputError("controls must be defined on every grid node")
    if aggregates is None and contacts is None:
        raise ModelInputError("contacts are required when aggregates are not given")
    if aggregates is not None and np.asarray(aggregates).shape[0] != n + 1:
        raise ModelInputError("aggregates must be defined on every grid node")
    p0 = _as_states(initial_distribution)
    if np.any(p0 < 0.0) or np.max(np.abs(p0.sum(axis=-1) - 1.0)) > 1e-9:
        raise ModelInputError("initial distribution must lie on the simplex")

    system = _standalone_system(groups, grid, variant, contacts, None, controls.vaccination_cap)
    alpha_mid = 0.5 * (alpha[:-1] + alpha[1:])
    nu_mid = 0.5 * (nu[:-1] + nu[1:])
    z_given = None if aggregates is None else np.asarray(aggregates, dtype=float)
    z_mid = None if z_given is None else 0.5 * (z_given[:-1] + z_given[1:])
    weights = system.m

    def rate(k: int, stage: int, p: np.ndarray) -> np.ndarray:
        a = _stage(alpha, alpha_mid, k, stage)
        v = _stage(nu, nu_mid, k, stage)
        if z_given is None:
            z = system.w @ (a[:, I] * p[:, I] * weights)
        else:
            z = _stage(z_given, z_mid, k, stage)
        return system.flows(p, a[:, S], v, z)

    p, _ = _march_forward(p0, n, grid.dt, integrator, rate)
    return p


def backward_sweep(
    distributions: np.ndarray,
    aggregates: np.ndarray | None,
    groups: list[GroupSpec],
    grid: TimeGrid,
    policy: PolicySchedule,
    variant: CompartmentSet = CompartmentSet.SIR,
    *,
    contacts: ContactMatrix | None = None,
    integrator: Integrator = Integrator.EULER,
    vaccination_cap: float = 10.0,
) -> tuple[np.ndarray, ControlPath]:
    """Integrate the value function backward from the terminal condition.

    Controls are recomputed from the current value and aggregate at every
    step. ``u(D)`` stays at the death cost.

    Returns:
        Value path ``[n+1, K, 4]`` and the matching control path.
    """
    n = grid.n_steps
    p = _as_states(distributions)
    if p.shape[0] != n + 1:
        raise ModelInputError("distributions must be defined on every grid node")
    if aggregates is None and contacts is None:
        raise ModelInputError("contacts are required when aggregates are not given")

    system = _standalone_system(groups, grid, variant, contacts, policy, vaccination_cap)
    config = SolverConfig(grid=grid, integrator=integrator, vaccination_cap=vaccination_cap)
    sweeps = _Sweeps(system, config, _Window(0, n))
    if aggregates is None:
        u = np.repeat(system.terminal[None], n + 1, axis=0)
        # RK4 midpoints of Z need dp/dt, which needs controls from a value path
        for _ in range(2 if sweeps.rk4 else 1):
            u = sweeps.backward(p, u, system.terminal)
        _, alpha, nu, _ = sweeps.node_controls(p, u)
    else:
        z = np.asarray(aggregates, dtype=float)
        if n >= 2:
            z_mids = hermite_midpoints(z, np.gradient(z, grid.dt, axis=0, edge_order=2), grid.dt)
        else:
            z_mids = 0.5 * (z[:-1] + z[1:])

        def drift(k: int, stage: int, u_k: np.ndarray) -> np.ndarray:
            anchors = _stage(sweeps.anchors, sweeps.mid_anchors, k, stage)
            return system.value_drift(u_k, _stage(z, z_mids, k, stage), anchors)

        u = _march_backward(system.terminal, n, grid.dt, integrator, drift)
        alpha, nu, _ = system.controls(sweeps.costate_nodes(u), z, sweeps.anchors)
    return u, ControlPath(alpha=alpha, nu=nu, vaccination_cap=vaccination_cap, labels=tuple(system.labels))
