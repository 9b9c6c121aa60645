"""Independent checks of a solved equilibrium.

* :func:`simulate_finite_n` runs the N-agent chain whose mean-field limit the
  solver computes. Agents of one group in one compartment are exchangeable,
  so the chain is simulated on per-group counts; every susceptible agent feels
  the empirical aggregate ``1/N sum_j w(i, j) alpha^j(I) 1_I(X^j)``.
* :func:`best_response_oracle` recomputes one group's controls by backward
  induction with a grid search over the control box.
* :func:`stationarity_check` verifies the first-order conditions of the
  Hamiltonian by central finite differences.
* :func:`nash_deviation_check` evaluates discrete costs of perturbed control
  paths against the frozen aggregate.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from dataclasses import replace
from typing import Any

import numpy as np

from ..core.config import settings
from ..core.exceptions import GridMismatchError
from ..core.exceptions import ModelInputError
from ..models.population import GroupSpec
from ..models.reports import CheckResult
from ..models.reports import SimReport
from ..models.reports import ValidationReport
from ..models.results import ControlPath
from ..models.results import EquilibriumSolution
from ..models.scenario import Integrator
from ..models.scenario import Scenario
from .dynamics import D
from .dynamics import I
from .dynamics import N_STATES
from .dynamics import R
from .dynamics import S
from .dynamics import FbodeSystem
from .solver import backward_sweep

logger = logging.getLogger(__name__)

RNG_NAME = "Philox4x64-10"
MAJORANT_FACTOR = 1.1
FD_STEP = 1e-5
BOUND_TOLERANCE = 1e-12

# (source, target) of every transition a single agent can make
TRANSITIONS = ((S, I), (S, R), (I, R), (I, D), (R, S))


# ---------------------------------------------------------------------------
# finite-N simulation
# ---------------------------------------------------------------------------


def largest_remainder(total: int, shares: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``shares``.

    Floors are topped up in order of decreasing fractional part; ties go to
    the lower index.
    """
    shares = np.asarray(shares, dtype=float)
    exact = total * shares / shares.sum()
    counts = np.floor(exact).astype(np.int64)
    remainder = total - int(counts.sum())
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


@dataclass(frozen=True)
class _ReplicaTask:
    """Everything one replica needs; plain arrays so it pickles cheaply."""

    times: np.ndarray
    alpha: np.ndarray
    nu: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray
    eta: np.ndarray
    kappa: np.ndarray
    w: np.ndarray
    n_agents: int
    sizes: np.ndarray
    counts0: np.ndarray
    seed: np.random.SeedSequence


def _event_rates(task: _ReplicaTask, counts: np.ndarray, n: int, frac: float) -> np.ndarray:
    """Rates ``[K, 5]`` of every transition at ``t_n + frac * dt``."""
    alpha = (1.0 - frac) * task.alpha[n] + frac * task.alpha[n + 1]
    nu = (1.0 - frac) * task.nu[n] + frac * task.nu[n + 1]
    z = task.w @ (alpha[:, I] * counts[:, I]) / task.n_agents
    rates = np.empty((counts.shape[0], len(TRANSITIONS)))
    rates[:, 0] = task.beta * alpha[:, S] * z * counts[:, S]
    rates[:, 1] = task.kappa * nu * counts[:, S]
    rates[:, 2] = (1.0 - task.rho) * task.gamma * counts[:, I]
    rates[:, 3] = task.rho * task.gamma * counts[:, I]
    rates[:, 4] = task.eta * counts[:, R]
    return rates


def _simulate_replica(task: _ReplicaTask) -> tuple[np.ndarray, int, int]:
    """One replica of the count chain, sampled on the grid.

    Time-varying rates are handled by thinning against 1.1 times the larger
    endpoint rate of the current interval, recomputed after every event.

    Returns:
        Proportion path ``[n+1, K, 4]``, accepted events and the number of
        proposals at which the true rate exceeded the majorant.
    """
    rng = np.random.Generator(np.random.Philox(task.seed))
    counts = task.counts0.copy()
    n_steps = len(task.times) - 1
    path = np.empty((n_steps + 1,) + counts.shape)
    path[0] = counts / task.sizes[:, None]
    events = 0
    violations = 0

    for n in range(n_steps):
        t0, t1 = task.times[n], task.times[n + 1]
        h = t1 - t0
        t = t0
        while True:
            bound = MAJORANT_FACTOR * max(
                _event_rates(task, counts, n, 0.0).sum(), _event_rates(task, counts, n, 1.0).sum()
            )
            if bound <= 0.0:
                break
            t += rng.exponential(1.0 / bound)
            if t >= t1:
                break
            rates = _event_rates(task, counts, n, (t - t0) / h).ravel()
            total = rates.sum()
            if total > bound:
                violations += 1
            if rng.random() * bound >= total:
                continue
            idx = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
            k, j = divmod(min(idx, rates.size - 1), len(TRANSITIONS))
            source, target = TRANSITIONS[j]
            counts[k, source] -= 1
            counts[k, target] += 1
            events += 1
        path[n + 1] = counts / task.sizes[:, None]
    return path, events, violations


def simulate_finite_n(
    solution: EquilibriumSolution,
    scenario: Scenario,
    n_agents: int,
    n_replicas: int,
    seed: int,
    workers: int | None = None,
) -> SimReport:
    """Simulate the N-agent chain under the frozen equilibrium controls.

    Args:
        solution: Reference equilibrium; its control paths drive every agent.
        scenario: Scenario the solution was computed for.
        n_agents: Total number of agents (at least one per group).
        n_replicas: Independent replicas, each with its own Philox stream
            spawned from ``SeedSequence(seed)``.
        seed: Non-negative master seed.
        workers: Process count; defaults to ``settings.threads`` capped at
            the replica count.

    Raises:
        ModelInputError: On invalid agent counts, replica counts or seed.
    """
    k = scenario.n_groups
    if n_agents < k:
        raise ModelInputError(f"n_agents must be at least the number of groups ({k})")
    if n_replicas < 1:
        raise ModelInputError("n_replicas must be at least 1")
    if seed < 0:
        raise ModelInputError("seed must be nonnegative")
    if solution.p.shape[1] != k:
        raise ModelInputError("solution and scenario have different group counts")

    sizes = largest_remainder(n_agents, np.array([g.proportion for g in scenario.groups]))
    if np.any(sizes == 0):
        raise ModelInputError(f"n_agents={n_agents} leaves a group without agents")
    p0 = scenario.initial_array()
    counts0 = np.stack([largest_remainder(int(sizes[g]), p0[g]) for g in range(k)])

    system = FbodeSystem.from_scenario(scenario, grid=solution.grid)
    streams = np.random.SeedSequence(seed).spawn(n_replicas)
    tasks = [
        _ReplicaTask(
            times=solution.times,
            alpha=np.asarray(solution.alpha),
            nu=np.asarray(solution.nu),
            beta=system.beta,
            gamma=system.gamma,
            rho=system.rho,
            eta=system.eta,
            kappa=system.kappa,
            w=system.w,
            n_agents=n_agents,
            sizes=sizes,
            counts0=counts0,
            seed=stream,
        )
        for stream in streams
    ]

    n_workers = workers if workers is not None else settings.worker_count(n_replicas)
    logger.info(
        f"Simulating {scenario.name}: N={n_agents}, {n_replicas} replica(s), "
        f"seed={seed}, {n_workers} worker(s)"
    )
    if n_workers <= 1:
        results = [_simulate_replica(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_simulate_replica, tasks))

    replica_paths = np.stack([r[0] for r in results])
    mean_paths = replica_paths.mean(axis=0)
    reference = np.asarray(solution.p)[:, :, I]
    replica_deviations = np.max(np.abs(replica_paths[:, :, :, I] - reference[None]), axis=(1, 2))
    sup_deviation = float(np.max(np.abs(mean_paths[:, :, I] - reference)))
    violations = sum(r[2] for r in results)
    if violations:
        logger.warning(f"Thinning majorant exceeded at {violations} proposal(s)")
    logger.info(f"{scenario.name}: sup-norm deviation of averaged p(I) = {sup_deviation:.4g}")

    return SimReport(
        n_agents=n_agents,
        n_replicas=n_replicas,
        seed=seed,
        rng=RNG_NAME,
        labels=tuple(scenario.labels),
        group_sizes=tuple(int(s) for s in sizes),
        times=solution.times,
        replica_paths=replica_paths,
        mean_paths=mean_paths,
        sup_deviation=sup_deviation,
        replica_deviations=replica_deviations,
        events=tuple(r[1] for r in results),
        majorant_violations=violations,
    )


# ---------------------------------------------------------------------------
# best-response oracle
# ---------------------------------------------------------------------------


def _box(upper: float, resolution: float) -> np.ndarray:
    return np.linspace(0.0, upper, round(upper / resolution) + 1)


def best_response_oracle(
    frozen_aggregates: np.ndarray,
    group: GroupSpec | str,
    scenario: Scenario,
    resolution: float | None = None,
) -> ControlPath:
    """Single-group best response by backward induction and grid search.

    The discrete Hamiltonian is minimised exhaustively over alpha on
    ``[0, 1]`` and nu on ``[0, V]`` at spacing ``resolution``; the
    susceptible Hamiltonian is separable in (alpha, nu), so searching each
    axis is the same as searching the product grid. The recursion is
    ``u_n = u_{n+1} + dt * min H(u_{n+1}, Z_n)``.

    Args:
        frozen_aggregates: Aggregate path of this group ``[n+1]`` or of all
            groups ``[n+1, K]``.
        group: Group spec or label.
        scenario: Scenario providing parameters, guideline and grid.
        resolution: Grid spacing; defaults to ``settings.oracle_resolution``.

    Returns:
        Control path with a single group column.
    """
    res = resolution or settings.oracle_resolution
    label = group if isinstance(group, str) else group.label
    spec = scenario.group(label)
    k = spec.id.index
    system = FbodeSystem.from_scenario(scenario)
    n = scenario.grid.n_steps
    dt = scenario.grid.dt

    z = np.asarray(frozen_aggregates, dtype=float)
    if z.ndim == 2:
        z = z[:, k]
    if z.shape[0] != n + 1:
        raise GridMismatchError(z.shape[0], n + 1)

    alphas = _box(1.0, res)
    nus = _box(system.vaccination_cap, res)
    anchors = system.node_anchors[:, k]
    beta, kappa, gamma, rho, eta = (
        system.beta[k], system.kappa[k], system.gamma[k], system.rho[k], system.eta[k]
    )
    c_lambda, c_nu, c_inf = system.c_lambda[k], system.c_nu[k], system.c_infected[k]

    def minimise(node: int, v: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
        a = anchors[node]
        cost_s = c_lambda * (a[S] - alphas) ** 2 + beta * alphas * z[node] * (v[I] - v[S])
        cost_nu = c_nu * nus**2 + kappa * nus * (v[R] - v[S])
        cost_i = (a[I] - alphas) ** 2
        cost_r = (a[R] - alphas) ** 2
        i_s, j, i_i, i_r = (int(np.argmin(c)) for c in (cost_s, cost_nu, cost_i, cost_r))
        h = np.zeros(N_STATES)
        h[S] = cost_s[i_s] + cost_nu[j]
        h[I] = cost_i[i_i] + c_inf + (1.0 - rho) * gamma * (v[R] - v[I]) + rho * gamma * (v[D] - v[I])
        h[R] = cost_r[i_r] + eta * (v[S] - v[R])
        return np.array([alphas[i_s], alphas[i_i], alphas[i_r]]), float(nus[j]), h

    u = np.empty((n + 1, N_STATES))
    u[n] = system.terminal[k]
    alpha_out = np.empty((n + 1, 3))
    nu_out = np.empty(n + 1)
    for node in range(n - 1, -1, -1):
        alpha_out[node], nu_out[node], h = minimise(node, u[node + 1])
        u[node] = u[node + 1] + dt * h
    alpha_out[n], nu_out[n], _ = minimise(n, u[n])

    return ControlPath(
        alpha=alpha_out[:, None, :],
        nu=nu_out[:, None],
        vaccination_cap=system.vaccination_cap,
        labels=(label,),
    )


def oracle_check(
    solution: EquilibriumSolution, scenario: Scenario, resolution: float | None = None
) -> CheckResult:
    """Compare closed-form controls of every group with the oracle's."""
    res = resolution or settings.oracle_resolution
    threshold = 2.0 * res
    gaps: dict[str, float] = {}
    for k, label in enumerate(solution.labels):
        oracle = best_response_oracle(solution.z, label, scenario, res)
        gap_alpha = np.max(np.abs(oracle.alpha[:, 0, S] - solution.alpha[:, k, S]))
        gap_nu = np.max(np.abs(oracle.nu[:, 0] - solution.nu[:, k]))
        gaps[label] = float(max(gap_alpha, gap_nu))
    worst = max(gaps.values())
    return CheckResult(
        name="oracle",
        passed=worst <= threshold,
        value=worst,
        threshold=threshold,
        details={"per_group": gaps, "resolution": res},
    )


# ---------------------------------------------------------------------------
# stationarity
# ---------------------------------------------------------------------------


def _costate(solution: EquilibriumSolution) -> np.ndarray:
    u = np.asarray(solution.u)
    if solution.integrator is Integrator.RK4:
        return u
    return np.concatenate([u[1:], u[-1:]], axis=0)


def stationarity_check(
    solution: EquilibriumSolution,
    scenario: Scenario,
    step: float = FD_STEP,
    tolerance: float | None = None,
) -> CheckResult:
    """First-order conditions of the Hamiltonian at every node.

    Derivatives in each control are taken by central differences. Nodes
    where a control sits strictly inside its box contribute to the reported
    residual; nodes at a bound instead need the derivative to point out of
    the box (``>= -tol`` at the lower bound, ``<= tol`` at the upper).
    """
    tol = tolerance if tolerance is not None else settings.stationarity_tolerance
    system = FbodeSystem.from_scenario(scenario, grid=solution.grid, vaccination_cap=solution.vaccination_cap)
    u = _costate(solution)
    alpha = np.asarray(solution.alpha)
    nu = np.asarray(solution.nu)
    z = np.asarray(solution.z)
    anchors = system.node_anchors

    def h(a: np.ndarray, v: np.ndarray) -> np.ndarray:
        return system.hamiltonian(u, a, v, z, anchors)

    derivatives: list[tuple[str, np.ndarray, np.ndarray, float]] = []
    for name, comp in (("alpha_S", S), ("alpha_I", I), ("alpha_R", R)):
        up = alpha.copy()
        down = alpha.copy()
        up[..., comp] += step
        down[..., comp] -= step
        grad = (h(up, nu)[..., comp] - h(down, nu)[..., comp]) / (2.0 * step)
        derivatives.append((name, alpha[..., comp], grad, 1.0))
    grad_nu = (h(alpha, nu + step)[..., S] - h(alpha, nu - step)[..., S]) / (2.0 * step)
    derivatives.append(("nu", nu, grad_nu, system.vaccination_cap))

    residual = 0.0
    interior = 0
    at_bound = 0
    violations: dict[str, int] = {}
    worst_violation = 0.0
    for name, control, grad, upper in derivatives:
        lower_mask = control <= BOUND_TOLERANCE
        upper_mask = control >= upper - BOUND_TOLERANCE
        inner = ~(lower_mask | upper_mask)
        interior += int(inner.sum())
        at_bound += int(lower_mask.sum() + upper_mask.sum())
        if inner.any():
            residual = max(residual, float(np.max(np.abs(grad[inner]))))
        bad_lower = lower_mask & (grad < -tol)
        bad_upper = upper_mask & (grad > tol)
        count = int(bad_lower.sum() + bad_upper.sum())
        if count:
            violations[name] = count
            worst_violation = max(
                worst_violation,
                float(np.max(-grad[bad_lower], initial=0.0)),
                float(np.max(grad[bad_upper], initial=0.0)),
            )

    passed = residual < tol and not violations
    logger.info(
        f"Stationarity: residual {residual:.3e} over {interior} interior node(s), "
        f"{at_bound} at a bound, {sum(violations.values())} sign violation(s)"
    )
    return CheckResult(
        name="stationarity",
        passed=passed,
        value=residual,
        threshold=tol,
        details={
            "interior_nodes": interior,
            "boundary_nodes": at_bound,
            "boundary_violations": violations,
            "worst_boundary_violation": worst_violation,
        },
    )


# ---------------------------------------------------------------------------
# Nash deviation
# ---------------------------------------------------------------------------


def _discrete_costs(
    system: FbodeSystem,
    q0: np.ndarray,
    alpha: np.ndarray,
    nu: np.ndarray,
    z: np.ndarray,
) -> np.ndarray:
    """Discrete cost of every group for a batch of control paths.

    ``alpha`` is ``[P, n+1, K, 3]`` and ``nu`` ``[P, n+1, K]``; the aggregate
    ``z`` ``[n+1, K]`` is frozen, so each group's cost depends on its own
    column only. Returns ``[P, K]`` with
    ``J = sum_n dt q_n . f_n + q_N . g`` and ``q_{n+1} = q_n + dt q_n Q_n``.
    """
    dt = system.grid.dt
    n = system.grid.n_steps
    q = np.broadcast_to(q0, alpha.shape[:1] + q0.shape).copy()
    cost = np.zeros(q.shape[:-1])
    for step in range(n):
        f = system.running_cost(alpha[:, step], nu[:, step], system.node_anchors[step])
        cost += dt * np.sum(q * f, axis=-1)
        q = q + dt * system.flows(q, alpha[:, step, :, S], nu[:, step], z[step])
    return cost + np.sum(q * system.terminal, axis=-1)


def group_cost(
    solution: EquilibriumSolution,
    scenario: Scenario,
    group: str | int,
    alpha: np.ndarray | None = None,
    nu: np.ndarray | None = None,
) -> float:
    """Discrete cost of one group's control path against the frozen aggregate.

    Missing controls default to the equilibrium ones; ``alpha`` is
    ``[n+1, 3]`` and ``nu`` ``[n+1]``.
    """
    k = solution.group_index(group)
    system = FbodeSystem.from_scenario(scenario, grid=solution.grid, vaccination_cap=solution.vaccination_cap)
    a = np.array(solution.alpha, copy=True)
    v = np.array(solution.nu, copy=True)
    if alpha is not None:
        a[:, k] = alpha
    if nu is not None:
        v[:, k] = nu
    costs = _discrete_costs(system, np.asarray(solution.p)[0], a[None], v[None], np.asarray(solution.z))
    return float(costs[0, k])


def _windows(n: int, count: int) -> list[tuple[int, int]]:
    """``count`` node ranges covering ``[0, n)`` plus the whole range."""
    edges = np.linspace(0, n, count + 1).round().astype(int)
    ranges = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:], strict=True) if b > a]
    return ranges + [(0, n)]


def nash_deviation_check(
    solution: EquilibriumSolution,
    scenario: Scenario,
    perturbation: float | None = None,
    windows: int = 4,
    tolerance: float | None = None,
) -> CheckResult:
    """Nash inequality for one-sided control perturbations.

    Every control dimension of every group is shifted by ``+-perturbation``
    on each of ``windows`` sub-intervals and on the whole horizon (clipped to
    the box); the discrete cost must not drop below the equilibrium cost by
    more than ``tolerance``. The sup-norm gap between the equilibrium controls
    and a fresh backward best response to the frozen aggregate must also stay
    within ``tolerance`` (or the solve tolerance, if looser).
    """
    delta = perturbation if perturbation is not None else settings.nash_perturbation
    tol = tolerance if tolerance is not None else settings.nash_tolerance
    system = FbodeSystem.from_scenario(scenario, grid=solution.grid, vaccination_cap=solution.vaccination_cap)
    n = solution.grid.n_steps
    alpha = np.asarray(solution.alpha)
    nu = np.asarray(solution.nu)
    z = np.asarray(solution.z)
    q0 = np.asarray(solution.p)[0]

    batch_alpha = [alpha]
    batch_nu = [nu]
    labels = ["equilibrium"]
    for start, stop in _windows(n, windows):
        for sign in (1.0, -1.0):
            for comp, name in ((S, "alpha_S"), (I, "alpha_I"), (R, "alpha_R")):
                a = alpha.copy()
                a[start:stop, :, comp] = np.clip(a[start:stop, :, comp] + sign * delta, 0.0, 1.0)
                batch_alpha.append(a)
                batch_nu.append(nu)
                labels.append(f"{name}{sign * delta:+g}@[{start},{stop})")
            v = nu.copy()
            v[start:stop] = np.clip(v[start:stop] + sign * delta, 0.0, system.vaccination_cap)
            batch_alpha.append(alpha)
            batch_nu.append(v)
            labels.append(f"nu{sign * delta:+g}@[{start},{stop})")

    costs = _discrete_costs(system, q0, np.stack(batch_alpha), np.stack(batch_nu), z)
    gaps = costs[1:] - costs[0]
    worst = float(np.min(gaps))
    worst_index = np.unravel_index(int(np.argmin(gaps)), gaps.shape)

    _, fresh = backward_sweep(
        np.asarray(solution.p),
        z,
        scenario.groups,
        solution.grid,
        scenario.policy,
        scenario.variant,
        contacts=scenario.contacts,
        integrator=solution.integrator,
        vaccination_cap=solution.vaccination_cap,
    )
    response_gap = float(
        max(np.max(np.abs(fresh.alpha - alpha)), np.max(np.abs(fresh.nu - nu)))
    )

    gap_tol = max(tol, solution.epsilon)
    passed = worst >= -tol and response_gap <= gap_tol
    logger.info(
        f"Nash deviation: worst cost change {worst:.3e} over {gaps.size} perturbation(s), "
        f"best-response gap {response_gap:.3e}"
    )
    return CheckResult(
        name="nash_deviation",
        passed=passed,
        value=worst,
        threshold=-tol,
        details={
            "equilibrium_costs": dict(zip(solution.labels, map(float, costs[0]), strict=True)),
            "worst_perturbation": labels[1 + int(worst_index[0])],
            "worst_group": solution.labels[int(worst_index[1])],
            "perturbations": int(gaps.shape[0]),
            "best_response_gap": response_gap,
            "best_response_tolerance": gap_tol,
        },
    )


def perturb_controls(solution: EquilibriumSolution, amount: float) -> EquilibriumSolution:
    """Copy with ``alpha(S)`` shifted by ``amount`` (clipped to [0, 1])."""
    alpha = np.array(solution.alpha, copy=True)
    alpha[..., S] = np.clip(alpha[..., S] + amount, 0.0, 1.0)
    return replace(solution, alpha=alpha)


def validate_solution(
    solution: EquilibriumSolution,
    scenario: Scenario,
    n_agents: int | None = None,
    n_replicas: int = 1,
    seed: int = 0,
    windows: int = 4,
) -> tuple[ValidationReport, SimReport | None]:
    """Run every check; the simulation only when ``n_agents`` is given."""
    checks = [
        stationarity_check(solution, scenario),
        oracle_check(solution, scenario),
        nash_deviation_check(solution, scenario, windows=windows),
    ]
    sim: SimReport | None = None
    if n_agents is not None:
        sim = simulate_finite_n(solution, scenario, n_agents, n_replicas, seed)
        details: dict[str, Any] = sim.summary()
        checks.append(
            CheckResult(
                name="finite_n_deviation",
                passed=sim.sup_deviation < settings.deviation_tolerance,
                value=sim.sup_deviation,
                threshold=settings.deviation_tolerance,
                details=details,
            )
        )
    report = ValidationReport(scenario=scenario.name, checks=checks)
    if report.passed:
        logger.info(f"{scenario.name}: all {len(checks)} check(s) passed")
    else:
        logger.warning(f"{scenario.name}: failed check(s): {', '.join(report.failed)}")
    return report, sim
