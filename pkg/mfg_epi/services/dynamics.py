"""Transition rates, running costs, aggregates and best-response controls.

State arrays always carry the four compartments (S, I, R, D) in that order;
control arrays carry the three controlled compartments (S, I, R). The SIR
variant is the SIRD variant with ``rho = 0`` and ``death_cost = 0``.
"""

import logging
from collections.abc import Sequence

import numpy as np

from ..core.exceptions import ModelInputError
from ..models.policy import PolicySchedule
from ..models.population import Compartment
from ..models.population import CompartmentSet
from ..models.population import ContactMatrix
from ..models.population import GroupSpec
from ..models.results import ControlSlice
from ..models.scenario import Scenario
from ..models.scenario import TimeGrid

logger = logging.getLogger(__name__)

S, I, R, D = 0, 1, 2, 3  # noqa: E741
N_STATES = 4
N_CONTROLS = 3


def _anchor(group: GroupSpec, policy: PolicySchedule, t: float, compartment: Compartment) -> float:
    """Socialization level the group's running cost is anchored at."""
    if group.is_follower:
        return policy.level(t, group.label, compartment)
    if compartment is Compartment.I:
        assert group.cost.xi_infected is not None
        return group.cost.xi_infected
    return 1.0


def transition_rates(
    group: GroupSpec,
    compartment: Compartment,
    alpha: float | None = None,
    nu: float | None = None,
    z: float = 0.0,
    variant: CompartmentSet = CompartmentSet.SIR,
) -> np.ndarray:
    """Generator row of one individual.

    Args:
        group: Group of the individual.
        compartment: Current state.
        alpha: Socialization level (required in S).
        nu: Vaccination level (S only, defaults to 0).
        z: Aggregate infected socialization felt by the group.
        variant: SIR rows have three entries, SIRD rows four.

    Returns:
        Outflow rate to every compartment of ``variant``; the diagonal entry
        is minus the row sum.

    Raises:
        ModelInputError: On negative or out-of-range inputs, or controls
            passed for the deceased state.
    """
    if compartment is Compartment.D:
        if variant is CompartmentSet.SIR:
            raise ModelInputError("compartment D does not exist in the SIR variant")
        if alpha is not None or nu is not None:
            raise ModelInputError("deceased agents have no controls")
    if alpha is not None and not 0.0 <= alpha <= 1.0:
        raise ModelInputError(f"alpha must be in [0, 1], got {alpha}")
    if nu is not None and nu < 0.0:
        raise ModelInputError(f"nu must be nonnegative, got {nu}")
    if z < 0.0:
        raise ModelInputError(f"aggregate z must be nonnegative, got {z}")

    epi = group.epi
    row = np.zeros(len(variant.compartments))
    if compartment is Compartment.S:
        if alpha is None:
            raise ModelInputError("alpha is required in compartment S")
        row[I] = epi.beta * alpha * z
        row[R] = epi.kappa * (nu or 0.0)
    elif compartment is Compartment.I:
        if variant is CompartmentSet.SIRD:
            row[R] = (1.0 - epi.rho) * epi.gamma
            row[D] = epi.rho * epi.gamma
        else:
            row[R] = epi.gamma
    elif compartment is Compartment.R:
        row[S] = epi.eta
    idx = compartment.position
    row[idx] = -row.sum()
    return row


def running_cost(
    group: GroupSpec,
    compartment: Compartment,
    t: float,
    alpha: float,
    nu: float,
    policy: PolicySchedule,
) -> float:
    """Cost rate of one individual at time ``t``.

    Followers are anchored at the guideline, indifferents at full socialization
    (and at ``xi_infected`` when infected). Only susceptibles vaccinate.
    """
    if compartment is Compartment.D:
        raise ModelInputError("deceased agents have no running cost")
    if nu < 0.0:
        raise ModelInputError(f"nu must be nonnegative, got {nu}")
    anchor = _anchor(group, policy, t, compartment)
    if compartment is Compartment.S:
        return group.cost.c_lambda * (anchor - alpha) ** 2 + group.cost.c_nu * nu**2
    if compartment is Compartment.I:
        return (anchor - alpha) ** 2 + group.cost.c_infected
    return (anchor - alpha) ** 2


def hamiltonian(
    group: GroupSpec,
    compartment: Compartment,
    t: float,
    values: np.ndarray,
    alpha: float,
    nu: float,
    z: float,
    policy: PolicySchedule,
    variant: CompartmentSet = CompartmentSet.SIR,
) -> float:
    """Running cost plus expected value change for one individual.

    ``values`` holds the value function of the group over the compartments of
    ``variant``; the result is minimised by :func:`best_response_controls`.
    """
    if compartment is Compartment.D:
        return 0.0
    u = np.asarray(values, dtype=float)
    s_nu = nu if compartment is Compartment.S else None
    row = transition_rates(group, compartment, alpha, s_nu, z, variant)
    return running_cost(group, compartment, t, alpha, nu, policy) + float(row @ u[: len(row)])


def compute_aggregate(
    t_index: int,
    distributions: np.ndarray,
    infected_controls: np.ndarray,
    contacts: ContactMatrix,
    groups: Sequence[GroupSpec],
) -> np.ndarray:
    """Weighted infected socialization Z_t^k = sum_l w(k,l) alpha^l(I) p^l(I) m^l.

    ``distributions`` is either a full path ``[n+1, K, C]`` or a slice
    ``[K, C]``; ``infected_controls`` is ``[n+1, K]`` or ``[K]``.
    """
    p = np.asarray(distributions, dtype=float)
    a = np.asarray(infected_controls, dtype=float)
    if p.ndim == 3:
        p = p[t_index]
    if a.ndim == 2:
        a = a[t_index]
    k = len(groups)
    if contacts.size != k or p.shape[0] != k or a.shape[0] != k:
        raise ModelInputError(
            "dimension mismatch between contacts, distributions and groups",
            details={"contacts": contacts.size, "groups": k, "distributions": p.shape[0]},
        )
    m = np.array([g.proportion for g in groups])
    return contacts.as_array() @ (a * p[:, I] * m)


def closed_form_controls(
    u: np.ndarray,
    z: np.ndarray,
    anchors: np.ndarray,
    beta: np.ndarray,
    kappa: np.ndarray,
    c_lambda: np.ndarray,
    c_nu: np.ndarray,
    vaccination_cap: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimisers of the Hamiltonian on [0, 1] x [0, V].

    Broadcasts over leading axes: ``u`` is ``[..., K, 4]``, ``z`` ``[..., K]``
    and ``anchors`` ``[..., K, 3]``.

    Returns:
        ``(alpha, nu, clipped)`` with ``clipped`` true where the unconstrained
        formula left the box.
    """
    raw_s = anchors[..., S] + beta * z * (u[..., S] - u[..., I]) / (2.0 * c_lambda)
    raw_nu = kappa * (u[..., S] - u[..., R]) / (2.0 * c_nu)
    alpha = np.array(anchors, dtype=float, copy=True)
    alpha[..., S] = np.clip(raw_s, 0.0, 1.0)
    alpha[..., I] = np.clip(anchors[..., I], 0.0, 1.0)
    alpha[..., R] = np.clip(anchors[..., R], 0.0, 1.0)
    nu = np.clip(raw_nu, 0.0, vaccination_cap)
    clipped = (raw_s < 0.0) | (raw_s > 1.0) | (raw_nu < 0.0) | (raw_nu > vaccination_cap)
    return alpha, nu, clipped


def best_response_controls(
    t_index: int,
    values: np.ndarray,
    z: np.ndarray,
    groups: Sequence[GroupSpec],
    policy: PolicySchedule,
    grid: TimeGrid,
    vaccination_cap: float = 10.0,
) -> ControlSlice:
    """Equilibrium controls at one node given the value slice ``[K, 3|4]``."""
    u = np.asarray(values, dtype=float)
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ModelInputError("value slice contains non-finite entries")
    if np.any(z < 0.0):
        raise ModelInputError("aggregate must be nonnegative")
    if u.shape[0] != len(groups) or z.shape[0] != len(groups):
        raise ModelInputError("values and aggregates must have one row per group")
    if u.shape[1] == N_CONTROLS:
        u = np.concatenate([u, np.zeros((u.shape[0], 1))], axis=1)

    t = t_index * grid.dt
    anchors = np.array(
        [[_anchor(g, policy, t, c) for c in (Compartment.S, Compartment.I, Compartment.R)] for g in groups]
    )
    params = _param_vectors(groups)
    alpha, nu, clipped = closed_form_controls(
        u, z, anchors, params["beta"], params["kappa"], params["c_lambda"], params["c_nu"], vaccination_cap
    )
    if clipped.any():
        logger.debug(f"Control clipping active at node {t_index} for {int(clipped.sum())} group(s)")
    return ControlSlice(alpha=alpha, nu=nu, clipped=clipped)


def _param_vectors(groups: Sequence[GroupSpec]) -> dict[str, np.ndarray]:
    return {
        "beta": np.array([g.epi.beta for g in groups]),
        "gamma": np.array([g.epi.gamma for g in groups]),
        "eta": np.array([g.epi.eta for g in groups]),
        "kappa": np.array([g.epi.kappa for g in groups]),
        "rho": np.array([g.epi.rho for g in groups]),
        "c_lambda": np.array([g.cost.c_lambda for g in groups]),
        "c_nu": np.array([g.cost.c_nu for g in groups]),
        "c_infected": np.array([g.cost.c_infected for g in groups]),
        "death_cost": np.array([g.cost.death_cost for g in groups]),
        "m": np.array([g.proportion for g in groups]),
    }


class FbodeSystem:
    """Vectorised right-hand sides of the forward-backward system.

    Every method broadcasts over leading (time) axes. Anchors are the levels
    each group's socialization cost is measured against: the guideline for
    followers, ``(1, xi_infected, 1)`` for indifferents.
    """

    def __init__(
        self,
        groups: Sequence[GroupSpec],
        contacts: ContactMatrix,
        policy: PolicySchedule,
        variant: CompartmentSet,
        grid: TimeGrid,
        vaccination_cap: float = 10.0,
    ) -> None:
        self.groups = list(groups)
        self.labels = [g.label for g in self.groups]
        self.policy = policy
        self.variant = variant
        self.grid = grid
        self.vaccination_cap = vaccination_cap
        self.w = contacts.as_array()
        if self.w.shape != (len(self.groups), len(self.groups)):
            raise ModelInputError("dimension mismatch between contacts and group count")

        params = _param_vectors(self.groups)
        self.beta = params["beta"]
        self.gamma = params["gamma"]
        self.eta = params["eta"]
        self.kappa = params["kappa"]
        self.rho = params["rho"]
        self.c_lambda = params["c_lambda"]
        self.c_nu = params["c_nu"]
        self.c_infected = params["c_infected"]
        self.m = params["m"]
        self.follower = np.array([g.is_follower for g in self.groups])
        self.xi = np.array(
            [1.0 if g.cost.xi_infected is None else g.cost.xi_infected for g in self.groups]
        )

        self.terminal = np.zeros((len(self.groups), N_STATES))
        self.terminal[:, D] = params["death_cost"]

        times = grid.times
        self.node_anchors = self.anchors_at(times)
        self.mid_anchors = self.anchors_at(times[:-1] + 0.5 * grid.dt)

    @classmethod
    def from_scenario(
        cls,
        scenario: Scenario,
        grid: TimeGrid | None = None,
        vaccination_cap: float | None = None,
    ) -> "FbodeSystem":
        """Build the system of a scenario, optionally on another grid."""
        return cls(
            scenario.groups,
            scenario.contacts,
            scenario.policy,
            scenario.variant,
            grid or scenario.grid,
            vaccination_cap if vaccination_cap is not None else scenario.solver.vaccination_cap,
        )

    @property
    def n_groups(self) -> int:
        """Number of groups K."""
        return len(self.groups)

    def anchors_at(self, times: np.ndarray) -> np.ndarray:
        """Anchor levels ``[len(times), K, 3]``."""
        guideline = self.policy.sample(times, self.labels)
        intrinsic = np.stack([np.ones_like(self.xi), self.xi, np.ones_like(self.xi)], axis=-1)
        return np.where(self.follower[None, :, None], guideline, intrinsic[None, :, :])

    def aggregate(self, p: np.ndarray, anchors: np.ndarray) -> np.ndarray:
        """Aggregate Z for distributions ``[..., K, 4]``."""
        weighted = anchors[..., I] * p[..., I] * self.m
        return weighted @ self.w.T

    def controls(
        self, u: np.ndarray, z: np.ndarray, anchors: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Best-response controls for costate ``u``."""
        return closed_form_controls(
            u, z, anchors, self.beta, self.kappa, self.c_lambda, self.c_nu, self.vaccination_cap
        )

    def flows(self, p: np.ndarray, alpha_s: np.ndarray, nu: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Time derivative of the distribution, ``p Q``."""
        infection = self.beta * alpha_s * z * p[..., S]
        vaccination = self.kappa * nu * p[..., S]
        recovery = (1.0 - self.rho) * self.gamma * p[..., I]
        death = self.rho * self.gamma * p[..., I]
        waning = self.eta * p[..., R]
        dp = np.empty_like(p)
        dp[..., S] = -infection - vaccination + waning
        dp[..., I] = infection - recovery - death
        dp[..., R] = vaccination + recovery - waning
        dp[..., D] = death
        return dp

    def running_cost(self, alpha: np.ndarray, nu: np.ndarray, anchors: np.ndarray) -> np.ndarray:
        """Running cost per compartment ``[..., K, 4]`` (zero in D)."""
        f = np.zeros(alpha.shape[:-1] + (N_STATES,))
        f[..., S] = self.c_lambda * (anchors[..., S] - alpha[..., S]) ** 2 + self.c_nu * nu**2
        f[..., I] = (anchors[..., I] - alpha[..., I]) ** 2 + self.c_infected
        f[..., R] = (anchors[..., R] - alpha[..., R]) ** 2
        return f

    def hamiltonian(
        self,
        u: np.ndarray,
        alpha: np.ndarray,
        nu: np.ndarray,
        z: np.ndarray,
        anchors: np.ndarray,
    ) -> np.ndarray:
        """Running cost plus ``Q u`` for the given controls, ``[..., K, 4]``."""
        h = self.running_cost(alpha, nu, anchors)
        h[..., S] += self.beta * alpha[..., S] * z * (u[..., I] - u[..., S])
        h[..., S] += self.kappa * nu * (u[..., R] - u[..., S])
        h[..., I] += (1.0 - self.rho) * self.gamma * (u[..., R] - u[..., I])
        h[..., I] += self.rho * self.gamma * (u[..., D] - u[..., I])
        h[..., R] += self.eta * (u[..., S] - u[..., R])
        return h

    def value_drift(self, u: np.ndarray, z: np.ndarray, anchors: np.ndarray) -> np.ndarray:
        """``du/dt = -min H`` at the best-response controls for ``u`` itself."""
        alpha, nu, _ = self.controls(u, z, anchors)
        return -self.hamiltonian(u, alpha, nu, z, anchors)

    def distribution_drift(
        self, p: np.ndarray, u: np.ndarray, z: np.ndarray, anchors: np.ndarray
    ) -> np.ndarray:
        """``dp/dt`` with controls taken from costate ``u``."""
        alpha, nu, _ = self.controls(u, z, anchors)
        return self.flows(p, alpha[..., S], nu, z)
