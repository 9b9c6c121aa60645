"""Built-in scenarios: the survey-calibrated population under each experiment."""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..core.config import settings
from ..core.exceptions import ScenarioNotFoundError
from ..models.policy import PolicyRule
from ..models.policy import PolicySchedule
from ..models.population import AuthorityKind
from ..models.population import Compartment
from ..models.population import CompartmentSet
from ..models.population import ContactMatrix
from ..models.population import CostParams
from ..models.population import EpidemicParams
from ..models.population import GroupId
from ..models.population import GroupSpec
from ..models.reports import Quantity
from ..models.scenario import Scenario
from ..models.scenario import ScenarioPair
from ..models.scenario import ScenarioSuite
from ..utils.table_loader import TableLoader

logger = logging.getLogger(__name__)

CatalogEntry = Scenario | ScenarioPair | ScenarioSuite

INCOMES = ("L", "M", "H")
ALL_FOLLOWER_MAPPING = {"LF": "L(F)", "MF": "M(F)", "HF": "H(F)"}


@lru_cache(maxsize=1)
def tables() -> TableLoader:
    """Packaged parameter tables."""
    return TableLoader()


@dataclass(frozen=True)
class PopulationOverrides:
    """Per-experiment replacements of table values (None keeps the table)."""

    c_nu: float | None = None
    xi_infected: float | None = None
    kappa: float | None = None
    c_infected: float | None = None
    eta: float | None = None
    rho: float = 0.0
    death_cost: float = 0.0


def guideline(name: str) -> PolicySchedule:
    """Constant guideline by name (permissive, adaptive or strict)."""
    levels = tables().section("guidelines")[name]
    default = float(levels["S"])
    rules = [
        PolicyRule(compartments=[Compartment(c)], breakpoints=[(0.0, float(levels[c]))])
        for c in ("I", "R")
        if float(levels[c]) != default
    ]
    return PolicySchedule(lambda_bar=settings.lambda_bar, default=default, rules=rules)


def _group(
    index: int,
    label: str,
    kind: AuthorityKind,
    proportion: float,
    values: dict[str, float],
    overrides: PopulationOverrides,
) -> GroupSpec:
    def pick(name: str) -> float:
        override = getattr(overrides, name)
        return float(values[name]) if override is None else float(override)

    indifferent = kind is AuthorityKind.INDIFFERENT
    return GroupSpec(
        id=GroupId(index=index, label=label),
        kind=kind,
        proportion=proportion,
        epi=EpidemicParams(
            beta=values["beta"],
            gamma=values["gamma"],
            eta=pick("eta"),
            kappa=pick("kappa"),
            rho=overrides.rho,
        ),
        cost=CostParams(
            c_lambda=values["c_lambda"],
            c_nu=pick("c_nu"),
            c_infected=pick("c_infected"),
            xi_infected=pick("xi_infected") if indifferent else None,
            death_cost=overrides.death_cost,
        ),
    )


def _table_values(index: int) -> dict[str, float]:
    t = tables()
    names = ("beta", "gamma", "eta", "kappa", "c_lambda", "c_nu", "c_infected", "xi_infected")
    return {name: t.per_group(name)[index] for name in names}


def mixed_population(
    overrides: PopulationOverrides = PopulationOverrides(),
) -> tuple[list[GroupSpec], ContactMatrix, dict[str, float]]:
    """Six income x perception groups.

    Returns:
        Groups, contact matrix and the raw table shares (percent).
    """
    t = tables()
    population = t.section("population")
    percent = [float(x) for x in population["percent"]]
    proportions = np.array(percent) / sum(percent)
    groups = [
        _group(k, label, AuthorityKind(population["kinds"][k]), float(proportions[k]), _table_values(k), overrides)
        for k, label in enumerate(t.labels)
    ]
    n = len(groups)
    contacts = ContactMatrix.from_array([[t.contact_level(a, b) for b in range(n)] for a in range(n)])
    return groups, contacts, dict(zip(t.labels, percent, strict=True))


def all_follower_population(
    overrides: PopulationOverrides = PopulationOverrides(),
) -> tuple[list[GroupSpec], ContactMatrix, dict[str, float]]:
    """Three income groups, everyone a follower.

    Parameters that differ by perception are averaged over the two
    perception groups of an income; the contact matrix averages each 2x2
    perception block; shares are summed per income.
    """
    t = tables()
    population = t.section("population")
    members = {inc: [k for k, v in enumerate(population["income"]) if v == inc] for inc in INCOMES}
    _, mixed_contacts, _ = mixed_population()
    w = mixed_contacts.as_array()
    percent = [sum(float(population["percent"][k]) for k in members[inc]) for inc in INCOMES]
    proportions = np.array(percent) / sum(percent)

    groups = []
    for index, inc in enumerate(INCOMES):
        rows = [_table_values(k) for k in members[inc]]
        values = {name: float(np.mean([r[name] for r in rows])) for name in rows[0]}
        groups.append(
            _group(index, f"{inc}(F)", AuthorityKind.FOLLOWER, float(proportions[index]), values, overrides)
        )
    averaged = [[float(w[np.ix_(members[a], members[b])].mean()) for b in INCOMES] for a in INCOMES]
    labels = [g.label for g in groups]
    return groups, ContactMatrix.from_array(averaged), dict(zip(labels, percent, strict=True))


def _scenario(
    name: str,
    description: str,
    policy: str = "permissive",
    overrides: PopulationOverrides = PopulationOverrides(),
    all_follower: bool = False,
) -> Scenario:
    builder = all_follower_population if all_follower else mixed_population
    groups, contacts, raw = builder(overrides)
    variant = CompartmentSet.SIRD if overrides.rho > 0 or overrides.death_cost > 0 else CompartmentSet.SIR
    infected = float(tables().section("parameters")["initial_infected"])
    initial = {g.label: {Compartment.S: 1.0 - infected, Compartment.I: infected} for g in groups}
    solver = settings.solver_defaults()
    return Scenario(
        name=name,
        description=description,
        variant=variant,
        groups=groups,
        contacts=contacts,
        policy=guideline(policy),
        initial=initial,
        grid=solver.grid,
        solver=solver,
        source_proportions=raw,
    )


def _variation(name: str) -> float:
    return float(tables().section("variations")[name])


def _sird(**kwargs: float) -> PopulationOverrides:
    mortality = tables().section("mortality")
    values = {"rho": float(mortality["rho"]), "death_cost": float(mortality["death_cost"])}
    values.update(kwargs)
    return PopulationOverrides(**values)


_SINGLES: dict[str, Callable[[], Scenario]] = {
    "permissive": lambda: _scenario("permissive", "Permissive guideline, lambda = 0.9 everywhere"),
    "adaptive": lambda: _scenario("adaptive", "Stricter guideline for infected only", "adaptive"),
    "strict": lambda: _scenario("strict", "Strict guideline, lambda = 0.6 everywhere", "strict"),
    "vacc-cost-low": lambda: _scenario(
        "vacc-cost-low",
        "Uniformly low vaccination cost",
        overrides=PopulationOverrides(c_nu=_variation("low_vaccination_cost")),
    ),
    "all-follower": lambda: _scenario(
        "all-follower", "Income-only population of followers", all_follower=True
    ),
    "xi-low": lambda: _scenario(
        "xi-low",
        "Lower intrinsic socialization of infected indifferents",
        overrides=PopulationOverrides(xi_infected=_variation("low_xi_infected")),
    ),
    "kappa-high": lambda: _scenario(
        "kappa-high",
        "Higher vaccination efficacy",
        overrides=PopulationOverrides(kappa=_variation("high_kappa")),
    ),
    "c-inf-low": lambda: _scenario(
        "c-inf-low",
        "Uniformly low infection cost",
        overrides=PopulationOverrides(c_infected=_variation("low_c_infected")),
    ),
    "eta-high": lambda: _scenario(
        "eta-high",
        "Faster waning of immunity",
        overrides=PopulationOverrides(eta=_variation("high_eta")),
    ),
    "sird-baseline": lambda: _scenario("sird-baseline", "SIRD, permissive guideline", overrides=_sird()),
    "sird-adaptive": lambda: _scenario("sird-adaptive", "SIRD, adaptive guideline", "adaptive", _sird()),
    "sird-strict": lambda: _scenario("sird-strict", "SIRD, strict guideline", "strict", _sird()),
    "sird-rho-low": lambda: _scenario(
        "sird-rho-low", "SIRD with lower mortality", overrides=_sird(rho=_variation("low_rho"))
    ),
    "sird-no-death-cost": lambda: _scenario(
        "sird-no-death-cost",
        "SIRD without terminal death cost",
        overrides=_sird(death_cost=_variation("no_death_cost")),
    ),
}

# pair name -> (baseline, treatment, description)
_PAIRS: dict[str, tuple[str, str, str]] = {
    "permissive-vs-adaptive": ("permissive", "adaptive", "Permissive versus adaptive guideline"),
    "permissive-vs-strict": ("permissive", "strict", "Permissive versus strict guideline"),
    "vacc-cost-pair": ("permissive", "vacc-cost-low", "Group-adaptive versus uniformly low vaccination cost"),
    "mixed-vs-all-follower": ("permissive", "all-follower", "Mixed-perception versus all-follower population"),
    "xi-pair": ("permissive", "xi-low", "Intrinsic infected socialization 0.97 versus 0.9"),
    "kappa-pair": ("permissive", "kappa-high", "Vaccination efficacy 0.03 versus 0.1"),
    "c-inf-pair": ("permissive", "c-inf-low", "Group-adaptive versus uniformly low infection cost"),
    "eta-pair": ("permissive", "eta-high", "Waning rate 0.004 versus 0.01"),
    "sird-permissive-vs-adaptive": ("sird-baseline", "sird-adaptive", "SIRD: permissive versus adaptive"),
    "sird-permissive-vs-strict": ("sird-baseline", "sird-strict", "SIRD: permissive versus strict"),
    "sird-rho-pair": ("sird-baseline", "sird-rho-low", "SIRD: mortality 0.005 versus 0.002"),
    "sird-death-cost-pair": ("sird-baseline", "sird-no-death-cost", "SIRD: death cost 80 versus 0"),
}

# suite name -> (members, reference, description)
_SUITES: dict[str, tuple[tuple[str, ...], str, str]] = {
    "guideline-peaks": (
        ("permissive", "adaptive", "strict"),
        "permissive",
        "Infection peak times and values across the three guidelines",
    ),
    "sird-guideline-peaks": (
        ("sird-baseline", "sird-adaptive", "sird-strict"),
        "sird-baseline",
        "SIRD infection peaks across the three guidelines",
    ),
}


def catalog_names() -> list[str]:
    """Every name :func:`builtin` accepts."""
    return [*_SINGLES, *_PAIRS, *_SUITES]


def describe() -> dict[str, tuple[str, str]]:
    """Name to (kind, description) for listing."""
    out: dict[str, tuple[str, str]] = {}
    for name in _SINGLES:
        out[name] = ("scenario", _SINGLES[name]().description)
    for name, (_, _, description) in _PAIRS.items():
        out[name] = ("pair", description)
    for name, (_, _, description) in _SUITES.items():
        out[name] = ("suite", description)
    return out


def builtin(name: str) -> CatalogEntry:
    """Resolve a catalog name.

    Raises:
        ScenarioNotFoundError: If the name is not in the catalog; the message
            lists every available name.
    """
    if name in _SINGLES:
        return _SINGLES[name]()
    if name in _PAIRS:
        base, treat, description = _PAIRS[name]
        mapping = ALL_FOLLOWER_MAPPING if treat == "all-follower" else None
        return ScenarioPair(
            name=name,
            description=description,
            baseline=_SINGLES[base](),
            treatment=_SINGLES[treat](),
            comparison_quantities=list(Quantity),
            group_mapping=mapping,
        )
    if name in _SUITES:
        members, reference, description = _SUITES[name]
        return ScenarioSuite(
            name=name,
            description=description,
            reference=reference,
            members=[_SINGLES[m]() for m in members],
        )
    logger.debug(f"Unknown catalog name {name!r}")
    raise ScenarioNotFoundError(name, catalog_names())
