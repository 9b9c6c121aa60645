#!/usr/bin/env python3
"""mfg-epi CLI - solve, compare and validate epidemic mean field games."""

import sys
from collections.abc import Callable
from typing import Any

import click
from dotenv import load_dotenv

from . import __version__
from .core.config import settings
from .core.exceptions import handle_cli_error
from .core.logging_config import setup_logging
from .services.run_service import RunOutcome
from .services.run_service import RunService

load_dotenv()

_SOLVER_KEYS = ("horizon", "dt", "epsilon", "damping", "integrator", "patch_length", "max_iters")


def solver_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """Options shared by every command that solves a scenario."""
    options = [
        click.option("--scenario", "-s", "scenario", required=True, help="Catalog name or scenario YAML path"),
        click.option("--out", "-o", "out", type=click.Path(file_okay=False), help="Output directory"),
        click.option("--dt", type=float, help="Time step"),
        click.option("--horizon", type=float, help="Time horizon T"),
        click.option("--epsilon", type=float, help="Fixed-point tolerance"),
        click.option("--damping", type=float, help="Relaxation weight in (0, 1]"),
        click.option("--integrator", type=click.Choice(["euler", "rk4"]), help="Time stepping scheme"),
        click.option("--patch", "patch_length", type=float, help="Patch length for time-patching"),
        click.option("--max-iters", type=int, help="Iteration cap"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _overrides(kwargs: dict[str, Any]) -> dict[str, Any]:
    return {key: kwargs.pop(key) for key in _SOLVER_KEYS if key in kwargs}


def _execute(ctx: click.Context, action: Callable[[], RunOutcome], done: str) -> None:
    """Run a command behind the shared error boundary."""
    verbose = ctx.obj.get("verbose", False) if ctx.obj else False
    try:
        outcome = action()
    except Exception as e:
        sys.exit(handle_cli_error(e, verbose))
    click.echo(f"{done} Artifacts saved to: {outcome.out_dir}")
    if verbose:
        for path in outcome.files:
            click.echo(f"  {path}")


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging and tracebacks")
@click.option("--log-file", type=click.Path(dir_okay=False), help="Also log to this file")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, log_file: str | None) -> None:
    """Multi-population mean field game solver for SIR/SIRD epidemics."""
    setup_logging("DEBUG" if verbose else settings.log_level, log_file or settings.log_file)
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


@cli.command()
@solver_options
@click.option("--allow-nonconverged", is_flag=True, help="Exit 0 even if the iteration did not converge")
@click.pass_context
def run(ctx: click.Context, scenario: str, out: str | None, allow_nonconverged: bool, **solver: Any) -> None:
    """Solve one scenario and write trajectories, metrics and plots."""
    service = RunService(settings)
    overrides = _overrides(solver)
    _execute(
        ctx,
        lambda: service.run(scenario, overrides, out, allow_nonconverged),
        "Run complete!",
    )


@cli.command()
@solver_options
@click.option("--allow-nonconverged", is_flag=True, help="Exit 0 even if the iteration did not converge")
@click.pass_context
def compare(ctx: click.Context, scenario: str, out: str | None, allow_nonconverged: bool, **solver: Any) -> None:
    """Solve both members of a scenario pair and compare them."""
    service = RunService(settings)
    overrides = _overrides(solver)
    _execute(
        ctx,
        lambda: service.compare(scenario, overrides, out, allow_nonconverged),
        "Comparison complete!",
    )


@cli.command()
@solver_options
@click.option("--agents", type=click.IntRange(min=1), help="Agents for the finite-N simulation (skipped when omitted)")
@click.option("--replicas", type=click.IntRange(min=1), default=1, show_default=True, help="Simulation replicas")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True, help="Master seed")
@click.option("--allow-nonconverged", is_flag=True, help="Validate a non-converged solution anyway")
@click.option("--inject-perturbation", type=float, default=None, hidden=True)
@click.pass_context
def validate(
    ctx: click.Context,
    scenario: str,
    out: str | None,
    agents: int | None,
    replicas: int,
    seed: int,
    allow_nonconverged: bool,
    inject_perturbation: float | None,
    **solver: Any,
) -> None:
    """Check stationarity, best responses, Nash deviations and the finite-N limit."""
    service = RunService(settings)
    overrides = _overrides(solver)
    _execute(
        ctx,
        lambda: service.validate(
            scenario,
            overrides,
            out,
            n_agents=agents,
            n_replicas=replicas,
            seed=seed,
            allow_nonconverged=allow_nonconverged,
            inject_perturbation=inject_perturbation,
        ),
        "Validation passed!",
    )


@cli.command()
@solver_options
@click.option("--allow-nonconverged", is_flag=True, help="Exit 0 even if the iteration did not converge")
@click.pass_context
def peaks(ctx: click.Context, scenario: str, out: str | None, allow_nonconverged: bool, **solver: Any) -> None:
    """Compare infection peak times and values across a scenario suite."""
    service = RunService(settings)
    overrides = _overrides(solver)
    _execute(
        ctx,
        lambda: service.peaks(scenario, overrides, out, allow_nonconverged),
        "Peak comparison complete!",
    )


@cli.command()
@solver_options
@click.option("--target", type=float, default=0.03859, show_default=True, help="Target LI-HF infection disparity")
@click.option("--lower", type=float, default=60.0, show_default=True, help="Smallest horizon searched")
@click.option("--upper", type=float, default=160.0, show_default=True, help="Largest horizon searched")
@click.option("--tolerance", type=float, default=1e-3, show_default=True, help="Accepted distance to the target")
@click.pass_context
def calibrate(
    ctx: click.Context,
    scenario: str,
    out: str | None,
    target: float,
    lower: float,
    upper: float,
    tolerance: float,
    **solver: Any,
) -> None:
    """Fit the horizon so the equilibrium hits a target infection disparity."""
    service = RunService(settings)
    overrides = _overrides(solver)
    overrides.pop("horizon", None)
    _execute(
        ctx,
        lambda: service.calibrate(scenario, overrides, out, target, (lower, upper), tolerance),
        "Calibration complete!",
    )


@cli.command(name="list")
def list_scenarios() -> None:
    """List the built-in scenarios, pairs and suites."""
    from .services.scenario_catalog import describe

    for name, (kind, description) in describe().items():
        click.echo(f"{name:<30} {kind:<9} {description}")


@cli.command()
def version() -> None:
    """Show version information."""
    click.echo(f"mfg-epi v{__version__}")


if __name__ == "__main__":
    cli()
