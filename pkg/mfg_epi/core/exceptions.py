"""Custom exceptions and the CLI error boundary for the equilibrium solver."""

import logging
import traceback
from typing import Any

import click
from pydantic import ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NONCONVERGENCE = 2
EXIT_VALIDATION = 3


class MfgEpiException(Exception):
    """Base exception for the mfg-epi toolkit."""

    def __init__(
        self,
        message: str,
        exit_code: int = EXIT_USAGE,
        details: dict[str, Any] | None = None,
    ):
        self.message = message
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(self.message)


class ModelInputError(MfgEpiException):
    """Exception raised when a model operation receives inadmissible inputs."""

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        super().__init__(message=message, exit_code=EXIT_USAGE, details=details)


class GridMismatchError(ModelInputError):
    """Exception raised when two paths are not sampled on the same grid."""

    def __init__(self, left: int, right: int):
        message = f"Series lengths differ: {left} != {right}"
        super().__init__(message=message, details={"left": left, "right": right})


class UnknownGroupError(ModelInputError):
    """Exception raised when a group label or index is not part of a population."""

    def __init__(self, group: str | int, available: list[str]):
        message = (
            f"Group '{group}' not found. Available groups: {', '.join(available)}"
        )
        super().__init__(
            message=message, details={"group": group, "available": available}
        )


class ScenarioError(MfgEpiException):
    """Exception raised when a scenario cannot be resolved or parsed."""

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        super().__init__(message=message, exit_code=EXIT_USAGE, details=details)


class ScenarioNotFoundError(ScenarioError):
    """Exception raised when a catalog name is unknown."""

    def __init__(self, name: str, available: list[str]):
        message = (
            f"Scenario '{name}' not found. Available scenarios: {', '.join(available)}"
        )
        super().__init__(message=message, details={"name": name, "available": available})


class ScenarioValidationError(ScenarioError):
    """Exception raised when a scenario file violates the schema or an invariant."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        location = ""
        if key is not None:
            location += f" at '{key}'"
        if line is not None:
            location += f" (line {line})"
        super().__init__(
            message=f"Invalid scenario{location}: {message}",
            details={"key": key, "line": line},
        )
        self.key = key
        self.line = line


class NumericalBlowUpError(MfgEpiException):
    """Exception raised when an integrated path leaves its admissible range."""

    def __init__(self, quantity: str, index: int, value: float):
        message = (
            f"Numerical blow-up in {quantity} at time index {index} (value {value:.6g})"
        )
        super().__init__(
            message=message,
            exit_code=EXIT_NONCONVERGENCE,
            details={"quantity": quantity, "index": index, "value": value},
        )


class NonConvergenceError(MfgEpiException):
    """Exception raised when the fixed-point iteration does not reach tolerance."""

    def __init__(
        self, iterations: int, residual: float, patch_index: int | None = None
    ):
        where = "" if patch_index is None else f" in patch {patch_index}"
        message = (
            f"Fixed point not reached{where} after {iterations} iterations "
            f"(residual {residual:.3e})"
        )
        super().__init__(
            message=message,
            exit_code=EXIT_NONCONVERGENCE,
            details={
                "iterations": iterations,
                "residual": residual,
                "patch_index": patch_index,
            },
        )


class ValidationFailedError(MfgEpiException):
    """Exception raised when one or more equilibrium checks fail."""

    def __init__(self, failed_checks: list[str]):
        message = f"Validation failed: {', '.join(failed_checks)}"
        super().__init__(
            message=message,
            exit_code=EXIT_VALIDATION,
            details={"failed_checks": failed_checks},
        )


def handle_cli_error(exc: BaseException, verbose: bool = False) -> int:
    """Report an exception on stderr and return the process exit code."""
    if isinstance(exc, MfgEpiException):
        click.echo(f"Error: {exc.message}", err=True)
        code = exc.exit_code
    elif isinstance(exc, ValidationError):
        click.echo(f"Error: invalid input: {exc}", err=True)
        code = EXIT_USAGE
    elif isinstance(exc, (FileNotFoundError, ValueError, KeyError)):
        click.echo(f"Error: {exc}", err=True)
        code = EXIT_USAGE
    else:
        logger.error(f"Unhandled exception: {exc}")
        click.echo(f"Error: {exc}", err=True)
        code = EXIT_USAGE

    if verbose:
        click.echo(traceback.format_exc(), err=True)
    return code
