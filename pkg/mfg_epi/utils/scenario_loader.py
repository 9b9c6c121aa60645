"""Reading and writing scenario files.

A scenario file is a YAML mapping with the sections ``name``, ``description``,
``variant``, ``groups``, ``contacts``, ``policy``, ``initial``, ``grid`` and
``solver``. Groups are listed in index order and carry a ``label`` instead of
a nested id; ``contacts`` is the square matrix as a list of rows. Omitted
``grid``/``solver`` entries and the guideline bound take their values from
the application settings. Unknown keys are errors.
"""

import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError

from ..core.config import settings
from ..core.exceptions import ScenarioError
from ..core.exceptions import ScenarioValidationError
from ..models.scenario import Scenario

logger = logging.getLogger(__name__)

PathPart = str | int

# model-level failures have no location of their own
_MESSAGE_LOCATIONS: tuple[tuple[str, tuple[PathPart, ...]], ...] = (
    ("proportion", ("groups", 0, "proportion")),
    ("contact matrix", ("contacts",)),
    ("initial distribution", ("initial",)),
    ("solver grid", ("solver", "grid")),
    ("rho and death_cost", ("variant",)),
    ("labels must be unique", ("groups",)),
    ("has index", ("groups",)),
)


def _to_model_input(data: dict[str, Any]) -> dict[str, Any]:
    """Translate the file layout into the model layout and fill defaults."""
    out = dict(data)
    groups = out.get("groups")
    if isinstance(groups, list):
        converted = []
        for index, group in enumerate(groups):
            if isinstance(group, dict) and "label" in group and "id" not in group:
                group = dict(group)
                group["id"] = {"index": index, "label": group.pop("label")}
            converted.append(group)
        out["groups"] = converted
    if isinstance(out.get("contacts"), list):
        out["contacts"] = {"w": out["contacts"]}

    defaults = settings.solver_defaults()
    if "grid" not in out and not (isinstance(out.get("solver"), dict) and "grid" in out["solver"]):
        out["grid"] = defaults.grid.model_dump()
    solver = out.get("solver", {})
    if isinstance(solver, dict):
        base = defaults.model_dump(exclude={"grid", "patch_length"})
        out["solver"] = {**base, **solver}
    policy = out.get("policy")
    if isinstance(policy, dict) and "lambda_bar" not in policy:
        out["policy"] = {**policy, "lambda_bar": settings.lambda_bar}
    return out


def _to_file_path(loc: Sequence[PathPart], contacts_as_rows: bool) -> tuple[PathPart, ...]:
    """Map a pydantic error location back onto the file layout."""
    path: list[PathPart] = []
    for part in loc:
        if part == "[key]":
            continue
        if part == "id" and len(path) == 2 and path[0] == "groups":
            path.append("label")
            break
        if part == "w" and path == ["contacts"] and contacts_as_rows:
            continue
        path.append(part)
    return tuple(path)


def _format_key(path: Sequence[PathPart]) -> str:
    key = ""
    for part in path:
        if isinstance(part, int):
            key += f"[{part}]"
        else:
            key += f".{part}" if key else str(part)
    return key


def _node_line(root: yaml.Node | None, path: Sequence[PathPart]) -> int | None:
    """1-based line of the deepest YAML node reachable along ``path``."""
    if root is None:
        return None
    node = root
    for part in path:
        child = None
        if isinstance(node, yaml.MappingNode):
            child = next((v for k, v in node.value if k.value == str(part)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int):
            if 0 <= part < len(node.value):
                child = node.value[part]
        if child is None:
            break
        node = child
    return node.start_mark.line + 1


def _validation_error(
    exc: ValidationError, root: yaml.Node | None, contacts_as_rows: bool
) -> ScenarioValidationError:
    error = exc.errors()[0]
    message = str(error["msg"]).removeprefix("Value error, ")
    path = _to_file_path(error["loc"], contacts_as_rows)
    if not path:
        for fragment, location in _MESSAGE_LOCATIONS:
            if fragment in message:
                path = location
                break
    line = _node_line(root, path)
    extra = len(exc.errors()) - 1
    if extra:
        message += f" (and {extra} more error{'s' if extra > 1 else ''})"
    return ScenarioValidationError(message, key=_format_key(path) or None, line=line)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario YAML text.

    Raises:
        ScenarioValidationError: On malformed YAML or an invalid scenario.
    """
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioValidationError(f"malformed YAML in {source}: {e}", line=line) from e

    if not isinstance(data, dict):
        raise ScenarioValidationError(f"{source} must contain a mapping", line=1)

    contacts_as_rows = isinstance(data.get("contacts"), list)
    try:
        scenario = Scenario.model_validate(_to_model_input(data))
    except ValidationError as e:
        raise _validation_error(e, root, contacts_as_rows) from e

    logger.debug(f"Loaded scenario {scenario.name} from {source}")
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file.

    Raises:
        ScenarioError: If the file cannot be read.
        ScenarioValidationError: If the content is invalid; the message names
            the offending key and its line.
    """
    file_path = Path(path)
    if not file_path.is_file():
        raise ScenarioError(f"Scenario file not found: {file_path}")
    try:
        text = file_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"Cannot read scenario file {file_path}: {e}") from e
    return parse_scenario(text, source=str(file_path))


def _drop_none(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _drop_none(v) for k, v in value.items() if v is not None}
    if isinstance(value, list):
        return [_drop_none(v) for v in value]
    return value


def scenario_to_file_data(scenario: Scenario) -> dict[str, Any]:
    """Scenario in the file layout, ready for YAML or JSON emission."""
    data = scenario.model_dump(mode="json")
    data["groups"] = [
        {"label": g["id"]["label"], **{k: v for k, v in g.items() if k != "id"}}
        for g in data["groups"]
    ]
    data["contacts"] = data["contacts"]["w"]
    data["solver"].pop("grid", None)
    return _drop_none(data)


def dump_scenario(scenario: Scenario) -> str:
    """Serialise a scenario to YAML that :func:`load_scenario` reads back."""
    return yaml.safe_dump(scenario_to_file_data(scenario), sort_keys=False, default_flow_style=None)
