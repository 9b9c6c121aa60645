"""Loader for the parameter tables shipped with the package."""

from importlib import resources
from pathlib import Path
from typing import Any

import yaml

_REQUIRED_SECTIONS = ("population", "parameters", "contacts", "mortality", "guidelines")


class TableLoader:
    """Loads parameter tables from a YAML file at runtime."""

    def __init__(self, tables_file: str | Path | None = None) -> None:
        """Initialize the loader.

        Args:
            tables_file: Path to a tables file; defaults to the packaged
                ``data/parameter_tables.yaml``.
        """
        if tables_file is None:
            self.tables_file = Path(
                str(resources.files("mfg_epi").joinpath("data/parameter_tables.yaml"))
            )
        else:
            self.tables_file = Path(tables_file)
        self.tables = self._load_tables()

    def _load_tables(self) -> dict[str, Any]:
        """Load and sanity-check the tables file.

        Raises:
            FileNotFoundError: If the file doesn't exist.
            ValueError: If the file is empty, malformed or misses a section.
        """
        if not self.tables_file.exists():
            raise FileNotFoundError(f"Parameter tables file not found: {self.tables_file}")

        try:
            with self.tables_file.open(encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ValueError(f"Invalid YAML in parameter tables file: {e}")

        if not data:
            raise ValueError("Parameter tables file is empty")
        if not isinstance(data, dict):
            raise ValueError("Parameter tables file must contain a dictionary")
        missing = [s for s in _REQUIRED_SECTIONS if s not in data]
        if missing:
            raise ValueError(f"Parameter tables file is missing sections: {', '.join(missing)}")

        labels = data["population"]["labels"]
        for name, values in data["parameters"].items():
            if isinstance(values, list) and len(values) != len(labels):
                raise ValueError(
                    f"Parameter '{name}' has {len(values)} entries, expected {len(labels)}"
                )
        return data

    def section(self, name: str) -> dict[str, Any]:
        """Get one top-level section.

        Raises:
            KeyError: If the section doesn't exist.
        """
        if name not in self.tables:
            available = ", ".join(self.tables.keys())
            raise KeyError(f"Table section '{name}' not found. Available sections: {available}")
        section = self.tables[name]
        if not isinstance(section, dict):
            raise ValueError(f"Table section '{name}' must be a mapping")
        return section

    @property
    def labels(self) -> list[str]:
        """Group labels in table order."""
        return list(self.section("population")["labels"])

    def per_group(self, name: str) -> list[float]:
        """A parameter expanded to one value per group."""
        value = self.section("parameters")[name]
        if isinstance(value, list):
            return [float(v) for v in value]
        return [float(value)] * len(self.labels)

    def contact_level(self, a: int, b: int) -> float:
        """Connection strength between the groups at table positions a and b."""
        population = self.section("population")
        contacts = self.section("contacts")
        if a == b:
            return float(contacts["same_group"])
        same_income = population["income"][a] == population["income"][b]
        same_perception = population["perception"][a] == population["perception"][b]
        if same_income or same_perception:
            return float(contacts["same_income_or_perception"])
        return float(contacts["different_both"])
