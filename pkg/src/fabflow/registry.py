"""Known-parameter registry: the machine-readable table of flow parameters.

Every configuration change proposed anywhere in the system is validated
against this table (name, type, range, flow stage, PPA affinity). The seed
table ships as package data and can be extended without code changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ParameterOutOfRange, UnknownParameter

FLOW_STAGES = ("synthesis", "floorplan", "placement", "cts", "routing", "signoff")


@dataclass(frozen=True)
class ParameterDef:
    name: str
    type: str  # int | real | bool | string | choice
    stage: str
    ppa: tuple[str, ...]
    default: object
    range: tuple[float, float] | None = None
    choices: tuple[str, ...] | None = None
    doc: str = ""

    def validate(self, value) -> None:
        """Raise ParameterOutOfRange if value is ill-typed or out of range."""
        if self.type == "bool":
            if not isinstance(value, bool):
                raise ParameterOutOfRange(f"{self.name}: expected bool, got {value!r}")
        elif self.type == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParameterOutOfRange(f"{self.name}: expected int, got {value!r}")
            self._check_range(value)
        elif self.type == "real":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParameterOutOfRange(f"{self.name}: expected number, got {value!r}")
            self._check_range(float(value))
        elif self.type == "choice":
            if value not in (self.choices or ()):
                raise ParameterOutOfRange(
                    f"{self.name}: {value!r} not in {list(self.choices or ())}")
        elif self.type == "string":
            if not isinstance(value, str):
                raise ParameterOutOfRange(f"{self.name}: expected string, got {value!r}")

    def _check_range(self, value: float) -> None:
        if self.range is not None:
            lo, hi = self.range
            if not (lo <= value <= hi):
                raise ParameterOutOfRange(
                    f"{self.name}: {value} outside [{lo}, {hi}]")


class ParameterRegistry:
    """Immutable lookup table of flow parameter definitions."""

    def __init__(self, definitions: list[ParameterDef]):
        self._defs = {d.name: d for d in definitions}

    def __contains__(self, name: str) -> bool:
        return name in self._defs

    def __len__(self) -> int:
        return len(self._defs)

    def get(self, name: str) -> ParameterDef:
        try:
            return self._defs[name]
        except KeyError:
            raise UnknownParameter(name) from None

    def names(self) -> list[str]:
        return sorted(self._defs)

    def defaults(self) -> dict:
        return {name: d.default for name, d in sorted(self._defs.items())}

    def validate_value(self, name: str, value) -> None:
        self.get(name).validate(value)

    def validate_config(self, parameters: dict) -> None:
        for name, value in parameters.items():
            self.validate_value(name, value)

    def affecting(self, ppa_dimension: str) -> set[str]:
        """Parameter names tagged as affecting the given PPA dimension."""
        return {n for n, d in self._defs.items() if ppa_dimension in d.ppa}

    def stage_of(self, name: str) -> str:
        return self.get(name).stage


def _def_from_dict(raw: dict) -> ParameterDef:
    return ParameterDef(
        name=raw["name"],
        type=raw["type"],
        stage=raw["stage"],
        ppa=tuple(raw.get("ppa", ())),
        default=raw["default"],
        range=tuple(raw["range"]) if raw.get("range") else None,
        choices=tuple(raw["choices"]) if raw.get("choices") else None,
        doc=raw.get("doc", ""),
    )


def load_registry(path: str | Path | None = None) -> ParameterRegistry:
    """Load the registry from a JSON file, defaulting to the shipped table."""
    if path is None:
        text = resources.files("fabflow.data").joinpath("parameters.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    defs = [_def_from_dict(d) for d in raw["parameters"]]
    return ParameterRegistry(defs)
