"""Nested hyperparameter spaces: schema parsing, normalization, flat encodings.

A space is a depth-one forest. Root hyperparameters are always active; a root
categorical may own dependent hyperparameters that are active only when the
parent takes one of the owning choices (an optimizer choice brings its own
knobs). Numeric values are normalized to [0, 1] according to the sampling
distribution they were drawn from, so that downstream kernels see comparable
scales regardless of the raw units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, SchemaError

UNIFORM = "uniform"
DISCRETE_UNIFORM = "discrete-uniform"
LOG_UNIFORM = "log-uniform"
CATEGORICAL = "categorical"

NUMERIC_KINDS = (UNIFORM, DISCRETE_UNIFORM, LOG_UNIFORM)
ALL_KINDS = NUMERIC_KINDS + (CATEGORICAL,)


@dataclass(frozen=True)
class HyperparameterDef:
    """One tunable dimension: a numeric range or a categorical choice list."""

    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    choices: tuple[Any, ...] = ()

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaError("hyperparameter name must be non-empty")
        if self.kind not in ALL_KINDS:
            raise SchemaError(
                f"hyperparameter '{self.name}': unknown kind '{self.kind}' "
                f"(expected one of {', '.join(ALL_KINDS)})"
            )
        if self.kind == CATEGORICAL:
            if self.low is not None or self.high is not None:
                raise SchemaError(f"categorical '{self.name}' must not declare bounds")
            if len(self.choices) < 2:
                raise SchemaError(f"categorical '{self.name}' needs at least 2 choices")
            if len(set(self.choices)) != len(self.choices):
                raise SchemaError(f"categorical '{self.name}' has duplicate choices")
            return
        if self.choices:
            raise SchemaError(f"numeric '{self.name}' must not declare choices")
        if self.low is None or self.high is None:
            raise SchemaError(f"numeric '{self.name}' requires bounds [low, high]")
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise SchemaError(f"'{self.name}': bounds must be finite")
        if not self.low < self.high:
            raise SchemaError(f"'{self.name}': low must be strictly below high")
        if self.kind == LOG_UNIFORM and self.low <= 0:
            raise SchemaError(f"log-uniform '{self.name}' requires low > 0")
        if self.kind == DISCRETE_UNIFORM:
            for b in (self.low, self.high):
                if abs(b - round(b)) > 1e-9:
                    raise SchemaError(f"discrete-uniform '{self.name}' requires integer bounds")

    @property
    def is_numeric(self) -> bool:
        return self.kind != CATEGORICAL

    def normalize(self, value: Any) -> float | int:
        """Map a raw value to [0, 1] (numeric) or a choice index (categorical)."""
        if self.kind == CATEGORICAL:
            try:
                return self.choices.index(value)
            except ValueError:
                raise ConfigError(
                    f"'{self.name}': unknown choice {value!r} (choices: {list(self.choices)})"
                ) from None
        try:
            x = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"'{self.name}': expected a number, got {value!r}") from None
        if not (self.low <= x <= self.high):
            raise ConfigError(
                f"'{self.name}': value {x!r} outside bounds [{self.low}, {self.high}]"
            )
        if self.kind == DISCRETE_UNIFORM and abs(x - round(x)) > 1e-9:
            raise ConfigError(f"'{self.name}': discrete-uniform value {x!r} is not an integer")
        if self.kind == LOG_UNIFORM:
            return (math.log(x) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (x - self.low) / (self.high - self.low)

    def denormalize(self, unit: float) -> Any:
        """Inverse of :meth:`normalize`; numeric kinds only, no rounding."""
        if self.kind == CATEGORICAL:
            return self.choices[int(unit)]
        if self.kind == LOG_UNIFORM:
            return math.exp(math.log(self.low) + unit * (math.log(self.high) - math.log(self.low)))
        return self.low + unit * (self.high - self.low)


@dataclass(frozen=True)
class RawConfiguration:
    """Raw hyperparameter assignment; only active names need values."""

    values: Mapping[str, Any]


@dataclass(frozen=True)
class NormalizedConfiguration:
    """Unit-scale view of a configuration plus its activity pattern."""

    numeric: Mapping[str, float]
    categorical: Mapping[str, int]
    activity: Mapping[str, bool]


class HyperparameterSpace:
    """An ordered set of hyperparameters plus a depth-one dependency forest.

    ``dependencies`` maps ``(parent name, choice value)`` to the names that are
    active only under that choice. A dependent may be owned by several choices
    of the *same* parent (a knob shared by most branches), but never by two
    different parents, and parents must themselves be root categoricals.
    """

    def __init__(
        self,
        hyperparameters: list[HyperparameterDef],
        dependencies: Mapping[tuple[str, Any], list[str]] | None = None,
        declared_dimensions: int | None = None,
    ) -> None:
        self.hyperparameters: tuple[HyperparameterDef, ...] = tuple(hyperparameters)
        deps = {k: tuple(v) for k, v in (dependencies or {}).items()}
        self.dependencies: dict[tuple[str, Any], tuple[str, ...]] = deps

        names = [d.name for d in self.hyperparameters]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise SchemaError(f"duplicate hyperparameter name '{dup}'")
        self._by_name = {d.name: d for d in self.hyperparameters}

        if declared_dimensions is not None and declared_dimensions != len(names):
            raise SchemaError(
                f"declared dimensionality {declared_dimensions} does not match "
                f"{len(names)} named hyperparameters"
            )

        parent_of: dict[str, str] = {}
        owners: dict[str, set[Any]] = {}
        for (parent, choice), children in deps.items():
            pdef = self._by_name.get(parent)
            if pdef is None:
                raise SchemaError(f"dependency parent '{parent}' is not a declared hyperparameter")
            if pdef.kind != CATEGORICAL:
                raise SchemaError(f"dependency parent '{parent}' must be categorical")
            if choice not in pdef.choices:
                raise SchemaError(f"parent '{parent}' has no choice {choice!r}")
            if len(set(children)) != len(children):
                raise SchemaError(f"duplicate child under ('{parent}', {choice!r})")
            for child in children:
                if child not in self._by_name:
                    raise SchemaError(f"dependent '{child}' is not a declared hyperparameter")
                if child == parent:
                    raise SchemaError(f"'{child}' cannot depend on itself")
                prev = parent_of.get(child)
                if prev is not None and prev != parent:
                    raise SchemaError(
                        f"dependent '{child}' is owned by two parents "
                        f"('{prev}' and '{parent}'); the dependency graph must be a forest"
                    )
                parent_of[child] = parent
                owners.setdefault(child, set()).add(choice)
        for parent, _ in deps:
            if parent in parent_of:
                raise SchemaError(
                    f"'{parent}' is both a dependent and a parent; "
                    "nesting deeper than one level is not supported"
                )

        self._parent_of = parent_of
        self._owning_choices = {c: frozenset(v) for c, v in owners.items()}
        self.roots: tuple[str, ...] = tuple(n for n in names if n not in parent_of)
        self.numeric_names: tuple[str, ...] = tuple(
            d.name for d in self.hyperparameters if d.is_numeric
        )
        self.categorical_names: tuple[str, ...] = tuple(
            d.name for d in self.hyperparameters if not d.is_numeric
        )

    @property
    def dimensions(self) -> int:
        return len(self.hyperparameters)

    def __getitem__(self, name: str) -> HyperparameterDef:
        try:
            return self._by_name[name]
        except KeyError:
            raise ConfigError(f"unknown hyperparameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def parent_of(self, name: str) -> str | None:
        return self._parent_of.get(name)

    def owning_choices(self, name: str) -> frozenset:
        return self._owning_choices.get(name, frozenset())

    def activity(self, values: Mapping[str, Any]) -> dict[str, bool]:
        """Resolve which hyperparameters are active for the given raw values."""
        active: dict[str, bool] = {}
        for d in self.hyperparameters:
            parent = self._parent_of.get(d.name)
            if parent is None:
                active[d.name] = True
            else:
                if parent not in values:
                    raise ConfigError(f"missing value for root hyperparameter '{parent}'")
                active[d.name] = values[parent] in self._owning_choices[d.name]
        return active


def parse_space(document: str | bytes | Mapping[str, Any]) -> HyperparameterSpace:
    """Parse a space schema document (JSON text or an already-decoded mapping).

    Schema: ``{"hyperparameters": [{"name", "kind", "bounds"|"choices"}, ...],
    "dependencies": [{"parent", "choice", "children"}, ...], "dimensions"?}``.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"space document is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise SchemaError("space document must be a JSON object")
    if "hyperparameters" not in doc:
        raise SchemaError("space document is missing 'hyperparameters'")

    defs = []
    for entry in doc["hyperparameters"]:
        if not isinstance(entry, Mapping) or "name" not in entry or "kind" not in entry:
            raise SchemaError(f"bad hyperparameter entry: {entry!r}")
        kind = entry["kind"]
        if kind == CATEGORICAL:
            defs.append(
                HyperparameterDef(
                    name=entry["name"], kind=kind, choices=tuple(entry.get("choices", ()))
                )
            )
        else:
            bounds = entry.get("bounds")
            if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
                raise SchemaError(f"'{entry['name']}': 'bounds' must be a [low, high] pair")
            defs.append(
                HyperparameterDef(
                    name=entry["name"], kind=kind, low=float(bounds[0]), high=float(bounds[1])
                )
            )

    deps: dict[tuple[str, Any], list[str]] = {}
    for entry in doc.get("dependencies", ()):
        if not isinstance(entry, Mapping) or not {"parent", "choice", "children"} <= set(entry):
            raise SchemaError(f"bad dependency entry: {entry!r}")
        key = (entry["parent"], entry["choice"])
        if key in deps:
            raise SchemaError(f"duplicate dependency entry for {key!r}")
        deps[key] = list(entry["children"])

    declared = doc.get("dimensions")
    return HyperparameterSpace(defs, deps, None if declared is None else int(declared))


def load_space(path: str | Path) -> HyperparameterSpace:
    return parse_space(Path(path).read_text(encoding="utf-8"))


def space_to_document(space: HyperparameterSpace) -> dict:
    """Inverse of :func:`parse_space`, for writing bundles."""
    hps = []
    for d in space.hyperparameters:
        if d.kind == CATEGORICAL:
            hps.append({"name": d.name, "kind": d.kind, "choices": list(d.choices)})
        else:
            hps.append({"name": d.name, "kind": d.kind, "bounds": [d.low, d.high]})
    deps = [
        {"parent": parent, "choice": choice, "children": list(children)}
        for (parent, choice), children in space.dependencies.items()
    ]
    return {"dimensions": space.dimensions, "hyperparameters": hps, "dependencies": deps}


def normalize_config(
    space: HyperparameterSpace, raw: RawConfiguration | Mapping[str, Any]
) -> NormalizedConfiguration:
    """Validate a raw configuration and map it onto the unit scale.

    Values supplied for inactive hyperparameters are ignored; active ones must
    all be present and within their declared ranges.
    """
    values = raw.values if isinstance(raw, RawConfiguration) else raw
    for root in space.roots:
        if root not in values:
            raise ConfigError(f"missing value for root hyperparameter '{root}'")
    activity = space.activity(values)
    numeric: dict[str, float] = {}
    categorical: dict[str, int] = {}
    for d in space.hyperparameters:
        if not activity[d.name]:
            continue
        if d.name not in values:
            raise ConfigError(f"missing value for active hyperparameter '{d.name}'")
        out = d.normalize(values[d.name])
        if d.is_numeric:
            numeric[d.name] = float(out)
        else:
            categorical[d.name] = int(out)
    return NormalizedConfiguration(numeric=numeric, categorical=categorical, activity=activity)


def flat_vector(
    space: HyperparameterSpace, cfg: NormalizedConfiguration
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-length encoding: numeric features plus categorical indices.

    Inactive numeric dimensions are imputed at 0.5 (the midpoint of the
    normalized range); each categorical gets a dedicated extra "inactive"
    index equal to its number of choices. Two configurations that agree on
    their active dimensions therefore encode identically no matter what raw
    residue they carry on inactive ones.
    """
    nums = np.empty(len(space.numeric_names), dtype=np.float64)
    for i, name in enumerate(space.numeric_names):
        nums[i] = cfg.numeric[name] if cfg.activity[name] else 0.5
    cats = np.empty(len(space.categorical_names), dtype=np.int64)
    for i, name in enumerate(space.categorical_names):
        n_choices = len(space[name].choices)
        cats[i] = cfg.categorical[name] if cfg.activity[name] else n_choices
    return nums, cats


def hyperrec_space() -> HyperparameterSpace:
    """The bundled 16-dimensional nested space used by the HyperRec database."""
    text = resources.files("amortune.data").joinpath("hyperrec_space.json").read_text("utf-8")
    return parse_space(text)
