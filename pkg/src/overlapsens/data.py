"""Experimental sample and target population containers, CSV ingestion, subgroups."""

from __future__ import annotations

import csv
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ConfigError,
    DegenerateSubgroup,
    EmptyArm,
    InputError,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    SchemaMismatch,
    ValidationError,
)

MIN_ARM_SIZE = 2


class NonBinaryFlag(ValidationError):
    def __init__(self, column, row, value):
        self.column = column
        self.row = row
        super().__init__(f"flag column {column!r} must be 0/1; got {value!r} in row {row}")


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ExperimentalSchema:
    treatment: str = "T"
    outcome: str = "Y"
    covariates: tuple[str, ...] = ()
    weight: str | None = None


@dataclass(frozen=True)
class TargetSchema:
    covariates: tuple[str, ...] = ()
    weight: str | None = None


@dataclass(frozen=True, eq=False)
class ExperimentalSample:
    """Validated experimental rows. Arrays are read-only."""

    treatment: np.ndarray
    outcome: np.ndarray
    columns: Mapping[str, np.ndarray]
    covariate_names: tuple[str, ...] = ()
    outcome_name: str = "Y"
    weight: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.treatment)
        for arm in (1, 0):
            count = int(np.sum(t == arm))
            if count < MIN_ARM_SIZE:
                raise EmptyArm(arm, count)

    @classmethod
    def from_arrays(cls, treatment, outcome, covariates=None, weight=None, outcome_name="Y"):
        covariates = dict(covariates or {})
        t = np.asarray(treatment, dtype=float)
        bad = np.flatnonzero((t != 0) & (t != 1))
        if bad.size:
            raise NonBinaryTreatment(int(bad[0]) + 1, t[bad[0]])
        y = np.asarray(outcome, dtype=float)
        if not np.all(np.isfinite(y)):
            raise NonFiniteValue(outcome_name, int(np.flatnonzero(~np.isfinite(y))[0]) + 1)
        cols = {k: _frozen(v) for k, v in covariates.items()}
        return cls(
            treatment=_frozen(t),
            outcome=_frozen(y),
            columns=cols,
            covariate_names=tuple(covariates),
            outcome_name=outcome_name,
            weight=None if weight is None else _frozen(weight),
        )

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def n1(self) -> int:
        return int(np.sum(self.treatment == 1))

    @property
    def n0(self) -> int:
        return int(np.sum(self.treatment == 0))

    def covariate_matrix(self, names: Sequence[str]) -> np.ndarray:
        try:
            return np.column_stack([self.columns[c] for c in names]) if names else np.empty((self.n, 0))
        except KeyError as e:
            raise MissingColumn(e.args[0], "experimental sample") from None

    def take(self, idx) -> "ExperimentalSample":
        """Row subset (used by the bootstrap); arm-size checks re-run."""
        idx = np.asarray(idx)
        return ExperimentalSample(
            treatment=_frozen(self.treatment[idx]),
            outcome=_frozen(self.outcome[idx]),
            columns={k: _frozen(v[idx]) for k, v in self.columns.items()},
            covariate_names=self.covariate_names,
            outcome_name=self.outcome_name,
            weight=None if self.weight is None else _frozen(self.weight[idx]),
        )


@dataclass(frozen=True, eq=False)
class TargetPopulation:
    columns: Mapping[str, np.ndarray]
    covariate_names: tuple[str, ...] = ()
    weight: np.ndarray | None = None

    @classmethod
    def from_arrays(cls, covariates, weight=None):
        covariates = dict(covariates)
        return cls(
            columns={k: _frozen(v) for k, v in covariates.items()},
            covariate_names=tuple(covariates),
            weight=None if weight is None else _frozen(weight),
        )

    @property
    def N(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def covariate_matrix(self, names: Sequence[str]) -> np.ndarray:
        missing = [c for c in names if c not in self.columns]
        if missing:
            raise SchemaMismatch(missing[0])
        return np.column_stack([self.columns[c] for c in names]) if names else np.empty((self.N, 0))

    def take(self, idx) -> "TargetPopulation":
        idx = np.asarray(idx)
        return TargetPopulation(
            columns={k: _frozen(v[idx]) for k, v in self.columns.items()},
            covariate_names=self.covariate_names,
            weight=None if self.weight is None else _frozen(self.weight[idx]),
        )


# -- CSV ingestion -------------------------------------------------------------

def _read_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InputError(f"cannot parse {path}: {e}") from e


def _parse(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return np.nan


def _numeric_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    # float() is correctly rounded; the pandas fast parser is not
    values = np.array([_parse(s) for s in frame[name]], dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteValue(name, int(bad[0]) + 1)
    return values


def _extra_columns(frame: pd.DataFrame, skip) -> dict[str, np.ndarray]:
    """Numeric, complete extra columns; anything else (ids, labels) is ignored."""
    out = {}
    for name in frame.columns:
        if name in skip:
            continue
        try:
            out[name] = _numeric_column(frame, name)
        except NonFiniteValue:
            if name.startswith("G_"):
                raise
    return out


def load_experimental(path, schema: ExperimentalSchema) -> ExperimentalSample:
    if len(set(schema.covariates)) != len(schema.covariates):
        raise ConfigError(f"duplicate covariate names in {list(schema.covariates)}")
    frame = _read_csv(path)
    mapped = [schema.treatment, schema.outcome, *schema.covariates]
    if schema.weight:
        mapped.append(schema.weight)
    for col in mapped:
        if col not in frame.columns:
            raise MissingColumn(col, str(path))

    t = _numeric_column(frame, schema.treatment)
    bad = np.flatnonzero((t != 0) & (t != 1))
    if bad.size:
        raise NonBinaryTreatment(int(bad[0]) + 1, frame[schema.treatment].iloc[bad[0]])
    y = _numeric_column(frame, schema.outcome)
    columns = {c: _numeric_column(frame, c) for c in schema.covariates}
    weight = _numeric_column(frame, schema.weight) if schema.weight else None
    if weight is not None and np.any(weight <= 0):
        row = int(np.flatnonzero(weight <= 0)[0]) + 1
        raise ValidationError(f"weight column {schema.weight!r} must be positive (row {row})")

    skip = {schema.treatment, schema.outcome, schema.weight, *schema.covariates}
    columns.update(_extra_columns(frame, skip))
    _check_flags(columns)
    return ExperimentalSample(
        treatment=_frozen(t),
        outcome=_frozen(y),
        columns={k: _frozen(v) for k, v in columns.items()},
        covariate_names=tuple(schema.covariates),
        outcome_name=schema.outcome,
        weight=None if weight is None else _frozen(weight),
    )


def load_target(path, schema: TargetSchema, covariates: Sequence[str] | None = None) -> TargetPopulation:
    """Load the target population; ``covariates`` are the weighting covariates to check."""
    frame = _read_csv(path)
    required = list(covariates if covariates is not None else schema.covariates)
    for col in required:
        if col not in frame.columns:
            raise SchemaMismatch(col)
    if schema.weight and schema.weight not in frame.columns:
        raise MissingColumn(schema.weight, str(path))

    columns = {c: _numeric_column(frame, c) for c in required}
    weight = _numeric_column(frame, schema.weight) if schema.weight else None
    if weight is not None and np.any(weight <= 0):
        raise ValidationError(f"weight column {schema.weight!r} must be positive")
    columns.update(_extra_columns(frame, {schema.weight, *required}))
    _check_flags(columns)
    return TargetPopulation(
        columns={k: _frozen(v) for k, v in columns.items()},
        covariate_names=tuple(required),
        weight=None if weight is None else _frozen(weight),
    )


def _check_flags(columns):
    for name, values in columns.items():
        if name.startswith("G_"):
            bad = np.flatnonzero((values != 0) & (values != 1))
            if bad.size:
                raise NonBinaryFlag(name, int(bad[0]) + 1, values[bad[0]])


def write_csv(path, columns: Mapping[str, np.ndarray]) -> None:
    """Write numeric columns using shortest round-trip float repr."""
    names = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*(columns[c] for c in names)):
            writer.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 2**53 and not (v == 0 and np.signbit(v)):
        return str(int(v))
    return repr(v)


def sample_columns(exp: ExperimentalSample, treatment="T") -> dict[str, np.ndarray]:
    cols = {treatment: exp.treatment, exp.outcome_name: exp.outcome}
    cols.update(exp.columns)
    return cols


# -- subgroups -------------------------------------------------------------------

COMPARATORS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}


@dataclass(frozen=True)
class SubgroupRule:
    """Either a 0/1 column reference, a threshold predicate, or a conjunction of rules."""

    name: str
    column: str | None = None
    covariate: str | None = None
    op: str | None = None
    value: float | None = None
    all_of: tuple["SubgroupRule", ...] = field(default=())

    def __post_init__(self):
        kinds = sum([self.column is not None, self.covariate is not None, bool(self.all_of)])
        if kinds != 1:
            raise ConfigError(f"subgroup {self.name!r}: give exactly one of column, covariate, all_of")
        if self.covariate is not None:
            if self.op not in COMPARATORS:
                raise ConfigError(f"subgroup {self.name!r}: unknown comparator {self.op!r}")
            if self.value is None:
                raise ConfigError(f"subgroup {self.name!r}: threshold value required")

    def evaluate(self, columns: Mapping[str, np.ndarray], where="dataset") -> np.ndarray:
        if self.all_of:
            flags = [r.evaluate(columns, where) for r in self.all_of]
            return np.logical_and.reduce(flags).astype(float)
        key = self.column if self.column is not None else self.covariate
        if key not in columns:
            raise MissingColumn(key, where)
        values = np.asarray(columns[key], dtype=float)
        if self.column is not None:
            bad = np.flatnonzero((values != 0) & (values != 1))
            if bad.size:
                raise NonBinaryFlag(key, int(bad[0]) + 1, values[bad[0]])
            return values.copy()
        return COMPARATORS[self.op](values, float(self.value)).astype(float)


def rules_from_config(entries: Sequence[Mapping]) -> list[SubgroupRule]:
    """Build rules from config dicts. ``all_of`` may name earlier rules or nest dicts."""
    by_name: dict[str, SubgroupRule] = {}
    rules = []

    def build(entry, default_name=None):
        if isinstance(entry, str):
            if entry not in by_name:
                raise ConfigError(f"interaction refers to unknown subgroup {entry!r}")
            return by_name[entry]
        entry = dict(entry)
        name = entry.pop("name", default_name)
        if not name:
            raise ConfigError("every subgroup needs a name")
        parts = tuple(build(p, f"{name}[{i}]") for i, p in enumerate(entry.pop("all_of", ())))
        unknown = set(entry) - {"column", "covariate", "op", "value"}
        if unknown:
            raise ConfigError(f"subgroup {name!r}: unknown keys {sorted(unknown)}")
        return SubgroupRule(name=name, all_of=parts, **entry)

    for entry in entries:
        rule = build(entry)
        by_name[rule.name] = rule
        rules.append(rule)
    return rules


def build_subgroup(rule: SubgroupRule, exp: ExperimentalSample, target: TargetPopulation):
    """Return aligned 0/1 flag vectors ``(g_exp, g_target)``."""
    g_exp = rule.evaluate(exp.columns, "experimental sample")
    g_target = rule.evaluate(target.columns, "target population")
    share = float(np.mean(g_exp))
    if share <= 0.0 or share >= 1.0:
        raise DegenerateSubgroup(rule.name, share)
    return g_exp, g_target
