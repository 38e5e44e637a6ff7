"""Feature specifications and design-matrix construction.

A :class:`FeatureSpec` is an ordered list of terms (one intercept, numeric
polynomials, categorical indicators with a declared reference, pairwise
interactions). :class:`DesignBuilder` expands a cohort into a dense matrix:
``fit`` learns category levels and per-column centering/scaling constants,
``transform`` applies them, so matrices built later for prediction reproduce
the training expansion exactly.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .ingest import EXTENDED_VARIABLES, Cohort, PatientRecord, Race

INTERCEPT_LABEL = "intercept"

#: Fixed level order for the race variable so column layouts are stable.
RACE_LEVELS = tuple(r.value for r in (Race.ASIAN, Race.BLACK, Race.HISPANIC,
                                      Race.WHITE, Race.OTHER))


class SpecError(ValueError):
    """The feature specification cannot be applied to the data."""


class EmptyDesignError(ValueError):
    """Every row was excluded for missing features."""


@dataclass(frozen=True)
class Intercept:
    def label(self) -> str:
        return INTERCEPT_LABEL


@dataclass(frozen=True)
class NumericTerm:
    variable: str
    degree: int = 1

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise SpecError(f"polynomial degree must be >= 1, got {self.degree}")

    def label(self) -> str:
        return self.variable if self.degree == 1 else f"{self.variable}^{self.degree}"


@dataclass(frozen=True)
class IndicatorTerm:
    variable: str
    reference: str | None = None

    def label(self) -> str:
        if self.reference is None:
            return f"C({self.variable})"
        return f"C({self.variable}, ref={self.reference})"


@dataclass(frozen=True)
class InteractionTerm:
    left: "Term"
    right: "Term"

    def label(self) -> str:
        return f"{self.left.label()}*{self.right.label()}"


Term = Intercept | NumericTerm | IndicatorTerm | InteractionTerm


@dataclass(frozen=True)
class FeatureSpec:
    """Named, ordered feature expansion for one risk model."""

    name: str
    terms: tuple[Term, ...]

    def __post_init__(self) -> None:
        n_intercepts = sum(isinstance(t, Intercept) for t in self.terms)
        if n_intercepts != 1:
            raise SpecError(
                f"spec {self.name!r} must have exactly one intercept term, "
                f"found {n_intercepts}"
            )

    def term_labels(self) -> list[str]:
        return [t.label() for t in self.terms]


# ---------------------------------------------------------------------------
# Term grammar for configuration files

_POLY_RE = re.compile(r"^(\w+)\^(\d+)$")
_CAT_RE = re.compile(r"^C\(\s*(\w+)\s*(?:,\s*ref\s*=\s*(\w+)\s*)?\)$")


def parse_term(text: str) -> Term:
    """Parse one term: ``intercept``, ``age``, ``age^2``, ``C(race, ref=White)``,
    or an interaction of two such atoms joined by ``*``."""
    text = text.strip()
    parts = _split_interaction(text)
    if len(parts) == 2:
        return InteractionTerm(parse_term(parts[0]), parse_term(parts[1]))
    if len(parts) > 2:
        raise SpecError(f"only pairwise interactions are supported: {text!r}")
    if text == INTERCEPT_LABEL:
        return Intercept()
    match = _POLY_RE.match(text)
    if match:
        return NumericTerm(match.group(1), int(match.group(2)))
    match = _CAT_RE.match(text)
    if match:
        return IndicatorTerm(match.group(1), match.group(2))
    if re.fullmatch(r"\w+", text):
        return NumericTerm(text, 1)
    raise SpecError(f"cannot parse term {text!r}")


def parse_spec(name: str, terms: list[str]) -> FeatureSpec:
    return FeatureSpec(name=name, terms=tuple(parse_term(t) for t in terms))


def _split_interaction(text: str) -> list[str]:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "*" and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return [p.strip() for p in parts]


# ---------------------------------------------------------------------------
# Built-in model specifications


def race_unaware_spec(age_degree: int = 2, bmi_degree: int = 2) -> FeatureSpec:
    return FeatureSpec(
        name="race_unaware",
        terms=(
            Intercept(),
            NumericTerm("age", age_degree),
            NumericTerm("bmi", bmi_degree),
        ),
    )


def race_aware_spec(age_degree: int = 2, bmi_degree: int = 2) -> FeatureSpec:
    base = race_unaware_spec(age_degree, bmi_degree)
    return FeatureSpec(
        name="race_aware",
        terms=base.terms + (IndicatorTerm("race", Race.WHITE.value),),
    )


def extended_spec(age_degree: int = 2, bmi_degree: int = 2) -> FeatureSpec:
    """Race-unaware model augmented with the extended covariates."""
    terms: list[Term] = [
        Intercept(),
        NumericTerm("age", age_degree),
        NumericTerm("bmi", bmi_degree),
        IndicatorTerm("gender"),
        NumericTerm("weight_kg"),
        NumericTerm("height_cm"),
        NumericTerm("waist_cm"),
        NumericTerm("greatest_weight_kg"),
        IndicatorTerm("family_history"),
        IndicatorTerm("depressed"),
        NumericTerm("income"),
        IndicatorTerm("insured"),
        IndicatorTerm("food_secure"),
    ]
    return FeatureSpec(name="extended", terms=tuple(terms))


# ---------------------------------------------------------------------------
# Value access

_BASE_VARIABLES = ("age", "bmi", "race")


def record_value(record: PatientRecord, variable: str):
    if variable == "age":
        return record.age
    if variable == "bmi":
        return record.bmi
    if variable == "race":
        return record.race.value if record.race is not None else None
    if variable in EXTENDED_VARIABLES:
        return record.extended.get(variable)
    raise SpecError(f"unknown variable {variable!r}")


def known_variables() -> tuple[str, ...]:
    return _BASE_VARIABLES + EXTENDED_VARIABLES


# ---------------------------------------------------------------------------
# Design matrices


@dataclass
class DesignMatrix:
    """Dense, fully observed expansion of a cohort under one spec."""

    columns: tuple[str, ...]
    values: np.ndarray
    outcome: np.ndarray
    weights: np.ndarray
    row_ids: np.ndarray
    race: np.ndarray           # group label per row, for subgroup reporting
    indices: np.ndarray        # positions of kept rows in cohort.records
    scaling: tuple             # (label, mean, sd) per column; identity rows use (0, 1)
    excluded_missing: int = 0

    def __post_init__(self) -> None:
        if len(set(self.columns)) != len(self.columns):
            raise SpecError("design columns must be unique")
        if self.values.shape != (len(self.outcome), len(self.columns)):
            raise SpecError("design shape mismatch")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


class DesignBuilder(BaseEstimator, TransformerMixin):
    """Stateful expander from cohorts to design matrices.

    Parameters
    ----------
    spec : FeatureSpec
        Terms to expand, in order.

    After ``fit``, ``levels_`` holds the observed levels per categorical
    variable and ``scaling_`` the per-column centering constants; both are
    reused verbatim by ``transform`` so prediction-time matrices match the
    training expansion.
    """

    def __init__(self, spec: FeatureSpec):
        self.spec = spec

    def fit(self, cohort: Cohort, y=None) -> "DesignBuilder":
        rows, _ = self._complete_rows(cohort)
        if not rows:
            raise EmptyDesignError(
                f"spec {self.spec.name!r}: every row has a missing feature"
            )
        records = [cohort.records[i] for i in rows]
        self.levels_ = {}
        for variable in self._categorical_variables():
            if variable == "race":
                observed = {record_value(r, "race") for r in records}
                self.levels_[variable] = tuple(
                    lvl for lvl in RACE_LEVELS if lvl in observed
                )
            else:
                observed = sorted(
                    {record_value(r, variable) for r in records}, key=str
                )
                self.levels_[variable] = tuple(observed)
        raw, labels, scaled = self._expand(records)
        means = np.where(scaled, raw.mean(axis=0), 0.0)
        sds = np.where(scaled, raw.std(axis=0, ddof=0), 1.0)
        sds = np.where(sds == 0.0, 1.0, sds)
        self.scaling_ = tuple(
            (label, float(m), float(s)) for label, m, s in zip(labels, means, sds)
        )
        self.columns_ = tuple(labels)
        return self

    def transform(self, cohort: Cohort) -> DesignMatrix:
        if not hasattr(self, "columns_"):
            raise SpecError("DesignBuilder must be fitted before transform")
        rows, excluded = self._complete_rows(cohort)
        if not rows:
            raise EmptyDesignError(
                f"spec {self.spec.name!r}: every row has a missing feature"
            )
        records = [cohort.records[i] for i in rows]
        raw, labels, _ = self._expand(records)
        if tuple(labels) != self.columns_:
            raise SpecError("transform produced different columns than fit")
        means = np.array([m for _, m, _ in self.scaling_])
        sds = np.array([s for _, _, s in self.scaling_])
        values = (raw - means) / sds
        return DesignMatrix(
            columns=self.columns_,
            values=values,
            outcome=np.array([r.diabetes for r in records], dtype=bool),
            weights=np.array([r.weight_survey for r in records], dtype=float),
            row_ids=np.array([r.id for r in records], dtype=np.int64),
            race=np.array(
                [r.race.value if r.race else "" for r in records], dtype=object
            ),
            indices=np.array(rows, dtype=np.intp),
            scaling=self.scaling_,
            excluded_missing=excluded,
        )

    def fit_transform(self, cohort: Cohort, y=None) -> DesignMatrix:
        return self.fit(cohort).transform(cohort)

    # -- helpers ---------------------------------------------------------

    def _required_variables(self) -> list[str]:
        seen: list[str] = []

        def visit(term: Term) -> None:
            if isinstance(term, (NumericTerm, IndicatorTerm)):
                if term.variable not in seen:
                    seen.append(term.variable)
            elif isinstance(term, InteractionTerm):
                visit(term.left)
                visit(term.right)

        for term in self.spec.terms:
            visit(term)
        for variable in seen:
            if variable not in known_variables():
                raise SpecError(f"unknown variable {variable!r} in spec "
                                f"{self.spec.name!r}")
        return seen

    def _categorical_variables(self) -> list[str]:
        out: list[str] = []

        def visit(term: Term) -> None:
            if isinstance(term, IndicatorTerm) and term.variable not in out:
                out.append(term.variable)
            elif isinstance(term, InteractionTerm):
                visit(term.left)
                visit(term.right)

        for term in self.spec.terms:
            visit(term)
        return out

    def _complete_rows(self, cohort: Cohort) -> tuple[list[int], int]:
        variables = self._required_variables()
        rows, excluded = [], 0
        for i, record in enumerate(cohort.records):
            if record.diabetes is None:
                excluded += 1
                continue
            if any(record_value(record, v) is None for v in variables):
                excluded += 1
            else:
                rows.append(i)
        return rows, excluded

    def _expand(self, records) -> tuple[np.ndarray, list[str], np.ndarray]:
        """Raw (unscaled) columns, labels, and a scaled-column mask."""
        blocks: list[np.ndarray] = []
        labels: list[str] = []
        scaled: list[bool] = []
        for term in self.spec.terms:
            cols, names, scale = self._expand_term(term, records)
            blocks.append(cols)
            labels.extend(names)
            scaled.extend(scale)
        return np.hstack(blocks), labels, np.array(scaled, dtype=bool)

    def _expand_term(self, term: Term, records):
        n = len(records)
        if isinstance(term, Intercept):
            return np.ones((n, 1)), [INTERCEPT_LABEL], [False]
        if isinstance(term, NumericTerm):
            base = np.array(
                [float(record_value(r, term.variable)) for r in records]
            )
            cols = np.column_stack([
                base ** d for d in range(1, term.degree + 1)
            ])
            names = [
                term.variable if d == 1 else f"{term.variable}^{d}"
                for d in range(1, term.degree + 1)
            ]
            return cols, names, [True] * term.degree
        if isinstance(term, IndicatorTerm):
            levels = self.levels_[term.variable]
            reference = term.reference
            if reference is None:
                reference = str(levels[0]) if levels else None
            if reference not in [str(lvl) for lvl in levels]:
                raise SpecError(
                    f"reference level {reference!r} not observed for "
                    f"{term.variable!r} (levels: {levels})"
                )
            keep = [lvl for lvl in levels if str(lvl) != reference]
            values = [record_value(r, term.variable) for r in records]
            cols = np.column_stack([
                np.array([1.0 if v == lvl else 0.0 for v in values])
                for lvl in keep
            ]) if keep else np.zeros((n, 0))
            names = [f"{term.variable}={lvl}" for lvl in keep]
            return cols, names, [False] * len(keep)
        if isinstance(term, InteractionTerm):
            left, lnames, _ = self._expand_term(term.left, records)
            right, rnames, _ = self._expand_term(term.right, records)
            cols, names = [], []
            for i, ln in enumerate(lnames):
                for j, rn in enumerate(rnames):
                    cols.append(left[:, i] * right[:, j])
                    names.append(f"{ln}*{rn}")
            stacked = np.column_stack(cols) if cols else np.zeros((n, 0))
            return stacked, names, [True] * len(names)
        raise SpecError(f"unknown term type {type(term).__name__}")


def build_design(cohort: Cohort, spec: FeatureSpec) -> DesignMatrix:
    """One-shot expansion: fit scaling constants on the cohort and transform it."""
    return DesignBuilder(spec).fit_transform(cohort)


# ---------------------------------------------------------------------------
# Serialization of specs and fitted builders


def term_to_config(term: Term) -> str:
    return term.label()


def spec_to_config(spec: FeatureSpec) -> dict:
    return {"name": spec.name, "terms": [term_to_config(t) for t in spec.terms]}


def spec_from_config(data: dict) -> FeatureSpec:
    return parse_spec(data["name"], list(data["terms"]))


def builder_state(builder: DesignBuilder) -> dict:
    return {
        "spec": spec_to_config(builder.spec),
        "levels": {k: list(v) for k, v in builder.levels_.items()},
        "columns": list(builder.columns_),
        "scaling": [[label, m, s] for label, m, s in builder.scaling_],
    }


def builder_from_state(state: dict) -> DesignBuilder:
    builder = DesignBuilder(spec_from_config(state["spec"]))
    # bool and string levels survive the JSON round trip natively
    builder.levels_ = {k: tuple(v) for k, v in state["levels"].items()}
    builder.columns_ = tuple(state["columns"])
    builder.scaling_ = tuple(
        (label, float(m), float(s)) for label, m, s in state["scaling"]
    )
    return builder
