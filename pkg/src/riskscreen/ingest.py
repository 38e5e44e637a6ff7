"""Cohort construction from NHANES-style survey tables.

Source tables (transport members or pre-flattened CSV) are harmonized into
one record per respondent, joined on the respondent id across all tables of
a cycle, then filtered into an analysis cohort with itemized exclusion
counts. Pooled survey weights are each cycle's examination weight divided by
the number of pooled cycles, so weighted totals represent the combined
period.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .tables import NUMERIC, TEXT, Column, RawTable

log = logging.getLogger(__name__)

KG_PER_LB = 0.45359237


class Race(str, Enum):
    ASIAN = "Asian"
    BLACK = "Black"
    HISPANIC = "Hispanic"
    WHITE = "White"
    OTHER = "Other"


#: Groups reported individually; Other stays in fitting and overall rows.
REPORT_RACES = (Race.ASIAN, Race.BLACK, Race.HISPANIC, Race.WHITE)

EXTENDED_VARIABLES = (
    "gender",
    "weight_kg",
    "height_cm",
    "waist_cm",
    "greatest_weight_kg",
    "family_history",
    "depressed",
    "income",
    "insured",
    "food_secure",
)

#: Exclusion reasons in the order they are tested.
EXCLUSION_REASONS = ("pregnant", "age", "bmi", "missing_outcome", "missing_covariate")


class SchemaError(ValueError):
    """A required column is absent from a source file."""


class CsvValueError(ValueError):
    """A CSV cell could not be parsed; carries the 1-based data row index."""

    def __init__(self, message: str, row_index: int):
        super().__init__(f"{message} (data row {row_index})")
        self.row_index = row_index


class EmptyCohortError(ValueError):
    """Every record was excluded; downstream fitting is impossible."""


@dataclass(frozen=True)
class PatientRecord:
    """One survey respondent after harmonization."""

    id: int
    cycle: str
    age: float | None
    bmi: float | None
    race: Race | None
    pregnant: bool
    diabetes: bool | None
    weight_survey: float
    extended: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.weight_survey < 0:
            raise ValueError(f"record {self.id}: survey weight must be nonnegative")
        if self.age is not None and self.age < 0:
            raise ValueError(f"record {self.id}: age must be nonnegative")
        if self.bmi is not None and self.bmi <= 0:
            raise ValueError(f"record {self.id}: BMI must be positive")


@dataclass(frozen=True)
class CohortCriteria:
    """Inclusion window; age and BMI bounds are inclusive."""

    age_min: float = 18.0
    age_max: float = 70.0
    bmi_min: float = 18.5
    bmi_max: float = 50.0
    exclude_pregnant: bool = True

    def __post_init__(self) -> None:
        if self.age_min > self.age_max:
            raise ValueError("age_min must not exceed age_max")
        if self.bmi_min > self.bmi_max:
            raise ValueError("bmi_min must not exceed bmi_max")


@dataclass(frozen=True)
class OutcomeDefinition:
    """Composite diabetes outcome with configurable components.

    A respondent is positive if any enabled component is positive, negative
    if at least one enabled component is observed and none is positive, and
    missing when no enabled component is observed.
    """

    use_diagnosis: bool = True
    use_a1c: bool = True
    a1c_threshold: float = 6.5
    use_fpg: bool = True
    fpg_threshold: float = 126.0

    def evaluate(
        self,
        diagnosed: bool | None,
        a1c: float | None,
        fasting_glucose: float | None,
    ) -> bool | None:
        components = []
        if self.use_diagnosis and diagnosed is not None:
            components.append(diagnosed)
        if self.use_a1c and a1c is not None:
            components.append(a1c >= self.a1c_threshold)
        if self.use_fpg and fasting_glucose is not None:
            components.append(fasting_glucose >= self.fpg_threshold)
        if not components:
            return None
        return any(components)


@dataclass(frozen=True)
class Cohort:
    records: tuple[PatientRecord, ...]
    criteria: CohortCriteria
    source_cycles: tuple[str, ...]
    dropped_counts: dict

    def weighted_size(self) -> float:
        return float(sum(r.weight_survey for r in self.records))

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------------------
# CSV ingestion


def load_csv(
    path,
    schema: dict | None = None,
    *,
    name: str | None = None,
    cycle: str = "",
    text_variables: tuple[str, ...] = (),
) -> list[RawTable]:
    """Load one CSV file as a table equivalent to a transport member.

    ``schema`` maps variable names to CSV column headers; when omitted, the
    headers are taken as variable names directly. Columns not named in
    ``text_variables`` are parsed as numerics, with blank, ``.``, and ``NA``
    cells treated as missing.
    """
    path = Path(path)
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if schema is None:
            schema = {h: h for h in header}
        missing = sorted(col for col in schema.values() if col not in header)
        if missing:
            raise SchemaError(f"{path}: missing required columns: {', '.join(missing)}")

        variables = list(schema.keys())
        positions = [header.index(schema[v]) for v in variables]
        kinds = [TEXT if v in text_variables else NUMERIC for v in variables]

        rows: list[tuple] = []
        for row_index, row in enumerate(reader, start=1):
            values = []
            for variable, pos, kind in zip(variables, positions, kinds):
                cell = row[pos].strip() if pos < len(row) else ""
                if kind == TEXT:
                    values.append(cell)
                elif cell in ("", ".", "NA", "NaN", "nan"):
                    values.append(None)
                else:
                    try:
                        values.append(float(cell))
                    except ValueError:
                        raise CsvValueError(
                            f"{path}: column {schema[variable]!r} has "
                            f"non-numeric value {cell!r}",
                            row_index,
                        ) from None
            rows.append(tuple(values))

    table_name = name if name is not None else path.stem.upper()[:8]
    columns = [Column(v, k) for v, k in zip(variables, kinds)]
    return [RawTable(name=table_name, columns=columns, rows=rows, cycle=cycle)]


# ---------------------------------------------------------------------------
# Harmonization


@dataclass(frozen=True)
class HarmonizationMap:
    """Where each harmonized variable lives in the source tables.

    Variables are located by name across all tables of a cycle, so the same
    map serves both per-topic transport members and pre-flattened files.
    """

    id_variable: str = "SEQN"
    age: str = "RIDAGEYR"
    bmi: str = "BMXBMI"
    race: str = "RIDRETH3"
    pregnancy: str = "RIDEXPRG"
    survey_weight: str = "WTMEC2YR"
    diagnosis: str = "DIQ010"
    a1c: str = "LBXGH"
    fasting_glucose: str = "LBXGLU"
    gender: str = "RIAGENDR"
    weight_kg: str = "BMXWT"
    height_cm: str = "BMXHT"
    waist_cm: str = "BMXWAIST"
    greatest_weight_lbs: str = "WHD140"
    family_history: str = "MCQ300C"
    depression_items: tuple[str, ...] = (
        "DPQ010", "DPQ020", "DPQ030", "DPQ040", "DPQ050",
        "DPQ060", "DPQ070", "DPQ080", "DPQ090",
    )
    depression_cutoff: float = 10.0
    income: str = "INDFMPIR"
    insured: str = "HIQ011"
    food_security: str = "FSDAD"
    race_codes: tuple = (
        (1, Race.HISPANIC),  # Mexican American
        (2, Race.HISPANIC),  # Other Hispanic
        (3, Race.WHITE),     # Non-Hispanic White
        (4, Race.BLACK),     # Non-Hispanic Black
        (6, Race.ASIAN),     # Non-Hispanic Asian
        (7, Race.OTHER),     # Other / multiracial
    )

    def race_lookup(self) -> dict:
        return {code: race for code, race in self.race_codes}


@dataclass
class HarmonizeResult:
    records: list[PatientRecord]
    cycles: tuple[str, ...]
    orphan_count: int = 0
    unmapped_race_count: int = 0


def harmonize_cycles(
    tables: list[RawTable],
    mapping: HarmonizationMap | None = None,
    outcome: OutcomeDefinition | None = None,
) -> HarmonizeResult:
    """Merge per-cycle tables into one PatientRecord per respondent.

    One record is produced for every respondent in a cycle's demographics
    table (the table holding the age variable). Respondents appearing in an
    outcome table but not in demographics are dropped and counted as orphans.
    Survey weights are divided by the number of pooled cycles.
    """
    mapping = mapping or HarmonizationMap()
    outcome = outcome or OutcomeDefinition()
    race_lookup = mapping.race_lookup()

    cycles = sorted({t.cycle for t in tables})
    n_cycles = max(len(cycles), 1)
    result = HarmonizeResult(records=[], cycles=tuple(cycles))

    for cycle in cycles:
        cycle_tables = [t for t in tables if t.cycle == cycle]
        lookup = _VariableLookup(cycle_tables, mapping.id_variable)

        demo_ids = lookup.table_ids(mapping.age)
        if demo_ids is None:
            raise SchemaError(
                f"cycle {cycle!r}: no table provides the age variable "
                f"{mapping.age!r}"
            )
        known = set(demo_ids)

        outcome_vars = (mapping.diagnosis, mapping.a1c, mapping.fasting_glucose)
        orphans = set()
        for var in outcome_vars:
            ids = lookup.table_ids(var)
            if ids is not None:
                orphans.update(i for i in ids if i not in known)
        if orphans:
            log.warning(
                "cycle %s: dropping %d outcome rows with no demographics record",
                cycle, len(orphans),
            )
            result.orphan_count += len(orphans)

        for rid in demo_ids:
            record = _build_record(
                rid, cycle, lookup, mapping, outcome, race_lookup, n_cycles, result
            )
            result.records.append(record)
    return result


def _build_record(rid, cycle, lookup, mapping, outcome, race_lookup, n_cycles, result):
    get = lambda var: lookup.value(var, rid)  # noqa: E731

    race_code = get(mapping.race)
    if race_code is None:
        race = None
    else:
        race = race_lookup.get(int(race_code))
        if race is None:
            log.warning("respondent %s: unmapped race code %s", rid, race_code)
            result.unmapped_race_count += 1
            race = Race.OTHER

    weight = get(mapping.survey_weight)
    weight = 0.0 if weight is None else float(weight) / n_cycles

    diagnosed = _yes_no(get(mapping.diagnosis))
    diabetes = outcome.evaluate(diagnosed, get(mapping.a1c), get(mapping.fasting_glucose))

    gender_code = get(mapping.gender)
    gender = {1: "Male", 2: "Female"}.get(
        int(gender_code) if gender_code is not None else -1
    )
    greatest_lbs = _drop_sentinels(get(mapping.greatest_weight_lbs), (7777.0, 9999.0))
    extended = {
        "gender": gender,
        "weight_kg": get(mapping.weight_kg),
        "height_cm": get(mapping.height_cm),
        "waist_cm": get(mapping.waist_cm),
        "greatest_weight_kg": (
            None if greatest_lbs is None else greatest_lbs * KG_PER_LB
        ),
        "family_history": _yes_no(get(mapping.family_history)),
        "depressed": _depression_flag(
            [get(item) for item in mapping.depression_items], mapping.depression_cutoff
        ),
        "income": get(mapping.income),
        "insured": _yes_no(get(mapping.insured)),
        "food_secure": _food_secure(get(mapping.food_security)),
    }

    return PatientRecord(
        id=int(rid),
        cycle=cycle,
        age=get(mapping.age),
        bmi=get(mapping.bmi),
        race=race,
        pregnant=get(mapping.pregnancy) == 1,
        diabetes=diabetes,
        weight_survey=weight,
        extended=extended,
    )


class _VariableLookup:
    """Index (variable, respondent id) -> value across one cycle's tables."""

    def __init__(self, tables: list[RawTable], id_variable: str):
        self._by_variable: dict[str, dict] = {}
        self._table_ids: dict[str, list] = {}
        for table in tables:
            names = table.variable_names
            if id_variable not in names:
                continue
            id_idx = table.column_index(id_variable)
            ids = [row[id_idx] for row in table.rows]
            for idx, column in enumerate(table.columns):
                if column.name == id_variable or column.name in self._by_variable:
                    continue  # first table providing a variable wins
                self._by_variable[column.name] = {
                    row[id_idx]: row[idx] for row in table.rows
                }
                self._table_ids[column.name] = ids

    def value(self, variable: str, rid):
        mapping = self._by_variable.get(variable)
        if mapping is None:
            return None
        return mapping.get(rid)

    def table_ids(self, variable: str):
        """Respondent ids of the table providing ``variable`` (row order)."""
        return self._table_ids.get(variable)


def _yes_no(code) -> bool | None:
    # 1 = yes, 2 = no, 3 = borderline (counted as no); 7/9 = refused/unknown.
    if code is None:
        return None
    code = int(code)
    if code == 1:
        return True
    if code in (2, 3):
        return False
    return None


def _drop_sentinels(value, sentinels) -> float | None:
    if value is None or value in sentinels:
        return None
    return float(value)


def _depression_flag(items: list, cutoff: float) -> bool | None:
    total = 0.0
    for item in items:
        if item is None or item not in (0.0, 1.0, 2.0, 3.0):
            return None
        total += item
    if not items:
        return None
    return total >= cutoff


def _food_secure(category) -> bool | None:
    # Adult food-security category: 1 full, 2 marginal, 3 low, 4 very low.
    if category is None:
        return None
    return int(category) in (1, 2)


# ---------------------------------------------------------------------------
# Cohort filtering


def build_cohort(records: list[PatientRecord], criteria: CohortCriteria) -> Cohort:
    """Apply inclusion criteria with itemized, first-reason exclusion counts."""
    dropped = {reason: 0 for reason in EXCLUSION_REASONS}
    kept: list[PatientRecord] = []
    for record in sorted(records, key=lambda r: (r.cycle, r.id)):
        reason = _exclusion_reason(record, criteria)
        if reason is None:
            kept.append(record)
        else:
            dropped[reason] += 1
    if not kept:
        raise EmptyCohortError("no records satisfy the cohort criteria")
    cycles = tuple(sorted({r.cycle for r in records}))
    return Cohort(
        records=tuple(kept),
        criteria=criteria,
        source_cycles=cycles,
        dropped_counts=dropped,
    )


def _exclusion_reason(record: PatientRecord, criteria: CohortCriteria) -> str | None:
    if criteria.exclude_pregnant and record.pregnant:
        return "pregnant"
    if record.age is not None and not (criteria.age_min <= record.age <= criteria.age_max):
        return "age"
    if record.bmi is not None and not (criteria.bmi_min <= record.bmi <= criteria.bmi_max):
        return "bmi"
    if record.diabetes is None:
        return "missing_outcome"
    if record.age is None or record.bmi is None or record.race is None:
        return "missing_covariate"
    return None


# ---------------------------------------------------------------------------
# Snapshot export / import

SNAPSHOT_COLUMNS = (
    "cycle", "id", "age", "bmi", "race", "pregnant", "diabetes", "weight_survey",
) + EXTENDED_VARIABLES


def cohort_to_csv(cohort: Cohort, path) -> None:
    """Write the cohort snapshot with a fixed column order."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SNAPSHOT_COLUMNS)
        for r in cohort.records:
            row = [
                r.cycle, r.id, _cell(r.age), _cell(r.bmi),
                r.race.value if r.race else "",
                int(r.pregnant), _cell(r.diabetes), _cell(r.weight_survey),
            ]
            row.extend(_cell(r.extended.get(v)) for v in EXTENDED_VARIABLES)
            writer.writerow(row)


def cohort_provenance(cohort: Cohort, extra: dict | None = None) -> dict:
    info = {
        "criteria": {
            "age_min": cohort.criteria.age_min,
            "age_max": cohort.criteria.age_max,
            "bmi_min": cohort.criteria.bmi_min,
            "bmi_max": cohort.criteria.bmi_max,
            "exclude_pregnant": cohort.criteria.exclude_pregnant,
        },
        "source_cycles": list(cohort.source_cycles),
        "dropped_counts": dict(cohort.dropped_counts),
        "n_records": len(cohort.records),
        "weighted_size": cohort.weighted_size(),
    }
    if extra:
        info.update(extra)
    return info


def write_provenance(cohort: Cohort, path, extra: dict | None = None) -> None:
    with open(path, "w") as handle:
        json.dump(cohort_provenance(cohort, extra), handle, indent=2, sort_keys=True)
        handle.write("\n")


def cohort_from_csv(csv_path, provenance_path) -> Cohort:
    """Rebuild a cohort from its snapshot and provenance sidecar."""
    with open(provenance_path) as handle:
        prov = json.load(handle)
    criteria = CohortCriteria(**prov["criteria"])
    records = []
    with open(csv_path, newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            extended = {v: _parse_cell(row[v], v) for v in EXTENDED_VARIABLES}
            records.append(PatientRecord(
                id=int(row["id"]),
                cycle=row["cycle"],
                age=_parse_float(row["age"]),
                bmi=_parse_float(row["bmi"]),
                race=Race(row["race"]) if row["race"] else None,
                pregnant=row["pregnant"] == "1",
                diabetes=_parse_bool(row["diabetes"]),
                weight_survey=float(row["weight_survey"]),
                extended=extended,
            ))
    return Cohort(
        records=tuple(records),
        criteria=criteria,
        source_cycles=tuple(prov["source_cycles"]),
        dropped_counts=dict(prov["dropped_counts"]),
    )


_BOOL_EXTENDED = ("family_history", "depressed", "insured", "food_secure")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_float(text: str) -> float | None:
    return None if text == "" else float(text)


def _parse_bool(text: str) -> bool | None:
    return None if text == "" else text == "1"


def _parse_cell(text: str, variable: str):
    if text == "":
        return None
    if variable == "gender":
        return text
    if variable in _BOOL_EXTENDED:
        return text == "1"
    return float(text)
