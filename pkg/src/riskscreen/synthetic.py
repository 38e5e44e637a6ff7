"""Deterministic NHANES-shaped synthetic data for demos and pipeline tests.

The generator emits the same per-topic tables a real survey release would
(demographics, body measures, lab results, questionnaires), keyed on a shared
respondent id, with a known logistic risk surface behind the outcome. A few
respondents are pregnant, out of the age or BMI window, or missing labs so
cohort filtering has something to do. Every race level is guaranteed both a
positive and a negative outcome among cohort-eligible respondents, keeping
small fixtures fittable with race indicators. Identical seeds produce
identical tables.
"""
from __future__ import annotations

import numpy as np

from .ingest import KG_PER_LB
from .tables import Column, RawTable

#: NHANES file-suffix convention for the pooled cycles.
SUFFIX_CYCLES = {
    "G": "2011-2012",
    "H": "2013-2014",
    "I": "2015-2016",
    "J": "2017-2018",
}
CYCLE_SUFFIXES = {cycle: suffix for suffix, cycle in SUFFIX_CYCLES.items()}

RACE_CODES = (3.0, 4.0, 1.0, 2.0, 6.0, 7.0)
RACE_PROBS = (0.38, 0.21, 0.12, 0.08, 0.13, 0.08)
RACE_LOGIT_SHIFT = {1.0: 0.4, 2.0: 0.4, 3.0: 0.0, 4.0: 0.45, 6.0: 1.1, 7.0: 0.2}


def infer_cycle(member_name: str) -> str | None:
    """Survey period from an NHANES member-name suffix, e.g. DEMO_G."""
    if "_" in member_name:
        suffix = member_name.rsplit("_", 1)[1]
        return SUFFIX_CYCLES.get(suffix.upper())
    return None


def synthetic_tables(
    rows_per_cycle: int = 100,
    seed: int = 7,
    cycles: tuple[str, ...] = ("2011-2012", "2013-2014"),
) -> list[RawTable]:
    rng = np.random.RandomState(seed)
    people: list[dict] = []
    for cycle_index, cycle in enumerate(cycles):
        base_id = 10000 * (cycle_index + 1)
        for i in range(rows_per_cycle):
            people.append(_respondent(rng, float(base_id + i + 1), cycle))
    _ensure_outcome_variation(people)
    tables: list[RawTable] = []
    for cycle in cycles:
        members = [p for p in people if p["cycle"] == cycle]
        tables.extend(_tables_for(members, cycle))
    return tables


def _respondent(rng, rid: float, cycle: str) -> dict:
    gender = 1.0 if rng.uniform() < 0.49 else 2.0
    age = float(rng.randint(12, 85))
    race = float(RACE_CODES[rng.choice(len(RACE_CODES), p=RACE_PROBS)])
    pregnant = bool(
        gender == 2.0 and 18 <= age <= 44 and rng.uniform() < 0.08
    )
    bmi = float(np.round(rng.lognormal(np.log(27.0), 0.22), 1))
    if rng.uniform() < 0.04:
        bmi = None  # not examined
    height = float(np.round(rng.normal(168.0, 9.0), 1))
    weight_kg = (
        None if bmi is None else float(np.round(bmi * (height / 100.0) ** 2, 1))
    )
    waist = (
        None if weight_kg is None
        else float(np.round(0.95 * weight_kg + 25.0 + rng.normal(0, 4), 1))
    )

    eta = (
        -2.4
        + 0.04 * (age - 45.0)
        + 0.09 * ((bmi if bmi is not None else 27.0) - 28.0)
        + RACE_LOGIT_SHIFT[race]
    )
    risk = float(1.0 / (1.0 + np.exp(-eta)))
    diabetic = bool(rng.uniform() < risk)
    diagnosed = bool(diabetic and rng.uniform() < 0.6)

    if rng.uniform() < 0.10:
        a1c = None
    else:
        raw = rng.normal(7.3, 0.9) if diabetic else rng.normal(5.4, 0.35)
        a1c = float(np.round(max(raw, 4.0), 1))
    if rng.uniform() < 0.55:
        fpg = None  # fasting subsample only
    else:
        raw = rng.normal(150.0, 25.0) if diabetic else rng.normal(95.0, 10.0)
        fpg = float(np.round(max(raw, 60.0), 0))

    greatest_kg = (weight_kg if weight_kg is not None else 75.0) + abs(
        rng.normal(6.0, 4.0)
    )
    return {
        "rid": rid,
        "cycle": cycle,
        "gender": gender,
        "age": age,
        "race": race,
        "pregnant": pregnant,
        "survey_weight": float(np.round(rng.lognormal(np.log(25000.0), 0.6), 2)),
        "income": float(np.round(rng.uniform(0.2, 5.0), 2)),
        "bmi": bmi,
        "height": height,
        "weight_kg": weight_kg,
        "waist": waist,
        "risk": risk,
        "diagnosed": diagnosed,
        "a1c": a1c,
        "fpg": fpg,
        "family_history": bool(rng.uniform() < 0.3),
        "greatest_lbs": float(np.round(greatest_kg / KG_PER_LB, 0)),
        "dpq": tuple(
            float(min(3, max(0, int(rng.poisson(0.8))))) for _ in range(9)
        ),
        "insured": bool(rng.uniform() < 0.8),
        "food_security": float(rng.choice([1.0, 1.0, 1.0, 2.0, 3.0, 4.0])),
    }


def _observed_outcome(person: dict) -> bool:
    return bool(
        person["diagnosed"]
        or (person["a1c"] is not None and person["a1c"] >= 6.5)
        or (person["fpg"] is not None and person["fpg"] >= 126.0)
    )


def _eligible(person: dict) -> bool:
    return (
        not person["pregnant"]
        and 18.0 <= person["age"] <= 70.0
        and person["bmi"] is not None
        and 18.5 <= person["bmi"] <= 50.0
    )


def _ensure_outcome_variation(people: list[dict]) -> None:
    """Force at least one case and one non-case per race among eligibles."""
    for race in RACE_CODES:
        eligible = [p for p in people if p["race"] == race and _eligible(p)]
        if not eligible:
            continue
        if not any(_observed_outcome(p) for p in eligible):
            target = max(eligible, key=lambda p: p["risk"])
            target["diagnosed"] = True
            if target["a1c"] is not None:
                target["a1c"] = 7.5
        if all(_observed_outcome(p) for p in eligible):
            target = min(eligible, key=lambda p: p["risk"])
            target["diagnosed"] = False
            if target["a1c"] is not None:
                target["a1c"] = 5.2
            if target["fpg"] is not None:
                target["fpg"] = 95.0


def _tables_for(people: list[dict], cycle: str) -> list[RawTable]:
    suffix = CYCLE_SUFFIXES[cycle]

    def table(name, column_names, rows):
        return RawTable(
            name=f"{name}_{suffix}",
            columns=[Column(c, "numeric") for c in column_names],
            rows=rows,
            cycle=cycle,
        )

    return [
        table(
            "DEMO",
            ["SEQN", "RIDAGEYR", "RIDRETH3", "RIDEXPRG", "WTMEC2YR",
             "RIAGENDR", "INDFMPIR"],
            [(p["rid"], p["age"], p["race"],
              1.0 if p["pregnant"] else 2.0, p["survey_weight"],
              p["gender"], p["income"]) for p in people],
        ),
        table(
            "BMX",
            ["SEQN", "BMXBMI", "BMXWT", "BMXHT", "BMXWAIST"],
            [(p["rid"], p["bmi"], p["weight_kg"], p["height"], p["waist"])
             for p in people],
        ),
        table("GHB", ["SEQN", "LBXGH"], [(p["rid"], p["a1c"]) for p in people]),
        table("GLU", ["SEQN", "LBXGLU"], [(p["rid"], p["fpg"]) for p in people]),
        table("DIQ", ["SEQN", "DIQ010"],
              [(p["rid"], 1.0 if p["diagnosed"] else 2.0) for p in people]),
        table("MCQ", ["SEQN", "MCQ300C"],
              [(p["rid"], 1.0 if p["family_history"] else 2.0) for p in people]),
        table("WHQ", ["SEQN", "WHD140"],
              [(p["rid"], p["greatest_lbs"]) for p in people]),
        table("DPQ", ["SEQN"] + [f"DPQ0{i}0" for i in range(1, 10)],
              [(p["rid"],) + p["dpq"] for p in people]),
        table("HIQ", ["SEQN", "HIQ011"],
              [(p["rid"], 1.0 if p["insured"] else 2.0) for p in people]),
        table("FSQ", ["SEQN", "FSDAD"],
              [(p["rid"], p["food_security"]) for p in people]),
    ]
