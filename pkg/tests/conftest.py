"""Shared fixtures: deterministic synthetic cohorts for model-level tests."""
import numpy as np
import pytest

from riskscreen.ingest import (
    EXTENDED_VARIABLES,
    Cohort,
    CohortCriteria,
    PatientRecord,
    Race,
    build_cohort,
)

RACES = (Race.ASIAN, Race.BLACK, Race.HISPANIC, Race.WHITE, Race.OTHER)


def make_record(rid, cycle="2011-2012", age=50.0, bmi=30.0, race=Race.WHITE,
                diabetes=False, weight=1.0, **extended):
    full = {name: None for name in EXTENDED_VARIABLES}
    full.update(extended)
    return PatientRecord(
        id=rid, cycle=cycle, age=age, bmi=bmi, race=race, pregnant=False,
        diabetes=diabetes, weight_survey=weight, extended=full,
    )


def make_cohort(n=400, seed=11, race_effects=None, weights="random"):
    """Cohort with a known logistic risk surface in age, BMI, and race."""
    rng = np.random.RandomState(seed)
    if race_effects is None:
        race_effects = {
            Race.ASIAN: 1.0, Race.BLACK: 0.5, Race.HISPANIC: 0.4,
            Race.WHITE: 0.0, Race.OTHER: 0.2,
        }
    records = []
    for i in range(n):
        age = float(rng.randint(18, 71))
        bmi = float(np.round(rng.uniform(18.5, 50.0), 1))
        race = RACES[rng.randint(len(RACES))]
        eta = -2.5 + 0.05 * (age - 45.0) + 0.08 * (bmi - 28.0) + race_effects[race]
        risk = 1.0 / (1.0 + np.exp(-eta))
        diabetes = bool(rng.uniform() < risk)
        if weights == "random":
            weight = float(np.round(rng.uniform(0.5, 3.0), 3))
        else:
            weight = 1.0
        records.append(make_record(
            i + 1, age=age, bmi=bmi, race=race, diabetes=diabetes, weight=weight,
        ))
    return build_cohort(records, CohortCriteria())


@pytest.fixture
def cohort() -> Cohort:
    return make_cohort()


@pytest.fixture
def unit_weight_cohort() -> Cohort:
    return make_cohort(weights="unit")
