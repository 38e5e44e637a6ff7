"""Screening-policy utility analysis.

Screening one person costs one unit; detecting a case pays a constant
reward. A risk score therefore justifies screening exactly when it exceeds
the reciprocal of the reward (the point of indifference), and the realized
per-capita utility of a decision vector is the weighted mean of
``screened * (reward * outcome - 1)``. Comparing two models under the same
reward yields per-group and overall per-capita gains, decision concordance,
reward sensitivity sweeps, and capacity-constrained (scarcity) variants.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .calibrate import (
    DEFAULT_BANDWIDTH,
    DEFAULT_GRID_POINTS,
    DEFAULT_RANGE,
    CalibrationCurve,
    smoothed_calibration,
)
from .ingest import REPORT_RACES, Cohort, Race
from .model import RiskModel, ScoredCohort

log = logging.getLogger(__name__)

ALL_GROUP = "All"

#: Reporting order for per-group tables (largest expected gain first).
TABLE_GROUP_ORDER = (Race.ASIAN.value, Race.WHITE.value,
                     Race.HISPANIC.value, Race.BLACK.value)

DEFAULT_SWEEP = tuple(float(r) for r in range(10, 201, 10))


class InvalidRewardError(ValueError):
    """The detection reward does not admit a screening threshold in (0, 1)."""


class DegenerateWeightsError(ValueError):
    """Weights sum to zero; per-capita quantities are undefined."""


@dataclass(frozen=True)
class RewardSpec:
    """Detection reward in screening-cost units, plus an optional dollar rate."""

    detection_reward: float
    dollars_per_util: float | None = 100.0

    def __post_init__(self) -> None:
        if self.detection_reward <= 0:
            raise InvalidRewardError("detection reward must be positive")
        if self.dollars_per_util is not None and self.dollars_per_util <= 0:
            raise InvalidRewardError("dollar exchange rate must be positive")


@dataclass(frozen=True)
class ScreeningPolicy:
    """A decision rule: screen when the score strictly exceeds the threshold."""

    kind: str  # "fixed-threshold" | "capacity"
    threshold: float
    capacity_fraction: float | None = None


def threshold_from_reward(reward: RewardSpec) -> ScreeningPolicy:
    """Indifference-point policy: threshold is the reciprocal of the reward."""
    if reward.detection_reward <= 1:
        raise InvalidRewardError(
            "detection reward must exceed the screening cost of 1; at "
            f"{reward.detection_reward} no risk below certainty justifies screening"
        )
    return ScreeningPolicy(
        kind="fixed-threshold", threshold=1.0 / reward.detection_reward
    )


def decide(scores, policy: ScreeningPolicy) -> np.ndarray:
    """Screen exactly the scores strictly above the policy threshold."""
    return np.asarray(scores, dtype=float) > policy.threshold


def capacity_threshold(scores, weights, capacity_fraction: float) -> ScreeningPolicy:
    """Smallest threshold screening at most the given weighted fraction.

    Ties at the threshold are not screened, consistent with the strict
    decision rule. With capacity for everyone the threshold sits just below
    the minimum score so that all scores strictly exceed it.
    """
    if not 0 < capacity_fraction <= 1:
        raise ValueError("capacity fraction must be in (0, 1]")
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0:
        raise DegenerateWeightsError("weights sum to zero")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    sorted_weights = weights[order]
    unique_scores, first_index = np.unique(sorted_scores, return_index=True)
    suffix = np.concatenate([np.cumsum(sorted_weights[::-1])[::-1], [0.0]])
    # weight strictly above unique_scores[i] is the suffix sum starting at
    # the first index of the next distinct score
    next_start = np.append(first_index[1:], len(sorted_scores))
    fractions = suffix[next_start] / total
    if 1.0 <= capacity_fraction:
        threshold = float(np.nextafter(unique_scores[0], -np.inf))
        return ScreeningPolicy("capacity", threshold, capacity_fraction)
    feasible = np.nonzero(fractions <= capacity_fraction)[0]
    # the last candidate always screens nobody, so a feasible index exists
    threshold = float(unique_scores[feasible[0]])
    return ScreeningPolicy("capacity", threshold, capacity_fraction)


def realized_utility(decisions, outcomes, weights, reward: RewardSpec) -> float:
    """Weighted per-capita utility of a decision vector; not screening is 0."""
    decisions = np.asarray(decisions, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0:
        raise DegenerateWeightsError("weights sum to zero")
    payoff = decisions * (reward.detection_reward * outcomes - 1.0)
    return float(np.sum(weights * payoff) / total)


# ---------------------------------------------------------------------------
# Model-versus-model comparison


@dataclass
class GroupUtility:
    per_capita_gain: float
    concordance: float
    weighted_n: float
    per_capita_gain_dollars: float | None = None


@dataclass
class UtilityReport:
    """Per-group and overall gains of policy A over policy B."""

    per_group: dict
    overall: GroupUtility
    aggregate_gain: float
    policy_a: ScreeningPolicy
    policy_b: ScreeningPolicy
    detection_reward: float
    model_a: str = ""
    model_b: str = ""

    def to_dict(self) -> dict:
        def group_dict(g: GroupUtility) -> dict:
            return {
                "per_capita_gain": g.per_capita_gain,
                "per_capita_gain_dollars": g.per_capita_gain_dollars,
                "concordance": g.concordance,
                "weighted_n": g.weighted_n,
            }

        return {
            "model_a": self.model_a,
            "model_b": self.model_b,
            "detection_reward": self.detection_reward,
            "policy_a": _policy_dict(self.policy_a),
            "policy_b": _policy_dict(self.policy_b),
            "overall": group_dict(self.overall),
            "per_group": {k: group_dict(v) for k, v in self.per_group.items()},
            "aggregate_gain": self.aggregate_gain,
        }


def _policy_dict(policy: ScreeningPolicy) -> dict:
    return {
        "kind": policy.kind,
        "threshold": policy.threshold,
        "capacity_fraction": policy.capacity_fraction,
    }


def _paired_scores(
    model_a: RiskModel, model_b: RiskModel, cohort: Cohort, weighted: bool
) -> tuple[ScoredCohort, ScoredCohort]:
    """Score both models on the rows where both have complete features."""
    scored_a = model_a.score_cohort(cohort)
    scored_b = model_b.score_cohort(cohort)
    if not np.array_equal(scored_a.indices, scored_b.indices):
        common = np.intersect1d(scored_a.indices, scored_b.indices)
        mask_a = np.isin(scored_a.indices, common)
        mask_b = np.isin(scored_b.indices, common)
        scored_a = _subset(scored_a, mask_a)
        scored_b = _subset(scored_b, mask_b)
    if not weighted:
        ones = np.ones_like(scored_a.weights)
        scored_a = _replace_weights(scored_a, ones)
        scored_b = _replace_weights(scored_b, ones)
    return scored_a, scored_b


def _subset(scored: ScoredCohort, mask: np.ndarray) -> ScoredCohort:
    return ScoredCohort(
        model_name=scored.model_name,
        risk=scored.risk[mask],
        outcome=scored.outcome[mask],
        weights=scored.weights[mask],
        race=scored.race[mask],
        row_ids=scored.row_ids[mask],
        indices=scored.indices[mask],
    )


def _replace_weights(scored: ScoredCohort, weights: np.ndarray) -> ScoredCohort:
    return ScoredCohort(
        model_name=scored.model_name,
        risk=scored.risk,
        outcome=scored.outcome,
        weights=weights,
        race=scored.race,
        row_ids=scored.row_ids,
        indices=scored.indices,
    )


def utility_gain(
    model_a: RiskModel,
    model_b: RiskModel,
    cohort: Cohort,
    reward: RewardSpec,
    *,
    policy: str = "indifference",
    capacity_fraction: float | None = None,
    weighted: bool = True,
) -> UtilityReport:
    """Per-capita utility of model A's decisions over model B's.

    ``policy="indifference"`` screens above the reciprocal of the reward
    under both models; ``policy="capacity"`` derives each model's threshold
    so it screens at most ``capacity_fraction`` of the weighted population.
    Gains are computed within each group's weighted subpopulation, including
    the Other group, whose weighted share makes the group gains average
    exactly to the overall gain.
    """
    scored_a, scored_b = _paired_scores(model_a, model_b, cohort, weighted)
    if policy == "indifference":
        policy_a = policy_b = threshold_from_reward(reward)
    elif policy == "capacity":
        if capacity_fraction is None:
            raise ValueError("capacity policy needs a capacity_fraction")
        policy_a = capacity_threshold(scored_a.risk, scored_a.weights,
                                      capacity_fraction)
        policy_b = capacity_threshold(scored_b.risk, scored_b.weights,
                                      capacity_fraction)
    else:
        raise ValueError(f"unknown policy derivation {policy!r}")

    decisions_a = decide(scored_a.risk, policy_a)
    decisions_b = decide(scored_b.risk, policy_b)
    outcomes = scored_a.outcome
    weights = scored_a.weights
    # fused per-record difference: algebraically the gap between the two
    # realized utilities, but immune to cancellation between their sums
    payoff_delta = (
        (reward.detection_reward * outcomes.astype(float) - 1.0)
        * (decisions_a.astype(float) - decisions_b.astype(float))
    )

    def group_report(mask: np.ndarray) -> GroupUtility:
        group_weight = float(np.sum(weights[mask]))
        if group_weight <= 0:
            raise DegenerateWeightsError("group weights sum to zero")
        gain = float(np.sum(weights[mask] * payoff_delta[mask]) / group_weight)
        agree = np.sum(weights[mask] * (decisions_a[mask] == decisions_b[mask]))
        dollars = (
            gain * reward.dollars_per_util
            if reward.dollars_per_util is not None else None
        )
        return GroupUtility(
            per_capita_gain=gain,
            concordance=float(agree / group_weight),
            weighted_n=group_weight,
            per_capita_gain_dollars=dollars,
        )

    per_group = {}
    for race in (*REPORT_RACES, Race.OTHER):
        mask = scored_a.race == race.value
        if not np.any(mask):
            log.warning("group %s: no records; omitted from report", race.value)
            continue
        per_group[race.value] = group_report(mask)
    overall = group_report(np.ones(len(scored_a), dtype=bool))
    return UtilityReport(
        per_group=per_group,
        overall=overall,
        aggregate_gain=overall.per_capita_gain * overall.weighted_n,
        policy_a=policy_a,
        policy_b=policy_b,
        detection_reward=reward.detection_reward,
        model_a=model_a.name,
        model_b=model_b.name,
    )


def concordance(decisions_a, decisions_b, weights, groups) -> dict:
    """Weighted fraction deciding identically, per group plus overall."""
    decisions_a = np.asarray(decisions_a, dtype=bool)
    decisions_b = np.asarray(decisions_b, dtype=bool)
    weights = np.asarray(weights, dtype=float)
    groups = np.asarray(groups, dtype=object)
    out = {}
    agree = decisions_a == decisions_b
    total = weights.sum()
    if total <= 0:
        raise DegenerateWeightsError("weights sum to zero")
    out[ALL_GROUP] = float(np.sum(weights * agree) / total)
    for group in sorted(set(groups.tolist())):
        mask = groups == group
        group_weight = weights[mask].sum()
        if group_weight <= 0:
            log.warning("group %s: zero weight; omitted", group)
            continue
        out[str(group)] = float(np.sum(weights[mask] * agree[mask]) / group_weight)
    return out


def sensitivity_sweep(
    model_a: RiskModel,
    model_b: RiskModel,
    cohort: Cohort,
    reward_grid=DEFAULT_SWEEP,
    *,
    dollars_per_util: float | None = 100.0,
    weighted: bool = True,
) -> list[tuple[float, UtilityReport]]:
    """Indifference-policy gains across a grid of detection rewards."""
    out = []
    for value in reward_grid:
        reward = RewardSpec(float(value), dollars_per_util)
        out.append((float(value), utility_gain(
            model_a, model_b, cohort, reward, weighted=weighted
        )))
    return out


# ---------------------------------------------------------------------------
# Curves and distributions over the score axis


@dataclass
class UtilityCurve:
    """Expected utility of screening as a function of the risk score."""

    group: str
    score: np.ndarray
    utility: np.ndarray
    mass: np.ndarray
    calibration: CalibrationCurve


def utility_curve(
    scores,
    outcomes,
    weights,
    reward: RewardSpec,
    score_range: tuple = DEFAULT_RANGE,
    bandwidth: float = DEFAULT_BANDWIDTH,
    grid_points: int = DEFAULT_GRID_POINTS,
    group: str = ALL_GROUP,
) -> UtilityCurve:
    """Smoothed screening utility: reward times empirical risk, minus one."""
    curve = smoothed_calibration(
        scores, outcomes, weights,
        bandwidth=bandwidth, score_range=score_range,
        grid_points=grid_points, group=group,
    )
    return UtilityCurve(
        group=group,
        score=curve.score,
        utility=reward.detection_reward * curve.empirical - 1.0,
        mass=curve.mass,
        calibration=curve,
    )


@dataclass
class RiskHistogram:
    group: str
    edges: np.ndarray
    mass: np.ndarray

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def risk_distribution(
    scores,
    weights,
    score_range: tuple = DEFAULT_RANGE,
    bins: int = 50,
    group: str = ALL_GROUP,
) -> RiskHistogram:
    """Weighted histogram; masses sum to the weighted in-range count."""
    if bins < 1:
        raise ValueError("need at least one bin")
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    lo, hi = score_range
    in_range = (scores >= lo) & (scores <= hi)
    s, w = scores[in_range], weights[in_range]
    width = (hi - lo) / bins
    idx = np.clip(((s - lo) // width).astype(int), 0, bins - 1)
    mass = np.bincount(idx, weights=w, minlength=bins)
    edges = np.linspace(lo, hi, bins + 1)
    return RiskHistogram(group=group, edges=edges, mass=mass)


# ---------------------------------------------------------------------------
# Subgroup summaries


@dataclass
class SubgroupCell:
    age_lo: float
    age_hi: float
    bmi_lo: float
    bmi_hi: float
    race: str
    weighted_n: float
    per_capita_gain: float | None
    suppressed: bool


def subgroup_summary(
    cohort: Cohort,
    model_a: RiskModel,
    model_b: RiskModel,
    reward: RewardSpec,
    age_edges=(18.0, 30.0, 40.0, 50.0, 60.0, 70.0),
    bmi_edges=(18.5, 25.0, 30.0, 35.0, 50.0),
    *,
    min_weighted_n: float = 50.0,
    weighted: bool = True,
) -> list[SubgroupCell]:
    """Indifference-policy gains within (age bin, BMI bin, race) cells.

    Bins are left-closed with an inclusive final edge and must cover every
    compared record. Cells lighter than ``min_weighted_n`` keep their
    weighted size but have their gain suppressed. Weighted sizes over all
    cells therefore add up to the compared population.
    """
    scored_a, scored_b = _paired_scores(model_a, model_b, cohort, weighted)
    policy = threshold_from_reward(reward)
    decisions_a = decide(scored_a.risk, policy)
    decisions_b = decide(scored_b.risk, policy)
    payoff = (reward.detection_reward * scored_a.outcome.astype(float) - 1.0)
    delta = payoff * (decisions_a.astype(float) - decisions_b.astype(float))

    ages = np.array([cohort.records[i].age for i in scored_a.indices], dtype=float)
    bmis = np.array([cohort.records[i].bmi for i in scored_a.indices], dtype=float)
    age_bin = _bin_index(ages, age_edges, "age")
    bmi_bin = _bin_index(bmis, bmi_edges, "bmi")

    races = [r.value for r in (*REPORT_RACES, Race.OTHER)]
    cells = []
    for ai in range(len(age_edges) - 1):
        for bi in range(len(bmi_edges) - 1):
            for race in races:
                mask = (age_bin == ai) & (bmi_bin == bi) & (scored_a.race == race)
                weight = float(np.sum(scored_a.weights[mask]))
                if weight == 0.0:
                    continue
                suppressed = weight < min_weighted_n
                gain = (
                    None if suppressed
                    else float(np.sum(scored_a.weights[mask] * delta[mask]) / weight)
                )
                cells.append(SubgroupCell(
                    age_lo=age_edges[ai], age_hi=age_edges[ai + 1],
                    bmi_lo=bmi_edges[bi], bmi_hi=bmi_edges[bi + 1],
                    race=race, weighted_n=weight,
                    per_capita_gain=gain, suppressed=suppressed,
                ))
    return cells


def _bin_index(values: np.ndarray, edges, label: str) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if np.any(values < edges[0]) or np.any(values > edges[-1]):
        raise ValueError(f"{label} bins do not cover the cohort range")
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


# ---------------------------------------------------------------------------
# Exports


def report_to_json(report: UtilityReport, path, extra: dict | None = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def report_to_csv(report: UtilityReport, path) -> None:
    """Per-group gain table: group, per_capita_gain, dollars, concordance."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([
            "group", "per_capita_gain", "per_capita_gain_dollars",
            "concordance", "weighted_n",
        ])
        rows = [(g, report.per_group[g]) for g in TABLE_GROUP_ORDER
                if g in report.per_group]
        rows.append((ALL_GROUP, report.overall))
        for group, info in rows:
            writer.writerow([
                group,
                repr(info.per_capita_gain),
                "" if info.per_capita_gain_dollars is None
                else repr(info.per_capita_gain_dollars),
                repr(info.concordance),
                repr(info.weighted_n),
            ])


def sweep_to_csv(sweep: list[tuple[float, UtilityReport]], path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["detection_reward", "group", "per_capita_gain",
                         "concordance", "weighted_n"])
        for value, report in sweep:
            rows = [(g, report.per_group[g]) for g in TABLE_GROUP_ORDER
                    if g in report.per_group]
            rows.append((ALL_GROUP, report.overall))
            for group, info in rows:
                writer.writerow([
                    repr(value), group, repr(info.per_capita_gain),
                    repr(info.concordance), repr(info.weighted_n),
                ])


def subgroups_to_csv(cells: list[SubgroupCell], path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([
            "age_lo", "age_hi", "bmi_lo", "bmi_hi", "race",
            "weighted_n", "per_capita_gain", "suppressed",
        ])
        for cell in cells:
            writer.writerow([
                repr(cell.age_lo), repr(cell.age_hi),
                repr(cell.bmi_lo), repr(cell.bmi_hi),
                cell.race, repr(cell.weighted_n),
                "" if cell.per_capita_gain is None else repr(cell.per_capita_gain),
                int(cell.suppressed),
            ])


def histograms_to_csv(histograms: list[RiskHistogram], path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["group", "bin_lo", "bin_hi", "mass"])
        for hist in histograms:
            for lo, hi, mass in zip(hist.edges[:-1], hist.edges[1:], hist.mass):
                writer.writerow([hist.group, repr(float(lo)), repr(float(hi)),
                                 repr(float(mass))])


def utility_curves_to_csv(curves: list[UtilityCurve], path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["group", "score", "utility", "mass"])
        for curve in curves:
            for score, value, mass in zip(curve.score, curve.utility, curve.mass):
                writer.writerow([curve.group, repr(float(score)),
                                 repr(float(value)), repr(float(mass))])
