"""Empirical-versus-predicted risk curves, overall and by group.

Curves come in two forms: equal-width binned averages, and a kernel-local
linear regression of outcomes on scores evaluated on an even grid. Both are
weighted; multiplying all weights by a positive constant leaves every
(score, empirical) point unchanged.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .ingest import REPORT_RACES, Cohort
from .model import RiskModel

log = logging.getLogger(__name__)

ALL_GROUP = "All"

DEFAULT_RANGE = (0.0, 0.05)
DEFAULT_BINS = 10
DEFAULT_BANDWIDTH = 0.01
DEFAULT_GRID_POINTS = 51


class EmptyCurveError(ValueError):
    """No in-range observations with positive weight."""


class InsufficientDataError(ValueError):
    """Too few in-range observations to smooth."""


@dataclass
class CalibrationCurve:
    """Points are parallel arrays sorted by score; mass is weighted count."""

    group: str
    method: str
    score: np.ndarray
    empirical: np.ndarray
    mass: np.ndarray
    score_range: tuple

    @property
    def points(self) -> list[tuple]:
        return list(zip(self.score.tolist(), self.empirical.tolist(),
                        self.mass.tolist()))


def _validate_vectors(scores, outcomes, weights):
    scores = np.asarray(scores, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (scores.shape == outcomes.shape == weights.shape):
        raise ValueError("scores, outcomes, and weights must share a length")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    return scores, outcomes, weights


def binned_calibration(
    scores,
    outcomes,
    weights,
    bins: int = DEFAULT_BINS,
    score_range: tuple = DEFAULT_RANGE,
    group: str = ALL_GROUP,
) -> CalibrationCurve:
    """Equal-width bins over ``score_range`` (endpoints inclusive).

    Each point is the weighted mean score, weighted outcome rate, and
    weighted mass of one non-empty bin, so bin masses sum to the weighted
    in-range count.
    """
    scores, outcomes, weights = _validate_vectors(scores, outcomes, weights)
    lo, hi = score_range
    if not lo < hi:
        raise ValueError("score range must be non-degenerate")
    if bins < 1:
        raise ValueError("need at least one bin")
    in_range = (scores >= lo) & (scores <= hi) & (weights > 0)
    if not np.any(in_range):
        raise EmptyCurveError("no weighted observations inside the score range")
    s, y, w = scores[in_range], outcomes[in_range], weights[in_range]
    width = (hi - lo) / bins
    idx = np.clip(((s - lo) // width).astype(int), 0, bins - 1)
    mass = np.bincount(idx, weights=w, minlength=bins)
    score_sum = np.bincount(idx, weights=w * s, minlength=bins)
    outcome_sum = np.bincount(idx, weights=w * y, minlength=bins)
    keep = mass > 0
    return CalibrationCurve(
        group=group,
        method="binned",
        score=score_sum[keep] / mass[keep],
        empirical=outcome_sum[keep] / mass[keep],
        mass=mass[keep],
        score_range=(lo, hi),
    )


def smoothed_calibration(
    scores,
    outcomes,
    weights,
    bandwidth: float = DEFAULT_BANDWIDTH,
    score_range: tuple = DEFAULT_RANGE,
    grid_points: int = DEFAULT_GRID_POINTS,
    degree: int = 1,
    group: str = ALL_GROUP,
) -> CalibrationCurve:
    """Gaussian-kernel local regression of outcome on score over a grid.

    ``degree=1`` (default) fits a local line, which is unbiased when the
    true outcome rate is linear in the score; ``degree=0`` gives the local
    constant (Nadaraya-Watson) estimate, whose infinite-bandwidth limit is
    the overall weighted prevalence. All observations inform the fit; the
    range only positions the evaluation grid. Estimates are clipped to
    [0, 1]; the reported mass is the kernel-weighted count at each grid
    point.
    """
    scores, outcomes, weights = _validate_vectors(scores, outcomes, weights)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if degree not in (0, 1):
        raise ValueError("degree must be 0 or 1")
    lo, hi = score_range
    if not lo < hi:
        raise ValueError("score range must be non-degenerate")
    in_range = int(np.sum((scores >= lo) & (scores <= hi) & (weights > 0)))
    if in_range < 10:
        raise InsufficientDataError(
            f"only {in_range} weighted observations in range; need at least 10"
        )
    positive = weights > 0
    s, y, w = scores[positive], outcomes[positive], weights[positive]

    grid = np.linspace(lo, hi, grid_points)
    estimates = np.empty(grid_points)
    masses = np.empty(grid_points)
    for j, center in enumerate(grid):
        offset = s - center
        kernel = w * np.exp(-0.5 * (offset / bandwidth) ** 2)
        k0 = kernel.sum()
        masses[j] = k0
        if degree == 0:
            estimates[j] = (kernel @ y) / k0
            continue
        k1 = kernel @ offset
        k2 = kernel @ (offset * offset)
        t0 = kernel @ y
        t1 = kernel @ (offset * y)
        denom = k0 * k2 - k1 * k1
        if denom <= 1e-300 or not np.isfinite(denom):
            estimates[j] = t0 / k0  # all mass at one score: fall back
        else:
            estimates[j] = (k2 * t0 - k1 * t1) / denom
    return CalibrationCurve(
        group=group,
        method="smoothed",
        score=grid,
        empirical=np.clip(estimates, 0.0, 1.0),
        mass=masses,
        score_range=(lo, hi),
    )


def group_calibration(
    cohort: Cohort,
    model: RiskModel,
    method: str = "smoothed",
    *,
    weighted: bool = True,
    **params,
) -> list[CalibrationCurve]:
    """One curve per reported race group plus the pooled ``All`` curve.

    The Other group stays in the ``All`` curve but gets no row of its own.
    Groups without enough in-range data are skipped with a warning. All
    curves share the same parameters.
    """
    if method == "binned":
        build = binned_calibration
    elif method == "smoothed":
        build = smoothed_calibration
    else:
        raise ValueError(f"unknown calibration method {method!r}")
    scored = model.score_cohort(cohort)
    weights = scored.weights if weighted else np.ones_like(scored.weights)

    curves = []
    members = [(ALL_GROUP, np.ones(len(scored), dtype=bool))]
    members += [(race.value, scored.race == race.value) for race in REPORT_RACES]
    for group, mask in members:
        if not np.any(mask):
            log.warning("group %s: no records; curve skipped", group)
            continue
        try:
            curves.append(build(
                scored.risk[mask], scored.outcome[mask], weights[mask],
                group=group, **params,
            ))
        except (EmptyCurveError, InsufficientDataError) as exc:
            log.warning("group %s: %s; curve skipped", group, exc)
    return curves


def curves_to_csv(curves: list[CalibrationCurve], path) -> None:
    """Export curves with columns (group, method, score, empirical, mass)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["group", "method", "score", "empirical", "mass"])
        for curve in curves:
            for score, empirical, mass in curve.points:
                writer.writerow([curve.group, curve.method,
                                 repr(score), repr(empirical), repr(mass)])
