"""Survey-weighted logistic regression fitted by iteratively reweighted
least squares, plus the bundled risk-model object used by the pipeline.

The estimator follows the scikit-learn protocol (``fit`` / ``predict_proba``
/ ``get_params``) but expects design matrices that already carry an explicit
intercept column; no implicit intercept is added. Weights are normalized to
mean one inside ``fit`` (the maximizer is invariant to positive rescaling),
which keeps the gradient-based convergence test on a sample-size scale
rather than a population scale.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .features import (
    DesignBuilder,
    DesignMatrix,
    FeatureSpec,
    Intercept,
    SpecError,
    builder_from_state,
    builder_state,
)
from .ingest import Cohort


class FitError(RuntimeError):
    """The solver could not produce usable coefficients."""


class SeparationError(FitError):
    """Coefficients ran away, indicating quasi-separation.

    Refit with a small ridge penalty (``ridge=1e-6``) to regularize.
    """


def sigmoid(eta: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    expo = np.exp(eta[~pos])
    out[~pos] = expo / (1.0 + expo)
    return out


def weighted_loglik(beta, X, y, w, ridge_vector=None) -> float:
    """Weighted Bernoulli log-likelihood, optionally ridge-penalized.

    Uses the overflow-safe identity
    ``y*log(p) + (1-y)*log(1-p) = y*eta - log(1 + exp(eta))``.
    """
    eta = X @ beta
    log1p_exp = np.maximum(eta, 0) + np.log1p(np.exp(-np.abs(eta)))
    value = float(np.sum(w * (y * eta - log1p_exp)))
    if ridge_vector is not None:
        value -= 0.5 * float(ridge_vector @ (beta * beta))
    return value


def loglik_gradient(beta, X, y, w, ridge_vector=None) -> np.ndarray:
    """Gradient of :func:`weighted_loglik` with respect to the coefficients."""
    residual = w * (y - sigmoid(X @ beta))
    grad = X.T @ residual
    if ridge_vector is not None:
        grad = grad - ridge_vector * beta
    return grad


class WeightedLogisticRegression(BaseEstimator):
    """Maximum-likelihood logistic regression with observation weights.

    Parameters
    ----------
    tol : float
        Convergence threshold on the max-norm of the (weight-normalized)
        score vector.
    max_iter : int
        IRLS iteration cap; exceeding it leaves ``converged_`` False.
    ridge : float
        Optional L2 penalty applied to all but the unpenalized columns;
        zero by default (pure maximum likelihood).
    unpenalized : tuple of int
        Column indices exempt from the ridge penalty (the intercept).
    coef_cap : float
        Magnitude guard on the standardized scale; a coefficient beyond
        this raises :class:`SeparationError` when fitting without a ridge.
    """

    def __init__(
        self,
        tol: float = 1e-8,
        max_iter: int = 100,
        ridge: float = 0.0,
        unpenalized: tuple = (0,),
        coef_cap: float = 20.0,
    ):
        self.tol = tol
        self.max_iter = max_iter
        self.ridge = ridge
        self.unpenalized = unpenalized
        self.coef_cap = coef_cap

    def fit(self, X, y, sample_weight=None) -> "WeightedLogisticRegression":
        X, y = check_X_y(X, y, dtype=float)
        y = y.astype(float)
        n, p = X.shape
        if n <= p:
            raise FitError(f"need more rows ({n}) than columns ({p})")
        if sample_weight is None:
            sample_weight = np.ones(n)
        w = np.asarray(sample_weight, dtype=float)
        if w.shape != (n,):
            raise FitError("sample_weight length must match rows")
        if np.any(w < 0):
            raise FitError("sample weights must be nonnegative")
        total = w.sum()
        if total == 0:
            raise FitError("sample weights sum to zero")
        w_norm = w * (n / total)

        ridge_vector = np.full(p, float(self.ridge))
        for idx in self.unpenalized:
            if 0 <= idx < p:
                ridge_vector[idx] = 0.0

        beta = np.zeros(p)
        loglik = weighted_loglik(beta, X, y, w_norm, ridge_vector)
        converged = False
        iteration = 0
        for iteration in range(1, self.max_iter + 1):
            grad = loglik_gradient(beta, X, y, w_norm, ridge_vector)
            if np.max(np.abs(grad)) <= self.tol:
                converged = True
                break
            prob = sigmoid(X @ beta)
            curvature = w_norm * prob * (1.0 - prob)
            hessian = (X.T * curvature) @ X + np.diag(ridge_vector)
            try:
                step = np.linalg.solve(hessian, grad)
            except np.linalg.LinAlgError as exc:
                raise FitError(
                    "singular working Hessian; check for collinear columns"
                ) from exc
            # step halving keeps the likelihood monotone
            candidate = beta + step
            new_loglik = weighted_loglik(candidate, X, y, w_norm, ridge_vector)
            halvings = 0
            while new_loglik < loglik - 1e-10 and halvings < 30:
                step *= 0.5
                candidate = beta + step
                new_loglik = weighted_loglik(candidate, X, y, w_norm, ridge_vector)
                halvings += 1
            beta = candidate
            loglik = new_loglik
            if self.ridge == 0.0 and np.max(np.abs(beta)) > self.coef_cap:
                raise SeparationError(
                    "coefficients exceeded "
                    f"{self.coef_cap}; data may be quasi-separated -- refit "
                    "with ridge=1e-6"
                )
        else:
            grad = loglik_gradient(beta, X, y, w_norm, ridge_vector)
            converged = bool(np.max(np.abs(grad)) <= self.tol)

        self.coef_ = beta
        self.converged_ = converged
        self.n_iter_ = iteration
        self.final_gradient_norm_ = float(
            np.max(np.abs(loglik_gradient(beta, X, y, w_norm, ridge_vector)))
        )
        # reported likelihood uses the caller's weight scale, unpenalized
        self.log_likelihood_ = weighted_loglik(beta, X, y, w)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return X @ self.coef_

    def predict_proba(self, X) -> np.ndarray:
        risk = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - risk, risk])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)


# ---------------------------------------------------------------------------
# Fitted risk model bundle


@dataclass
class RiskModel:
    """A fitted feature expansion plus coefficients and fit diagnostics."""

    name: str
    builder: DesignBuilder
    coefficients: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    log_likelihood: float
    n_rows: int
    excluded_missing: int
    ridge: float = 0.0

    @property
    def spec(self) -> FeatureSpec:
        return self.builder.spec

    @property
    def columns(self) -> tuple[str, ...]:
        return self.builder.columns_

    def predict(self, design: DesignMatrix) -> np.ndarray:
        """Predicted risks for a design built with the same fitted expansion."""
        if design.columns != self.columns:
            raise SpecError(
                f"design columns {design.columns} do not match model "
                f"{self.name!r} columns {self.columns}"
            )
        if design.scaling != self.builder.scaling_:
            raise SpecError(
                f"design scaling constants do not match model {self.name!r}; "
                "build the design with this model's builder"
            )
        eta = design.values @ self.coefficients
        return sigmoid(eta)

    def design_for(self, cohort: Cohort) -> DesignMatrix:
        """Expand a cohort with the training-time scaling constants."""
        return self.builder.transform(cohort)

    def score_cohort(self, cohort: Cohort) -> "ScoredCohort":
        design = self.design_for(cohort)
        return ScoredCohort(
            model_name=self.name,
            risk=self.predict(design),
            outcome=design.outcome,
            weights=design.weights,
            race=design.race,
            row_ids=design.row_ids,
            indices=design.indices,
        )

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "builder": builder_state(self.builder),
            "coefficients": [float(c) for c in self.coefficients],
            "diagnostics": {
                "converged": self.converged,
                "iterations": self.iterations,
                "final_gradient_norm": self.final_gradient_norm,
                "log_likelihood": self.log_likelihood,
                "n_rows": self.n_rows,
                "excluded_missing": self.excluded_missing,
                "ridge": self.ridge,
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RiskModel":
        payload = json.loads(text)
        diag = payload["diagnostics"]
        return cls(
            name=payload["name"],
            builder=builder_from_state(payload["builder"]),
            coefficients=np.array(payload["coefficients"], dtype=float),
            converged=diag["converged"],
            iterations=diag["iterations"],
            final_gradient_norm=diag["final_gradient_norm"],
            log_likelihood=diag["log_likelihood"],
            n_rows=diag["n_rows"],
            excluded_missing=diag["excluded_missing"],
            ridge=diag.get("ridge", 0.0),
        )


@dataclass
class ScoredCohort:
    """Risk predictions aligned with outcomes, weights, and group labels."""

    model_name: str
    risk: np.ndarray
    outcome: np.ndarray
    weights: np.ndarray
    race: np.ndarray
    row_ids: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.risk)


def fit_logistic(
    design: DesignMatrix,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 0.0,
    name: str = "model",
    builder: DesignBuilder | None = None,
) -> RiskModel:
    """Fit coefficients for an already-built design matrix."""
    intercept_cols = tuple(
        i for i, label in enumerate(design.columns) if label == "intercept"
    )
    estimator = WeightedLogisticRegression(
        tol=tol, max_iter=max_iter, ridge=ridge, unpenalized=intercept_cols
    )
    estimator.fit(design.values, design.outcome.astype(int), design.weights)
    if builder is None:
        # ad-hoc design with no cohort-level expansion behind it; predict()
        # still works because columns and scaling are carried over
        builder = DesignBuilder(FeatureSpec(name=name, terms=(Intercept(),)))
        builder.levels_ = {}
        builder.columns_ = design.columns
        builder.scaling_ = design.scaling
    return RiskModel(
        name=name,
        builder=builder,
        coefficients=estimator.coef_,
        converged=estimator.converged_,
        iterations=estimator.n_iter_,
        final_gradient_norm=estimator.final_gradient_norm_,
        log_likelihood=estimator.log_likelihood_,
        n_rows=design.n_rows,
        excluded_missing=design.excluded_missing,
        ridge=ridge,
    )


def fit_risk_model(
    cohort: Cohort,
    spec: FeatureSpec,
    *,
    weighted: bool = True,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 0.0,
) -> RiskModel:
    """Expand a cohort under ``spec`` and fit the weighted logistic model."""
    builder = DesignBuilder(spec)
    design = builder.fit_transform(cohort)
    if not weighted:
        design.weights = np.ones_like(design.weights)
    return fit_logistic(
        design, tol=tol, max_iter=max_iter, ridge=ridge,
        name=spec.name, builder=builder,
    )
