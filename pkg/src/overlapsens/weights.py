"""Selection model, transport weights and weighted moments."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import ExperimentalSample, TargetPopulation
from .errors import (
    CorrOfConstant,
    ExtremePropensity,
    NonConvergence,
    SeparationDetected,
    ValidationError,
    ZeroWeightSum,
)

RIDGE = 1e-8
MAX_ITER = 100
TOL = 1e-8
SEPARATION_EPS = 1e-10
EXTREME_PROPENSITY = 1e-6


@dataclass(frozen=True)
class SelectionModel:
    """Logistic model for P(S=1 | X) over the stacked experimental + target rows."""

    coefficients: np.ndarray  # intercept first
    covariate_names: tuple[str, ...]
    iterations: int
    gradient_norm: float

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(len(X), -1)
        return self.coefficients[0] + X @ self.coefficients[1:]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return expit(self.linear_predictor(X))

    def to_dict(self) -> dict:
        names = ("intercept",) + self.covariate_names
        return {
            "source": "fitted",
            "coefficients": {k: float(v) for k, v in zip(names, self.coefficients)},
            "iterations": self.iterations,
            "gradient_norm": float(self.gradient_norm),
        }


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    normalization: str = "mean-one"
    source: str = "fitted"

    def __post_init__(self):
        w = self.weights
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValidationError("weights must be positive and finite")

    def __len__(self):
        return len(self.weights)

    @classmethod
    def from_raw(cls, raw, source="fitted") -> "WeightVector":
        raw = np.asarray(raw, dtype=float)
        w = raw / raw.mean()
        w.setflags(write=False)
        return cls(w, "mean-one", source)


def fit_selection(
    exp: ExperimentalSample,
    target: TargetPopulation,
    covariates,
    *,
    ridge: float = RIDGE,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
) -> SelectionModel:
    """Maximum-likelihood logistic regression of S on X by IRLS.

    Target rows carry their survey weight (if any) as a frequency weight.
    Raises SeparationDetected when fitted probabilities run off to 0 or 1
    while the coefficients keep moving, i.e. some covariate region is seen in
    only one of the two datasets.
    """
    covariates = tuple(covariates)
    X1 = exp.covariate_matrix(covariates)
    X0 = target.covariate_matrix(covariates)
    if len(X1) == 0 or len(X0) == 0:
        raise ValidationError("both datasets must be non-empty")
    X = np.column_stack([np.ones(len(X1) + len(X0)), np.vstack([X1, X0])])
    s = np.concatenate([np.ones(len(X1)), np.zeros(len(X0))])
    cw = np.ones(len(s))
    if target.weight is not None:
        cw[len(X1):] = target.weight

    k = X.shape[1]
    beta = np.zeros(k)
    beta[0] = np.log(np.sum(cw * s) / np.sum(cw * (1 - s)))
    prev_step = np.inf
    for it in range(1, max_iter + 1):
        mu = expit(X @ beta)
        grad = X.T @ (cw * (s - mu))
        H = X.T @ ((cw * mu * (1 - mu))[:, None] * X) + ridge * np.eye(k)
        step = np.linalg.solve(H, grad)
        step_size = np.max(np.abs(step))
        beta = beta + step
        if step_size < tol:
            mu = expit(X @ beta)
            g = np.linalg.norm(X.T @ (cw * (s - mu)))
            return SelectionModel(beta, covariates, it, float(g))
        extreme = np.any((mu < SEPARATION_EPS) | (mu > 1 - SEPARATION_EPS))
        # Newton steps stop shrinking once the likelihood has no finite maximum.
        if extreme and it >= 3 and step_size >= 0.5 * prev_step:
            raise SeparationDetected(
                "fitted selection probabilities left [1e-10, 1-1e-10] without convergence; "
                "the covariates separate the experimental sample from the target population"
            )
        prev_step = step_size
    raise NonConvergence(max_iter)


def transport_weights(model: SelectionModel, exp: ExperimentalSample) -> WeightVector:
    """Odds of non-selection, P(S=0|X)/P(S=1|X), normalized to mean one."""
    eta = model.linear_predictor(exp.covariate_matrix(model.covariate_names))
    p1 = expit(eta)
    if np.any(p1 < EXTREME_PROPENSITY):
        n_bad = int(np.sum(p1 < EXTREME_PROPENSITY))
        warnings.warn(
            f"{n_bad} experimental unit(s) have fitted P(S=1|X) < {EXTREME_PROPENSITY:g}",
            ExtremePropensity,
            stacklevel=2,
        )
    # log-odds shifted by the max so huge odds never overflow
    log_odds = -eta
    return WeightVector.from_raw(np.exp(log_odds - log_odds.max()))


def user_weights(exp: ExperimentalSample) -> WeightVector:
    if exp.weight is None:
        raise ValidationError("experimental sample has no weight column")
    return WeightVector.from_raw(exp.weight, source="user-supplied")


def _as_weights(weights) -> np.ndarray:
    w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    return w


def weighted_mean(values, weights) -> float:
    v = np.asarray(values, dtype=float)
    w = _as_weights(weights)
    total = w.sum()
    if len(v) != len(w):
        raise ValidationError(f"length mismatch: {len(v)} values, {len(w)} weights")
    if not total > 0:
        raise ZeroWeightSum("weights sum to zero")
    return float(np.dot(w, v) / total)


def weighted_cov(a, b, weights) -> float:
    w = _as_weights(weights)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ma, mb = weighted_mean(a, w), weighted_mean(b, w)
    return float(np.dot(w, (a - ma) * (b - mb)) / w.sum())


def weighted_var(values, weights) -> float:
    return max(weighted_cov(values, values, weights), 0.0)


def weighted_moments(values, weights, other=None) -> dict:
    """Weighted mean and variance; with ``other`` also covariance and correlation.

    >>> weighted_moments([2, 4], [1, 3])
    {'mean': 3.5, 'variance': 0.75}
    """
    out = {"mean": weighted_mean(values, weights), "variance": weighted_var(values, weights)}
    if other is not None:
        var_b = weighted_var(other, weights)
        cov = weighted_cov(values, other, weights)
        if out["variance"] == 0.0 or var_b == 0.0:
            raise CorrOfConstant("correlation undefined for a constant vector")
        out["covariance"] = cov
        out["correlation"] = float(np.clip(cov / (np.sqrt(out["variance"]) * np.sqrt(var_b)), -1.0, 1.0))
    return out
