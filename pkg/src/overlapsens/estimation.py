"""Point estimates, bootstrap uncertainty and the Frechet-Hoeffding heterogeneity bound."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import ExperimentalSample, TargetPopulation
from .errors import BootstrapFailure, OverlapSensError, ValidationError, ZeroWeightSumInArm
from .weights import WeightVector, fit_selection, transport_weights

MAX_FAILED_SHARE = 0.10


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    ci: tuple[float, float]
    n_used: tuple[int, int]  # (treated, control)
    method: str = ""

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "ci": list(self.ci),
            "n_treated": self.n_used[0],
            "n_control": self.n_used[1],
            "method": self.method,
        }


@dataclass(frozen=True)
class BootstrapResult:
    estimate: float
    std_error: float
    ci: tuple[float, float]
    b_star_sig: float
    B: int
    seed: int
    coverage: float
    failed: int
    draws: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "seed": self.seed,
            "coverage": self.coverage,
            "std_error": self.std_error,
            "ci": list(self.ci),
            "b_star_sig": self.b_star_sig,
            "failed_draws": self.failed,
        }


@dataclass(frozen=True)
class HeterogeneityBound:
    var_w_upper: float
    var_treated: float
    var_control: float
    cov_min: float
    cov_max: float

    def to_dict(self) -> dict:
        return {
            "var_w_upper": self.var_w_upper,
            "var_treated": self.var_treated,
            "var_control": self.var_control,
            "cov_min": self.cov_min,
            "cov_max": self.cov_max,
        }


def _normal_ci(value, se, coverage=0.95):
    z = stats.norm.ppf(0.5 + coverage / 2)
    return (value - z * se, value + z * se)


def _arm_mean(y, w):
    # shifting by y[0] keeps constant arms exactly constant
    total = w.sum()
    if not total > 0:
        raise ZeroWeightSumInArm(None)
    return float(y[0] + np.dot(w, y - y[0]) / total)


def dim(exp: ExperimentalSample) -> Estimate:
    """Unweighted difference in means with the Neyman standard error."""
    t = exp.treatment == 1
    y1, y0 = exp.outcome[t], exp.outcome[~t]
    value = _arm_mean(y1, np.ones(len(y1))) - _arm_mean(y0, np.ones(len(y0)))
    se = float(np.sqrt(np.var(y1, ddof=1) / len(y1) + np.var(y0, ddof=1) / len(y0)))
    return Estimate(value, se, _normal_ci(value, se), (len(y1), len(y0)), "difference-in-means")


def tpate(exp: ExperimentalSample, w) -> Estimate:
    """Hajek weighted difference in means; weights are renormalized within each arm.

    The standard error treats the weights as fixed; use :func:`bootstrap` to
    include weight-estimation uncertainty.
    """
    w = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if len(w) != exp.n:
        raise ValidationError(f"{len(w)} weights for {exp.n} experimental rows")
    t = exp.treatment == 1
    parts = []
    for arm, mask in ((1, t), (0, ~t)):
        wa, ya = w[mask], exp.outcome[mask]
        if not wa.sum() > 0:
            raise ZeroWeightSumInArm(arm)
        m = _arm_mean(ya, wa)
        q = wa / wa.sum()
        parts.append((m, float(np.sum(q**2 * (ya - m) ** 2))))
    value = parts[0][0] - parts[1][0]
    se = float(np.sqrt(parts[0][1] + parts[1][1]))
    return Estimate(value, se, _normal_ci(value, se), (int(t.sum()), int((~t).sum())), "weighted (Hajek)")


def bootstrap(
    exp: ExperimentalSample,
    target: TargetPopulation | None,
    covariates=None,
    *,
    B: int = 1000,
    seed: int,
    coverage: float = 0.95,
    workers: int = 1,
    weights_column: bool = False,
) -> BootstrapResult:
    """Percentile bootstrap of the weighted estimate.

    Each draw resamples experimental and target rows independently and refits
    the selection model. With ``weights_column=True`` the experimental sample's
    own weight column is resampled instead and no model is fit.
    """
    if B < 100:
        raise ValidationError(f"bootstrap needs B >= 100, got {B}")
    if not 0 < coverage < 1:
        raise ValidationError(f"coverage must lie in (0, 1), got {coverage}")
    covariates = tuple(covariates or ())

    def weights_for(e, tg):
        if weights_column:
            return WeightVector.from_raw(e.weight, source="user-supplied")
        return transport_weights(fit_selection(e, tg, covariates), e)

    point = tpate(exp, weights_for(exp, target)).value
    children = np.random.SeedSequence(seed).spawn(B)

    def draw(i):
        rng = np.random.default_rng(children[i])
        idx = rng.integers(0, exp.n, exp.n)
        tidx = None if weights_column else rng.integers(0, target.N, target.N)
        try:
            e = exp.take(idx)
            tg = None if weights_column else target.take(tidx)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return tpate(e, weights_for(e, tg)).value
        except OverlapSensError:
            return np.nan

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            draws = np.array(list(pool.map(draw, range(B))))
    else:
        draws = np.array([draw(i) for i in range(B)])

    failed = int(np.sum(np.isnan(draws)))
    if failed > MAX_FAILED_SHARE * B:
        raise BootstrapFailure(failed, B)
    good = draws[~np.isnan(draws)]
    alpha = 1 - coverage
    lo, hi = (float(v) for v in np.quantile(good, [alpha / 2, 1 - alpha / 2]))
    se = float(np.std(good, ddof=1))
    b_sig = point - lo if point >= 0 else point - hi
    return BootstrapResult(point, se, (lo, hi), float(b_sig), B, seed, coverage, failed, draws)


# -- weighted quantiles and couplings ------------------------------------------------

def _sorted_cdf(values, weights):
    order = np.argsort(values, kind="stable")
    v = np.asarray(values, dtype=float)[order]
    w = np.asarray(weights, dtype=float)[order]
    c = np.cumsum(w) / w.sum()
    c[-1] = 1.0
    return v, c


def weighted_quantile(values, weights, q) -> np.ndarray:
    """Left-continuous inverse of the weighted empirical CDF: min{y : F(y) >= q}."""
    v, c = _sorted_cdf(values, weights)
    q = np.asarray(q, dtype=float)
    idx = np.searchsorted(c, q, side="left")
    return v[np.clip(idx, 0, len(v) - 1)]


def _coupled_cov(y1, w1, y0, w0, anti: bool, n_grid=None):
    """Covariance of (Y1, Y0) under the (anti-)monotone coupling of their weighted laws.

    Without ``n_grid`` the coupling is exact: the unit interval is cut at every
    jump of either CDF. With ``n_grid=K`` both quantile functions are read at
    the midpoints (k - 1/2)/K.
    """
    if n_grid is None:
        _, c1 = _sorted_cdf(y1, w1)
        _, c0 = _sorted_cdf(y0, w0)
        # control is read at 1 - u when anti-monotone, so its jumps sit at 1 - c0
        cuts = np.unique(np.concatenate([[0.0], c1, 1 - c0[:-1] if anti else c0]))
        mass = np.diff(cuts)
        u = cuts[:-1] + mass / 2
    else:
        u = (np.arange(1, n_grid + 1) - 0.5) / n_grid
        mass = np.full(n_grid, 1.0 / n_grid)
    q1 = weighted_quantile(y1, w1, u)
    q0 = weighted_quantile(y0, w0, 1 - u if anti else u)
    m1 = np.dot(mass, q1)
    m0 = np.dot(mass, q0)
    return float(np.dot(mass, (q1 - m1) * (q0 - m0))), q1, q0, mass


def fh_var_bound(exp: ExperimentalSample, w, n_grid: int | None = None) -> HeterogeneityBound:
    """Sharp upper bound on the weighted variance of unit-level effects.

    The maximum of var(Y1 - Y0) over all joint laws with the observed weighted
    marginals is reached when the treated quantiles are paired with the
    control quantiles in reverse order.
    """
    w = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    t = exp.treatment == 1
    y1, w1 = exp.outcome[t], w[t]
    y0, w0 = exp.outcome[~t], w[~t]
    if n_grid is None:
        v1 = float(np.dot(w1, (y1 - _arm_mean(y1, w1)) ** 2) / w1.sum())
        v0 = float(np.dot(w0, (y0 - _arm_mean(y0, w0)) ** 2) / w0.sum())
    cov_min, q1, q0, mass = _coupled_cov(y1, w1, y0, w0, anti=True, n_grid=n_grid)
    if n_grid is not None:
        # on a grid, the marginal variances must be read off the same grid
        v1 = float(np.dot(mass, (q1 - np.dot(mass, q1)) ** 2))
        v0 = float(np.dot(mass, (q0 - np.dot(mass, q0)) ** 2))
    cov_max = _coupled_cov(y1, w1, y0, w0, anti=False, n_grid=n_grid)[0]
    upper = max(v1 + v0 - 2 * cov_min, 0.0)
    return HeterogeneityBound(upper, v1, v0, cov_min, cov_max)
