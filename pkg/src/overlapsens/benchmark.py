"""Benchmarking against observed subgroups and observable overlap diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import ExperimentalSample, SubgroupRule, TargetPopulation, build_subgroup
from .errors import (
    AllSubgroupsDegenerate,
    DegenerateError,
    DegenerateSubgroup,
    EmptyArmWithinSubgroup,
    MissingColumn,
    ParamOutOfRange,
    ValidationError,
)
from .sensitivity import UPPER, SensitivityParams, bias
from .weights import WeightVector, weighted_var

log = logging.getLogger(__name__)

P_FLOOR = 1e-6
# largest value the sensitivity parameters accept
CLIP = float(np.nextafter(UPPER, 0))


@dataclass(frozen=True)
class BenchmarkResult:
    name: str
    p_hat: float
    r2_hat: float
    r2_raw: float          # before clipping to [0, 1)
    bias: float
    mrob: float            # math.inf when bias == 0
    sign: str
    k_p: float
    k_tau: float
    ate_in: float          # weighted effect inside the subgroup
    ate_out: float         # and outside it
    var_g: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "r2_hat": self.r2_hat,
            "p_hat": self.p_hat,
            "bias": self.bias,
            "mrob": "inf" if math.isinf(self.mrob) else self.mrob,
            "sign": self.sign,
            "k_p": self.k_p,
            "k_tau": self.k_tau,
            "r2_raw": self.r2_raw,
            "ate_in_subgroup": self.ate_in,
            "ate_outside_subgroup": self.ate_out,
        }


def mrob(tau_hat: float, b_star: float, bias_value: float) -> float:
    """Minimum relative overlap bias: |tau_hat - b_star| over the benchmark bias."""
    if bias_value == 0:
        return math.inf
    return abs(tau_hat - b_star) / bias_value


def _weighted_dim(y, t, w) -> float:
    treated, control = t == 1, t == 0
    if treated.sum() == 0 or control.sum() == 0:
        raise EmptyArmWithinSubgroup("a treatment arm is empty inside the subgroup or its complement")
    return float(
        np.dot(w[treated], y[treated]) / w[treated].sum()
        - np.dot(w[control], y[control]) / w[control].sum()
    )




def benchmark_subgroup(
    exp: ExperimentalSample,
    w,
    target: TargetPopulation,
    g,
    var_w_upper: float,
    tau_hat: float,
    b_star: float = 0.0,
    c_sigma: float = 1.0,
    k_p: float = 1.0,
    k_tau: float = 1.0,
    name: str = "subgroup",
) -> BenchmarkResult:
    """Sensitivity parameters of an omission as strong as omitting subgroup ``g``.

    ``p_hat`` is the unweighted share of target rows in the subgroup.

    ``g`` is a pair ``(g_exp, g_target)`` of 0/1 vectors. Unit-level effects
    are unobserved, so their weighted covariance with the binary subgroup flag
    is recovered from the subgroup effect gap, cov(tau, G) = gap * var(G), and
    var(tau) is replaced by its upper bound ``var_w_upper``; the resulting r2
    can only be too small, never too large.
    """
    if not var_w_upper > 0:
        raise ParamOutOfRange(f"var_w_upper must be positive, got {var_w_upper}")
    w = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    g_exp, g_target = (np.asarray(v, dtype=float) for v in g)
    share = float(np.mean(g_exp))
    if share <= 0 or share >= 1:
        raise DegenerateSubgroup(name, share)

    p_hat = float(np.clip(k_p * float(np.mean(g_target)), P_FLOOR, CLIP))
    inside = g_exp == 1
    ate_in = _weighted_dim(exp.outcome[inside], exp.treatment[inside], w[inside])
    ate_out = _weighted_dim(exp.outcome[~inside], exp.treatment[~inside], w[~inside])
    gap = ate_in - ate_out
    var_g = weighted_var(g_exp, w)
    r2_raw = k_tau**2 * gap**2 * var_g / var_w_upper
    r2_hat = float(np.clip(r2_raw, 0.0, CLIP))
    if r2_raw > CLIP:
        log.warning("subgroup %s: benchmarked r2 %.3g clipped below 1", name, r2_raw)
    b = bias(SensitivityParams(p_hat, r2_hat, c_sigma), var_w_upper).magnitude
    return BenchmarkResult(
        name=name,
        p_hat=p_hat,
        r2_hat=r2_hat,
        r2_raw=float(r2_raw),
        bias=b,
        mrob=mrob(tau_hat, b_star, b),
        sign="-" if gap < 0 else "+",
        k_p=k_p,
        k_tau=k_tau,
        ate_in=ate_in,
        ate_out=ate_out,
        var_g=var_g,
    )


def benchmark_all(
    exp: ExperimentalSample,
    w,
    target: TargetPopulation,
    rules: list[SubgroupRule],
    var_w_upper: float,
    tau_hat: float,
    b_star: float = 0.0,
    c_sigma: float = 1.0,
    k_p: float = 1.0,
    k_tau: float = 1.0,
) -> list[BenchmarkResult]:
    """One row per usable rule, sorted by descending bias. Degenerate rules are skipped."""
    if not rules:
        raise ValidationError("benchmark_all needs at least one subgroup rule")
    out = []
    for rule in rules:
        try:
            g = build_subgroup(rule, exp, target)
            out.append(
                benchmark_subgroup(
                    exp, w, target, g, var_w_upper, tau_hat, b_star, c_sigma, k_p, k_tau, rule.name
                )
            )
        except DegenerateError as e:
            log.warning("skipping subgroup %s: %s", rule.name, e)
    if not out:
        raise AllSubgroupsDegenerate("every subgroup rule was degenerate")
    out.sort(key=lambda r: (-r.bias, r.name))
    return out


# -- observable overlap -------------------------------------------------------------

@dataclass(frozen=True)
class BaselineOverlap:
    range_shares: dict
    any_out_of_range: float
    exact_match_unmatched: float
    bins: int

    @property
    def p_lower_bound(self) -> float:
        return max(self.any_out_of_range, self.exact_match_unmatched, *self.range_shares.values(), 0.0)

    def to_dict(self) -> dict:
        return {
            "range_shares": dict(self.range_shares),
            "any_out_of_range": self.any_out_of_range,
            "exact_match_unmatched": self.exact_match_unmatched,
            "bins": self.bins,
            "p_lower_bound": self.p_lower_bound,
        }


def _column(ds, name, where):
    if name not in ds.columns:
        raise MissingColumn(name, where)
    return np.asarray(ds.columns[name], dtype=float)


def _outside_range(exp, target, covariate):
    x = _column(exp, covariate, "experimental sample")
    z = _column(target, covariate, "target population")
    return (z < x.min()) | (z > x.max())


def range_overlap(exp: ExperimentalSample, target: TargetPopulation, covariate: str) -> float:
    """Share of target rows outside the experimental [min, max] of ``covariate``."""
    return float(np.mean(_outside_range(exp, target, covariate)))


def _discretize(x, z, bins):
    pooled = np.concatenate([x, z])
    levels = np.unique(pooled)
    if len(levels) <= bins:
        return x, z
    edges = np.unique(np.quantile(pooled, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right"), np.searchsorted(edges, z, side="right")


def exact_match_overlap(
    exp: ExperimentalSample, target: TargetPopulation, covariates, bins: int = 5
) -> float:
    """Share of target rows whose covariate cell holds no experimental row.

    Covariates with more than ``bins`` distinct values are cut into ``bins``
    equal-frequency bins on the pooled data; the others are matched on value.
    Bins are fixed per covariate, so adding covariates only refines cells.
    """
    covariates = list(covariates)
    if not covariates:
        raise ValidationError("exact matching needs at least one covariate")
    exp_codes, tgt_codes = [], []
    for c in covariates:
        a, b = _discretize(_column(exp, c, "experimental sample"), _column(target, c, "target population"), bins)
        exp_codes.append(a)
        tgt_codes.append(b)
    seen = set(zip(*exp_codes))
    unmatched = [cell not in seen for cell in zip(*tgt_codes)]
    return float(np.mean(unmatched))


def baseline_overlap(exp, target, covariates, bins: int = 5) -> BaselineOverlap:
    covariates = list(covariates)
    shares = {c: range_overlap(exp, target, c) for c in covariates}
    if covariates:
        any_out = np.logical_or.reduce([_outside_range(exp, target, c) for c in covariates])
        any_share = float(np.mean(any_out))
        em = exact_match_overlap(exp, target, covariates, bins)
    else:
        any_share = em = 0.0
    return BaselineOverlap(shares, any_share, em, bins)
