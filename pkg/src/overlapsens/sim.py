"""Synthetic target populations with a known omitted group, and a Monte Carlo oracle.

Unit-level effects are drawn as ``tau = alpha + gamma * V + u`` with
``V ~ Bernoulli(p)`` marking the units no experiment could represent and
``u ~ N(0, sigma0_sq)`` for V=0, ``N(0, sigma1_sq)`` for V=1.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParamOutOfRange
from .sensitivity import (
    SensitivityParams,
    bias,
    bias_from_target_var,
    var_target_decomposition,
)

CHUNK = 1 << 16
Z_PASS = 3.0

# alpha = 2, p = 0.25, (gamma, sigma1_sq) paired so r2 stays near 0.4 in all three
FIGURE_SCENARIOS = (
    {"name": "c_sigma_0.5", "alpha": 2.0, "gamma": 1.75, "p": 0.25, "sigma0_sq": 1.0, "sigma1_sq": 0.5},
    {"name": "c_sigma_1", "alpha": 2.0, "gamma": 2.0, "p": 0.25, "sigma0_sq": 1.0, "sigma1_sq": 1.0},
    {"name": "c_sigma_4", "alpha": 2.0, "gamma": 2.5, "p": 0.25, "sigma0_sq": 1.0, "sigma1_sq": 4.0},
)


@dataclass(frozen=True)
class DGPSpec:
    alpha: float
    gamma: float
    p: float
    sigma0_sq: float = 1.0
    sigma1_sq: float = 1.0
    n_target: int = 1_000_000
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if not (self.sigma0_sq > 0 and self.sigma1_sq > 0):
            raise ParamOutOfRange("residual variances must be positive")
        if not 0 <= self.p < 1:
            raise ParamOutOfRange(f"p must lie in [0, 1), got {self.p}")
        if self.n_target < 1:
            raise ParamOutOfRange("n_target must be at least 1")

    @property
    def c_sigma(self) -> float:
        return self.sigma1_sq / self.sigma0_sq

    @property
    def var_tau(self) -> float:
        p = self.p
        return self.sigma0_sq * (1 - p) + self.sigma1_sq * p + self.gamma**2 * p * (1 - p)

    @property
    def r2(self) -> float:
        return self.gamma**2 * self.p * (1 - self.p) / self.var_tau


def _chunk(seed_seq, size, spec):
    rng = np.random.default_rng(seed_seq)
    v = (rng.random(size) < spec.p).astype(np.int8)
    sd = np.where(v == 1, math.sqrt(spec.sigma1_sq), math.sqrt(spec.sigma0_sq))
    tau = spec.alpha + spec.gamma * v + sd * rng.standard_normal(size)
    return tau, v


def generate(spec: DGPSpec, workers: int = 1):
    """Draw ``(tau, V)``. Output depends only on the spec (chunk seeds are fixed)."""
    n = spec.n_target
    sizes = [min(CHUNK, n - start) for start in range(0, n, CHUNK)]
    seeds = np.random.SeedSequence(spec.seed).spawn(len(sizes))
    jobs = list(zip(seeds, sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda j: _chunk(j[0], j[1], spec), jobs))
    else:
        parts = [_chunk(s, k, spec) for s, k in jobs]
    tau = np.concatenate([p[0] for p in parts])
    v = np.concatenate([p[1] for p in parts])
    return tau, v


def _moments(tau, v):
    """Gap, variances and r2 of one draw. NaN where a V-group is empty."""
    m = v == 1
    n1 = int(m.sum())
    p_hat = n1 / len(v)
    mean_all = float(tau.mean())
    var_all = float(tau.var())
    mean0 = float(tau[~m].mean()) if n1 < len(v) else math.nan
    var0 = float(tau[~m].var()) if n1 < len(v) else math.nan
    var1 = float(tau[m].var()) if n1 > 0 else math.nan
    if 0 < n1 < len(v) and var_all > 0:
        mean1 = float(tau[m].mean())
        r2 = (mean1 - mean0) ** 2 * p_hat * (1 - p_hat) / var_all
    else:
        r2 = 0.0
    bound = 1 - var0 / var_all if var_all > 0 else math.nan
    return {
        "p_hat": p_hat,
        "mean_all": mean_all,
        "mean_v0": mean0,
        "gap": mean0 - mean_all,
        "gap_magnitude": abs(mean0 - mean_all),
        "var_tau": var_all,
        "var_v0": var0,
        "var_v1": var1,
        "r2": r2,
        "r2_bound": bound,
        "r2_slack": bound - r2,
    }


@dataclass(frozen=True)
class OracleResult:
    spec: DGPSpec
    empirical: dict
    mc_se: dict
    theoretical: dict
    plug_in: dict
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "empirical": self.empirical,
            "mc_se": self.mc_se,
            "theoretical": self.theoretical,
            "plug_in": self.plug_in,
            "checks": self.checks,
            "verdict": "PASS" if self.passed else "FAIL",
        }


def _check(diff, se, one_sided=False):
    z = diff / se if se > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
    ok = z >= -Z_PASS if one_sided else abs(z) <= Z_PASS
    return {"difference": diff, "se": se, "z": z, "pass": bool(ok)}


def oracle(spec: DGPSpec, batches: int = 100, draws=None) -> OracleResult:
    """Compare Monte Carlo moments with the closed-form bias and variance identities.

    Standard errors come from batch means over ``batches`` contiguous blocks.
    The signed gap E(tau | V=0) - E(tau) equals -gamma * p, so it is compared
    with the bias magnitude carrying the sign of -gamma.
    """
    tau, v = draws if draws is not None else generate(spec)
    emp = _moments(tau, v)
    batches = max(2, min(batches, len(tau) // 2))
    per = [_moments(t, b) for t, b in zip(np.array_split(tau, batches), np.array_split(v, batches))]
    se = {}
    for key in ("gap", "var_tau", "r2", "r2_slack", "p_hat"):
        vals = np.array([b[key] for b in per], dtype=float)
        vals = vals[np.isfinite(vals)]
        se[key] = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
    se["p_hat_binomial"] = math.sqrt(spec.p * (1 - spec.p) / len(tau))

    p, r2, c = spec.p, spec.r2, spec.c_sigma
    params = SensitivityParams(p, r2, c)
    theory = {
        "gap": -spec.gamma * p,
        "bias_eq_var_w": bias(params, spec.sigma0_sq).magnitude,
        "bias_eq_var_target": bias_from_target_var(r2, spec.var_tau, p).magnitude,
        "var_tau": var_target_decomposition(spec.sigma0_sq, p, r2, c),
        "r2": r2,
        # raw formula: below zero when sigma0_sq exceeds var(tau), possible for c_sigma < 1
        "r2_bound": 1 - spec.sigma0_sq / spec.var_tau,
        # bound minus r2; negative when c_sigma < 1, where the bound does not hold
        "r2_slack": spec.sigma0_sq * p * (c - 1) / spec.var_tau,
        "c_sigma": c,
    }

    plug = {}
    if 0 < emp["p_hat"] < 1 and emp["r2"] < 1 and emp["var_v0"] > 0:
        c_emp = emp["var_v1"] / emp["var_v0"]
        plug_params = SensitivityParams(emp["p_hat"], emp["r2"], c_emp)
        plug = {
            "c_sigma": c_emp,
            "bias_eq_var_w": bias(plug_params, emp["var_v0"]).magnitude,
            "bias_eq_var_target": bias_from_target_var(emp["r2"], emp["var_tau"], emp["p_hat"]).magnitude,
            "var_tau": var_target_decomposition(emp["var_v0"], emp["p_hat"], emp["r2"], c_emp),
        }

    signed_theory = -math.copysign(theory["bias_eq_var_w"], spec.gamma) if spec.gamma else 0.0
    p_se = se["p_hat_binomial"]
    checks = {
        "bias_gap": _check(emp["gap"] - signed_theory, se["gap"]),
        "variance_decomposition": _check(emp["var_tau"] - theory["var_tau"], se["var_tau"]),
        "r2_slack": _check(emp["r2_slack"] - theory["r2_slack"], se["r2_slack"]),
        "p_hat": _check(emp["p_hat"] - p, p_se),
    }
    if c >= 1:
        checks["r2_bound"] = _check(emp["r2_slack"], se["r2_slack"], one_sided=c > 1)
    return OracleResult(spec, emp, se, theory, plug, checks)


def histogram(tau, v, bins: int = 60):
    """Common-edge histograms of tau for V=0 and V=1 (density-normalised within group)."""
    edges = np.histogram_bin_edges(tau, bins=bins)
    out = {"left": edges[:-1], "right": edges[1:]}
    for g in (0, 1):
        sel = tau[v == g]
        counts, _ = np.histogram(sel, bins=edges)
        out[f"count_v{g}"] = counts
        width = np.diff(edges)
        out[f"density_v{g}"] = counts / (max(len(sel), 1) * width)
    return out
