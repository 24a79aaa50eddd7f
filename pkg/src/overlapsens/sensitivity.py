"""Bias from omitting part of the target population, and its summary measures.

Two sensitivity parameters drive everything here: ``p``, the share of the
target population that no experimental unit represents, and ``r2``, the
share of the target population's effect variance explained by membership in
that omitted group. ``c_sigma`` is the ratio of residual effect variance in
omitted vs. represented units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import BoundViolation, NonPositiveVariance, ParamOutOfRange

UPPER = 1 - 1e-6
GRID_MAX = 0.99
DEFAULT_C_SIGMAS = (1.0, 0.5, 2.0)


def _check_unit(name, value, allow_zero=True):
    if not math.isfinite(value):
        raise ParamOutOfRange(f"{name} must be finite, got {value}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ParamOutOfRange(f"{name} must be in {'[0' if allow_zero else '(0'}, 1), got {value}")
    if value >= UPPER:
        if name == "p":
            raise ParamOutOfRange(
                f"p={value}: a complete overlap violation (no target unit resembles the "
                "experimental sample) has no bias decomposition; reason about the "
                "target effect directly"
            )
        raise ParamOutOfRange(f"{name} must be < 1, got {value}")


def _check_c_sigma(c_sigma):
    if not (math.isfinite(c_sigma) and c_sigma > 0):
        raise ParamOutOfRange(f"c_sigma must be positive and finite, got {c_sigma}")


def _check_var(name, value):
    if not (math.isfinite(value) and value >= 0):
        raise ParamOutOfRange(f"{name} must be a finite non-negative variance, got {value}")


@dataclass(frozen=True)
class SensitivityParams:
    p: float
    r2: float
    c_sigma: float = 1.0

    def __post_init__(self):
        _check_unit("p", self.p)
        _check_unit("r2", self.r2)
        _check_c_sigma(self.c_sigma)


@dataclass(frozen=True)
class BiasResult:
    magnitude: float
    adjusted_low: float | None = None
    adjusted_high: float | None = None

    def around(self, tau_hat: float) -> "BiasResult":
        return BiasResult(self.magnitude, tau_hat - self.magnitude, tau_hat + self.magnitude)


def bias(params: SensitivityParams, var_w: float, tau_hat: float | None = None) -> BiasResult:
    """Bias magnitude in terms of the effect variance among represented units.

    ``var_w`` is the (upper bound on the) weighted variance of unit-level
    effects in the experimental sample.
    """
    _check_var("var_w", var_w)
    p, r2, c = params.p, params.r2, params.c_sigma
    mag = math.sqrt(r2 / (1 - r2) * (1 + c * p / (1 - p)) * p * var_w)
    res = BiasResult(mag)
    return res.around(tau_hat) if tau_hat is not None else res


def bias_from_target_var(r2: float, var_target: float, p: float) -> BiasResult:
    """Bias magnitude in terms of the total effect variance in the target population."""
    _check_unit("r2", r2)
    _check_unit("p", p)
    _check_var("var_target", var_target)
    return BiasResult(math.sqrt(r2 * var_target * p / (1 - p)))


def var_target_decomposition(var_w: float, p: float, r2: float, c_sigma: float = 1.0) -> float:
    """Target-population effect variance implied by the represented-unit variance."""
    _check_unit("p", p)
    _check_unit("r2", r2)
    _check_c_sigma(c_sigma)
    _check_var("var_w", var_w)
    return var_w * (1 + p * (c_sigma - 1)) / (1 - r2)


def r2_upper_bound(var_transportable: float, var_target: float) -> float:
    """Largest r2 compatible with the two variances: 1 - var_transportable/var_target."""
    if not var_target > 0:
        raise NonPositiveVariance(f"var_target must be positive, got {var_target}")
    if var_transportable < 0:
        raise BoundViolation(f"negative variance {var_transportable}")
    if var_transportable > var_target:
        raise BoundViolation(
            f"represented-unit variance {var_transportable} exceeds target variance {var_target}"
        )
    return 1 - var_transportable / var_target


def orv(tau_hat: float, b_star: float, var_w: float) -> float:
    """Overlap robustness value: the common p = r2 at which bias reaches |tau_hat - b_star|."""
    if not var_w > 0:
        raise NonPositiveVariance(f"var_w must be positive, got {var_w}")
    a = abs(tau_hat - b_star) / math.sqrt(var_w)
    return a / (1 + a)


def orv_general(tau_hat: float, b_star: float, var_w: float, c_sigma: float) -> float:
    """Common p = r2 reaching |tau_hat - b_star| for an arbitrary ``c_sigma``.

    Reduces to :func:`orv` at ``c_sigma == 1``; otherwise solved numerically
    (bias is strictly increasing along the diagonal).
    """
    _check_c_sigma(c_sigma)
    if c_sigma == 1.0:
        return orv(tau_hat, b_star, var_w)
    if not var_w > 0:
        raise NonPositiveVariance(f"var_w must be positive, got {var_w}")
    target = (tau_hat - b_star) ** 2 / var_w
    if target == 0:
        return 0.0

    def excess(x):
        return x * x / (1 - x) * (1 + c_sigma * x / (1 - x)) - target

    return brentq(excess, 0.0, 1 - 1e-15, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def mve(tau_hat: float, b_star: float, var_w: float, p: float, c_sigma: float = 1.0) -> float:
    """Minimum variation explained: the r2 that reaches |tau_hat - b_star| at a fixed p.

    Always attainable for finite inputs (r2 -> 1 drives the bias to infinity).
    """
    _check_unit("p", p, allow_zero=False)
    _check_c_sigma(c_sigma)
    if not var_w > 0:
        raise NonPositiveVariance(f"var_w must be positive, got {var_w}")
    f = (tau_hat - b_star) ** 2 / (var_w * p * (1 + c_sigma * p / (1 - p)))
    return f / (1 + f)


@dataclass(frozen=True, eq=False)
class BiasGrid:
    p: np.ndarray          # x axis
    r2: np.ndarray         # y axis
    bias: np.ndarray       # shape (len(r2), len(p))
    killer: np.ndarray     # bias >= |tau_hat - b_star|
    tau_hat: float
    b_star: float
    var_w: float
    c_sigma: float
    orv: float

    def rows(self):
        """(p, r2, bias, killer) records in r2-major order."""
        for i, r in enumerate(self.r2):
            for j, pv in enumerate(self.p):
                yield float(pv), float(r), float(self.bias[i, j]), bool(self.killer[i, j])

    def boundary(self) -> np.ndarray:
        """For each p column, the first r2 index inside the killer region (len(r2) if none)."""
        hit = self.killer.any(axis=0)
        first = np.argmax(self.killer, axis=0)
        return np.where(hit, first, len(self.r2))


def contour_grid(
    tau_hat: float,
    b_star: float,
    var_w: float,
    c_sigma: float = 1.0,
    resolution: int = 201,
    upper: float = GRID_MAX,
) -> BiasGrid:
    """Bias evaluated over the lattice [0, upper]^2 of (p, r2)."""
    if resolution < 2:
        raise ParamOutOfRange(f"resolution must be >= 2, got {resolution}")
    _check_c_sigma(c_sigma)
    _check_var("var_w", var_w)
    _check_unit("upper", upper)
    axis = np.linspace(0.0, upper, resolution)
    P, R = np.meshgrid(axis, axis)  # R varies along rows
    B = np.sqrt(R / (1 - R) * (1 + c_sigma * P / (1 - P)) * P * var_w)
    killer = B >= abs(tau_hat - b_star)
    o = orv(tau_hat, b_star, var_w) if var_w > 0 else 0.0
    return BiasGrid(axis, axis.copy(), B, killer, tau_hat, b_star, var_w, c_sigma, o)


def resolve_b_star(spec, tau_hat: float, b_star_sig: float | None = None) -> float:
    """Turn a threshold spec into a number.

    Accepted forms: a number (absolute), ``"frac:X"`` (X times the estimate),
    ``"sig"`` (the bootstrap significance boundary).
    """
    if spec is None:
        return 0.0
    if isinstance(spec, (int, float)):
        return float(spec)
    text = str(spec).strip()
    if text == "sig":
        if b_star_sig is None:
            raise ParamOutOfRange("b_star 'sig' requires a bootstrap run")
        return float(b_star_sig)
    if text.startswith("frac:"):
        return float(text[5:]) * tau_hat
    try:
        return float(text)
    except ValueError:
        raise ParamOutOfRange(f"cannot parse b_star spec {spec!r}") from None
