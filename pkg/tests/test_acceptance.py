"""Acceptance criteria, one test each. Every test records a PASS/FAIL line that
is printed in the terminal summary."""

import itertools
import json
import time

import numpy as np
import pandas as pd
import pytest

from conftest import make_study
from overlapsens.benchmark import mrob
from overlapsens.cli import run
from overlapsens.data import ExperimentalSample, TargetPopulation
from overlapsens.estimation import fh_var_bound
from overlapsens.report import upper_right_closed
from overlapsens.sensitivity import (
    SensitivityParams,
    bias,
    bias_from_target_var,
    mve,
    orv,
    var_target_decomposition,
)
from overlapsens.sim import FIGURE_SCENARIOS, DGPSpec, generate, oracle
from overlapsens.weights import fit_selection, transport_weights

pytestmark = pytest.mark.acceptance


def verdict(record_property, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    record_property("acceptance", line)
    print(line)
    assert ok, line


def random_draws(seed, n=10_000):
    rng = np.random.default_rng(seed)
    tau = rng.uniform(-100, 100, n)
    b = rng.uniform(-100, 100, n)
    var_w = 10 ** rng.uniform(-2, 4, n)
    return tau, b, var_w


def test_criterion_1_benchmark_table(record_property):
    start = time.perf_counter()
    rows = {
        # tau_hat, printed ORV, r2, p, printed bias, printed MROB
        "vocational": (207.16, 0.37, 0.18, 0.58, 192.53, 1.08),
        "cash": (7.22, 0.18, 0.50, 0.58, 38.49, 0.19),
    }
    errs = []
    for tau, o, r2, p, pb, pm in rows.values():
        var_w = (tau * (1 - o) / o) ** 2
        b = bias(SensitivityParams(p, r2), var_w).magnitude
        errs += [abs(b / pb - 1), abs(mrob(tau, 0.0, b) / pm - 1)]
    elapsed = time.perf_counter() - start
    ok = max(errs) <= 0.02 and elapsed < 1
    verdict(record_property, 1, ok, f"max relative error {max(errs):.4f} (tol 0.02), {elapsed:.3f}s")


def test_criterion_2_orv_self_consistency(record_property):
    start = time.perf_counter()
    worst = 0.0
    for tau, b, v in zip(*random_draws(2)):
        o = orv(tau, b, v)
        got = bias(SensitivityParams(o, o), v).magnitude
        worst = max(worst, abs(got - abs(tau - b)) / max(abs(tau - b), 1.0))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 5
    verdict(record_property, 2, ok, f"max error {worst:.2e} (tol 1e-10) over 1e4 draws, {elapsed:.2f}s")


def test_criterion_3_mve_consistency(record_property):
    worst = 0.0
    for tau, b, v in zip(*random_draws(2)):
        o = orv(tau, b, v)
        if o > 0:
            worst = max(worst, abs(mve(tau, b, v, o) - o))
    closed = abs(mve(0.5, 0.0, 1.0, 0.25) - 3 / 7)
    ok = worst <= 1e-10 and closed <= 1e-12
    verdict(record_property, 3, ok, f"max |mve - orv| {worst:.2e} (tol 1e-10); closed-form error {closed:.1e} (tol 1e-12)")


def test_criterion_4_two_bias_forms_agree(record_property):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10_000):
        p, r2 = rng.uniform(0.001, 0.99, 2)
        c = 10 ** rng.uniform(-1.5, 1.5)
        v = 10 ** rng.uniform(-3, 5)
        direct = bias(SensitivityParams(p, r2, c), v).magnitude
        via = bias_from_target_var(r2, var_target_decomposition(v, p, r2, c), p).magnitude
        worst = max(worst, abs(via - direct) / direct)
    verdict(record_property, 4, worst <= 1e-12, f"max relative error {worst:.2e} (tol 1e-12) over 1e4 draws")


def test_criterion_5_monte_carlo_oracle(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    hits = 0
    for i in range(20):
        spec = DGPSpec(
            alpha=rng.uniform(-3, 3),
            gamma=rng.uniform(-3, 3),
            p=rng.uniform(0.05, 0.6),
            sigma0_sq=10 ** rng.uniform(-0.6, 0.6),
            sigma1_sq=10 ** rng.uniform(-0.6, 0.6),
            n_target=1_000_000,
            seed=1000 + i,
        )
        res = oracle(spec)
        z = (res.empirical["gap_magnitude"] - res.theoretical["bias_eq_var_w"]) / res.mc_se["gap"]
        hits += abs(z) <= 3
    closed = oracle(DGPSpec(2, 2, 0.25, n_target=1_000_000, seed=0))
    z_closed = (closed.empirical["gap_magnitude"] - 0.5) / closed.mc_se["gap"]
    elapsed = time.perf_counter() - start
    ok = hits >= 19 and abs(z_closed) <= 3 and elapsed < 120
    verdict(record_property, 5, ok, f"{hits}/20 specs within 3 MC SEs (need 19); closed-form z = {z_closed:+.2f}; {elapsed:.1f}s")


def test_criterion_6_fh_bound_exact(record_property):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 7))
        y1, y0 = rng.normal(size=n), rng.normal(size=n)
        exp = ExperimentalSample.from_arrays(np.r_[np.ones(n), np.zeros(n)], np.r_[y1, y0])
        got = fh_var_bound(exp, np.ones(2 * n)).var_w_upper
        brute = max(np.var(y1 - y0[list(p)]) for p in itertools.permutations(range(n)))
        worst = max(worst, abs(got - brute))
    verdict(record_property, 6, worst <= 1e-12, f"max |bound - permutation max| {worst:.1e} (tol 1e-12) over 200 instances")


def test_criterion_7_weights_closed_form(record_property):
    x_exp = np.r_[np.ones(75), np.zeros(25)]
    exp = ExperimentalSample.from_arrays(np.tile([1.0, 0.0], 50), np.zeros(100), {"x": x_exp})
    target = TargetPopulation.from_arrays({"x": np.r_[np.ones(50), np.zeros(50)]})
    w = transport_weights(fit_selection(exp, target, ["x"]), exp).weights
    err_binary = max(np.max(np.abs(w[x_exp == 1] - 2 / 3)), np.max(np.abs(w[x_exp == 0] - 2)))

    x = np.random.default_rng(7).normal(size=300)
    same = ExperimentalSample.from_arrays(np.tile([1.0, 0.0], 150), np.zeros(300), {"x": x})
    w_same = transport_weights(fit_selection(same, TargetPopulation.from_arrays({"x": x}), ["x"]), same).weights
    err_same = float(np.max(np.abs(w_same - 1)))
    ok = err_binary <= 1e-8 and err_same <= 1e-6
    verdict(record_property, 7, ok, f"75/50 error {err_binary:.1e} (tol 1e-8); no-selection error {err_same:.1e} (tol 1e-6)")


def test_criterion_8_r2_bound(record_property):
    rng = np.random.default_rng(8)
    specs = [DGPSpec(**s, n_target=1_000_000, seed=80 + i) for i, s in enumerate(FIGURE_SCENARIOS)]
    for i in range(9):
        specs.append(DGPSpec(
            alpha=2.0, gamma=rng.uniform(0.5, 3), p=rng.uniform(0.1, 0.5),
            sigma0_sq=1.0, sigma1_sq=[0.25, 1.0, 4.0][i % 3], n_target=1_000_000, seed=90 + i,
        ))
    violations, equal_ok, worst = {}, True, {}
    for spec in specs:
        tau, v = generate(spec)
        res = oracle(spec, draws=(tau, v))
        z = res.empirical["r2_slack"] / res.mc_se["r2_slack"]
        if z < -3:
            violations[spec.c_sigma] = violations.get(spec.c_sigma, 0) + 1
            worst[spec.c_sigma] = max(worst.get(spec.c_sigma, 0.0), -res.empirical["r2_slack"])
        if spec.c_sigma == 1 and abs(z) > 3:
            equal_ok = False
    ok = not violations and equal_ok
    failed = sum(violations.values())
    detail = f"{len(specs) - failed}/{len(specs)} DGPs satisfy r2 <= bound + 3 SEs; equality at C=1: {equal_ok}"
    for c in sorted(violations):
        detail += f"; C={c:g}: {violations[c]} violated, r2 above bound by up to {worst[c]:.3f}"
    verdict(record_property, 8, ok, detail)


def test_criterion_9_determinism(record_property, tmp_path):
    cfg = make_study(tmp_path)
    codes = [run(["analyze", "--config", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    same = (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    closed = True
    grids = 0
    for d in ("a", "b"):
        for csv in sorted((tmp_path / d).glob("contour_*.csv")):
            g = pd.read_csv(csv)
            mask = g.pivot(index="r2", columns="p", values="killer").to_numpy(dtype=bool)
            closed &= upper_right_closed(mask)
            grids += 1
        rep = json.loads((tmp_path / d / "report.json").read_text())
        closed &= all(o["contour"]["upper_right_closed"] for o in rep["outcomes"].values())
    ok = codes == [0, 0] and same and closed and grids == 4
    verdict(record_property, 9, ok, f"byte-identical report: {same}; {grids} grids upper-right-closed: {closed}")
