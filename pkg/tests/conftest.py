from pathlib import Path

import numpy as np
import pytest
import yaml

from overlapsens.data import write_csv


def make_study(root: Path, seed: int = 1, n_pop: int = 1500, bootstrap: bool = True) -> Path:
    """Synthetic experimental/target CSV pair plus a config; returns the config path."""
    rng = np.random.default_rng(seed)
    age = np.round(rng.uniform(14, 70, n_pop), 1)
    female = rng.integers(0, 2, n_pop).astype(float)
    rural = rng.integers(0, 2, n_pop).astype(float)
    s = rng.random(n_pop) < 1 / (1 + np.exp(-(1.5 - 0.06 * age + 0.3 * female)))
    t = rng.integers(0, 2, n_pop).astype(float)
    tau = 2 + 0.05 * (40 - age) + female
    y = np.round(1 + 0.1 * age + rng.normal(0, 2, n_pop) + t * tau, 4)
    w_user = np.round(rng.uniform(0.5, 2, n_pop), 3)
    write_csv(root / "exp.csv", {
        "T": t[s], "Y": y[s], "Y2": np.round(y[s] * 0.5, 4), "age": age[s],
        "female": female[s], "G_rural": rural[s], "w": w_user[s],
    })
    write_csv(root / "target.csv", {"age": age[~s], "female": female[~s], "G_rural": rural[~s]})
    cfg = {
        "experimental": {"path": "exp.csv", "outcomes": ["Y", "Y2"]},
        "target": {"path": "target.csv"},
        "covariates": ["age", "female"],
        "subgroups": [
            {"name": "under18", "covariate": "age", "op": "<", "value": 18},
            {"name": "female", "column": "female"},
            {"name": "rural", "column": "G_rural"},
            {"name": "rural_x_under18", "all_of": ["rural", "under18"]},
        ],
        "b_star": 0,
        "c_sigma": [1, 0.5, 2],
        "seed": 7,
        "grid": {"resolution": 41},
        "out": "out",
    }
    if bootstrap:
        cfg["bootstrap"] = {"B": 100}
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return path


@pytest.fixture
def study(tmp_path):
    return make_study(tmp_path)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
