"""Run configuration and the end-to-end analysis pipeline."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .benchmark import baseline_overlap, benchmark_all
from .data import (
    ExperimentalSchema,
    TargetSchema,
    load_experimental,
    load_target,
    rules_from_config,
    write_csv,
)
from .errors import ConfigError, InputError, OverlapSensError
from .estimation import bootstrap, dim, fh_var_bound, tpate
from .plot import contour_svg
from .sensitivity import (
    DEFAULT_C_SIGMAS,
    contour_grid,
    mve,
    orv,
    orv_general,
    resolve_b_star,
)
from .sim import FIGURE_SCENARIOS, DGPSpec, generate, histogram, oracle
from .weights import fit_selection, transport_weights, user_weights

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


def substream_seed(root: int, name: str) -> int:
    """Derive a named, independent seed from the root seed."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class RunConfig:
    experimental: dict
    target: dict | None
    covariates: list = field(default_factory=list)
    subgroups: list = field(default_factory=list)
    b_star: object = 0.0
    c_sigma: list = field(default_factory=lambda: list(DEFAULT_C_SIGMAS))
    bootstrap: dict | None = None
    seed: int | None = None
    resolution: int = 201
    baseline_bins: int = 5
    mve_p: list | None = None
    k_p: float = 1.0
    k_tau: float = 1.0
    workers: int = 1
    simulate: dict | None = None
    out: str = "out"
    base_dir: Path = Path(".")
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        d = dict(d or {})
        known = {
            "experimental", "target", "covariates", "subgroups", "b_star", "c_sigma",
            "bootstrap", "seed", "grid", "baseline", "benchmark", "workers", "simulate", "out",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        exp = d.get("experimental")
        if exp is not None:
            exp = {"treatment": "T", "outcomes": ["Y"], "weight": None, **exp}
            if isinstance(exp["outcomes"], str):
                exp["outcomes"] = [exp["outcomes"]]
        boot = d.get("bootstrap")
        if boot is not None and boot is not False:
            boot = {"B": 1000, "coverage": 0.95, **(boot if isinstance(boot, dict) else {})}
        else:
            boot = None
        cs = d.get("c_sigma", list(DEFAULT_C_SIGMAS))
        cs = [float(c) for c in (cs if isinstance(cs, (list, tuple)) else [cs])]
        cfg = cls(
            experimental=exp,
            target=d.get("target"),
            covariates=list(d.get("covariates", [])),
            subgroups=list(d.get("subgroups", [])),
            b_star=d.get("b_star", 0.0),
            c_sigma=cs,
            bootstrap=boot,
            seed=d.get("seed"),
            resolution=int((d.get("grid") or {}).get("resolution", 201)),
            baseline_bins=int((d.get("baseline") or {}).get("bins", 5)),
            mve_p=(d.get("baseline") or {}).get("p"),
            k_p=float((d.get("benchmark") or {}).get("k_p", 1.0)),
            k_tau=float((d.get("benchmark") or {}).get("k_tau", 1.0)),
            workers=int(d.get("workers", 1)),
            simulate=d.get("simulate"),
            out=str(d.get("out", "out")),
            base_dir=Path(base_dir),
            raw=d,
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"no such config file: {path}")
        try:
            d = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise InputError(f"cannot parse config {path}: {e}") from e
        return cls.from_dict(d or {}, base_dir=path.parent)

    def validate(self):
        if not self.c_sigma or any(not (c > 0 and math.isfinite(c)) for c in self.c_sigma):
            raise ConfigError("c_sigma must be a non-empty list of positive numbers")
        if (self.bootstrap is not None or self.simulate is not None) and self.seed is None:
            raise ConfigError("a root seed is required when bootstrap or simulate is configured")
        if self.resolution < 2:
            raise ConfigError("grid resolution must be at least 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        raw = dict(self.raw)
        if "seed" in kw:
            raw["seed"] = kw["seed"]
        if "b_star" in kw:
            raw["b_star"] = kw["b_star"]
        if "c_sigma" in kw:
            raw["c_sigma"] = kw["c_sigma"]
        if "weights_column" in kw:
            exp = dict(self.experimental or {})
            exp["weight"] = kw.pop("weights_column")
            kw["experimental"] = exp
            raw["experimental"] = exp
        cfg = replace(self, raw=raw, **kw)
        cfg.validate()
        return cfg


# -- JSON helpers ---------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dump_json(obj, path) -> None:
    text = json.dumps(_clean(obj), indent=2, sort_keys=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


# -- pipeline ---------------------------------------------------------------------------

def _load(cfg: RunConfig):
    if not cfg.experimental or "path" not in cfg.experimental:
        raise ConfigError("config needs experimental.path")
    e = cfg.experimental
    samples = {}
    for outcome in e["outcomes"]:
        schema = ExperimentalSchema(e["treatment"], outcome, tuple(cfg.covariates), e.get("weight"))
        samples[outcome] = load_experimental(cfg.resolve(e["path"]), schema)
    target = None
    if cfg.target:
        t = cfg.target
        target = load_target(
            cfg.resolve(t["path"]), TargetSchema(tuple(cfg.covariates), t.get("weight")), cfg.covariates
        )
    if target is None and not e.get("weight"):
        raise ConfigError("config needs target.path unless a weights column is supplied")
    return samples, target


def _weights(cfg, exp, target):
    if cfg.experimental.get("weight"):
        return user_weights(exp), {"source": "user-supplied", "column": cfg.experimental["weight"]}
    model = fit_selection(exp, target, cfg.covariates)
    return transport_weights(model, exp), model.to_dict()


def analyze(cfg: RunConfig, out_dir=None, write=True, strict_benchmarks=False) -> dict:
    """Run every step for each outcome and (optionally) write the artifacts.

    Steps: load, weights, within-site and weighted estimates, bootstrap,
    heterogeneity bound, ORV/MVE per c_sigma, contour grid, benchmarks and
    baseline overlap diagnostics. Benchmark failures are logged and leave
    an empty table unless ``strict_benchmarks`` is set.
    """
    out_dir = Path(out_dir or cfg.resolve(cfg.out))
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
    samples, target = _load(cfg)
    rules = rules_from_config(cfg.subgroups)
    if strict_benchmarks and not rules:
        raise ConfigError("benchmarking needs at least one entry under subgroups")
    first = next(iter(samples.values()))

    w, model_block = _weights(cfg, first, target)
    baseline = (
        baseline_overlap(first, target, cfg.covariates, cfg.baseline_bins) if target is not None else None
    )
    mve_ps = cfg.mve_p if cfg.mve_p is not None else ([baseline.p_lower_bound] if baseline else [])
    mve_ps = [float(p) for p in (mve_ps if isinstance(mve_ps, list) else [mve_ps])]

    outcomes, table, bench_rows = {}, [], []
    for name, exp in samples.items():
        within = dim(exp)
        weighted = tpate(exp, w)
        boot = None
        if cfg.bootstrap is not None:
            boot = bootstrap(
                exp, target, cfg.covariates,
                B=int(cfg.bootstrap["B"]),
                seed=substream_seed(cfg.seed, f"bootstrap/{name}"),
                coverage=float(cfg.bootstrap["coverage"]),
                workers=cfg.workers,
                weights_column=bool(cfg.experimental.get("weight")),
            )
        tau_hat = weighted.value
        b_star = resolve_b_star(cfg.b_star, tau_hat, boot.b_star_sig if boot else None)
        het = fh_var_bound(exp, w)
        var_w = het.var_w_upper

        orv_rows, mve_rows = [], []
        for c in cfg.c_sigma:
            value = orv_general(tau_hat, b_star, var_w, c) if var_w > 0 else None
            orv_rows.append({"c_sigma": c, "orv": value})
            for p in mve_ps:
                ok = var_w > 0 and 0 < p < 1 - 1e-6
                mve_rows.append({"c_sigma": c, "p": p, "mve": mve(tau_hat, b_star, var_w, p, c) if ok else None})

        c_primary = cfg.c_sigma[0]
        grid = contour_grid(tau_hat, b_star, var_w, c_primary, cfg.resolution)
        benches = []
        if rules and target is not None and var_w > 0:
            try:
                benches = benchmark_all(
                    exp, w, target, rules, var_w, tau_hat, b_star, c_primary, cfg.k_p, cfg.k_tau
                )
            except OverlapSensError as e:
                if strict_benchmarks:
                    raise
                log.warning("benchmarks for %s unavailable: %s", name, e)
        contour_block = {
            "c_sigma": c_primary,
            "resolution": cfg.resolution,
            "killer_share": float(grid.killer.mean()),
            "upper_right_closed": upper_right_closed(grid.killer),
            "orv_point": [grid.orv, grid.orv],
            "csv": f"contour_{name}.csv",
            "svg": f"contour_{name}.svg",
        }
        if write:
            write_contour_csv(grid, out_dir / contour_block["csv"])
            svg = contour_svg(grid, [(b.name, b.p_hat, b.r2_hat) for b in benches], title=name)
            (out_dir / contour_block["svg"]).write_text(svg, encoding="utf-8")

        estimates = {
            "within_site": within.to_dict(),
            "weighted": weighted.to_dict(),
            "bootstrap": boot.to_dict() if boot else None,
        }
        outcomes[name] = {
            "estimates": estimates,
            "heterogeneity_bound": het.to_dict(),
            "b_star": {"spec": cfg.b_star, "value": b_star},
            "orv": orv_rows,
            "mve": mve_rows,
            "contour": contour_block,
            "benchmarks": [b.to_dict() for b in benches],
            "benchmark_note": "r2_hat uses the upper bound on effect variance, so it is conservative (too small)",
        }
        table.append({
            "outcome": name,
            "within_site": [within.value, within.std_error],
            "weighted": [weighted.value, boot.std_error if boot else weighted.std_error],
            "orv": orv(tau_hat, b_star, var_w) if var_w > 0 else None,
        })
        for b in benches:
            bench_rows.append((name, b))

    report = {
        "schema_version": SCHEMA_VERSION,
        "provenance": {
            "config_hash": cfg.config_hash(),
            "versions": {"overlapsens": __version__, "numpy": np.__version__},
            "seed": cfg.seed,
        },
        "selection_model": model_block,
        "baseline_overlap": baseline.to_dict() if baseline else None,
        "summary_table": table,
        "outcomes": outcomes,
    }
    if write:
        dump_json(report, out_dir / "report.json")
        write_benchmarks_csv(bench_rows, out_dir / "benchmarks.csv")
    return report


def upper_right_closed(mask) -> bool:
    """True when every killer cell's upper-right neighbours are killers too."""
    m = np.asarray(mask, dtype=bool)
    right = np.all(~m[:, :-1] | m[:, 1:])
    up = np.all(~m[:-1, :] | m[1:, :])
    return bool(right and up)


def write_contour_csv(grid, path) -> None:
    rows = list(grid.rows())
    cols = {
        "p": np.array([r[0] for r in rows]),
        "r2": np.array([r[1] for r in rows]),
        "bias": np.array([r[2] for r in rows]),
        "killer": np.array([int(r[3]) for r in rows]),
    }
    write_csv(path, cols)


def write_benchmarks_csv(rows, path) -> None:
    header = "outcome,subgroup,r2_hat,p_hat,bias,mrob,sign,k_p,k_tau\n"
    lines = [header]
    for outcome, b in rows:
        m = "inf" if math.isinf(b.mrob) else repr(b.mrob)
        lines.append(
            f"{outcome},{b.name},{b.r2_hat!r},{b.p_hat!r},{b.bias!r},{m},{b.sign},{b.k_p!r},{b.k_tau!r}\n"
        )
    Path(path).write_text("".join(lines), encoding="utf-8")


def contour_only(tau_hat, var_w, b_star=0.0, c_sigma=1.0, resolution=201, out_dir=".", name="manual", benchmarks=()):
    """Contour artifacts straight from cached estimates."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = contour_grid(tau_hat, b_star, var_w, c_sigma, resolution)
    write_contour_csv(grid, out_dir / f"contour_{name}.csv")
    (out_dir / f"contour_{name}.svg").write_text(contour_svg(grid, benchmarks, title=name), encoding="utf-8")
    return grid


def simulate(cfg: RunConfig, out_dir=None, write=True) -> dict:
    """Run the oracle on each configured scenario (default: the three C_sigma scenarios)."""
    sim = dict(cfg.simulate or {})
    scenarios = sim.get("scenarios") or [dict(s) for s in FIGURE_SCENARIOS]
    n_target = int(sim.get("n_target", 1_000_000))
    batches = int(sim.get("batches", 100))
    out_dir = Path(out_dir or cfg.resolve(cfg.out))
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for i, sc in enumerate(scenarios):
        sc = dict(sc)
        name = str(sc.pop("name", f"scenario_{i}"))
        seed = sc.pop("seed", None)
        if seed is None:
            if cfg.seed is None:
                raise ConfigError("simulate needs a root seed or per-scenario seeds")
            seed = substream_seed(cfg.seed, f"simulate/{name}")
        try:
            spec = DGPSpec(n_target=int(sc.pop("n_target", n_target)), seed=int(seed), name=name, **sc)
        except TypeError as e:
            raise ConfigError(f"scenario {name!r}: {e}") from None
        draws = generate(spec, workers=cfg.workers)
        res = oracle(spec, batches=batches, draws=draws)
        entry = res.to_dict()
        entry["histogram_csv"] = f"hist_{name}.csv"
        results.append(entry)
        if write:
            write_csv(out_dir / entry["histogram_csv"], histogram(*draws))
    report = {
        "schema_version": SCHEMA_VERSION,
        "provenance": {"config_hash": cfg.config_hash(), "seed": cfg.seed,
                       "versions": {"overlapsens": __version__, "numpy": np.__version__}},
        "scenarios": results,
        "verdict": "PASS" if all(r["verdict"] == "PASS" for r in results) else "FAIL",
    }
    if write:
        dump_json(report, out_dir / "oracle.json")
    return report
