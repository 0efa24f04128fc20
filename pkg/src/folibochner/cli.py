"""Batch driver: run verification suites on models and write deterministic reports.

Exit status: 0 all records pass, 1 some record fails, 2 configuration error,
3 model error, 4 other package error, 5 report I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import bochner, comparison, heat, models, tensors
from .connection import connection_axioms
from .errors import ConfigError, FoliBochnerError, ModelError, NotStepTwo, SchemeUnsupported
from .geometry import sample_points

SCHEMA_VERSION = 1
SUITES = ("verify", "cd", "heat", "compare")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MODEL, EXIT_OTHER, EXIT_IO = 0, 1, 2, 3, 4, 5
THREADS_ENV = "FOLIBOCHNER_THREADS"
AXIOM_TOL = 1e-9
TABLE_TOL = 1e-11
ORACLE_TOL = 1e-9
FD_TOL = 1e-5
FD_POINTS = 5


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1") or 1))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer") from None


@dataclass
class RunConfig:
    seed: int
    models: list = field(default_factory=lambda: list(models.ACCEPTANCE_MODELS))
    suite: str = "all"
    tol: float = bochner.DEFAULT_TOL
    points: int = 10
    functions: int = 20
    degree: int = 4
    nu_grid: list = field(default_factory=lambda: [0.1, 0.3, 1.0, 3.0, 10.0])
    paths: int = 200_000
    steps: int = 200
    t_grid: list = field(default_factory=lambda: [0.25, 0.5, 1.0])
    scan_grid: list = field(default_factory=lambda: [0.05, 0.1, 0.25, 0.5, 1.0])
    heat_functions: list = field(default_factory=lambda: ["x0", "x2", "sin(x0)"])
    scan_functions: list = field(default_factory=lambda: ["x0", "x2"])
    out: str = "reports"
    workers: int = field(default_factory=_default_workers)
    extract: bool = False

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown configuration fields: {', '.join(unknown)}")
        if data.get("seed") is None:
            raise ConfigError("seed is mandatory")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.suite not in SUITES + ("all",):
            raise ConfigError(f"unknown suite {self.suite!r}")
        if isinstance(self.models, str):
            self.models = [self.models]
        if not self.models:
            raise ConfigError("at least one model is required")
        for name in ("points", "functions", "paths", "steps", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")

    def suites(self) -> tuple:
        return SUITES if self.suite == "all" else (self.suite,)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# records ---------------------------------------------------------------------------------

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def record(model: str, suite: str, identity: str, index: int, passed: bool, **values) -> dict:
    out = {"model": model, "suite": suite, "identity": identity, "index": int(index),
           "passed": bool(passed)}
    out.update(values)
    return _clean(out)


def _sort_key(r: dict):
    return (r["model"], r["suite"], r["identity"], r["index"])


def _identity_record(model, suite, index, res: bochner.IdentityResult, function: str) -> dict:
    d = res.to_dict()
    name = d.pop("name")
    passed = True if res.diagnostic else res.passed
    return record(model, suite, name, index, passed, function=function, holds=res.passed,
                  relative=res.relative, **{k: v for k, v in d.items() if k != "passed"})


# verify ------------------------------------------------------------------------------------

def _verify_unit(args) -> list:
    model, fexpr, point, index, tol, seed = args
    spec = models.load_model(model)
    out = []
    for res in bochner.bochner_residuals(spec, fexpr, point, tol):
        out.append(_identity_record(model, "verify", index, res, fexpr))
    for res in bochner.lemma_checks(spec, fexpr, point, tol):
        if res.name.startswith("mean_curvature_") and res.name != "mean_curvature_J" and res.scale == 0:
            continue
        out.append(_identity_record(model, "verify", index, res, fexpr))
    frame_value, oracle = bochner.horizontal_laplacian(spec, fexpr, point)
    gap = abs(frame_value - oracle) / max(abs(frame_value) + abs(oracle), 1.0)
    out.append(record(model, "verify", "laplacian_oracle", index, gap <= ORACLE_TOL,
                      function=fexpr, point=list(point), frame=frame_value, oracle=oracle, relative=gap))
    return out


def _axiom_unit(args) -> list:
    model, point, index, seed = args
    spec = models.load_model(model)
    res = connection_axioms(spec, point, seed=seed + index)
    return [record(model, "verify", f"axiom:{k}", index, v <= AXIOM_TOL, point=list(point), residual=v)
            for k, v in sorted(res.items())]


def _map(fn, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        parts = [fn(j) for j in jobs]
    return [r for part in parts for r in part]


def function_corpus(dim: int, count: int, degree: int, seed: int) -> list:
    """Seeded random polynomials as expression strings, one stream per index."""
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [str(bochner.random_polynomial(dim, degree, int(s.generate_state(1)[0]))) for s in seeds]


def run_verify(model: str, cfg: RunConfig) -> list:
    spec = models.load_model(model)
    pts = sample_points(spec, cfg.points, cfg.seed)
    funcs = function_corpus(spec.dim, cfg.functions, cfg.degree, cfg.seed)
    jobs = []
    for fi, f in enumerate(funcs):
        for pi, p in enumerate(pts):
            jobs.append((model, f, tuple(p), fi * cfg.points + pi, cfg.tol, cfg.seed))
    out = _map(_verify_unit, jobs, cfg.workers)
    out += _map(_axiom_unit, [(model, tuple(p), i, cfg.seed) for i, p in enumerate(pts)], cfg.workers)
    for i, p in enumerate(pts[:FD_POINTS]):
        gaps = bochner.finite_difference_check(spec, funcs[i % len(funcs)], p)
        for name, gap in sorted(gaps.items()):
            out.append(record(model, "verify", f"finite_difference:{name}", i, gap <= FD_TOL,
                              point=list(p), relative=gap))
    flags = models.classify(spec, pts if len(pts) >= 5 else sample_points(spec, 5, cfg.seed))
    out.append(record(model, "verify", "classification", 0, flags.characterizations_agree,
                      **dataclasses.asdict(flags)))
    structure = _structure_of(spec)
    if structure is not None:
        res = models.carnot_table_residuals(structure, pts[0])
        out.append(record(model, "verify", "carnot_table", 0,
                          res["derived"] <= TABLE_TOL and res["torsion"] <= TABLE_TOL,
                          displayed_holds=res["displayed"] <= TABLE_TOL, **res))
    return out


def _structure_of(spec):
    kind = spec.params.get("kind")
    if kind == "heisenberg":
        return models.heisenberg_structure(int(spec.params.get("k", 1)))
    if kind == "engel":
        return models.engel_structure()
    return None


# cd ------------------------------------------------------------------------------------------

def extract_params(model: str, cfg: RunConfig) -> tensors.CDParams:
    spec = models.load_model(model)
    return tensors.cd_constants_extract(spec, sample_points(spec, cfg.points, cfg.seed))


def run_cd(model: str, cfg: RunConfig) -> list:
    spec = models.load_model(model)
    pts = sample_points(spec, cfg.points, cfg.seed)
    params = tensors.cd_constants_extract(spec, pts)
    out = [record(model, "cd", "params", 0, True, **params.to_dict())]
    for i, p in enumerate(pts):
        slacks = bochner.converse_slacks(spec, p, params)
        out.append(record(model, "cd", "converse", i, min(slacks.values()) >= -cfg.tol,
                          point=list(p), **slacks))
    funcs = function_corpus(spec.dim, cfg.functions, cfg.degree, cfg.seed)
    for fi, f in enumerate(funcs):
        p = pts[fi % len(pts)]
        for k, nu in enumerate(cfg.nu_grid):
            for res in bochner.cd_check(spec, f, p, params, nu=nu, tol=cfg.tol):
                if k > 0 and not res.name.startswith("general_cd"):
                    continue
                out.append(_identity_record(model, "cd", fi, res, f))
    return out


# heat ----------------------------------------------------------------------------------------

def _heat_params(spec) -> tuple[float, float]:
    pts = sample_points(spec, 5, 0)
    K = tensors.frak_R_lower_bound(spec, pts, math.inf)
    return K, float(spec.n)


def run_heat(model: str, cfg: RunConfig) -> list:
    spec = models.load_model(model)
    hcfg = heat.HeatConfig(paths=cfg.paths, steps=cfg.steps, seed=cfg.seed, workers=cfg.workers)
    if spec.params.get("kind") == "su2_round":
        return _run_decay(model, spec, cfg)
    try:
        group = heat.group_of(spec)
    except SchemeUnsupported as exc:
        return [record(model, "heat", "skipped", 0, True, reason=str(exc))]
    K, N = _heat_params(spec)
    x0 = np.zeros(spec.dim)
    out = []
    cache = {}

    def paths_at(t):
        if t not in cache:
            cache[t] = heat.increments(spec, t, hcfg)
        return cache[t]

    for i, t in enumerate(cfg.t_grid):
        w = paths_at(t)
        mass = heat.estimate_semigroup(spec, "1", x0, t, hcfg, w=w).value
        out.append(record(model, "heat", "mass", i, mass.mean == 1.0 and mass.stderr == 0.0, t=t,
                          estimate=mass.mean, stderr=mass.stderr, slack=mass.mean - 1.0))
        est = heat.estimate_semigroup(spec, "x0^2", x0, t, hcfg, w=w).value
        dev = est.mean - t
        out.append(record(model, "heat", "second_moment", i, abs(dev) <= heat.SIGMAS * est.stderr,
                          t=t, estimate=est.mean, stderr=est.stderr, slack=dev))
        for fi, f in enumerate(cfg.heat_functions):
            if as_dim(f) > spec.dim:
                continue
            be = heat.be_check(spec, f, x0, t, K, N, hcfg, w=w)
            values = {k: v for k, v in be.to_dict().items() if k != "passed"}
            out.append(record(model, "heat", f"be:{f}", i, be.passed, function=f, estimate=be.slack, **values))
    try:
        heat.is_step_two(spec)
    except NotStepTwo as exc:
        out.append(record(model, "heat", "regularization", 0, True, skipped=str(exc)))
        return out
    for f in cfg.scan_functions:
        if as_dim(f) > spec.dim:
            continue
        rows, ok = heat.regularization_scan(spec, f, x0, cfg.scan_grid, hcfg, paths_at=paths_at)
        for i, row in enumerate(rows):
            out.append(record(model, "heat", f"regularization:{f}", i, ok and max(row.r1, row.r2, row.r3) < 1e3,
                              function=f, estimate=row.r1, stderr=row.r1_err,
                              slack=1e3 - max(row.r1, row.r2, row.r3), **row.to_dict()))
    return out


def as_dim(expr: str) -> int:
    from .expressions import as_expression

    return as_expression(expr).max_var() + 1


def _run_decay(model, spec, cfg: RunConfig) -> list:
    params = tensors.cd_constants_extract(spec, sample_points(spec, cfg.points, cfg.seed))
    bounds = comparison.eigenvalue_bounds(params)
    hcfg = heat.HeatConfig(paths=max(cfg.paths // 2, 1), steps=cfg.steps, seed=cfg.seed, workers=cfg.workers)
    est = heat.lambda1_estimate(spec, cfg=hcfg)
    target = bounds.cd if bounds.cd is not None else bounds.simple
    # stretch check, reported but never failing the run
    holds = (not est.degenerate) and est.rate + 2.0 * est.stderr >= 0.85 * target
    values = {k: v for k, v in est.to_dict().items() if k not in ("rate", "stderr")}
    return [record(model, "heat", "lambda1", 0, True, holds=holds, estimate=est.rate, stderr=est.stderr,
                   slack=est.rate - target, bound=target, **values)]


# compare -------------------------------------------------------------------------------------

def run_compare(model: str, cfg: RunConfig) -> list:
    spec = models.load_model(model)
    out = []
    pts = sample_points(spec, cfg.points, cfg.seed)
    params = tensors.cd_constants_extract(spec, pts)
    bounds = comparison.eigenvalue_bounds(params)
    out.append(record(model, "compare", "eigenvalue_bounds", 0, True, **bounds.to_dict(), K=params.K,
                      N=params.N))
    N = params.N_lambda if math.isfinite(params.N_lambda) else float(spec.n)
    i = 0
    for r in (0.25, 0.5, 1.0, 2.0):
        try:
            b = comparison.comparison_bound(params.K, N, r)
        except FoliBochnerError as exc:
            out.append(record(model, "compare", "comparison_bound", i, True, K=params.K, N=N, r=r,
                              skipped=str(exc)))
        else:
            out.append(record(model, "compare", "comparison_bound", i, True, K=params.K, N=N, r=r, bound=b))
        i += 1
    if params.K > 0:
        out.append(record(model, "compare", "diameter_bound", 0, True, K=params.K, N=N,
                          bound=comparison.diameter_bound(params.K, N)))
    if spec.params.get("kind") == "flat_product":
        shifted = [p for p in pts if np.linalg.norm(p) > 1e-6]
        chk = comparison.flat_product_check(spec.n, spec.m, shifted)
        out.append(record(model, "compare", "flat_product_check", 0,
                          chk.max_violation <= 1e-10 and chk.max_oracle_gap <= 1e-10, **chk.to_dict()))
    return out


RUNNERS = {"verify": run_verify, "cd": run_cd, "heat": run_heat, "compare": run_compare}


# reports -------------------------------------------------------------------------------------

def emit_report(results: Iterable[dict], out_dir, config: RunConfig | None = None) -> dict:
    """Write ``report.json``, ``summary.csv`` (and ``heat.csv``, ``failures.json`` when relevant)."""
    records = sorted(results, key=_sort_key)
    if not records:
        raise ValueError("no results to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    doc = {"schema_version": SCHEMA_VERSION, "records": records}
    if config is not None:
        # output location and worker count do not affect results
        doc["config"] = _clean({k: v for k, v in config.to_dict().items() if k not in ("out", "workers")})
    files["report"] = _write(out_dir / "report.json", json.dumps(doc, sort_keys=True, indent=1) + "\n")

    groups: dict = {}
    for r in records:
        key = (r["model"], r["suite"], r["identity"])
        g = groups.setdefault(key, {"count": 0, "max_relative": 0.0, "passed": True, "holds": True})
        g["count"] += 1
        rel = r.get("relative", r.get("residual"))
        if isinstance(rel, (int, float)):
            g["max_relative"] = max(g["max_relative"], abs(rel))
        g["passed"] = g["passed"] and r["passed"]
        g["holds"] = g["holds"] and bool(r.get("holds", r["passed"]))
    rows = [[*k, g["count"], repr(float(g["max_relative"])), g["passed"], g["holds"]]
            for k, g in sorted(groups.items())]
    files["summary"] = _write_csv(out_dir / "summary.csv",
                                  ["model", "suite", "identity", "count", "max_relative", "passed", "holds"], rows)

    heat_rows = [[r["model"], r["identity"], r.get("t", ""), r.get("estimate", ""), r.get("stderr", ""),
                  r.get("slack", "")] for r in records if r["suite"] == "heat" and "estimate" in r]
    if heat_rows:
        files["heat"] = _write_csv(out_dir / "heat.csv",
                                   ["model", "quantity", "t", "estimate", "stderr", "slack"], heat_rows)
    bound_rows = [[r["model"], r["identity"], r.get("K", ""), r.get("N", ""), r.get("r", ""),
                   r.get("bound", r.get("cd", ""))] for r in records if r["suite"] == "compare"]
    if bound_rows:
        files["bounds"] = _write_csv(out_dir / "bounds.csv", ["model", "bound_kind", "K", "N", "r", "bound"],
                                     bound_rows)

    failures = [{"model": r["model"], "suite": r["suite"], "identity": r["identity"], "index": r["index"]}
                for r in records if not r["passed"]]
    manifest = out_dir / "failures.json"
    if failures:
        files["failures"] = _write(manifest, json.dumps({"schema_version": SCHEMA_VERSION,
                                                        "failures": failures}, sort_keys=True, indent=1) + "\n")
    elif manifest.exists():
        manifest.unlink()
    return files


def _write(path: Path, text: str) -> str:
    path.write_text(text, encoding="utf-8")
    return str(path)


def _write_csv(path: Path, header: list, rows: list) -> str:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return str(path)


def run_suite(cfg: RunConfig) -> tuple[int, list]:
    results = []
    for model in cfg.models:
        try:
            models.load_model(model)
        except ModelError:
            raise
        except FoliBochnerError as exc:
            raise ModelError(str(exc)) from exc
        for suite in cfg.suites():
            results += RUNNERS[suite](model, cfg)
    emit_report(results, cfg.out, cfg)
    status = EXIT_OK if all(r["passed"] for r in results) else EXIT_FAIL
    return status, results


# argument parsing ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="folibochner", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=SUITES + ("all",))
    p.add_argument("--model", action="append", help="built-in name, name(args) or JSON spec path; repeatable")
    p.add_argument("--suite", choices=SUITES + ("all",), help="overrides the command (for config-file use)")
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--functions", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--extract", action="store_true", help="cd: print the extracted constants as JSON")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    data["suite"] = args.suite or args.command
    if args.model:
        data["models"] = args.model
    for name in ("seed", "tol", "points", "functions", "paths", "steps", "out", "workers"):
        value = getattr(args, name)
        if value is not None:
            data[name] = value
    if args.extract:
        data["extract"] = True
    return RunConfig.from_mapping(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        for model in cfg.models:
            models.load_model(model)
        if cfg.extract and cfg.suite == "cd":
            extracted = {m: extract_params(m, cfg).to_dict() for m in cfg.models}
            doc = extracted[cfg.models[0]] if len(cfg.models) == 1 else extracted
            print(json.dumps(_clean(doc), sort_keys=True, indent=1))
        status, results = run_suite(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except FoliBochnerError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    except OSError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_IO
    failed = sum(not r["passed"] for r in results)
    print(f"{len(results)} records, {failed} failed; reports in {cfg.out}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
