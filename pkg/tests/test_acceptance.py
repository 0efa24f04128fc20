"""Acceptance criteria, one test per criterion, each printing a pass/fail line."""

import math
import time

import numpy as np
import pytest

from conftest import record_criterion
from folibochner import cli
from folibochner.bochner import (
    bochner_residuals,
    cd_check,
    converse_slacks,
    finite_difference_check,
    horizontal_laplacian,
)
from folibochner.comparison import (
    comparison_bound,
    diameter_bound,
    dimension_from_lambda,
    eigenvalue_bounds,
    flat_product_check,
)
from folibochner.connection import connection_axioms, geometry_at
from folibochner.geometry import sample_points
from folibochner.heat import (
    HeatConfig,
    be_check,
    estimate_semigroup,
    increments,
    lambda1_estimate,
    regularization_scan,
)
from folibochner.models import (
    ACCEPTANCE_MODELS,
    carnot_table_residuals,
    classify,
    engel_structure,
    heisenberg_structure,
    load_model,
)
from folibochner.tensors import CDParams, cd_constants_extract, frak_R_lower_bound, tensor_report

SEED = 2024
FUNCTIONS = 20
POINTS = 10
IDENTITIES = ("horizontal", "vertical", "full_gradient")
DISPLAYED = ("vertical_displayed", "full_gradient_displayed")


def grid(model):
    spec = load_model(model)
    pts = sample_points(spec, POINTS, SEED)
    funcs = cli.function_corpus(spec.dim, FUNCTIONS, 4, SEED)
    return spec, pts, funcs


def test_criterion_01_bochner_identities():
    worst = {name: 0.0 for name in IDENTITIES}
    displayed_worst = {name: 0.0 for name in DISPLAYED}
    checks = failures = 0
    start = time.perf_counter()
    for model in ACCEPTANCE_MODELS:
        spec, pts, funcs = grid(model)
        for f in funcs:
            for p in pts:
                for r in bochner_residuals(spec, f, p, tol=1e-8):
                    if r.name in IDENTITIES:
                        checks += 1
                        failures += not r.passed
                        worst[r.name] = max(worst[r.name], r.relative)
                    else:
                        displayed_worst[r.name] = max(displayed_worst[r.name], r.relative)
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed <= 120.0 and checks == 3 * 5 * FUNCTIONS * POINTS
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record_criterion(1, ok, f"{checks} checks, {failures} over 1e-8*scale, max relative ({detail}), "
                            f"{elapsed:.1f}s single-threaded")
    shown = ", ".join(f"{k} {v:.1e}" for k, v in displayed_worst.items())
    record_criterion("1-displayed", True, note=True, detail=f"displayed-form max relative residuals ({shown})")
    assert ok


def test_criterion_02_connection_axioms():
    worst: dict = {}
    for model in ACCEPTANCE_MODELS:
        spec, pts, _ = grid(model)
        for i, p in enumerate(pts):
            for s in range(FUNCTIONS):
                for k, v in connection_axioms(spec, p, seed=SEED + 100 * i + s).items():
                    worst[k] = max(worst.get(k, 0.0), v)
    keys = ("metric_compatibility", "splitting_parallelism", "torsion_symmetries", "levi_civita_relation")
    ok = all(worst[k] <= 1e-9 for k in keys)
    record_criterion(2, ok, ", ".join(f"{k} {worst[k]:.1e}" for k in keys) + " (tol 1e-9)")
    assert ok


def test_criterion_03_carnot_table():
    derived = torsion = shown = 0.0
    for s in (heisenberg_structure(1), engel_structure()):
        for p in sample_points(s.dim, POINTS, SEED):
            res = carnot_table_residuals(s, p)
            derived = max(derived, res["derived"])
            torsion = max(torsion, res["torsion"])
            shown = max(shown, res["displayed"])
    ok = derived <= 1e-11 and torsion <= 1e-11
    record_criterion(3, ok, f"connection vs Koszul table {derived:.1e}, Tor(X,Y) + [X,Y]_V {torsion:.1e} (tol 1e-11)")
    record_criterion("3-displayed", True, note=True, detail=f"displayed table deviates by {shown:.2g} on engel "
                                         "(H x V row lacks an ad* term, V x V row is not projected)")
    assert ok


def test_criterion_04_oracles():
    lap_gap = fd_gap = 0.0
    for model in ACCEPTANCE_MODELS:
        spec, pts, funcs = grid(model)
        for f in funcs:
            for p in pts:
                frame_value, oracle = horizontal_laplacian(spec, f, p)
                lap_gap = max(lap_gap, abs(frame_value - oracle) / max(abs(frame_value), 1.0))
        for k, p in enumerate(pts[:5]):
            fd_gap = max(fd_gap, max(finite_difference_check(spec, funcs[k], p, step=1e-4).values()))
    ok = lap_gap <= 1e-9 and fd_gap <= 1e-5
    record_criterion(4, ok, f"divergence-form gap {lap_gap:.1e} (tol 1e-9), finite-difference gap {fd_gap:.1e} "
                            "(tol 1e-5)")
    assert ok


def test_criterion_05_heisenberg_constants():
    spec = load_model("heisenberg")
    pts = sample_points(spec, POINTS, SEED)
    p = cd_constants_extract(spec, pts)
    got = np.array([p.rho1, p.rho2, p.rho3, p.rho4, p.kappa])
    const_err = float(np.abs(got - [0.0, 0.5, 0.0, 0.0, 1.0]).max())
    K = frak_R_lower_bound(spec, pts, math.inf)
    zero = 0.0
    for q in pts:
        r = tensor_report(spec, q)
        zero = max(zero, np.abs(r.H).max(), np.abs(r.iota).max(), np.abs(r.ric[:, :spec.n]).max())
    ok = const_err <= 1e-9 and abs(K + 1.0) <= 1e-9 and zero <= 1e-10
    record_criterion(5, ok, f"(rho1..rho4, kappa) = {tuple(round(float(x), 12) for x in got)}, K = {K:.12g}, "
                            f"max |H|,|iota|,|Ric_H| = {zero:.1e}")
    assert ok


def test_criterion_06_classification():
    flags = {m: classify(load_model(m), sample_points(load_model(m), POINTS, SEED)) for m in ACCEPTANCE_MODELS}
    heis, engel = flags["heisenberg"], flags["engel"]
    wh = flags["warped_heisenberg_horizontal(psi=x2)"]
    wv_spec = load_model("warped_heisenberg_vertical(phi=x0)")
    wv = flags["warped_heisenberg_vertical(phi=x0)"]
    h_err = 0.0
    for p in sample_points(wv_spec, POINTS, SEED):
        g = geometry_at(wv_spec, tuple(p))
        h_err = max(h_err, float(np.abs(g.values.H - np.array([-1.0, 0.0, 0.0])).max()))
    agree = all(f.characterizations_agree for f in flags.values())
    ok = (heis.bundle_like and heis.totally_geodesic
          and engel.bundle_like and engel.minimal and not engel.totally_geodesic
          and not wh.bundle_like and not wv.minimal and h_err <= 1e-9 and agree)
    record_criterion(6, ok, f"heisenberg BL&TG, engel BL&min&~TG, warped_h ~BL, warped_v ~min with |H + X| "
                            f"{h_err:.1e}, characterizations agree: {agree}")
    assert ok


def test_criterion_07_cd_inequalities():
    spec = load_model("heisenberg")
    pair_pts = sample_points(spec, 50, SEED + 1)
    pair_funcs = cli.function_corpus(spec.dim, 50, 4, SEED + 1)
    params = CDParams(K=-1.0, N=2.0, lam=math.inf)
    worst_r = math.inf
    for f, p in zip(pair_funcs, pair_pts):
        r = next(r for r in cd_check(spec, f, p, params) if r.name == "cd_with_R")
        worst_r = min(worst_r, r.residual / max(r.scale, 1.0))
    ok_r = worst_r >= -1e-8
    worst_g, worst_conv, count = math.inf, math.inf, 0
    for model in ("heisenberg", "engel"):
        spec, pts, funcs = grid(model)
        extracted = cd_constants_extract(spec, pts)
        for k, f in enumerate(funcs):
            p = pts[k % len(pts)]
            for nu in (0.1, 0.3, 1.0, 3.0, 10.0):
                r = next(r for r in cd_check(spec, f, p, extracted, nu=nu) if r.name.startswith("general_cd"))
                worst_g = min(worst_g, r.residual / max(r.scale, 1.0))
                count += 1
        for p in pts:
            worst_conv = min(worst_conv, min(converse_slacks(spec, p, extracted).values()))
    ok = ok_r and worst_g >= -1e-8 and worst_conv >= -1e-8
    record_criterion(7, ok, f"CD with R min slack/scale {worst_r:.2e} over 50 pairs; general CD min slack/scale "
                            f"{worst_g:.2e} over {count} checks; converse min slack {worst_conv:.1e}")
    assert ok


def test_criterion_08_comparison():
    errs = [
        abs(comparison_bound(0.0, 2.0, 1.0) - 2.0),
        abs(comparison_bound(1.0, 1.0, math.pi / 2) - 0.0),
        abs(diameter_bound(1.0, 1.0) - math.pi),
        abs(diameter_bound(4.0, 1.0) - math.pi / 2),
        abs(diameter_bound(1.0, dimension_from_lambda(2, 1.0)) - 2 * math.pi),
        abs(eigenvalue_bounds(CDParams(rho1=1.0, rho2=1.0, N=2.0)).cd - 2.0),
        abs(eigenvalue_bounds(CDParams(K=0.5)).simple - 0.5),
    ]
    heis = cd_constants_extract(load_model("heisenberg"), sample_points(load_model("heisenberg"), 5, SEED))
    none_ok = eigenvalue_bounds(heis).cd is None
    asym = abs(comparison_bound(-1.0, 2.0, 40.0) - math.sqrt(2.0))
    chk = flat_product_check(2, 1, sample_points(3, 50, SEED))
    cont = max(abs(comparison_bound(k, 2.0, r) - 2.0 / r) for k in (1e-8, -1e-8) for r in (0.5, 1.0, 2.0))
    ok = max(errs) <= 1e-12 and asym <= 1e-12 and none_ok and chk.max_violation <= 1e-10 and cont <= 1e-6
    record_criterion(8, ok, f"case values max error {max(errs):.1e}, flat max violation {chk.max_violation:.2e}, "
                            f"K->0 continuity {cont:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_09_heat():
    spec = load_model("heisenberg")
    cfg = HeatConfig(paths=200_000, steps=200, seed=SEED)
    x0 = np.zeros(3)
    start = time.perf_counter()
    cache = {}

    def paths_at(t):
        if t not in cache:
            cache[t] = increments(spec, t, cfg)
        return cache[t]

    mass_ok = moments_ok = be_ok = True
    shown = []
    for t in (0.25, 0.5, 1.0):
        w = paths_at(t)
        mass = estimate_semigroup(spec, "1", x0, t, cfg, w=w).value
        mass_ok &= mass.mean == 1.0 and mass.stderr == 0.0
        sq = estimate_semigroup(spec, "x0^2", x0, t, cfg, w=w).value
        moments_ok &= abs(sq.mean - t) <= 3 * sq.stderr
        for f in ("x0", "x2", "sin(x0)"):
            res = be_check(spec, f, x0, t, -1.0, 2.0, cfg, w=w)
            be_ok &= res.passed
            if res.displayed_discrepancy:
                shown.append(f"{f}@{t}")
    reg_ok, worst = True, 0.0
    for f in ("x0", "x2"):
        rows, ok = regularization_scan(spec, f, x0, (0.05, 0.1, 0.25, 0.5, 1.0), cfg, paths_at=paths_at)
        reg_ok &= ok
        worst = max([worst] + [max(r.r1, r.r2, r.r3) for r in rows])
    elapsed = time.perf_counter() - start
    ok = mass_ok and moments_ok and be_ok and reg_ok and elapsed <= 300.0
    record_criterion(9, ok, f"mass exact {mass_ok}, E[x_t^2] = t within 3 sigma {moments_ok}, proof-derived BE "
                            f"{be_ok}, max regularization ratio {worst:.3g}, {elapsed:.0f}s")
    record_criterion("9-displayed", True, note=True, detail="displayed exponential form negative beyond "
                                          f"3 sigma for {', '.join(shown) or 'none'}")
    assert ok


def test_criterion_10_determinism(tmp_path):
    argv = ["all", "--model", "heisenberg", "--model", "flat_product(2,1)", "--seed", str(SEED),
            "--points", "3", "--functions", "2", "--paths", "5000", "--steps", "20"]
    cli.main([*argv, "--out", str(tmp_path / "a"), "--workers", "1"])
    cli.main([*argv, "--out", str(tmp_path / "b"), "--workers", "2"])
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = names == sorted(p.name for p in (tmp_path / "b").iterdir()) and all(
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    record_criterion(10, same, f"{len(names)} report files byte-identical across two runs: {same}")
    assert same


@pytest.mark.slow
def test_criterion_11_su2_spectral_gap():
    spec = load_model("su2_round")
    params = cd_constants_extract(spec, sample_points(spec, POINTS, SEED))
    bound = eigenvalue_bounds(params).cd
    est = lambda1_estimate(spec, cfg=HeatConfig(paths=100_000, seed=SEED))
    ok = bound is not None and not est.degenerate and est.rate + 2 * est.stderr >= 0.85 * bound
    record_criterion(11, ok, f"decay rate {est.rate:.3f} +- {est.stderr:.3f} vs cd bound "
                             f"{bound if bound is None else round(bound, 4)} (15% tolerance, stretch)",
                     blocking=False)
    if not ok:
        pytest.xfail("stretch criterion is non-blocking")
