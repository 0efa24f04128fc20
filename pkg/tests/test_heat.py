import math

import numpy as np
import pytest

from folibochner.errors import NonpositiveTime, NotCompactModel, NotStepTwo, SchemeUnsupported, StructureMismatch
from folibochner.heat import (
    GroupElement,
    HeatConfig,
    bch,
    bch_multiply,
    be_check,
    estimate_semigroup,
    group_of,
    increments,
    lambda1_estimate,
    regularization_scan,
    simulate_paths,
)
from folibochner.models import heisenberg_structure, load_model

FAST = HeatConfig(paths=20_000, steps=40, seed=11)
ORIGIN = np.zeros(3)


def within(est, target, sigmas=3.0, extra=0.0):
    return abs(est.mean - target) <= sigmas * est.stderr + extra


def test_heisenberg_product(heis):
    g = group_of(heis)
    a, b = np.array([0.3, -1.2, 0.5]), np.array([0.7, 0.4, -0.1])
    out = bch(g, a, b)
    expect = [1.0, -0.8, 0.5 - 0.1 + 0.5 * (0.3 * 0.4 - (-1.2) * 0.7)]
    assert np.allclose(out, expect, atol=1e-15)
    assert np.allclose(bch(g, np.zeros(3), a), a)
    assert np.allclose(bch(g, a, -a), 0.0, atol=1e-15)


@pytest.mark.parametrize("model", ["heisenberg", "engel", "heisenberg(2)"])
def test_associativity(model, rng):
    g = group_of(load_model(model))
    x, y, z = rng.uniform(-1, 1, (3, 50, g.dim))
    lhs = bch(g, bch(g, x, y), z)
    rhs = bch(g, x, bch(g, y, z))
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_bch_multiply_checks_structure():
    s = heisenberg_structure(1)
    a = GroupElement(np.array([1.0, 0.0, 0.0]))
    b = GroupElement(np.array([0.0, 1.0, 0.0]))
    assert np.allclose(bch_multiply(s, a, b).coords, [1.0, 1.0, 0.5])
    with pytest.raises(StructureMismatch):
        bch_multiply(s, a, GroupElement(np.zeros(4)))


def test_unsupported_models(warped_v):
    with pytest.raises(SchemeUnsupported):
        increments(warped_v, 0.5, FAST)
    with pytest.raises(NonpositiveTime):
        increments(load_model("heisenberg"), 0.0, FAST)


def test_moments_and_mass(heis):
    for t in (0.25, 0.5, 1.0):
        ends = simulate_paths("heisenberg", ORIGIN, t, 40, 20_000, 3)
        x = ends[:, 0]
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean()) <= 3 * se
        sq = x**2
        assert abs(sq.mean() - t) <= 3 * sq.std(ddof=1) / math.sqrt(x.size)
        est = estimate_semigroup(heis, "1", ORIGIN, t, FAST)
        assert est.value.mean == 1.0 and est.value.stderr == 0.0


def test_linear_function_estimates(heis):
    t = 0.5
    est = estimate_semigroup(heis, "x0", ORIGIN, t, FAST)
    gh, _ = est.grad_sq("h")
    assert gh == pytest.approx(1.0, abs=1e-9)
    assert within(est.variance, t)
    ratio = t * gh / est.variance.mean
    assert ratio == pytest.approx(1.0, rel=0.05)


def test_sin_semigroup_at_identity(heis):
    est = estimate_semigroup(heis, "sin(x0)", ORIGIN, 0.5, FAST)
    assert within(est.value, 0.0)


def test_short_time_limit(heis):
    x = np.array([0.3, -0.2, 0.1])
    cfg = HeatConfig(paths=20_000, steps=10, seed=2, h=0.01)
    est = estimate_semigroup(heis, "x0^2*x1 + x2", x, 1e-3, cfg)
    f = x[0] ** 2 * x[1] + x[2]
    Xf = 2 * x[0] * x[1] - x[1] / 2
    Yf = x[0] ** 2 + x[0] / 2
    assert within(est.value, f, extra=1e-3)
    assert within(est.grad_h[0], Xf, extra=1e-3)
    assert within(est.grad_h[1], Yf, extra=1e-3)
    assert within(est.grad_v[0], 1.0, extra=1e-3)


def test_step_halving(heis):
    a = estimate_semigroup(heis, "x0^2*x2 + sin(x1)", ORIGIN + 0.2, 0.5, HeatConfig(paths=20_000, steps=20, seed=4))
    b = estimate_semigroup(heis, "x0^2*x2 + sin(x1)", ORIGIN + 0.2, 0.5, HeatConfig(paths=20_000, steps=40, seed=5))
    assert abs(a.value.mean - b.value.mean) <= 3 * math.hypot(a.value.stderr, b.value.stderr)


def test_determinism_and_worker_independence(heis):
    a = increments(heis, 0.5, HeatConfig(paths=20_000, steps=10, seed=9, workers=1))
    b = increments(heis, 0.5, HeatConfig(paths=20_000, steps=10, seed=9, workers=3))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("f", ["x0", "x2", "sin(x0)"])
def test_be_check_heisenberg(heis, f):
    res = be_check(heis, f, ORIGIN, 0.5, -1.0, 2.0, FAST)
    assert res.passed, res


def test_be_check_flat(flat):
    res = be_check(flat, "x0^2", np.zeros(3), 0.5, 0.0, 2.0, FAST)
    assert res.passed
    assert res.slack == pytest.approx(res.displayed_slack)


def test_be_displayed_form_flagged(heis):
    res = be_check(heis, "x0", ORIGIN, 1.0, -1.0, 2.0, FAST)
    assert res.passed and res.displayed_discrepancy


def test_regularization(heis, engel):
    rows, ok = regularization_scan(heis, "x0", ORIGIN, (0.1, 0.5, 1.0), FAST)
    assert ok
    for r in rows:
        assert r.r1 == pytest.approx(1.0, rel=0.05)
    rows, ok = regularization_scan(heis, "x2", ORIGIN, (0.05, 0.25, 1.0), FAST)
    assert ok and all(np.isfinite(r.r2) for r in rows)
    with pytest.raises(NotStepTwo):
        regularization_scan(engel, "x0", np.zeros(4), (0.5,), FAST)


def test_decay_rates(heis):
    cfg = HeatConfig(paths=50_000, seed=1)
    circle = lambda1_estimate("circle", cfg=cfg)
    assert circle.rate == pytest.approx(1.0, rel=0.15)
    const = lambda1_estimate("circle", lambda th: np.ones(th.shape[0]), cfg=cfg)
    assert const.degenerate
    with pytest.raises(NotCompactModel):
        lambda1_estimate(heis, cfg=cfg)
