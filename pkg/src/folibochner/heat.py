"""Monte Carlo simulation of the horizontal diffusion on group models.

Nilpotent groups use exponential coordinates of the first kind with the
exact (truncated) Baker-Campbell-Hausdorff product.  A path from the
identity is ``W = exp(dB_1) ... exp(dB_K)`` with horizontal Gaussian
increments; by left invariance the diffusion started at ``y`` ends at
``y W``, so derivatives of ``P_t f`` along the left-invariant frame are
common-random-number finite differences over translated starting points.

Time convention: paths use unit-variance Brownian increments, so the
simulated semigroup ``P_t f(x) = E f(x W_t)`` has generator ``Delta_H / 2``
and equals ``exp(s Delta_H)`` at ``s = t / 2``.  Gradient bounds are
therefore evaluated at ``s``; the spectral-gap estimator simulates the
generator ``Delta_H`` itself so that decay rates are eigenvalues.

Random streams: paths are split into fixed-size chunks and chunk ``j``
draws from ``SeedSequence(seed).spawn(n_chunks)[j]``, so results do not
depend on the worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .connection import geometry_at
from .errors import NonpositiveTime, NotCompactModel, NotStepTwo, SchemeUnsupported, StructureMismatch
from .expressions import Expression, as_expression
from .geometry import ModelSpec, sample_points
from .models import CarnotStructure, engel_structure, heisenberg_structure, load_model
from .tensors import tensor_report

CHUNK = 8192
SIGMAS = 3.0
ROUNDING = 1e-10
BCH_MAX_STEP = 4
THREADS_ENV = "FOLIBOCHNER_THREADS"


# group arithmetic --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NilpotentGroup:
    """Simply connected nilpotent group: structure constants and horizontal rank.

    Unlike :class:`CarnotStructure` the grading is not required, which admits
    abelian products such as the flat model.
    """

    constants: np.ndarray
    n: int
    step: int

    @property
    def dim(self) -> int:
        return self.constants.shape[0]

    @classmethod
    def from_structure(cls, s: CarnotStructure) -> "NilpotentGroup":
        return cls(s.constants, s.dims[0], s.step)

    def __post_init__(self):
        c = np.asarray(self.constants, dtype=float)
        object.__setattr__(self, "constants", c)
        k, i, j = np.nonzero(c)
        object.__setattr__(self, "_terms", tuple(zip(k, i, j, c[k, i, j])))

    def bracket(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = np.broadcast_arrays(a, b)
        out = np.zeros(a.shape)
        for k, i, j, coef in self._terms:
            out[..., k] += coef * a[..., i] * b[..., j]
        return out


@dataclass(frozen=True)
class GroupElement:
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))

    def inverse(self) -> "GroupElement":
        return GroupElement(-self.coords)


def _as_group(s) -> NilpotentGroup:
    if isinstance(s, NilpotentGroup):
        return s
    if isinstance(s, CarnotStructure):
        return NilpotentGroup.from_structure(s)
    raise TypeError("expected a CarnotStructure or NilpotentGroup")


def bch(group: NilpotentGroup, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``log(exp(x) exp(y))`` for arrays of Lie algebra vectors (broadcasting)."""
    if group.step > BCH_MAX_STEP:
        raise SchemeUnsupported(f"BCH product is implemented up to step {BCH_MAX_STEP}")
    z = x + y
    if group.step < 2:
        return z
    br = group.bracket
    xy = br(x, y)
    z = z + 0.5 * xy
    if group.step < 3:
        return z
    xxy = br(x, xy)
    yyx = -br(y, xy)
    z = z + (xxy + yyx) / 12.0
    if group.step < 4:
        return z
    return z - br(y, xxy) / 24.0


def bch_multiply(s, a: GroupElement, b: GroupElement) -> GroupElement:
    group = _as_group(s)
    if a.coords.shape[-1] != group.dim or b.coords.shape[-1] != group.dim:
        raise StructureMismatch(f"elements must have {group.dim} coordinates")
    return GroupElement(bch(group, a.coords, b.coords))


def group_of(spec: ModelSpec) -> NilpotentGroup:
    """Nilpotent group realising a model, or :class:`SchemeUnsupported`."""
    kind = spec.params.get("kind")
    if kind == "heisenberg":
        return NilpotentGroup.from_structure(heisenberg_structure(int(spec.params.get("k", 1))))
    if kind == "engel":
        return NilpotentGroup.from_structure(engel_structure())
    if kind == "carnot":
        s = CarnotStructure(tuple(spec.params["dims"]), np.asarray(spec.params["constants"]))
        return NilpotentGroup.from_structure(s)
    if kind == "flat_product":
        d = spec.dim
        return NilpotentGroup(np.zeros((d, d, d)), spec.n, 1)
    raise SchemeUnsupported(f"{spec.name}: the simulation needs a nilpotent group model")


def _check_scheme(spec: ModelSpec) -> NilpotentGroup:
    group = group_of(spec)
    p = tuple(sample_points(spec, 1, 0, box=(-0.5, 0.5))[0])
    drift = geometry_at(spec, p).drift.value
    if np.max(np.abs(drift)) > 1e-10:
        raise SchemeUnsupported(f"{spec.name}: horizontal Laplacian has a first-order part")
    return group


# configuration and estimates ----------------------------------------------------------

@dataclass(frozen=True)
class HeatConfig:
    paths: int = 200_000
    steps: int = 200
    seed: int = 0
    h: float = 0.05
    grad_h: float = 1e-4
    workers: int | None = None

    def worker_count(self) -> int:
        if self.workers:
            return int(self.workers)
        return int(os.environ.get(THREADS_ENV, "1") or 1)


@dataclass(frozen=True)
class PathEstimate:
    label: str
    mean: float
    stderr: float
    paths: int
    steps: int
    seed: int
    richardson_delta: float | None = None
    sigmas: float = SIGMAS

    def to_dict(self) -> dict:
        return asdict(self)


def _estimate(label, samples: np.ndarray, cfg: HeatConfig, steps=None, **extra) -> PathEstimate:
    s = np.asarray(samples, dtype=float)
    se = float(s.std(ddof=1) / math.sqrt(s.size)) if s.size > 1 else 0.0
    return PathEstimate(label, float(s.mean()), se, int(s.size),
                        cfg.steps if steps is None else steps, cfg.seed, **extra)


def _chunks(n_paths: int):
    sizes = [CHUNK] * (n_paths // CHUNK)
    if n_paths % CHUNK:
        sizes.append(n_paths % CHUNK)
    return sizes


def _run_chunks(fn: Callable, n_paths: int, seed: int, workers: int) -> np.ndarray:
    sizes = _chunks(n_paths)
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, seqs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: fn(job[0], np.random.default_rng(job[1])), jobs))
    else:
        parts = [fn(size, np.random.default_rng(ss)) for size, ss in jobs]
    return np.concatenate(parts, axis=0)


def increments(spec: ModelSpec, t: float, cfg: HeatConfig, steps: int | None = None) -> np.ndarray:
    """Endpoints ``W`` of paths started at the identity, shape ``(paths, d)``."""
    if t <= 0:
        raise NonpositiveTime("t must be positive")
    group = _check_scheme(spec)
    steps = cfg.steps if steps is None else steps
    n, d = group.n, group.dim
    dt = t / steps

    def run(size, rng):
        w = np.zeros((size, d))
        step = np.zeros((size, d))
        for _ in range(steps):
            step[:, :n] = rng.normal(0.0, math.sqrt(dt), size=(size, n))
            w = bch(group, w, step)
        return w

    return _run_chunks(run, cfg.paths, cfg.seed, cfg.worker_count())


def simulate_paths(model, x0, t: float, steps: int, n_paths: int, seed: int,
                   workers: int | None = None) -> np.ndarray:
    spec = load_model(model)
    cfg = HeatConfig(paths=n_paths, steps=steps, seed=seed, workers=workers)
    w = increments(spec, t, cfg)
    return bch(group_of(spec), np.asarray(x0, dtype=float)[None, :], w)


# semigroup quantities --------------------------------------------------------------------

@dataclass
class SemigroupEstimate:
    t: float
    value: PathEstimate
    grad_h: list
    grad_v: list
    laplacian: PathEstimate
    variance: PathEstimate
    # per-path samples kept for delta-method error bars
    _samples: dict = field(default_factory=dict, repr=False)

    def grad_sq(self, part: str = "all") -> tuple[float, float]:
        """``|grad P_t f|^2`` (or its horizontal / vertical part) with a delta-method stderr."""
        comps = {"h": self.grad_h, "v": self.grad_v, "all": self.grad_h + self.grad_v}[part]
        keys = {"h": "gh", "v": "gv", "all": "g"}[part]
        val = sum(c.mean**2 for c in comps)
        samples = self._samples.get(keys)
        if samples is None or not comps:
            return float(val), 0.0
        means = np.array([c.mean for c in comps])
        psi = samples @ (2.0 * means)
        return float(val), float(psi.std(ddof=1) / math.sqrt(psi.size))

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "value": self.value.to_dict(),
            "grad_h": [g.to_dict() for g in self.grad_h],
            "grad_v": [g.to_dict() for g in self.grad_v],
            "laplacian": self.laplacian.to_dict(),
            "variance": self.variance.to_dict(),
        }


def _evaluator(f) -> Callable[[np.ndarray], np.ndarray]:
    if callable(f) and not isinstance(f, (Expression, str)):
        return f
    expr = as_expression(f)
    return expr.evaluate_many


def _translate(group: NilpotentGroup, x: np.ndarray, direction: int, h: float) -> np.ndarray:
    e = np.zeros(group.dim)
    e[direction] = h
    return bch(group, x, e)


def _frame_diffs(group, f, x, w, h):
    """Per-path central first and second differences along every frame direction."""
    base = f(bch(group, x[None, :], w))
    first, second = [], []
    for a in range(group.dim):
        plus = f(bch(group, _translate(group, x, a, h)[None, :], w))
        minus = f(bch(group, _translate(group, x, a, -h)[None, :], w))
        first.append((plus - minus) / (2.0 * h))
        second.append((plus - 2.0 * base + minus) / (h * h))
    return base, np.array(first), np.array(second)


def estimate_semigroup(model, f, x, t: float, cfg: HeatConfig | None = None,
                       w: np.ndarray | None = None) -> SemigroupEstimate:
    """``P_t f``, ``grad_H P_t f``, ``grad_V P_t f``, ``Delta_H P_t f`` and ``Var_t f`` at ``x``."""
    cfg = cfg or HeatConfig()
    spec = load_model(model)
    group = _check_scheme(spec)
    fv = _evaluator(f)
    x = np.asarray(x, dtype=float)
    if w is None:
        w = increments(spec, t, cfg)
    n = group.n
    base, d1, d2 = _frame_diffs(group, fv, x, w, cfg.h)
    _, d1h, d2h = _frame_diffs(group, fv, x, w, cfg.h / 2)
    # Richardson: O(h^2) error estimated by (D(h/2) - D(h)) / 3
    rich1 = (d1h.mean(1) - d1.mean(1)) / 3.0
    rich2 = (d2h[:n].sum(0).mean() - d2[:n].sum(0).mean()) / 3.0
    grads = [_estimate(f"X{a}P_tf" if a < n else f"Z{a - n}P_tf", d1[a], cfg,
                       richardson_delta=float(rich1[a])) for a in range(group.dim)]
    lap = d2[:n].sum(0)
    mean = base.mean()
    var_samples = (base - mean) ** 2 * base.size / max(base.size - 1, 1)
    return SemigroupEstimate(
        t=float(t),
        value=_estimate("P_tf", base, cfg),
        grad_h=grads[:n],
        grad_v=grads[n:],
        laplacian=_estimate("Delta_H P_tf", lap, cfg, richardson_delta=float(rich2)),
        variance=_estimate("Var_t f", var_samples, cfg),
        _samples={"g": d1.T, "gh": d1[:n].T, "gv": d1[n:].T, "lap": lap, "base": base},
    )


def _grad_sq_pointwise(group: NilpotentGroup, fv, y: np.ndarray, h: float) -> np.ndarray:
    total = np.zeros(y.shape[0])
    for a in range(group.dim):
        e = np.zeros(group.dim)
        e[a] = h
        total += ((fv(bch(group, y, e)) - fv(bch(group, y, -e))) / (2.0 * h)) ** 2
    return total


@dataclass(frozen=True)
class BECheck:
    t: float
    s: float
    K: float
    N: float
    slack: float
    stderr: float
    displayed_slack: float
    displayed_stderr: float
    passed: bool
    displayed_discrepancy: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _be_weight(K: float, t: float, sign: float) -> float:
    """``(exp(2 sign K t) - 1) / (2 sign K)``, equal to ``t`` when ``K = 0``."""
    x = 2.0 * sign * K
    return t if x == 0 else math.expm1(x * t) / x


def be_check(model, f, x, t: float, K: float, N: float, cfg: HeatConfig | None = None,
             w: np.ndarray | None = None) -> BECheck:
    """Gradient bound ``|grad P f|^2 + c (Delta_H P f)^2 <= e P |grad f|^2`` in two forms.

    ``P`` is the simulated semigroup at path time ``t``, i.e. ``exp(s Delta_H)``
    with ``s = t / 2``.  Proof-derived weights: ``c = (2/N)(1 - e^{-2Ks})/(2K)``
    and ``e = e^{-2Ks}``; displayed: ``c = (2/N)(e^{2Ks} - 1)/(2K)`` and
    ``e = e^{2Ks}``.
    """
    cfg = cfg or HeatConfig()
    spec = load_model(model)
    group = _check_scheme(spec)
    fv = _evaluator(f)
    x = np.asarray(x, dtype=float)
    if w is None:
        w = increments(spec, t, cfg)
    est = estimate_semigroup(spec, fv, x, t, cfg, w=w)
    ends = bch(group, x[None, :], w)
    gsq = _grad_sq_pointwise(group, fv, ends, cfg.grad_h)
    grads = est._samples["g"]
    means = grads.mean(0)
    lap = est._samples["lap"]
    lap_mean = lap.mean()

    def slack(c_weight, e_weight):
        value = e_weight * gsq.mean() - float(means @ means) - c_weight * lap_mean**2
        psi = e_weight * gsq - grads @ (2.0 * means) - 2.0 * c_weight * lap_mean * lap
        # rounding floor for cases where the bound is attained exactly
        floor = ROUNDING * (abs(e_weight * gsq.mean()) + float(means @ means) + abs(c_weight) * lap_mean**2)
        return float(value), float(psi.std(ddof=1) / math.sqrt(psi.size) + floor)

    sem = 0.5 * t
    proof = slack((2.0 / N) * _be_weight(K, sem, -1.0), math.exp(-2.0 * K * sem))
    shown = slack((2.0 / N) * _be_weight(K, sem, 1.0), math.exp(2.0 * K * sem))
    return BECheck(
        t=float(t), s=sem, K=float(K), N=float(N),
        slack=proof[0], stderr=proof[1],
        displayed_slack=shown[0], displayed_stderr=shown[1],
        passed=proof[0] >= -SIGMAS * proof[1],
        displayed_discrepancy=shown[0] < -SIGMAS * shown[1],
    )


# regularization ----------------------------------------------------------------------------

def is_step_two(spec: ModelSpec, samples: int = 5, seed: int = 0, tol: float = 1e-8) -> float:
    """Smallest eigenvalue of ``(J, J)_H`` on the vertical block over sample points."""
    worst = math.inf
    for p in sample_points(spec, samples, seed):
        r = tensor_report(spec, tuple(p))
        block = r.jj[spec.n:, spec.n:]
        worst = min(worst, float(np.linalg.eigvalsh(0.5 * (block + block.T))[0]) if block.size else math.inf)
    if not worst > tol:
        raise NotStepTwo(f"{spec.name}: horizontal distribution is not uniformly step-two generating "
                         f"(min eigenvalue {worst:.3e})")
    return worst


@dataclass(frozen=True)
class RegularizationRow:
    t: float
    r1: float
    r1_err: float
    r2: float
    r2_err: float
    r3: float
    r3_err: float
    variance: float

    def to_dict(self) -> dict:
        return asdict(self)


def regularization_scan(model, f, x, t_grid: Sequence[float], cfg: HeatConfig | None = None,
                        cap: float = 1e3, paths_at: Callable | None = None
                        ) -> tuple[list[RegularizationRow], bool]:
    """Ratios ``t|grad_H P_t f|^2/Var``, ``t^2|grad_V P_t f|^2/Var``, ``t^2(Delta_H P_t f)^2/Var``.

    ``paths_at(t)`` may supply cached increments for each time.
    """
    cfg = cfg or HeatConfig()
    spec = load_model(model)
    is_step_two(spec)
    rows = []
    for t in t_grid:
        w = paths_at(t) if paths_at is not None else None
        est = estimate_semigroup(spec, f, x, t, cfg, w=w)
        var = est.variance.mean
        gh, gh_err = est.grad_sq("h")
        gv, gv_err = est.grad_sq("v")
        lap = est.laplacian
        l2, l2_err = lap.mean**2, 2.0 * abs(lap.mean) * lap.stderr
        if var <= 0:
            rows.append(RegularizationRow(t, math.inf, math.inf, math.inf, math.inf, math.inf, math.inf, var))
            continue
        rel = est.variance.stderr / var

        def ratio(num, err, power):
            scale = t**power / var
            return scale * num, scale * math.hypot(err, num * rel)

        r1 = ratio(gh, gh_err, 1)
        r2 = ratio(gv, gv_err, 2)
        r3 = ratio(l2, l2_err, 2)
        rows.append(RegularizationRow(float(t), *r1, *r2, *r3, float(var)))
    ok = all(max(r.r1, r.r2, r.r3) < cap and all(map(math.isfinite, (r.r1, r.r2, r.r3))) for r in rows)
    return rows, ok


# spectral gap on compact models -------------------------------------------------------------

@dataclass(frozen=True)
class DecayEstimate:
    rate: float
    stderr: float
    degenerate: bool
    times: tuple
    means: tuple
    stderrs: tuple

    def to_dict(self) -> dict:
        return asdict(self)


def _quat_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = p.T
    w2, x2, y2, z2 = q.T
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=1)


def _su2_paths(t: float, steps: int, cfg: HeatConfig) -> np.ndarray:
    """Unit quaternions ``g_t`` with ``g_{k+1} = g_k exp(dB_1 X + dB_2 Y)``, ``Var dB = 2 dt``.

    ``X, Y, Z`` act as the quaternion units ``i, j, k``, so ``[X, Y] = 2Z``.
    """
    dt = t / steps

    def run(size, rng):
        g = np.zeros((size, 4))
        g[:, 0] = 1.0
        for _ in range(steps):
            b = rng.normal(0.0, math.sqrt(2.0 * dt), size=(size, 2))
            r = np.hypot(b[:, 0], b[:, 1])
            sinc = np.where(r > 0, np.sin(r) / np.where(r > 0, r, 1.0), 1.0)
            step = np.stack([np.cos(r), sinc * b[:, 0], sinc * b[:, 1], np.zeros(size)], axis=1)
            g = _quat_mul(g, step)
        return g

    return _run_chunks(run, cfg.paths, cfg.seed, cfg.worker_count())


def _circle_paths(t: float, cfg: HeatConfig, theta0: float) -> np.ndarray:
    def run(size, rng):
        return theta0 + math.sqrt(2.0 * t) * rng.normal(size=(size, 1))

    return _run_chunks(run, cfg.paths, cfg.seed, cfg.worker_count())


def _haar_mean(kind: str, probe, cfg: HeatConfig) -> float:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    count = 200_000
    if kind == "su2_round":
        q = rng.normal(size=(count, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        return float(np.mean(probe(q)))
    return float(np.mean(probe(rng.uniform(0.0, 2.0 * math.pi, size=(count, 1)))))


def lambda1_estimate(model, f_probe=None, T_grid: Sequence[float] = (0.25, 0.5, 0.75, 1.0),
                     cfg: HeatConfig | None = None, steps_per_unit: int = 200) -> DecayEstimate:
    """Decay rate of ``|E f(g_t) - mean f|`` by weighted least squares on ``log``.

    ``model`` is ``"su2_round"`` (probe defaults to the real part of the
    quaternion) or ``"circle"`` (``theta_t = theta_0 + sqrt(2) B_t``, probe
    ``sin``).
    """
    cfg = cfg or HeatConfig(paths=100_000)
    kind = model if isinstance(model, str) and model == "circle" else None
    if kind is None:
        spec = load_model(model)
        if spec.params.get("kind") != "su2_round":
            raise NotCompactModel(f"{spec.name}: the decay estimator needs a compact group model")
        kind = "su2_round"
    if f_probe is None:
        probe = (lambda g: g[:, 0]) if kind == "su2_round" else (lambda th: np.sin(th[:, 0]))
    else:
        probe = f_probe
    centre = _haar_mean(kind, probe, cfg)
    times, means, errs = [], [], []
    for T in T_grid:
        if T <= 0:
            raise NonpositiveTime("decay times must be positive")
        if kind == "su2_round":
            ends = _su2_paths(T, max(1, int(round(steps_per_unit * T))), cfg)
        else:
            ends = _circle_paths(T, cfg, math.pi / 2)
        vals = np.asarray(probe(ends), dtype=float) - centre
        times.append(float(T))
        means.append(float(vals.mean()))
        errs.append(float(vals.std(ddof=1) / math.sqrt(vals.size)))
    m, e = np.abs(np.array(means)), np.array(errs)
    if np.any(m <= SIGMAS * e):
        return DecayEstimate(math.nan, math.nan, True, tuple(times), tuple(means), tuple(errs))
    y = np.log(m)
    sig = e / m
    wts = 1.0 / sig**2
    A = np.stack([np.ones_like(y), np.array(times)], axis=1)
    cov = np.linalg.inv(A.T @ (A * wts[:, None]))
    beta = cov @ (A.T @ (wts * y))
    return DecayEstimate(float(-beta[1]), float(math.sqrt(cov[1, 1])), False,
                         tuple(times), tuple(means), tuple(errs))
