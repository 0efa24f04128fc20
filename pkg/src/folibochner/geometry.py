"""Foliated Riemannian charts and their orthonormal adapted frames.

A chart is described by a :class:`ModelSpec`, either through a declared
orthonormal frame (first ``n`` rows horizontal, last ``m`` vertical) or
through a metric matrix together with ``m`` vector fields spanning the
vertical distribution.  :func:`build_frames` turns a spec into jet-valued
frames at a point.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateVerticalSpan,
    MetricNotSPD,
    ModelError,
    OrderError,
    RankDeficientHorizontal,
)
from .expressions import Expression, as_expression
from .jets import DEFAULT_ORDER, MIN_ORDER, Jet, contract, inverse, logdet, stack, variables

COND_WARNING = 1e8
_RANK_TOL = 1e-10


class ConditioningWarning(UserWarning):
    """Metric or frame is poorly conditioned at a sampled point."""


def _expr_matrix(rows, name) -> tuple:
    try:
        return tuple(tuple(as_expression(e) for e in row) for row in rows)
    except TypeError as exc:
        raise ModelError(f"{name}: {exc}") from None


@dataclass(frozen=True)
class ModelSpec:
    """Immutable description of a foliated chart of dimension ``n + m``."""

    name: str
    n: int
    m: int
    frame: tuple | None = None
    metric: tuple | None = None
    vertical_span: tuple | None = None
    params: Mapping[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        d = self.n + self.m
        if self.n < 1 or self.m < 0:
            raise ModelError("need n >= 1 and m >= 0")
        if self.frame is not None:
            object.__setattr__(self, "frame", _expr_matrix(self.frame, "frame"))
            if len(self.frame) != d or any(len(r) != d for r in self.frame):
                raise ModelError(f"frame must be a {d}x{d} array of expressions")
        else:
            if self.metric is None or self.vertical_span is None:
                raise ModelError("spec needs either a frame or a metric plus vertical_span")
            metric = _expr_matrix(self.metric, "metric")
            if len(metric) != d or any(len(r) != d for r in metric):
                raise ModelError(f"metric must be a {d}x{d} array of expressions")
            # symmetric by construction: the upper triangle is authoritative
            metric = tuple(tuple(metric[min(a, b)][max(a, b)] for b in range(d)) for a in range(d))
            object.__setattr__(self, "metric", metric)
            span = _expr_matrix(self.vertical_span, "vertical_span")
            if len(span) != self.m or any(len(r) != d for r in span):
                raise ModelError(f"vertical_span must hold {self.m} fields of length {d}")
            object.__setattr__(self, "vertical_span", span)
        top = max(e.max_var() for e in self._expressions()) if d else -1
        if top >= d:
            raise ModelError(f"expression uses x{top} but the chart has dimension {d}")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def dim(self) -> int:
        return self.n + self.m

    @property
    def mode(self) -> str:
        return "frame" if self.frame is not None else "metric"

    def _expressions(self):
        for block in (self.frame, self.metric, self.vertical_span):
            if block:
                for row in block:
                    yield from row

    # serialization ---------------------------------------------------------------
    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "n": self.n, "m": self.m}
        if self.frame is not None:
            out["frame"] = [[str(e) for e in row] for row in self.frame]
        else:
            out["metric"] = [[str(e) for e in row] for row in self.metric]
            out["vertical_span"] = [[str(e) for e in row] for row in self.vertical_span]
        out["params"] = dict(self.params)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelSpec":
        allowed = {"name", "n", "m", "frame", "metric", "vertical_span", "params"}
        extra = set(data) - allowed
        if extra:
            raise ModelError(f"unknown model-spec fields: {sorted(extra)}")
        try:
            return cls(
                name=str(data.get("name", "custom")),
                n=int(data["n"]),
                m=int(data["m"]),
                frame=data.get("frame"),
                metric=data.get("metric"),
                vertical_span=data.get("vertical_span"),
                params=data.get("params", {}),
            )
        except KeyError as exc:
            raise ModelError(f"model spec is missing field {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ModelSpec":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ModelError(f"model file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ModelError(f"model file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)


@dataclass(frozen=True)
class FrameData:
    """Jet-valued adapted orthonormal frame at a point.

    ``F[alpha, a]`` is the ``a``-th chart component of frame vector
    ``E_alpha``; rows ``0..n-1`` are the horizontal ``X_i`` and the remaining
    rows the vertical ``Z_l``.  ``coframe`` is ``F^{-1}`` so that
    ``<v, E_alpha> = v^a coframe[a, alpha]``.
    """

    point: tuple
    n: int
    m: int
    F: Jet
    coframe: Jet
    g: Jet
    ginv: Jet
    sqrt_det: Jet
    condition: float

    @property
    def X(self) -> Jet:
        return self.F[: self.n]

    @property
    def Z(self) -> Jet:
        return self.F[self.n:]

    @property
    def dim(self) -> int:
        return self.n + self.m


def _jet_matrix(rows, xs: Jet) -> Jet:
    return stack([stack([e.jet_on(xs) for e in row]) for row in rows])


def _inner(g: Jet, u: Jet, v: Jet) -> Jet:
    return contract("a,a->", u, contract("ab,b->a", g, v))


def metric_jets(spec: ModelSpec, point, order: int = DEFAULT_ORDER) -> Jet:
    """Chart metric ``g_ab`` as a ``(d, d)`` jet."""
    xs = variables(point, order)
    if spec.frame is not None:
        theta = inverse(_jet_matrix(spec.frame, xs))
        return contract("ac,bc->ab", theta, theta)
    return _jet_matrix(spec.metric, xs)


def _check_spd(g0: np.ndarray) -> float:
    if not np.all(np.isfinite(g0)):
        raise MetricNotSPD("metric has non-finite entries")
    w = np.linalg.eigvalsh(0.5 * (g0 + g0.T))
    if w[0] <= 1e-14 * max(abs(w[-1]), 1.0):
        raise MetricNotSPD(f"metric is not positive definite (smallest eigenvalue {w[0]:.3e})")
    return float(w[-1] / w[0])


def build_frames(spec: ModelSpec, point: Sequence[float], order: int = DEFAULT_ORDER,
                 route: str = "auto") -> FrameData:
    """Adapted orthonormal frame at ``point``.

    ``route="auto"`` uses the declared frame when the spec has one and the
    Gram-Schmidt construction otherwise; ``route="metric"`` forces
    Gram-Schmidt on the induced metric (used to round-trip declared frames).
    """
    if order < MIN_ORDER:
        raise OrderError(f"frames need jet order >= {MIN_ORDER}")
    point = tuple(float(p) for p in point)
    d = spec.dim
    if len(point) != d:
        raise ValueError(f"point has length {len(point)}, expected {d}")
    xs = variables(point, order)
    if route not in ("auto", "metric"):
        raise ValueError(f"unknown frame route {route!r}")

    if spec.frame is not None and route == "auto":
        F = _jet_matrix(spec.frame, xs)
        if abs(np.linalg.det(F.value)) < 1e-14:
            raise RankDeficientHorizontal("declared frame is singular at the point")
        coframe = inverse(F)
        g = contract("ac,bc->ab", coframe, coframe)
        cond = _check_spd(g.value)
    else:
        if spec.frame is not None:
            g = metric_jets(spec, point, order)
            span = _jet_matrix(spec.frame, xs)[spec.n:]
        else:
            g = _jet_matrix(spec.metric, xs)
            span = _jet_matrix(spec.vertical_span, xs) if spec.m else None
        cond = _check_spd(g.value)
        F = _gram_schmidt(g, span, spec.n, spec.m, xs)
        coframe = inverse(F)
    if cond > COND_WARNING:
        warnings.warn(f"{spec.name}: metric condition number {cond:.2e} at {point}",
                      ConditioningWarning, stacklevel=2)
    ginv = contract("ca,cb->ab", F, F)
    sqrt_det = (0.5 * logdet(g)).exp()
    return FrameData(point, spec.n, spec.m, F, coframe, g, ginv, sqrt_det, cond)


def _gram_schmidt(g: Jet, span, n: int, m: int, xs: Jet) -> Jet:
    d = n + m
    scale = float(np.max(np.abs(np.diag(g.value))))
    Z: list[Jet] = []
    for ell in range(m):
        v = span[ell]
        for z in Z:
            v = v - z * _inner(g, v, z)
        nrm2 = _inner(g, v, v)
        if nrm2.value <= 1e-20 * scale * max(1.0, float(np.sum(span[ell].value**2))):
            raise DegenerateVerticalSpan(f"vertical field {ell} is dependent at the point")
        Z.append(v / nrm2.sqrt())
    X: list[Jet] = []
    eye = np.eye(d)
    for a in range(d):
        v = Jet.constant(xs.space, eye[a])
        for w in Z + X:
            v = v - w * _inner(g, v, w)
        nrm2 = _inner(g, v, v)
        if nrm2.value > _RANK_TOL * scale:
            X.append(v / nrm2.sqrt())
        if len(X) == n:
            break
    if len(X) < n:
        raise RankDeficientHorizontal(f"only {len(X)} of {n} horizontal fields are independent")
    return stack(X + Z)


def lie_bracket(A: Jet, B: Jet, point=None) -> Jet:
    """Coordinate Lie bracket ``[A, B]^k = A^a d_a B^k - B^a d_a A^k``.

    ``A`` and ``B`` are jet vectors of shape ``(..., d)``; the result has one
    fewer derivative order.
    """
    if A.order < 1 or B.order < 1:
        raise OrderError("bracket needs jets with at least one derivative")
    dA = A.grad()
    dB = B.grad()
    return contract("...a,a...k->...k", A, dB) - contract("...a,a...k->...k", B, dA)


def volume_density(spec: ModelSpec, point, order: int = DEFAULT_ORDER) -> Jet:
    """``sqrt(det g)`` as a jet."""
    g = metric_jets(spec, point, order)
    _check_spd(g.value)
    return (0.5 * logdet(g)).exp()


def sample_points(spec_or_dim, count: int, seed: int, box=(-1.0, 1.0)) -> np.ndarray:
    """Seeded uniform points in the box ``[lo, hi]^d``."""
    d = spec_or_dim.dim if isinstance(spec_or_dim, ModelSpec) else int(spec_or_dim)
    lo, hi = box
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(count, d))

