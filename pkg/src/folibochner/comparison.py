"""Closed-form comparison, diameter and spectral-gap bounds.

The horizontal Laplacian comparison bound is checked directly only on the
flat product, where the Riemannian distance from the origin is explicit.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .bochner import horizontal_laplacian
from .errors import NonpositiveK, RadiusBeyondConjugate, SampleAtOrigin
from .models import build_model
from .tensors import CDParams


def dimension_from_lambda(n: int, lam: float) -> float:
    """``N = n (1 + lam) / lam``; ``n`` for ``lam = inf``."""
    if lam <= 0:
        raise ValueError("lambda must be positive (finite) or infinite")
    return float(n) if math.isinf(lam) else n * (1.0 + lam) / lam


def comparison_bound(K: float, N: float, r: float) -> float:
    """Upper bound for ``Delta_H r_p`` at distance ``r``."""
    if r <= 0:
        raise ValueError("r must be positive")
    if N < 1:
        raise ValueError("N must be at least 1")
    if K > 0:
        if r >= math.pi * math.sqrt(N / K):
            raise RadiusBeyondConjugate(f"r = {r} is beyond pi sqrt(N/K) = {math.pi * math.sqrt(N / K)}")
        a = math.sqrt(K / N) * r
        return math.sqrt(N * K) / math.tan(a)
    if K == 0:
        return N / r
    a = math.sqrt(-K / N) * r
    return math.sqrt(-N * K) / math.tanh(a)


def diameter_bound(K: float, N: float) -> float:
    if K <= 0:
        raise NonpositiveK("the diameter bound needs K > 0")
    return math.pi * math.sqrt(N / K)


@dataclass(frozen=True)
class EigenvalueBounds:
    simple: float
    cd: float | None
    deficit: float

    def to_dict(self) -> dict:
        return asdict(self)


def eigenvalue_bounds(params: CDParams) -> EigenvalueBounds:
    """``lambda_1 >= K`` and, when ``rho1 rho2 > kappa (rho3 + sqrt(rho2 rho4))``,

    ``lambda_1 >= (rho1 rho2 - kappa (rho3 + sqrt(rho2 rho4))) / ((N - 1)/N rho2 + kappa)``.
    """
    p = params
    deficit = p.rho1 * p.rho2 - p.kappa * (p.rho3 + math.sqrt(max(p.rho2 * p.rho4, 0.0)))
    denom = (p.N - 1.0) / p.N * p.rho2 + p.kappa
    cd = deficit / denom if deficit > 0 and denom > 0 else None
    return EigenvalueBounds(simple=float(p.K), cd=cd, deficit=float(deficit))


@dataclass(frozen=True)
class FlatCheck:
    max_violation: float
    samples: int
    max_oracle_gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def flat_laplacian_distance(n: int, point) -> float:
    """Closed form ``n/r - |u_H|^2/r^3`` for the distance from the origin."""
    u = np.asarray(point, dtype=float)
    r = float(np.linalg.norm(u))
    return n / r - float(u[:n] @ u[:n]) / r**3


def flat_product_check(n: int, m: int, sample_points: Iterable) -> FlatCheck:
    """Max of ``Delta_H r - n/r`` over samples (jet evaluation of ``r``)."""
    spec = build_model("flat_product", {"n": n, "m": m})
    r_expr = "sqrt(" + " + ".join(f"x{k}^2" for k in range(n + m)) + ")"
    worst, gap, count = -math.inf, 0.0, 0
    for p in sample_points:
        p = np.asarray(p, dtype=float)
        r = float(np.linalg.norm(p))
        if r < 1e-12:
            raise SampleAtOrigin("the distance function is not smooth at the origin")
        value, _ = horizontal_laplacian(spec, r_expr, p)
        worst = max(worst, value - n / r)
        gap = max(gap, abs(value - flat_laplacian_distance(n, p)))
        count += 1
    return FlatCheck(max_violation=float(worst), samples=count, max_oracle_gap=float(gap))
