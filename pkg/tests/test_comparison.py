import math

import numpy as np
import pytest

from folibochner.comparison import (
    comparison_bound,
    diameter_bound,
    dimension_from_lambda,
    eigenvalue_bounds,
    flat_laplacian_distance,
    flat_product_check,
)
from folibochner.errors import NonpositiveK, RadiusBeyondConjugate, SampleAtOrigin
from folibochner.geometry import sample_points
from folibochner.tensors import CDParams


def test_comparison_cases():
    assert comparison_bound(0.0, 2.0, 1.0) == 2.0
    assert abs(comparison_bound(1.0, 1.0, math.pi / 2)) <= 1e-15
    assert comparison_bound(-1.0, 2.0, 50.0) == pytest.approx(math.sqrt(2.0), abs=1e-12)
    with pytest.raises(RadiusBeyondConjugate):
        comparison_bound(1.0, 1.0, math.pi)


@pytest.mark.parametrize("K", [-1.0, 0.0, 1.0])
def test_comparison_decreasing(K):
    rs = np.linspace(0.05, 2.5, 60)
    vals = [comparison_bound(K, 3.0, r) for r in rs]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_continuity_at_zero():
    for K in (1e-8, -1e-8):
        for r in (0.3, 1.0, 2.0):
            assert abs(comparison_bound(K, 2.0, r) - 2.0 / r) <= 1e-6


def test_diameter():
    assert diameter_bound(1.0, 1.0) == pytest.approx(math.pi, abs=1e-15)
    assert diameter_bound(4.0, 1.0) == pytest.approx(math.pi / 2, abs=1e-15)
    assert diameter_bound(1.0, dimension_from_lambda(2, 1.0)) == pytest.approx(2 * math.pi, abs=1e-14)
    with pytest.raises(NonpositiveK):
        diameter_bound(0.0, 2.0)


def test_eigenvalue_bounds():
    b = eigenvalue_bounds(CDParams(rho1=1.0, rho2=1.0, N=2.0))
    assert b.cd == pytest.approx(2.0, abs=1e-12)
    b = eigenvalue_bounds(CDParams(rho1=0.0, rho2=0.5, kappa=1.0, N=2.0, K=-1.0))
    assert b.cd is None and b.deficit == 0.0
    assert eigenvalue_bounds(CDParams(K=0.5)).simple == 0.5


def test_bundle_like_reduction():
    p = CDParams(rho1=2.0, rho2=0.7, kappa=0.3, N=3.0)
    assert eigenvalue_bounds(p).cd == pytest.approx(2.0 * 0.7 / ((2.0 / 3.0) * 0.7 + 0.3))


def test_flat_product_check():
    chk = flat_product_check(2, 1, [(1.0, 0.0, 0.0)])
    assert flat_laplacian_distance(2, (1.0, 0.0, 0.0)) == pytest.approx(1.0)
    assert chk.max_violation == pytest.approx(-1.0)
    chk = flat_product_check(2, 1, [(0.0, 0.0, 1.0)])
    assert abs(chk.max_violation) <= 1e-14
    pts = sample_points(3, 20, 0)
    chk = flat_product_check(2, 1, pts)
    assert chk.max_violation <= 1e-10 and chk.max_oracle_gap <= 1e-12 and chk.samples == 20
    with pytest.raises(SampleAtOrigin):
        flat_product_check(2, 1, [(0.0, 0.0, 0.0)])


def test_dimension_from_lambda():
    assert dimension_from_lambda(2, math.inf) == 2.0
    assert dimension_from_lambda(2, 1.0) == 4.0
    with pytest.raises(ValueError):
        dimension_from_lambda(2, 0.0)
