import math

import numpy as np
import pytest

from folibochner.errors import DomainError, OrderError
from folibochner.expressions import eval_expression_jet
from folibochner.jets import Jet, contract, extract_partial, inverse, matmul, variables


def test_product_partials():
    j = eval_expression_jet("x0*x1", (1.0, 2.0), order=2)
    assert j.value == 2.0
    assert j.partial((1, 0)) == 2.0
    assert j.partial((0, 1)) == 1.0
    assert j.partial((1, 1)) == 1.0
    assert j.partial((2, 0)) == 0.0


@pytest.mark.parametrize("x", [-2.3, 0.0, 0.7, 5.1])
def test_pythagorean_identity(x):
    j = eval_expression_jet("sin(x0)^2 + cos(x0)^2", (x,), order=4)
    assert abs(j.value - 1.0) <= 1e-15
    for k in range(1, 5):
        assert abs(j.partial((k,))) <= 1e-14


def test_exponential_mixed_partial():
    j = eval_expression_jet("exp(x0 + x1)", (0.0, 0.0), order=3)
    assert j.partial((1, 2)) == pytest.approx(1.0, abs=1e-15)


def test_extract_partial_examples():
    assert extract_partial(eval_expression_jet("x0^3", (2.0,)), (2,)) == pytest.approx(12.0)
    assert extract_partial(eval_expression_jet("5", (0.3,)), (1,)) == 0.0
    assert extract_partial(eval_expression_jet("x0*x1^2", (1.0, 1.0)), (1, 2)) == pytest.approx(2.0)


def test_order_errors():
    j = eval_expression_jet("x0^5", (1.0,), order=3)
    with pytest.raises(OrderError):
        j.partial((4,))
    low = variables((0.5,), order=0)[0]
    with pytest.raises(OrderError):
        low.diff(0)


def test_domain_errors():
    with pytest.raises(DomainError):
        eval_expression_jet("log(x0)", (-1.0,))
    with pytest.raises(DomainError):
        eval_expression_jet("1/x0", (0.0,))


def test_diff_lowers_order_and_matches_analytic():
    j = eval_expression_jet("sin(x0)*exp(x1)", (0.4, -0.3), order=4)
    d = j.diff(0).diff(1)
    assert d.order == 2
    assert d.value == pytest.approx(math.cos(0.4) * math.exp(-0.3), rel=1e-14)


def test_taylor_coefficients_of_composite_functions(rng):
    p = rng.uniform(0.5, 1.5, 2)
    j = eval_expression_jet("sqrt(x0) * log(x1 + 2) / (1 + x0^2)", tuple(p), order=3)
    h = 1e-3

    def f(x, y):
        return math.sqrt(x) * math.log(y + 2) / (1 + x * x)

    fd = (f(p[0] + h, p[1] + h) - f(p[0] + h, p[1] - h) - f(p[0] - h, p[1] + h)
          + f(p[0] - h, p[1] - h)) / (4 * h * h)
    assert j.partial((1, 1)) == pytest.approx(fd, rel=1e-5)


def test_matrix_inverse_and_contract(rng):
    xs = variables(tuple(rng.uniform(-1, 1, 2)), order=3)
    A = Jet.constant(xs.space, np.eye(2), 3) + contract("a,bc->abc", xs, Jet.constant(xs.space, 0.1 * np.ones((2, 2)), 3)).sum(0)
    Ainv = inverse(A)
    prod = matmul(A, Ainv)
    assert np.abs(prod.coeffs[..., 0] - np.eye(2)).max() <= 1e-14
    assert np.abs(prod.coeffs[..., 1:]).max() <= 1e-13
