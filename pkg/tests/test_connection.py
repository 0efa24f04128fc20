import numpy as np
import pytest

from folibochner.connection import (
    adapted_connect,
    c_tensor,
    connection_axioms,
    geometry_at,
    j_map,
    mean_curvature,
    riem_adapted,
    torsion,
)
from folibochner.expressions import parse
from folibochner.geometry import build_frames, sample_points
from folibochner.models import ACCEPTANCE_MODELS, load_model

P = (0.3, -0.5, 0.2)


def frame(spec, p=P):
    return build_frames(spec, p).F


def test_heisenberg_c_vanishes(heis):
    F = frame(heis).value
    for a in range(3):
        for b in range(3):
            assert np.abs(c_tensor(heis, P, F[a], F[b])).max() <= 1e-14


def test_warped_vertical_c(warped_v):
    F = frame(warped_v).value
    X, Z = F[0], F[2]
    # [X, Z] = -Z for Z = exp(-x) d_z, so <C_X Z, Z> = -<[X, Z], Z> = 1
    cz = c_tensor(warped_v, P, X, Z)
    g = build_frames(warped_v, P).g.value
    assert cz @ g @ Z == pytest.approx(1.0, abs=1e-13)
    assert np.abs(c_tensor(warped_v, P, Z, Z)).max() <= 1e-14


def test_heisenberg_torsion_and_j(heis):
    F = frame(heis).value
    X, Y, Z = F
    assert np.allclose(torsion(heis, P, X, Y), -Z, atol=1e-14)
    assert np.abs(torsion(heis, P, Z, Z)).max() == 0.0
    assert np.allclose(j_map(heis, P, Z, X), -Y, atol=1e-14)
    assert np.allclose(j_map(heis, P, Z, Y), X, atol=1e-14)
    assert np.abs(j_map(heis, P, 0 * Z, X)).max() == 0.0


def test_warped_vertical_torsion_is_vertical(warped_v):
    F = frame(warped_v).value
    t = torsion(warped_v, P, F[0], F[2])
    fr = build_frames(warped_v, P)
    comps = t @ fr.coframe.value
    assert np.abs(comps[:2]).max() <= 1e-14
    assert abs(comps[2]) > 0.5


def test_carnot_horizontal_connection(heis):
    F = frame(heis)
    assert np.abs(adapted_connect(heis, P, F[0], F[1]).value).max() <= 1e-14
    assert np.abs(adapted_connect(heis, P, F[0], F[2]).value).max() <= 1e-14


def test_flat_connection_is_directional_derivative(flat):
    F = frame(flat)
    B = parse("x0*x1").jet(P) * F[2]
    out = adapted_connect(flat, P, F[0], B).value
    assert np.allclose(out, [0, 0, P[1]])


def test_mean_curvature_examples(heis, engel, warped_v):
    assert np.abs(mean_curvature(heis, P).value).max() <= 1e-14
    assert np.abs(mean_curvature(engel, P + (0.4,)).value).max() <= 1e-14
    X = frame(warped_v).value[0]
    assert np.allclose(mean_curvature(warped_v, P).value, -X, atol=1e-13)


def test_riem_flat_and_heisenberg(flat, heis):
    F = frame(flat)
    assert np.abs(riem_adapted(flat, P, F[0], F[1], F[2])).max() == 0.0
    F = frame(heis)
    for a in range(3):
        for b in range(3):
            for c in range(3):
                assert np.abs(riem_adapted(heis, P, F[a], F[b], F[c])).max() <= 1e-13


@pytest.mark.parametrize("model", ["warped_heisenberg_horizontal(psi=x2)", "engel"])
def test_riem_tensoriality(model):
    spec = load_model(model)
    p = tuple(np.linspace(-0.3, 0.4, spec.dim))
    F = frame(spec, p)
    f = parse("1 + x0^2 + sin(x1)").jet(p)
    A, B, W = F[0], F[1], F[-1]
    base = riem_adapted(spec, p, A, B, W)
    assert np.allclose(riem_adapted(spec, p, f * A, B, W), f.value * base, atol=1e-9)
    assert np.allclose(riem_adapted(spec, p, A, f * B, W), f.value * base, atol=1e-9)
    assert np.allclose(riem_adapted(spec, p, A, B, f * W), f.value * base, atol=1e-9)


@pytest.mark.parametrize("model", ACCEPTANCE_MODELS + ("su2_round",))
def test_axioms(model):
    spec = load_model(model)
    for k, p in enumerate(sample_points(spec, 3, 4)):
        res = connection_axioms(spec, p, seed=k)
        assert max(res.values()) <= 1e-9, res


def test_geometry_cache_is_shared(heis):
    assert geometry_at(heis, P) is geometry_at(heis, P)


def non_integrable_vertical():
    from folibochner.geometry import ModelSpec
    rows = [["0", "0", "1"],
            ["exp(x2)", "0", "-0.5*x1*exp(x2)"],
            ["0", "exp(x2)", "0.5*x0*exp(x2)"]]
    return ModelSpec("contact_vertical", 1, 2, frame=rows)


@pytest.mark.parametrize("p", [P, (-0.7, 0.4, 0.9)])
def test_non_integrable_vertical_mean_curvature(p):
    spec = non_integrable_vertical()
    F = frame(spec, p).value
    H = mean_curvature(spec, p).value
    J = sum(j_map(spec, p, F[k], F[k]) for k in (1, 2))
    assert np.linalg.norm(H) > 0.1
    np.testing.assert_allclose(H, J, atol=1e-12)
    tor = torsion(spec, p, F[1], F[2])
    theta = np.linalg.inv(F)
    assert np.linalg.norm(tor @ theta[:, 1:]) < 1e-12
    assert np.linalg.norm(tor @ theta[:, :1]) > 0.1
