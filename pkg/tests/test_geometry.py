import numpy as np
import pytest

from folibochner.connection import geometry_at, levi_civita
from folibochner.errors import MetricNotSPD, ModelError
from folibochner.geometry import ModelSpec, build_frames, lie_bracket, sample_points, volume_density
from folibochner.jets import variables


def test_flat_frames_are_coordinate_fields(flat):
    fr = build_frames(flat, (0.3, -0.2, 0.7))
    assert np.array_equal(fr.F.value, np.eye(3))


def test_heisenberg_frame_orthonormal(heis):
    fr = build_frames(heis, (1.0, 2.0, 0.0))
    F = fr.F.value
    assert np.abs(F @ fr.g.value @ F.T - np.eye(3)).max() <= 1e-12
    assert np.allclose(F[0], [1.0, 0.0, -1.0])
    assert np.allclose(F[1], [0.0, 1.0, 0.5])


def test_metric_mode_recovers_adapted_frame():
    spec = ModelSpec("metric", 2, 1, metric=[["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1 + x0^2"]],
                     vertical_span=[["0", "0", "1"]])
    fr = build_frames(spec, (0.5, 0.1, -0.3))
    F = fr.F.value
    assert np.abs(F @ fr.g.value @ F.T - np.eye(3)).max() <= 1e-12
    assert np.allclose(F[2] / np.linalg.norm(F[2]), [0, 0, 1])


def test_degenerate_metric_rejected():
    spec = ModelSpec("degenerate", 1, 1, metric=[["1", "1"], ["1", "1"]], vertical_span=[["0", "1"]])
    with pytest.raises(MetricNotSPD):
        build_frames(spec, (0.0, 0.0))


def test_bad_specs():
    with pytest.raises(ModelError):
        ModelSpec("bad", 2, 1, frame=[["1", "0"], ["0", "1"]])
    with pytest.raises(ModelError):
        ModelSpec("bad", 1, 1)
    with pytest.raises(ModelError):
        ModelSpec.from_dict({"n": 1, "m": 1, "frame": [["1", "0"], ["0", "1"]], "colour": "red"})


def test_spec_json_round_trip(tmp_path, warped_v):
    path = tmp_path / "m.json"
    warped_v.save(path)
    again = ModelSpec.load(path)
    p = (0.2, 0.4, -0.1)
    assert np.array_equal(build_frames(again, p).F.value, build_frames(warped_v, p).F.value)


def test_heisenberg_bracket(heis):
    p = (0.3, -0.4, 0.2)
    F = build_frames(heis, p).F
    XY = lie_bracket(F[0], F[1])
    assert np.allclose(XY.value, [0, 0, 1], atol=1e-14)
    assert np.abs(lie_bracket(F[0], F[0]).value).max() == 0.0


def test_coordinate_fields_commute():
    xs = variables((0.1, 0.2), order=3)
    e0 = xs.grad()[0]
    e1 = xs.grad()[1]
    assert np.abs(lie_bracket(e0, e1).value).max() == 0.0


def test_volume_density(flat, heis, warped_h):
    assert volume_density(flat, (0.1, 0.2, 0.3)).value == pytest.approx(1.0)
    assert volume_density(heis, (0.7, -1.1, 0.3)).value == pytest.approx(1.0, abs=1e-14)
    z = 0.4
    assert volume_density(warped_h, (0.1, 0.2, z)).value == pytest.approx(np.exp(2 * z), rel=1e-13)


def test_flat_christoffels_vanish(flat):
    assert np.abs(levi_civita(flat, (0.2, 0.1, 0.0)).value).max() == 0.0


def test_polar_christoffel():
    spec = ModelSpec("polar", 1, 1, metric=[["1", "0"], ["0", "sin(x0)^2"]], vertical_span=[["0", "1"]])
    r = 0.8
    gam = levi_civita(spec, (r, 0.1)).value
    assert gam[0, 1, 1] == pytest.approx(-np.sin(r) * np.cos(r), rel=1e-13)


def test_heisenberg_lc_horizontal_part_vanishes(heis):
    v = geometry_at(heis, (0.0, 0.0, 0.0)).values
    assert np.abs(v.gamma[0, 0, :2]).max() <= 1e-15


def test_sample_points_seeded():
    assert np.array_equal(sample_points(3, 4, 9), sample_points(3, 4, 9))
    assert sample_points(3, 4, 9).shape == (4, 3)
