import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyct import geometry as G
from polyct.geometry import GeometryError, make_geometry, ray_for, sample_ray, sample_rays

from conftest import small_geometry


def deeplesion_like():
    return make_geometry(362.0, 362.0, 360, (0, 360), 641, 256, 256, (1.0, 1.0),
                         angular_spacing=0.1)


def test_deeplesion_config_is_valid():
    g = deeplesion_like()
    assert g.delta_x == 1.0
    assert g.num_rays == 360 * 641


def test_zero_source_distance_rejected():
    with pytest.raises(GeometryError):
        make_geometry(0.0, 362.0, 360, (0, 360), 641, 256, 256, (1.0, 1.0), angular_spacing=0.1)


@pytest.mark.parametrize("field,value", [
    ("center_to_detector", -1.0), ("num_angles", 0), ("num_detectors", 0), ("sample_spacing", 0.0),
])
def test_nonpositive_fields_rejected(field, value):
    cfg = dict(source_to_center=100.0, center_to_detector=100.0, num_angles=10,
               angle_range=(0, 360), num_detectors=101, image_height=8, image_width=8,
               voxel_size=(1.0, 1.0), angular_spacing=0.5)
    cfg[field] = value
    with pytest.raises(GeometryError):
        make_geometry(**cfg)


def test_narrow_detector_rejected():
    with pytest.raises(GeometryError, match="cover"):
        make_geometry(362.0, 362.0, 360, (0, 360), 101, 256, 256, (1.0, 1.0), angular_spacing=0.1)


def test_desk_scale_detector_count_covers_fov():
    n = G.detectors_for_coverage(100.0, 64, 64, (0.5, 0.5), 0.3)
    g = make_geometry(100.0, 100.0, 90, (0, 360), n, 64, 64, (0.5, 0.5), angular_spacing=0.3)
    # independent check: project each corner at every angle by explicit trigonometry
    gmax = math.radians(0.3) * (n - 1) / 2
    for beta in g.angles():
        sx, sy = 100.0 * math.cos(beta), 100.0 * math.sin(beta)
        for cx in (-16.0, 16.0):
            for cy in (-16.0, 16.0):
                to_c = math.atan2(cy - sy, cx - sx)
                to_o = math.atan2(-sy, -sx)
                gam = (to_c - to_o + math.pi) % (2 * math.pi) - math.pi
                assert abs(gam) <= gmax
    # one element fewer on each side no longer covers
    with pytest.raises(GeometryError):
        make_geometry(100.0, 100.0, 90, (0, 360), n - 2, 64, 64, (0.5, 0.5), angular_spacing=0.3)


def test_central_ray_passes_through_origin(geom16):
    r = ray_for(geom16, 0, geom16.num_detectors // 2)
    # distance from origin to the line through source along direction
    s, d = r.source_point, r.unit_direction
    dist = abs(s[0] * d[1] - s[1] * d[0])
    assert dist < 1e-9


def test_ray_directions_are_unit(geom16):
    for a in range(geom16.num_angles):
        for k in (0, geom16.num_detectors - 1, 3):
            assert abs(np.linalg.norm(ray_for(geom16, a, k).unit_direction) - 1) < 1e-12


def test_half_turn_negates_central_direction():
    g = small_geometry(n_angles=36)
    c = g.num_detectors // 2
    d0 = ray_for(g, 0, c).unit_direction
    d18 = ray_for(g, 18, c).unit_direction
    np.testing.assert_allclose(d18, -d0, atol=1e-12)


def test_ray_for_index_errors(geom16):
    with pytest.raises(IndexError):
        ray_for(geom16, geom16.num_angles, 0)
    with pytest.raises(IndexError):
        ray_for(geom16, 0, -1)


def test_missing_ray_gives_no_samples():
    g = small_geometry()
    r = G.Ray(np.array([100.0, 100.0]), np.array([1.0, 0.0]), 0, 0)
    assert sample_ray(g, r) == []


def test_central_ray_sample_count():
    n = G.detectors_for_coverage(200.0, 64, 64, (1.0, 1.0), 0.5)
    g = make_geometry(200.0, 200.0, 4, (0, 360), n, 64, 64, (1.0, 1.0), angular_spacing=0.5)
    pts = sample_ray(g, ray_for(g, 0, n // 2))
    assert abs(len(pts) - 64) <= 1
    assert all(p.weight == 1.0 for p in pts)


def test_normalized_positions_inside_unit_square(geom16):
    a, k = G.all_ray_indices(geom16)
    src, d = G.ray_arrays(geom16, a, k)
    s = sample_rays(geom16, src, d)
    assert s.normalized.min() >= 0.0 and s.normalized.max() <= 1.0


def test_normalization_is_linear_map_of_box(geom16):
    x0, x1, y0, y1 = geom16.box
    pts = np.array([[x0, y1], [x1, y0], [0.0, 0.0]])
    np.testing.assert_allclose(G.to_normalized(geom16, pts), [[0, 0], [1, 1], [0.5, 0.5]])


def _chord(geom, src, d):
    """Brute-force chord length by dense stepping through the box."""
    x0, x1, y0, y1 = geom.box
    t = np.linspace(0, 2 * geom.source_to_center, 400001)
    p = src + t[:, None] * d
    inside = (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)
    return inside.sum() * (t[1] - t[0])


def test_weights_sum_to_chord(geom16):
    for a, k in [(0, 0), (3, 5), (7, geom16.num_detectors // 2), (20, 40)]:
        r = ray_for(geom16, a, min(k, geom16.num_detectors - 1))
        w = sum(p.weight for p in sample_ray(geom16, r))
        assert abs(w - _chord(geom16, r.source_point, r.unit_direction)) <= geom16.delta_x + 1e-3


def test_sample_ray_is_pure(geom16):
    r = ray_for(geom16, 5, 10)
    assert sample_ray(geom16, r) == sample_ray(geom16, r)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 23), st.floats(0.0, 1.0), st.floats(0.3, 2.0))
def test_weight_sum_property(a, kfrac, dx):
    g = small_geometry()
    k = int(kfrac * (g.num_detectors - 1))
    r = ray_for(g, a, k)
    s = sample_rays(g, r.source_point, r.unit_direction, dx)
    t0, t1 = G._box_intersections(g, r.source_point[None], r.unit_direction[None])
    chord = max(float(t1[0] - t0[0]), 0.0)
    assert abs(s.counts[0] * dx - chord) <= dx


def test_disk_projection_matches_analytic_chord():
    n = G.detectors_for_coverage(200.0, 64, 64, (1.0, 1.0), 0.25)
    g = make_geometry(200.0, 200.0, 12, (0, 360), n, 64, 64, (1.0, 1.0), angular_spacing=0.25)
    from polyct.phantom import disk_line_integrals
    mu, R = 0.02, 20.0
    p = disk_line_integrals(g, [((0, 0), R, mu)])
    a, k = G.all_ray_indices(g)
    src, d = G.ray_arrays(g, a, k)
    dist = np.abs(src[:, 0] * d[:, 1] - src[:, 1] * d[:, 0])
    expected = 2 * mu * np.sqrt(np.maximum(R ** 2 - dist ** 2, 0))
    assert np.all(np.abs(p.ravel() - expected) <= 2 * g.delta_x * mu)


def test_geometry_json_roundtrip(geom16):
    d = json.loads(geom16.to_json())
    assert set(d) >= {"source_to_center", "center_to_detector", "num_angles", "angle_range",
                      "num_detectors", "detector_arrangement", "angular_spacing",
                      "image_height", "image_width", "voxel_size", "sample_spacing"}
    assert G.FanBeamGeometry.from_dict(d) == geom16


def test_equispaced_geometry():
    g = make_geometry(92.602, 65.946, 10, (0, 360), 700, 64, 64, (0.05, 0.05),
                      detector_arrangement="equispaced", detector_spacing=0.069)
    r = ray_for(g, 0, 350)
    assert abs(np.linalg.norm(r.unit_direction) - 1) < 1e-12
