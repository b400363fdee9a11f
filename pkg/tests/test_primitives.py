import json

import numpy as np
import pytest

from proxycoll.primitives import (CUBOID, CYLINDER, Cuboid, Cylinder, ProxyParams, SegmentProxy,
                                  allocate_counts, antipodal, contains, contains_cuboid,
                                  contains_cylinder, load_proxy_params, penetration_depth,
                                  sample_surface, save_proxy_params, surface_distance)

from conftest import random_rotation

UNIT_CUBE = Cuboid(np.zeros(3), np.eye(3), np.full(3, 0.5))
Z_CYL = Cylinder(np.zeros(3), np.array([0.0, 0.0, 1.0]), h=1.0, r=0.1)


def test_cube_contains_its_center_only():
    assert contains_cuboid(UNIT_CUBE, [0, 0, 0])
    assert not contains_cuboid(UNIT_CUBE, [0.6, 0, 0])


def test_cylinder_examples():
    assert contains_cylinder(Z_CYL, [0, 0, 0.5])
    assert not contains_cylinder(Z_CYL, [0.2, 0, 0.5])
    assert contains_cylinder(Z_CYL, [0.05, 0.05, 0.99])
    assert not contains_cylinder(Z_CYL, [0, 0, 1.01])


def test_rotated_cuboid_against_half_spaces(rng):
    c, s = np.cos(np.radians(30)), np.sin(np.radians(30))
    basis = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    half = np.array([0.3, 0.2, 0.1])
    box = Cuboid(np.array([0.1, -0.2, 0.3]), basis, half)
    pts = rng.uniform(-0.6, 0.8, size=(10_000, 3))
    # independent oracle: six planes n.x <= d with outward normals
    inside = np.ones(len(pts), dtype=bool)
    for k in range(3):
        n = basis[:, k]
        d = n @ box.center
        inside &= (pts @ n < d + half[k]) & (pts @ n > d - half[k])
    assert np.array_equal(contains(box, pts), inside)


def test_cuboid_rejects_non_orthonormal_basis():
    with pytest.raises(ValueError):
        Cuboid(np.zeros(3), np.diag([1.0, 2.0, 1.0]), np.ones(3))
    with pytest.raises(ValueError):
        Cylinder(np.zeros(3), np.array([0.0, 0.0, 2.0]), 1.0, 0.1)


def test_boundary_points_are_outside():
    assert not contains_cuboid(UNIT_CUBE, [0.5, 0, 0])
    assert not contains_cylinder(Z_CYL, [0.1, 0, 0.5])


def test_cylinder_samples_lie_on_surface():
    s = sample_surface(CYLINDER, (0.05, 0.4), 30)
    assert s.n == 30
    assert np.max(np.abs(surface_distance(CYLINDER, (0.05, 0.4), s.local_points))) < 1e-12


def test_single_sample_lands_on_largest_region():
    s = sample_surface(CYLINDER, (0.05, 0.5), 1)
    assert s.region.tolist() == [0]     # the lateral band
    s = sample_surface(CUBOID, (0.1, 0.3, 0.2), 1)
    assert abs(s.local_points[0, 0]) == pytest.approx(0.1)   # on an x face, the largest pair


def test_cube_face_counts_balanced():
    s = sample_surface(CUBOID, (0.5, 0.5, 0.5), 64)
    counts = np.bincount(s.region, minlength=6)
    assert counts.sum() == 64
    assert counts.max() - counts.min() <= 1


def test_zero_samples_rejected():
    with pytest.raises(ValueError, match="empty"):
        sample_surface(CYLINDER, (0.1, 1.0), 0)
    with pytest.raises(ValueError):
        sample_surface("sphere", (0.1,), 3)


def test_sampling_is_deterministic():
    a = sample_surface(CUBOID, (0.1, 0.2, 0.3), 36, seed=4)
    b = sample_surface(CUBOID, (0.1, 0.2, 0.3), 36, seed=4)
    assert np.array_equal(a.local_points, b.local_points)


def test_allocate_counts_sums_and_tie_break():
    assert allocate_counts(10, [1, 1, 1]).tolist() == [4, 3, 3]
    assert allocate_counts(7, [2.0, 1.0]).sum() == 7


def test_antipodal_examples():
    assert np.allclose(antipodal(CYLINDER, (0.1, 1.0), (0.1, 0, 0.5)), (-0.1, 0, 0.5))
    assert np.allclose(antipodal(CUBOID, (0.1, 0.2, 0.3), (0.1, 0, 0)), (-0.1, 0, 0))
    assert np.allclose(antipodal(CYLINDER, (0.05, 1.0), (0.05, 0, 1.0)), (-0.05, 0, 1.0))


def test_antipodal_errors():
    with pytest.raises(ValueError, match="axis"):
        antipodal(CYLINDER, (0.1, 1.0), (0.0, 0.0, 1.0))
    with pytest.raises(ValueError, match="surface"):
        antipodal(CUBOID, (0.1, 0.2, 0.3), (0.0, 0.0, 0.0))


def test_penetration_depth_examples():
    assert penetration_depth(CUBOID, (0.5, 0.5, 0.5), (0, 0, 0)) == pytest.approx(0.5)
    assert penetration_depth(CYLINDER, (0.1, 1.0), (0.02, 0, 0.5)) == pytest.approx(0.08)
    with pytest.raises(ValueError, match="interior"):
        penetration_depth(CUBOID, (0.5, 0.5, 0.5), (0.7, 0, 0))


@pytest.mark.parametrize("kind, dims", [(CYLINDER, (0.1, 0.6)), (CUBOID, (0.1, 0.2, 0.3))])
def test_penetration_depth_against_dense_surface_samples(rng, kind, dims):
    dense = sample_surface(kind, dims, 40_000).local_points
    if kind == CYLINDER:
        pts = np.column_stack([rng.uniform(-0.07, 0.07, (1000, 2)), rng.uniform(0.05, 0.55, 1000)])
    else:
        pts = rng.uniform(-0.09, 0.09, (1000, 3)) * [1, 2, 3]
    depth = penetration_depth(kind, dims, pts)
    for p, d in zip(pts, depth):
        oracle = np.min(np.linalg.norm(dense - p, axis=1))
        assert abs(oracle - d) < 1e-3


def test_proxy_params_json_round_trip(tmp_path):
    params = ProxyParams([SegmentProxy(CYLINDER, r=0.05, h_scale=1.2),
                          SegmentProxy(CUBOID, half_extents=(0.1, 0.2, 0.3), ref_length=0.4)])
    path = tmp_path / "p.json"
    save_proxy_params(params, path)
    back = load_proxy_params(path)
    assert back.to_dict() == params.to_dict()
    assert json.loads(path.read_text())["schema"] == "proxycoll/1"


def test_proxy_params_reject_unknown_keys():
    with pytest.raises(ValueError, match="unknown proxy key"):
        SegmentProxy.from_dict({"kind": CYLINDER, "r": 0.1, "radius": 0.1})
    with pytest.raises(ValueError):
        SegmentProxy(CYLINDER, r=-1.0)


def test_random_dims_rotated_cylinders_against_analytic_oracle(rng):
    for _ in range(20):
        rot = random_rotation(rng)
        a, r, h = rng.normal(size=3), rng.uniform(0.02, 0.3), rng.uniform(0.1, 1.0)
        cyl = Cylinder(a, rot[:, 2], h, r)
        pts = a + rng.uniform(-0.5, 1.2, size=(500, 3)) * [r * 2, r * 2, h] @ rot.T
        w = pts - a
        z = w @ rot[:, 2]
        radial = np.linalg.norm(w - z[:, None] * rot[:, 2], axis=1)
        oracle = (radial < r) & (z >= 0) & (z <= h)
        assert np.array_equal(contains(cyl, pts), oracle)
