import numpy as np
import pytest

from proxycoll.collision import build_models
from proxycoll.fitting import fit_proxies
from proxycoll.mesh import TriangleMesh, box_mesh, icosphere
from proxycoll.metrics import (coll_metrics, grid_contains, mesh_contains, metrics_from_reports,
                               proxy_vs_mesh_agreement)
from proxycoll.primitives import CUBOID, CYLINDER, ProxyParams, SegmentProxy
from proxycoll.skeleton import BodyModel, MotionSequence
from proxycoll.synthetic import (CAPSULE_RADII, capsule_body, capsule_proxies, capsule_rest_pose,
                                 capsule_skeleton, cylinder_body)

from conftest import CYL_BOX, cylinder_through_box

AWAY = np.array([0.75, 0.06, 0.03])   # second body overlaps the first at the arms


def test_disjoint_people_score_zero():
    models, pos = cylinder_through_box()
    pos = np.repeat(pos, 3, axis=0)
    pos[:, 1] += 10.0
    m = coll_metrics(MotionSequence(pos), None, CYL_BOX, models=models)
    assert m.coll_dis == 0.0 and m.coll_ro == 0.0
    assert m.per_frame_depth.tolist() == [0.0] * 3


def test_constant_overlap_collides_every_frame():
    models, pos = cylinder_through_box()
    m = coll_metrics(MotionSequence(np.repeat(pos, 5, axis=0)), None, CYL_BOX, models=models)
    assert m.coll_ro == 1.0
    assert m.coll_dis == pytest.approx(5 * m.per_frame_depth[0])


def test_one_sample_three_centimeters_deep():
    counts = {CYLINDER: 1, CUBOID: 1}
    params = ProxyParams([SegmentProxy(CYLINDER, r=0.05),
                          SegmentProxy(CUBOID, half_extents=(0.2, 0.2, 0.2))], counts)
    a = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.5], [5.0, 5.0, 5.0]])
    probe = BodyModel(CYL_BOX, params, ref_lengths=[0.5, 1.0]).pose(a).samples[0, 0]
    # B's cube is centered 17 cm from A's only sample, along a box axis
    center = probe + [0.17, 0.0, 0.0]
    b = np.array([center - [0, 0, 2.2], center - [0, 0, 0.2], center + [0, 0, 0.2]])
    pos = np.stack([a, b])[None]
    models = build_models(CYL_BOX, (params, params), pos[0])
    m = coll_metrics(MotionSequence(pos), None, CYL_BOX, models=models)
    assert m.per_frame_depth.tolist() == pytest.approx([0.03], abs=1e-12)
    assert m.coll_dis == pytest.approx(0.03, abs=1e-12)


def test_metrics_from_empty_sequence():
    m = metrics_from_reports([])
    assert m.coll_dis == 0.0 and m.coll_ro == 0.0
    assert m.to_dict() == {"coll_dis": 0.0, "coll_ro": 0.0, "per_frame_depth": []}


def test_unit_cube_mesh_contains():
    cube = box_mesh()
    for method in ("winding", "parity"):
        assert mesh_contains(cube, (0, 0, 0), method)
        assert not mesh_contains(cube, (2, 0, 0), method)


def test_open_mesh_rejected():
    cube = box_mesh()
    open_cube = TriangleMesh(cube.vertices, cube.faces[:-1])
    with pytest.raises(ValueError, match="open mesh"):
        mesh_contains(open_cube, (0, 0, 0))


def test_icosphere_against_the_analytic_ball(rng):
    sphere = icosphere(3)
    # largest gap between the tessellation and the true sphere
    centroids = sphere.triangles.mean(axis=1)
    deviation = 1.0 - np.linalg.norm(centroids, axis=1).min()
    pts = rng.uniform(-1.3, 1.3, (10_000, 3))
    r = np.linalg.norm(pts, axis=1)
    far = np.abs(r - 1.0) > 2 * deviation
    inside = mesh_contains(sphere, pts)
    assert np.array_equal(inside[far], (r < 1.0)[far])
    parity = mesh_contains(sphere, pts, method="parity")
    assert np.array_equal(parity[far], inside[far])


def test_grid_contains_matches_winding(rng):
    sphere = icosphere(2, radius=0.4)
    xs = ys = zs = np.linspace(-0.5, 0.5, 11) + 0.0123
    grid = grid_contains(sphere, xs, ys, zs)
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), -1).reshape(-1, 3)
    assert np.array_equal(grid.ravel(), mesh_contains(sphere, pts))


@pytest.fixture(scope="module")
def capsule_pair():
    rest = capsule_rest_pose()
    return capsule_skeleton(), rest, np.stack([rest, rest + AWAY])


def test_exact_proxies_agree_with_their_meshes(capsule_pair):
    sk, rest, pose = capsule_pair
    meshes = [cylinder_body(), cylinder_body(pose=rest + AWAY)]
    p = capsule_proxies()
    out = proxy_vs_mesh_agreement(meshes, [p, p], sk, pose, resolution=0.01)
    for key in ("person0", "person1", "collision"):
        assert out[key]["precision"] == 1.0 and out[key]["recall"] == 1.0
    assert out["collision"]["tp"] > 0


def test_undersized_proxies_lose_recall(capsule_pair):
    sk, rest, pose = capsule_pair
    meshes = [cylinder_body(), cylinder_body(pose=rest + AWAY)]
    half = capsule_proxies({k: v / 2 for k, v in CAPSULE_RADII.items()})
    out = proxy_vs_mesh_agreement(meshes, [half, half], sk, pose, resolution=0.01)
    assert out["person0"]["recall"] < 1.0
    assert out["collision"]["recall"] < 1.0


def test_fitted_proxies_recall_collisions(capsule_pair):
    sk, rest, pose = capsule_pair
    mesh, _ = capsule_body()
    fitted, _ = fit_proxies(mesh, sk, rest)
    meshes = [mesh, mesh.transformed(translation=AWAY)]
    out = proxy_vs_mesh_agreement(meshes, [fitted, fitted], sk, pose, resolution=0.005)
    assert out["collision"]["recall"] >= 0.9
