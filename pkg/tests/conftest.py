import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from proxycoll.collision import build_models, detect_batch, pose_pair
from proxycoll.primitives import CUBOID, CYLINDER, ProxyParams, SegmentProxy
from proxycoll.skeleton import Joint, Segment, Skeleton

settings.register_profile("proxycoll", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("proxycoll")


def chain_skeleton(kinds):
    """A straight joint chain with one segment per entry of ``kinds``."""
    joints = [Joint("j0", None)] + [Joint(f"j{i + 1}", i) for i in range(len(kinds))]
    segs = [Segment(f"s{i}", i, i + 1, k) for i, k in enumerate(kinds)]
    return Skeleton(joints, segs)


def chain_params(kinds, rng):
    out = []
    for k in kinds:
        if k == CYLINDER:
            out.append(SegmentProxy(CYLINDER, r=rng.uniform(0.04, 0.08)))
        else:
            out.append(SegmentProxy(CUBOID, half_extents=tuple(rng.uniform(0.04, 0.08, 3))))
    return ProxyParams(out, {CYLINDER: 12, CUBOID: 16})


def chain_pose(n_seg, rng):
    """Wiggly chain of bones 0.2 to 0.35 m long."""
    j = np.zeros((n_seg + 1, 3))
    d = np.array([0.0, 0.0, 1.0])
    for i in range(n_seg):
        d = d + rng.normal(scale=0.5, size=3)
        d /= np.linalg.norm(d)
        j[i + 1] = j[i] + rng.uniform(0.2, 0.35) * d
    return j


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def small_scene(seed, max_segments=4, frames=1):
    """Two random chains placed so that they interpenetrate.

    Returns ``(skeleton, params, models, positions)`` with positions
    (frames, 2, N, 3) and at least one collision point in frame 0.
    """
    rng = np.random.default_rng(seed)
    n_seg = int(rng.integers(1, max_segments + 1))
    kinds = [str(k) for k in rng.choice([CYLINDER, CUBOID], size=n_seg)]
    sk = chain_skeleton(kinds)
    params = (chain_params(kinds, rng), chain_params(kinds, rng))
    while True:
        a = chain_pose(n_seg, rng)
        b = chain_pose(n_seg, rng)
        # put a random point of B's chain near a random point of A's chain
        ia, ib = rng.integers(n_seg), rng.integers(n_seg)
        pa = a[ia] + rng.uniform(0.3, 0.7) * (a[ia + 1] - a[ia])
        pb = b[ib] + rng.uniform(0.3, 0.7) * (b[ib + 1] - b[ib])
        b = b + (pa - pb) + rng.normal(scale=0.02, size=3)
        pos = np.stack([a, b])[None]
        if frames > 1:
            drift = np.linspace(0.0, 0.03, frames)[:, None, None, None] * rng.normal(size=3)
            pos = pos + drift
        models = build_models(sk, params, pos[0])
        if len(detect_batch(*pose_pair(models, pos[:1]))):
            return sk, params, models, pos


CYL_BOX = chain_skeleton([CYLINDER, CUBOID])


def cylinder_through_box():
    """A's cylinder runs along +x through B's cuboid; everything else is far."""
    params = ProxyParams([SegmentProxy(CYLINDER, r=0.05),
                          SegmentProxy(CUBOID, half_extents=(0.2, 0.2, 0.2))],
                         {CYLINDER: 30, CUBOID: 36})
    a = np.array([[-0.1, 0.0, 0.0], [0.2, 0.0, 0.0], [5.0, 5.0, 5.0]])   # cylinder = segment 0
    b = np.array([[-3.0, 0.0, 0.0], [0.0, 0.0, -0.2], [0.0, 0.0, 0.2]])  # box = segment 1
    pos = np.stack([a, b])[None]
    return build_models(CYL_BOX, (params, params), pos[0]), pos


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def frozen_fd_error(models, pos, mode="per_point", h=1e-6):
    """Relative error of chain_to_joints against central differences of the
    frozen-target objective (targets fixed at ``pos``)."""
    from proxycoll.guidance import chain_to_joints, collision_loss

    posed = pose_pair(models, pos)
    report = detect_batch(*posed)
    loss = collision_loss(report, posed, mode)
    targets = loss.targets

    def objective(j):
        moved = pose_pair(models, j)
        pts = np.empty_like(targets)
        for person in (0, 1):
            sel = report.host_person == person
            pts[sel] = moved[person].samples[report.frame[sel], report.sample_flat[sel]]
        return float(np.sum((targets - pts)[loss.included] ** 2))

    analytic = chain_to_joints(loss, report, models, pos)
    numeric = np.zeros_like(pos)
    for idx in np.ndindex(pos.shape):
        up, down = pos.copy(), pos.copy()
        up[idx] += h
        down[idx] -= h
        numeric[idx] = (objective(up) - objective(down)) / (2 * h)
    # Symmetric point pairs can cancel exactly, leaving a zero joint gradient
    # that central differences only resolve to roundoff (about 1e-10).  The
    # floor keeps the ratio defined there without loosening it elsewhere.
    floor = 1e-4 * np.linalg.norm(loss.grad_samples[loss.included])
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), floor, 1e-12), len(report)
