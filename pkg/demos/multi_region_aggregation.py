"""One arm inside two regions of the other person at once.

A forearm that pokes into both the waist and an arm of the partner gets one
guidance direction per region.  Averaging them by point count gives the
single escape direction applied to the whole segment.

    python demos/multi_region_aggregation.py
"""
import numpy as np

from proxycoll.collision import build_models, detect_batch, pose_pair
from proxycoll.guidance import aggregate_directions, collision_loss, group_direction
from proxycoll.resolve import ResolveConfig, resolve_sequence
from proxycoll.synthetic import multi_region_scene

scene = multi_region_scene()
names = [s.name for s in scene.skeleton.segments]
pos = scene.motion.positions
models = build_models(scene.skeleton, scene.params, pos[0])
posed = pose_pair(models, pos[:1])
report = detect_batch(*posed)
loss = collision_loss(report, posed, "aggregated")

for f, person, seg in loss.aggregated_keys:
    sel = (report.frame == f) & (report.host_person == person) & (report.host_segment == seg)
    sel &= loss.included
    conts = report.container_segment[sel]
    print(f"person {person} {names[seg]} sits in {len(np.unique(conts))} regions:")
    groups = []
    for c in np.unique(conts):
        d = group_direction(loss.directions[sel][conts == c])
        n = int(np.sum(conts == c))
        groups.append((n, d))
        print(f"  {names[c]:<16} {n:3d} points, direction {np.round(d, 3)}")
    print(f"  combined direction {np.round(aggregate_directions(groups), 3)}")

out, rep = resolve_sequence(scene.motion, scene.params, scene.skeleton,
                            ResolveConfig.from_preset("adaption", mode="aggregated", max_iters=500))
print(f"aggregated resolve: {rep.status} after {rep.iterations} iterations, "
      f"coll_ro {rep.before.coll_ro:.2f} -> {rep.after.coll_ro:.2f}")
