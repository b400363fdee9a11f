"""Fit cylinder radii to a body built from capsules of known size.

    python demos/fit_capsule_body.py
"""
from proxycoll.fitting import fit_proxies
from proxycoll.synthetic import CAPSULE_RADII, capsule_body, capsule_rest_pose, capsule_skeleton

skeleton = capsule_skeleton()
mesh, _ = capsule_body()
print(f"capsule body: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces")

params, report = fit_proxies(mesh, skeleton, capsule_rest_pose())
print(f"fit loss {report.final_loss:.4g} after {report.iters} iterations "
      f"(converged: {report.converged})\n")
print(f"{'segment':<12}{'true r':>8}{'fitted':>8}{'error':>8}")
for seg, proxy in zip(skeleton.segments, params.segments):
    true = CAPSULE_RADII[seg.name]
    print(f"{seg.name:<12}{true:>8.3f}{proxy.r:>8.3f}{100 * (proxy.r - true) / true:>7.1f}%")
