"""Cylinder and cuboid proxy geometry for two-person collision handling.

Fit primitives to a body mesh, detect surface samples of one person inside
the other's primitives, turn them into antipodal guidance targets, and
refine joint positions until the two people no longer overlap.
"""

from types import ModuleType as _ModuleType

__version__ = "0.1.0"

from .bench import BenchConfig, BenchReport, run_bench
from .collision import (CollisionPoint, CollisionReport, build_models, detect_batch, detect_frame,
                        detect_positions, detect_sequence, pose_pair)
from .fitting import FitConfig, FitReport, assign_regions, fit_loss, fit_proxies
from .guidance import (GuidanceVector, LossOutput, aggregate_directions, chain_to_joints,
                       collision_loss, group_direction, guidance_vector)
from .mesh import TriangleMesh, load_obj, save_obj
from .metrics import PlausibilityMetrics, coll_metrics, mesh_contains, proxy_vs_mesh_agreement
from .primitives import (CUBOID, CYLINDER, Cuboid, Cylinder, ProxyParams, SegmentProxy, antipodal,
                         contains, load_proxy_params, penetration_depth, sample_surface,
                         save_proxy_params)
from .resolve import ResolveConfig, ResolveReport, resolve_sequence
from .skeleton import (BodyModel, MotionSequence, Skeleton, default_proxy_params,
                       default_rest_pose, default_skeleton, load_motion, load_skeleton,
                       place_proxies, save_motion, segment_frames)

__all__ = [name for name, value in globals().items()
           if not name.startswith("_") and not isinstance(value, _ModuleType)]
