"""Global localization of a sliding touch sensor on a known object mesh.

A particle filter over SE(3) sensor poses whose measurement model compares
fixed-length codes of locally sensed geometry against a precomputed
per-object codebook.
"""

from .codebook import (
    Codebook,
    build_codebook,
    load_codebook,
    save_codebook,
    single_touch_error,
    single_touch_errors,
)
from .codes import CodeConfig, NoContactError, code_similarity, encode, random_code
from .harness import (
    RunSummary,
    TrajectoryConfig,
    TrajectoryLog,
    ablation_suite,
    generate_dataset,
    load_trajectory,
    run_localization,
    save_trajectory,
)
from .mesh import MeshError, SurfaceIndex, TriMesh, load_mesh, surface_distance
from .particle_filter import (
    FilterConfig,
    FilterState,
    HypothesisSet,
    ParticleDepletionError,
    ParticleSet,
    adapt_count,
    cluster_hypotheses,
    filter_step,
    init_filter,
    init_particles,
    measurement_update,
    min_cluster_errors,
    motion_update,
    particle_errors,
    prune_off_surface,
    resample_low_variance,
)
from .primitives import bracket_mesh, box_mesh, cylinder_mesh, icosphere_mesh, primitive_mesh
from .sampling import geodesic_path, sample_contact_poses
from .se3 import Pose, rot_exp, rot_log
from .sensor import SensorConfig, extract_contact, render_touch

__version__ = "0.1.0"
