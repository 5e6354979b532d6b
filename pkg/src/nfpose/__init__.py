"""Direct camera pose estimation from normal flow.

Estimates relative camera motion (translation direction V, rotation rate
Omega) from sparse normal-flow measurements by enforcing depth positivity,
without reconstructing scene structure. Includes a bi-level refinement layer,
trajectory metrics, dataset parsers, and a synthetic scenario generator.
"""

__version__ = "0.1.0"

from .bilevel import (
    ArgminLayer,
    CoarsePose,
    RefinedPose,
    implicit_gradient,
    refine,
    refinement_loss,
)
from .cheirality import (
    CheiralityProblem,
    PoseEstimate,
    depth_from_pose,
    objective,
    rho,
    solve_pose,
)
from .datasets import (
    ScenarioConfig,
    generate_scenario,
    load_scenario_config,
    parse_kitti_poses,
    parse_tum_trajectory,
    save_scenario_config,
    serialize_kitti_poses,
    serialize_tum_trajectory,
)
from .errors import NfposeError
from .flowfield import (
    DepthMap,
    FlowSample,
    ImagePairDerivatives,
    NormalFlowField,
    inject_noise,
    load_field,
    motion_coefficients,
    normal_flow_from_derivatives,
    project_optical_flow,
    save_field,
    synthesize_normal_flow,
)
from .geometry import (
    AbsolutePose,
    CameraIntrinsics,
    CameraMotion,
    ImagePoint,
    Trajectory,
    integrate_motions,
    interaction_matrices,
    relative_motion,
    so3_exp,
    so3_log,
)
from .metrics import (
    AlignmentResult,
    MetricReport,
    ate,
    horn_align,
    pee,
    rpe,
)
from .optimizer import (
    OptimizerConfig,
    SolveReport,
    Termination,
    minimize,
    minimize_on_sphere,
)

__all__ = [
    "__version__",
    "AbsolutePose",
    "AlignmentResult",
    "ArgminLayer",
    "CameraIntrinsics",
    "CameraMotion",
    "CheiralityProblem",
    "CoarsePose",
    "DepthMap",
    "FlowSample",
    "ImagePairDerivatives",
    "ImagePoint",
    "MetricReport",
    "NfposeError",
    "NormalFlowField",
    "OptimizerConfig",
    "PoseEstimate",
    "RefinedPose",
    "ScenarioConfig",
    "SolveReport",
    "Termination",
    "Trajectory",
    "ate",
    "depth_from_pose",
    "generate_scenario",
    "horn_align",
    "implicit_gradient",
    "inject_noise",
    "integrate_motions",
    "interaction_matrices",
    "load_field",
    "load_scenario_config",
    "minimize",
    "minimize_on_sphere",
    "motion_coefficients",
    "normal_flow_from_derivatives",
    "objective",
    "parse_kitti_poses",
    "parse_tum_trajectory",
    "pee",
    "project_optical_flow",
    "refine",
    "refinement_loss",
    "relative_motion",
    "rho",
    "rpe",
    "save_field",
    "save_scenario_config",
    "serialize_kitti_poses",
    "serialize_tum_trajectory",
    "solve_pose",
    "so3_exp",
    "so3_log",
    "synthesize_normal_flow",
]
