"""Implicit multi-camera calibration with Gaussian processes.

Learns the direct mapping from concatenated per-camera pixel coordinates to
3D world coordinates, with per-prediction uncertainty and an
uncertainty-sampling active-learning loop, validated against a synthetic
camera-rig simulator.
"""

__version__ = "0.1.0"

from .gp import (  # noqa: F401
    SE,
    SE_ARD,
    Dataset,
    FitConfig,
    FittedGP,
    Hyperparameters,
    KernelSpec,
    Posterior,
    StandardizationParams,
    condition,
    fit,
    gram_matrix,
    kernel_eval,
    log_marginal_likelihood,
    mll_gradient,
    posterior_predict,
    posterior_predict_batch,
    recondition,
)
from .calibration import (  # noqa: F401
    CorrespondenceSet,
    ImplicitCalibration,
    PredictedPoint,
    RmseReport,
    evaluate_rmse,
    predict_point,
    read_correspondence_csv,
    split_dataset,
    train_calibration,
    write_correspondence_csv,
)
from .rig import (  # noqa: F401
    CameraModel,
    CheckerboardSpec,
    Distortion,
    GridSpec,
    ProjectionStatus,
    RigConfig,
    default_checkerboard_rig,
    default_grid_rig,
    generate_checkerboard_dataset,
    generate_grid_dataset,
    project_point,
    query_oracle,
    triangulate_baseline,
)
from .mlp import MlpConfig, MlpModel, MlpSpec, mlp_predict, mlp_train  # noqa: F401
from .active import AlConfig, AlRecord, AlTrace, CandidatePool, acquire_next, run_active_learning  # noqa: F401
from .align import AlignmentReport, RigidTransform, icp_align, kabsch_align  # noqa: F401
