"""dtofkit: simulation, projection, evaluation and refinement for dToF depth."""

__version__ = "0.1.0"

from .core import (
    CameraModel,
    CameraRig,
    DepthMap,
    DToFGrid,
    FovRegion,
    SparseDepth,
    fov_coverage,
    make_depth_map,
)
from .errors import (
    BehindCameraError,
    DegenerateFitError,
    DtofkitError,
    EmptyMaskError,
    FormatError,
    NumericError,
    ValidationError,
)
from .metrics import (
    EdgeWeightParams,
    MetricReport,
    affine_invariant_loss,
    basic_metrics,
    edge_weights,
    evaluate,
    ewmae,
    valid_mask,
)
from .projection import (
    ProjectionStats,
    RigidTransform,
    compose_transform,
    dtof_cell_to_point,
    project_dtof_frame,
    project_point,
    transform_point,
)
from .refine import (
    AffinityField,
    AggregationWeights,
    DepthBins,
    ScaleShiftFit,
    bin_centers,
    bins_to_depth,
    fit_scale_shift,
    inverse_to_relative,
    propagate_step,
    refine,
)
from .simulation import (
    SimConfig,
    SimStats,
    apply_base_loss,
    apply_calibration_shift,
    apply_long_distance,
    apply_low_reflectivity,
    apply_non_lambertian,
    apply_random_anomalies,
    builtin_profiles,
    load_profile,
    preprocess_hypersim,
    sample_grid_points,
    simulate_dtof,
    stage_rng,
)

__all__ = [name for name in dir() if not name.startswith("_")]
