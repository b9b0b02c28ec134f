"""sounder3d: synthetic 3D-MIMO channel sounding and post-processing toolkit."""

__version__ = "0.1.0"

from .arrays import (
    SPEED_OF_LIGHT,
    ArraySpec,
    Direction,
    PatternModel,
    SteeringVector,
    build_rectangular,
    build_reference_antenna,
    build_virtual_cylinder,
    steering_vector,
)
from .channel import (
    FrequencyGrid,
    Mpc,
    ScenarioRanges,
    TransferTensor,
    add_noise,
    flatten_tensor,
    load_tensor,
    sample_scenario,
    save_tensor,
    synthesize,
)
from .clean import CleanConfig, ExtractionResult, extract, match_mpcs
from .config import ConfigError, ExperimentConfig, seed_stream
from .drift import RotorPhaseEstimate, apply_correction, estimate, estimate_reference
from .metrics import (
    CapacityReport,
    SpreadStats,
    angular_spread,
    capacity_single,
    capacity_two_user,
    detector_weights,
    reconstruct_channel,
    separability,
    spread_stats,
)
from .prep import average_snapshots, correlation_matrix, filter_outliers, suppress_outliers
from .sounder import (
    DriftTrace,
    OutlierConfig,
    Schedule,
    acquire,
    make_schedule,
    realize_drift,
)
