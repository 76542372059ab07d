"""Nonlinear blind source separation from local velocity statistics.

The package turns a multichannel time series into a trajectory of
states and velocities, estimates per-bin velocity-correlation frames,
aligns them into a global vector field, integrates candidate unmixing
coordinates along the field, and tests whether any candidate makes the
transformed data statistically independent.
"""

__version__ = "0.1.0"

from .binning import BinGrid, build_grid
from .config import PipelineConfig
from .errors import (
    AlignmentError,
    ConfigError,
    ConstructionFailure,
    CoverageError,
    DegeneracyError,
    DomainError,
    FormatError,
    InsufficientDataError,
    OutOfDomainError,
    ParseError,
    ShapeError,
    VelobssError,
)
from .flowcoords import (
    CoordinateMap,
    LatticeSpec,
    Partition,
    TransformedSeries,
    build_coordinate,
    enumerate_partitions,
    field_at,
    trace_streamline,
    transform_series,
)
from .localframes import (
    FrameField,
    LocalFrame,
    align_frames,
    build_frame_matrix,
    compute_frames,
    extract_vectors,
    local_correlations,
    match_signed_permutation,
)
from .septest import (
    SeparabilityReport,
    SeparationResult,
    factorization_statistic,
    separate,
)
from .synthmix import (
    MixingSpec,
    RecoveryScore,
    evaluate_recovery,
    gen_coupled_sources,
    gen_sources,
    mix,
)
from .trajectory import (
    SignalSeries,
    Trajectory,
    WhitenTransform,
    estimate_velocity,
    load_wav,
    pca_whiten,
    save_wav,
)
