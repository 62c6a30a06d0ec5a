"""Interactive click-guided lesion segmentation engine and evaluation harness."""

from .clicks import Click, ClickCache, ClickMask, encode_clicks
from .expert import ExpertConfig, FeedbackAction, cold_start, decide
from .metrics import (
    FeedbackLedger,
    IoUStats,
    feedback_score,
    iou_stats,
    iteration_curves,
    scan_iou,
)
from .regions import (
    ErrorRegions,
    Region,
    center_of_mass,
    connected_components,
    distance_transform,
    error_regions,
    farthest_point,
    largest_region,
)
from .runner import (
    ClickConfig,
    Session,
    SplitSpec,
    SystemSpec,
    WindowConfig,
    run_experiment,
    run_system1,
    run_system2,
    run_system3,
    split_dataset,
)
from .segmenters import (
    BinarizeRule,
    ConservativeRefiner,
    OracleRefiner,
    PluginSegmenter,
    ThresholdInitialSegmenter,
    ZeroSegmenter,
    binarize,
)
from .volumes import (
    ManifestEntry,
    MaskVolume,
    PhantomSpec,
    SliceWindow,
    Volume,
    extract_window,
    generate_phantom,
    preprocess_slice,
    read_mask,
    read_volume,
    write_mask,
    write_volume,
)

__version__ = "0.1.0"
