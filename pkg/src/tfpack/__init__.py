"""Threshold Filtering Packing for supervised fine-tuning data.

Orders samples along a greedy nearest-neighbour path over their embeddings,
keeping each step farther than a threshold from the most recent selections,
and cuts the path into context-length-bounded packs. Baseline strategies,
fairness-aware variants and pack diagnostics live alongside.
"""

__version__ = "0.1.0"

from .dataset import Dataset, EmbedSegment, Sample, load_dataset, save_dataset, toy_embed  # noqa: E402
from .errors import ConstraintError, InputError, TfpError  # noqa: E402
from .geometry import DistanceStats, calibrate_threshold, distance, pairwise_stats  # noqa: E402
from .tfp import (  # noqa: E402
    Pack,
    PathOrder,
    RepetitionStats,
    TfpConfig,
    build_tfp_path,
    segment_into_packs,
    select_next,
)
from .strategies import Manifest, StrategyKind, StrategySpec, run_strategy  # noqa: E402

__all__ = [
    "ConstraintError",
    "Dataset",
    "DistanceStats",
    "EmbedSegment",
    "InputError",
    "Manifest",
    "Pack",
    "PathOrder",
    "RepetitionStats",
    "Sample",
    "StrategyKind",
    "StrategySpec",
    "TfpConfig",
    "TfpError",
    "build_tfp_path",
    "calibrate_threshold",
    "distance",
    "load_dataset",
    "pairwise_stats",
    "run_strategy",
    "save_dataset",
    "segment_into_packs",
    "select_next",
    "toy_embed",
]
