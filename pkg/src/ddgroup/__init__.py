"""Find axis-aligned subgroups of a regression dataset where one linear model is well specified."""

from __future__ import annotations

__version__ = "0.1.0"

from .coregroup import CoreGroup, core_size, find_core_group
from .dataset import Dataset, DatasetError, SplitSpec, from_arrays, load_csv, split, standardize_fit
from .numerics import LinearFit, RankDeficientError, ols
from .pipeline import (GroupReport, PipelineConfig, SelectionError, ThresholdRule, fit_multi,
                       quantile_select, sweep)
from .region import Box, Region, box_of, grow_box, preset_directions
from .synth import SynthConfig, generate, score_region

__all__ = [
    "__version__", "Box", "CoreGroup", "Dataset", "DatasetError", "GroupReport", "LinearFit",
    "PipelineConfig", "RankDeficientError", "Region", "SelectionError", "SplitSpec", "SynthConfig",
    "ThresholdRule", "box_of", "core_size", "find_core_group", "fit_multi", "from_arrays", "generate",
    "grow_box", "load_csv", "ols", "preset_directions", "quantile_select", "score_region", "split",
    "standardize_fit", "sweep",
]
