"""Radar moving-instance segmentation.

Thin wrapper over the native core. Arrays are converted to float64; point
arrays have three columns.
"""

import json

from ._core import (
    assign_instances,
    brute_force_partition,
    fps,
    idw_interpolate,
    knn,
    modularity,
    partition_graph,
    radius_neighbors,
    run,
)
from . import _core

__all__ = [
    "assign_instances",
    "brute_force_partition",
    "config",
    "fps",
    "idw_interpolate",
    "knn",
    "modularity",
    "panoptic_eval",
    "partition_graph",
    "radius_neighbors",
    "run",
]

__version__ = "0.1.0"


def panoptic_eval(pred_instances, gt_instances):
    """Scores one scan. Instance ids per point, -1 for static points."""
    return json.loads(_core.panoptic_eval_json(list(pred_instances), list(gt_instances)))


def config(preset="default"):
    """Pipeline configuration as a dict."""
    return json.loads(_core.config_json(preset))
