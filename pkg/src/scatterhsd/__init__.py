"""Joint completion and hierarchical self-distillation for scattered point clouds."""

from .errors import InvalidInput, NumericsError, ParseError, ScatterHSDError, ShapeError
from .geometry import NeighborIndex, PointCloud, chamfer, fps, knn, nearest_map, normalize
from .scatter import ScatterConfig, multi_view, scatter_sample

__version__ = "0.1.0"

__all__ = [
    "InvalidInput", "NumericsError", "ParseError", "ScatterHSDError", "ShapeError",
    "NeighborIndex", "PointCloud", "chamfer", "fps", "knn", "nearest_map", "normalize",
    "ScatterConfig", "multi_view", "scatter_sample",
]
