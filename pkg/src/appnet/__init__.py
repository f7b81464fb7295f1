"""Linear-complexity point cloud classification with anchor-mediated
push/pull feature aggregation."""

from .families import Family
from .geometry import BlockPartition, PointCloud
from .network import AppNet, AppNetConfig
from .tensor import Tensor

__all__ = ["AppNet", "AppNetConfig", "BlockPartition", "Family", "PointCloud", "Tensor"]
__version__ = "0.1.0"
