"""Multi-modal multi-view fundus fusion network on a numpy autodiff core."""

from .tensor import Tensor, ShapeError

__all__ = ["Tensor", "ShapeError"]
__version__ = "0.1.0"
