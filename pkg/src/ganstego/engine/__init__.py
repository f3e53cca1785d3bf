from .ops import DimensionError
from .optim import AdamState, adam_step
from .tensor import Tensor, no_grad, precision, record

__all__ = ["AdamState", "DimensionError", "Tensor", "adam_step", "no_grad", "precision", "record"]
