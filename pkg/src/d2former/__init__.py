"""Complex-valued dual-path speech enhancement built on a small numpy autodiff core."""
from .ctensor import ComplexTensor, ContractError, DimensionError, RealTensor
from .model import D2Former, D2FormerConfig, count_params, load_checkpoint, save_checkpoint

__all__ = ["ComplexTensor", "RealTensor", "ContractError", "DimensionError", "D2Former", "D2FormerConfig",
           "count_params", "load_checkpoint", "save_checkpoint"]
__version__ = "0.1.0"
