from src.autodiff.tensor import Function, Tensor, as_tensor, is_grad_enabled, no_grad
from src.autodiff.gradcheck import GradCheckReport, grad_check

__all__ = [
    "Function",
    "GradCheckReport",
    "Tensor",
    "as_tensor",
    "grad_check",
    "is_grad_enabled",
    "no_grad",
]
