import logging
from dataclasses import dataclass, field

import numpy as np

from src.autodiff.tensor import Tensor, as_tensor, no_grad
from src.core.errors import ContractError

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences."""

    max_rel_error: float
    worst_input: int
    worst_index: tuple
    checked: int
    analytic: list = field(default_factory=list, repr=False)
    numeric: list = field(default_factory=list, repr=False)

    def passed(self, tolerance=1e-5):
        return self.max_rel_error < tolerance


def _split_inputs(inputs):
    if isinstance(inputs, (list, tuple)) and inputs and all(
        isinstance(x, (Tensor, np.ndarray)) for x in inputs
    ):
        return list(inputs)
    return [inputs]


def _scalar(value):
    value = as_tensor(value)
    if value.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {value.shape}")
    return value


def grad_check(fn, inputs, h=1e-5, floor=1e-8, max_entries=None, rng=None):
    """
    Compare the gradient from ``backward()`` with (f(x+h) - f(x-h)) / 2h.

    ``inputs`` is one tensor/array or a sequence of them; ``fn`` receives one
    leaf tensor per input. The relative error of each entry is
    |a - n| / max(|a|, |n|, floor). With ``max_entries`` only that many
    randomly chosen entries of each input are perturbed.
    """
    if h <= 0:
        raise ContractError(f"grad_check step must be positive, got {h}")
    arrays = [np.array(as_tensor(x).data, dtype=np.float64, copy=True) for x in _split_inputs(inputs)]
    rng = rng if rng is not None else np.random.default_rng(0)

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = _scalar(fn(*leaves))
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def evaluate():
        with no_grad():
            return float(_scalar(fn(*(Tensor(a) for a in arrays))).data.reshape(-1)[0])

    numeric = [np.full_like(a, np.nan) for a in arrays]
    worst = (0.0, 0, ())
    checked = 0
    for i, array in enumerate(arrays):
        flat = array.reshape(-1)
        if max_entries is not None and max_entries < flat.size:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            indices = range(flat.size)
        for index in indices:
            original = flat[index]
            flat[index] = original + h
            f_plus = evaluate()
            flat[index] = original - h
            f_minus = evaluate()
            flat[index] = original

            estimate = (f_plus - f_minus) / (2.0 * h)
            numeric[i].reshape(-1)[index] = estimate
            exact = analytic[i].reshape(-1)[index]
            error = abs(exact - estimate) / max(abs(exact), abs(estimate), floor)
            checked += 1
            if error > worst[0]:
                worst = (error, i, np.unravel_index(index, array.shape))

    logger.debug("grad_check: %d entries, max relative error %.3e", checked, worst[0])
    return GradCheckReport(
        max_rel_error=float(worst[0]),
        worst_input=worst[1],
        worst_index=tuple(int(j) for j in worst[2]),
        checked=checked,
        analytic=analytic,
        numeric=numeric,
    )
