import logging

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Tensor
from src.core.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """A leaf tensor that is trained by the optimizer."""

    def __init__(self, data, dtype=None, name=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)


def trunc_normal(rng, shape, std=0.02):
    """Normal samples redrawn until they fall within two standard deviations."""
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2 * std
    while np.any(outside):
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2 * std
    return values


class Module:
    """
    Container of parameters, buffers and sub-modules.

    Parameters and sub-modules are discovered from instance attributes in
    assignment order, so ``named_parameters`` is deterministic.
    """

    def __init__(self):
        self.training = True
        self._buffer_names = []

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def register_buffer(self, name, array):
        setattr(self, name, np.asarray(array))
        if name not in self._buffer_names:
            self._buffer_names.append(name)

    def named_children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self.named_children():
            yield from child.named_buffers(prefix=f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, buffer in self.named_buffers():
            state[name] = np.array(buffer, copy=True)
        return state

    def load_state_dict(self, state, strict=True):
        """Copy arrays from ``state`` into parameters and buffers in place."""
        expected = dict(self.named_parameters())
        buffers = {name: None for name, _ in self.named_buffers()}
        missing = [name for name in list(expected) + list(buffers) if name not in state]
        unexpected = [name for name in state if name not in expected and name not in buffers]
        if strict and (missing or unexpected):
            raise ConfigError(f"state mismatch: missing {missing}, unexpected {unexpected}")

        for name, param in expected.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeError("load_state_dict", param.shape, value.shape, detail=name)
            param.data = value.astype(param.dtype, copy=True)
        for module_prefix, module in self._prefixed_modules():
            for buffer_name in module._buffer_names:
                key = module_prefix + buffer_name
                if key not in state:
                    continue
                current = getattr(module, buffer_name)
                value = np.asarray(state[key])
                if value.shape != current.shape:
                    raise ShapeError("load_state_dict", current.shape, value.shape, detail=key)
                setattr(module, buffer_name, value.astype(current.dtype, copy=True))

    def _prefixed_modules(self, prefix=""):
        yield prefix, self
        for name, child in self.named_children():
            yield from child._prefixed_modules(prefix=f"{prefix}{name}.")

    def train(self, mode=True):
        for module in self.modules():
            module.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def astype(self, dtype):
        """Cast every parameter and floating buffer to ``dtype`` in place."""
        for param in self.parameters():
            param.data = param.data.astype(dtype)
        for module in self.modules():
            for name in module._buffer_names:
                buffer = getattr(module, name)
                if np.issubdtype(buffer.dtype, np.floating):
                    setattr(module, name, buffer.astype(dtype))
        return self

    def constrain(self):
        """Project parameters back onto their feasible sets after a step."""
        for module in self.modules():
            module._constrain()

    def _constrain(self):
        pass


class Linear(Module):
    """y = x @ W + b with W stored as (in_features, out_features)."""

    def __init__(self, in_features, out_features, bias=True, rng=None, std=0.02):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(trunc_normal(rng, (in_features, out_features), std=std))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError("linear", x.shape, self.weight.shape)
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, eps=self.eps)


class Mlp(Module):
    """Feed-forward block: fc1 -> GELU -> fc2."""

    def __init__(self, dim, hidden_dim, rng=None):
        super().__init__()
        self.fc1 = Linear(dim, hidden_dim, rng=rng)
        self.fc2 = Linear(hidden_dim, dim, rng=rng)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))
