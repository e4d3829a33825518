"""Differentiable operations used by the network and the losses."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.autodiff.tensor import Function, Tensor, as_tensor
from src.core.errors import ConfigError, ShapeError

_GELU_C = np.sqrt(2.0 / np.pi)


def _stable_sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Softmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        inner = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


class LogSoftmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        shifted = x - np.max(x, axis=axis, keepdims=True)
        self.out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        return self.out

    def backward(self, grad):
        total = np.sum(grad, axis=self.axis, keepdims=True)
        return (grad - np.exp(self.out) * total,)


class ReLU(Function):
    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return (grad * (self.parents[0].data > 0),)


class GELU(Function):
    """Tanh approximation of the Gaussian error linear unit."""

    def forward(self, x):
        self.inner = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.inner)

    def backward(self, grad):
        x = self.parents[0].data
        d_inner = (1.0 - self.inner ** 2) * _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (grad * (0.5 * (1.0 + self.inner) + 0.5 * x * d_inner),)


class Sigmoid(Function):
    def forward(self, x):
        self.out = _stable_sigmoid(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Softplus(Function):
    """log(1 + exp(x)) without overflow."""

    def forward(self, x):
        return np.logaddexp(0.0, x)

    def backward(self, grad):
        return (grad * _stable_sigmoid(self.parents[0].data),)


class LayerNorm(Function):
    def forward(self, x, weight, bias, eps):
        if weight.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
            raise ShapeError("layer_norm", x.shape, weight.shape, bias.shape)
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = np.mean(centered * centered, axis=-1, keepdims=True)
        self.rstd = 1.0 / np.sqrt(var + eps)
        self.xhat = centered * self.rstd
        return self.xhat * weight + bias

    def backward(self, grad):
        weight = self.parents[1].data
        dxhat = grad * weight
        dx = self.rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - self.xhat * np.mean(dxhat * self.xhat, axis=-1, keepdims=True)
        )
        return dx, grad * self.xhat, grad


class Concatenate(Function):
    def forward(self, *arrays, axis):
        try:
            out = np.concatenate(arrays, axis=axis)
        except ValueError:
            raise ShapeError("concatenate", *(a.shape for a in arrays)) from None
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return out

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def sliding_window_extent(extent, kernel, stride, padding):
    """Number of window positions along one axis: floor((e + 2p - k) / s) + 1."""
    span = extent + 2 * padding - kernel
    if span < 0 or stride <= 0:
        raise ConfigError(
            f"window {kernel} with stride {stride} and padding {padding} "
            f"does not fit extent {extent}"
        )
    return span // stride + 1


class SlidingWindows(Function):
    """
    Gather strided k x k windows of a (B, H, W, C) map into
    (B, Ho, Wo, k*k*C), ordered (row, column, channel) within a window.
    """

    def forward(self, x, kernel, stride, padding):
        if x.ndim != 4:
            raise ShapeError("sliding_windows", x.shape, detail="expected (B, H, W, C)")
        batch, height, width, channels = x.shape
        out_h = sliding_window_extent(height, kernel, stride, padding)
        out_w = sliding_window_extent(width, kernel, stride, padding)
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.out_hw = (out_h, out_w)

        padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        windows = sliding_window_view(padded, (kernel, kernel), axis=(1, 2))
        windows = windows[:, ::stride, ::stride][:, :out_h, :out_w]
        # (B, Ho, Wo, C, k, k) -> (B, Ho, Wo, k, k, C)
        windows = windows.transpose(0, 1, 2, 4, 5, 3)
        return windows.reshape(batch, out_h, out_w, kernel * kernel * channels)

    def backward(self, grad):
        batch, height, width, channels = self.parents[0].shape
        k, s, p = self.kernel, self.stride, self.padding
        out_h, out_w = self.out_hw
        grad = grad.reshape(batch, out_h, out_w, k, k, channels)
        padded = np.zeros((batch, height + 2 * p, width + 2 * p, channels), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                padded[:, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s, :] += grad[:, :, :, i, j, :]
        return (padded[:, p:p + height, p:p + width, :],)


class PairwiseSquaredDistance(Function):
    """Squared Euclidean distances between rows of (N, D) and (M, D)."""

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
            raise ShapeError("squared_distance", a.shape, b.shape)
        self.diff = a[:, None, :] - b[None, :, :]
        return np.sum(self.diff * self.diff, axis=-1)

    def backward(self, grad):
        weighted = 2.0 * grad[:, :, None] * self.diff
        return weighted.sum(axis=1), -weighted.sum(axis=0)


def softmax(x, axis=-1):
    return Softmax.apply(as_tensor(x), axis=axis)


def log_softmax(x, axis=-1):
    return LogSoftmax.apply(as_tensor(x), axis=axis)


def relu(x):
    return ReLU.apply(as_tensor(x))


def gelu(x):
    return GELU.apply(as_tensor(x))


def sigmoid(x):
    return Sigmoid.apply(as_tensor(x))


def softplus(x):
    return Softplus.apply(as_tensor(x))


def layer_norm(x, weight, bias, eps=1e-5):
    """Normalize over the last axis, then apply the per-channel affine."""
    return LayerNorm.apply(as_tensor(x), as_tensor(weight), as_tensor(bias), eps=eps)


def concatenate(tensors, axis=-1):
    return Concatenate.apply(*(as_tensor(t) for t in tensors), axis=axis)


def sliding_windows(x, kernel, stride=1, padding=0):
    return SlidingWindows.apply(as_tensor(x), kernel=kernel, stride=stride, padding=padding)


def squared_distance(a, b):
    return PairwiseSquaredDistance.apply(as_tensor(a), as_tensor(b))


def l2_norm(x, axis=-1, keepdims=False, eps=0.0):
    x = as_tensor(x)
    return ((x * x).sum(axis=axis, keepdims=keepdims) + eps).sqrt()


def l2_normalize(x, axis=-1, eps=1e-12):
    x = as_tensor(x)
    return x / l2_norm(x, axis=axis, keepdims=True, eps=eps)


def linear(x, weight, bias=None):
    out = as_tensor(x) @ weight
    return out if bias is None else out + bias


__all__ = [
    "Tensor",
    "concatenate",
    "gelu",
    "l2_norm",
    "l2_normalize",
    "layer_norm",
    "linear",
    "log_softmax",
    "relu",
    "sigmoid",
    "sliding_window_extent",
    "sliding_windows",
    "softmax",
    "softplus",
    "squared_distance",
]
