import logging
from dataclasses import dataclass, field

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Tensor
from src.core.errors import ContractError, ShapeError
from src.model.layers import Linear, Module, Parameter

logger = logging.getLogger(__name__)


class SpatialAttention(Module):
    """
    Channel-wise max and mean pooling, a learned k x k window projection and a
    sigmoid give a (B, H, W, 1) map that rescales every channel.
    """

    def __init__(self, kernel_size=7, rng=None):
        super().__init__()
        self.kernel_size = kernel_size
        self.proj = Linear(kernel_size * kernel_size * 2, 1, rng=rng)

    def attention_map(self, fmap):
        pooled = F.concatenate([fmap.max(axis=-1, keepdims=True), fmap.mean(axis=-1, keepdims=True)], axis=-1)
        windows = F.sliding_windows(pooled, self.kernel_size, 1, self.kernel_size // 2)
        return F.sigmoid(self.proj(windows))

    def forward(self, fmap):
        if fmap.ndim != 4 or fmap.shape[-1] < 1:
            raise ShapeError("spatial_attention", fmap.shape, detail="expected (B, H, W, C)")
        return fmap * self.attention_map(fmap)


class BatchInstanceNorm(Module):
    """
    y = gamma * (rho * BN(x) + (1 - rho) * IN(x)) + beta, channels last.

    BN normalizes each channel over batch and space, IN over space within one
    sample. For (B, C) inputs there is no spatial axis, so IN normalizes each
    sample across its features.
    """

    def __init__(self, num_channels, rho_init=0.5, momentum=0.1, eps=1e-5):
        super().__init__()
        self.num_channels = num_channels
        self.momentum = momentum
        self.eps = eps
        self.rho = Parameter(np.full(num_channels, rho_init))
        self.gamma = Parameter(np.ones(num_channels))
        self.beta = Parameter(np.zeros(num_channels))
        self.register_buffer("running_mean", np.zeros(num_channels))
        self.register_buffer("running_var", np.ones(num_channels))

    def _batch_branch(self, x, training):
        batch_axes = tuple(range(x.ndim - 1))
        if not training:
            mean = Tensor(self.running_mean, dtype=x.dtype)
            var = Tensor(self.running_var, dtype=x.dtype)
            return (x - mean) / (var + self.eps).sqrt()

        mean = x.mean(axis=batch_axes, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=batch_axes, keepdims=True)
        count = x.size // self.num_channels
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * mean.data.reshape(-1)
        self.running_var = (1 - m) * self.running_var + m * var.data.reshape(-1) * count / max(count - 1, 1)
        return (x - mean) / (var + self.eps).sqrt()

    def _instance_branch(self, x):
        axes = tuple(range(1, x.ndim - 1)) or (x.ndim - 1,)
        mean = x.mean(axis=axes, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=axes, keepdims=True)
        return (x - mean) / (var + self.eps).sqrt()

    def forward(self, x, mode=None):
        """``mode`` is "train" or "eval"; defaults to the module's training flag."""
        if x.shape[-1] != self.num_channels:
            raise ShapeError("batch_instance_norm", x.shape, (self.num_channels,))
        training = self.training if mode is None else mode == "train"
        if training and x.shape[0] < 2:
            raise ContractError("batch_instance_norm needs a batch of at least 2 in train mode")
        mixed = self.rho * self._batch_branch(x, training) + (1.0 - self.rho) * self._instance_branch(x)
        return self.gamma * mixed + self.beta

    def _constrain(self):
        self.rho.data = np.clip(self.rho.data, 0.0, 1.0)


class ChannelGate(Module):
    """sigmoid(W2 ReLU(W1 v)); one instance is shared by every scale."""

    def __init__(self, dim, reduction=16, rng=None):
        super().__init__()
        self.dim = dim
        self.hidden = max(1, dim // reduction)
        self.fc1 = Linear(dim, self.hidden, rng=rng)
        self.fc2 = Linear(self.hidden, dim, rng=rng)

    def forward(self, descriptor, shift=0.0):
        if descriptor.shape[-1] != self.dim:
            raise ShapeError("channel_gate", descriptor.shape, (self.dim,))
        logits = self.fc2(F.relu(self.fc1(descriptor)))
        if shift:
            logits = logits + shift
        return F.sigmoid(logits)


@dataclass
class FusionOutput:
    embedding: Tensor
    retrieval: Tensor
    gates: list = field(default_factory=list)
    descriptors: list = field(default_factory=list)


def combine_scales(descriptors, gates):
    """Gated sum over scales: sum_s gate_s * v_s."""
    fused = None
    for descriptor, gate in zip(descriptors, gates):
        term = gate * descriptor
        fused = term if fused is None else fused + term
    return fused


class PyramidFusion(Module):
    """
    Per scale: spatial attention, BIN, global average pooling and projection to
    a common width D; the shared channel gate then weighs and sums the scales.
    """

    def __init__(self, stage_dims, fusion_dim=256, reduction=16, kernel_size=7,
                 rho_init=0.5, rng=None, eps=1e-5):
        super().__init__()
        self.stage_dims = tuple(stage_dims)
        self.fusion_dim = fusion_dim
        self.spatial = [SpatialAttention(kernel_size, rng=rng) for _ in stage_dims]
        self.norms = [BatchInstanceNorm(dim, rho_init=rho_init, eps=eps) for dim in stage_dims]
        self.projections = [Linear(dim, fusion_dim, rng=rng) for dim in stage_dims]
        self.gate = ChannelGate(fusion_dim, reduction=reduction, rng=rng)

    def scale_descriptor(self, index, fmap):
        x = self.spatial[index](fmap)
        x = self.norms[index](x)
        return self.projections[index](x.mean(axis=(1, 2)))

    def forward(self, pyramid, gate_shifts=None):
        if len(pyramid) != len(self.stage_dims):
            raise ContractError(f"fusion expects {len(self.stage_dims)} stage maps, got {len(pyramid)}")
        shifts = gate_shifts if gate_shifts is not None else [0.0] * len(self.stage_dims)

        descriptors, gates = [], []
        for index, fmap in enumerate(pyramid):
            if fmap.shape[-1] != self.stage_dims[index]:
                raise ShapeError("fuse_pyramid", fmap.shape, (self.stage_dims[index],), detail=f"stage {index + 1}")
            descriptor = self.scale_descriptor(index, fmap)
            descriptors.append(descriptor)
            gates.append(self.gate(descriptor, shift=shifts[index]))

        fused = combine_scales(descriptors, gates)
        return FusionOutput(fused, F.l2_normalize(fused), gates, descriptors)
