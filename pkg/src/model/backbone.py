import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Tensor
from src.core.errors import ConfigError, ContractError, ShapeError
from src.model.layers import LayerNorm, Linear, Mlp, Module, Parameter, trunc_normal

logger = logging.getLogger(__name__)

NUM_STAGES = 4


@dataclass
class BackboneConfig:
    """Geometry and widths of the four-stage pyramid encoder."""

    image_size: tuple = (64, 64)
    in_chans: int = 3
    patch_sizes: tuple = (7, 3, 3, 3)
    strides: tuple = (4, 2, 2, 2)
    paddings: tuple = (3, 1, 1, 1)
    embed_dims: tuple = (32, 64, 128, 256)
    depths: tuple = (2, 2, 2, 2)
    num_heads: tuple = (1, 2, 4, 8)
    sr_ratios: tuple = (8, 4, 2, 1)
    mlp_ratio: float = 4.0
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("image_size", "patch_sizes", "strides", "paddings",
                     "embed_dims", "depths", "num_heads", "sr_ratios"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))

    @classmethod
    def from_dict(cls, values):
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"Unknown backbone keys: {', '.join(unknown)}")
        return cls(**known)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def stage_grids(self, image_size=None):
        """Token grid (h, w) of every stage for the given input extents."""
        height, width = image_size or self.image_size
        grids = []
        for patch, stride, padding in zip(self.patch_sizes, self.strides, self.paddings):
            height = F.sliding_window_extent(height, patch, stride, padding)
            width = F.sliding_window_extent(width, patch, stride, padding)
            grids.append((height, width))
        return grids

    def validate(self):
        for name in ("patch_sizes", "strides", "paddings", "embed_dims", "depths", "num_heads", "sr_ratios"):
            if len(getattr(self, name)) != NUM_STAGES:
                raise ConfigError(f"{name} needs {NUM_STAGES} entries, got {getattr(self, name)}")
        for stage, (dim, heads) in enumerate(zip(self.embed_dims, self.num_heads)):
            if heads < 1 or dim % heads:
                raise ConfigError(f"stage {stage + 1}: embed dim {dim} not divisible by {heads} heads")
        if any(b <= a for a, b in zip(self.embed_dims, self.embed_dims[1:])):
            raise ConfigError(f"embed dims must strictly increase, got {self.embed_dims}")
        if any(r < 1 for r in self.sr_ratios):
            raise ConfigError(f"sr ratios must be >= 1, got {self.sr_ratios}")
        if any(d < 0 for d in self.depths) or self.mlp_ratio <= 0:
            raise ConfigError("depths must be non-negative and mlp_ratio positive")
        if any(extent % 32 for extent in self.image_size):
            raise ConfigError(f"image size {self.image_size} must be divisible by 32")
        for stage, ((h, w), ratio) in enumerate(zip(self.stage_grids(), self.sr_ratios)):
            if h % ratio or w % ratio:
                raise ConfigError(f"stage {stage + 1}: grid {h}x{w} not divisible by sr ratio {ratio}")
        return self


@dataclass
class FeatureMapPyramid:
    """The four per-stage maps, each (B, h, w, C)."""

    stage_maps: list = field(default_factory=list)

    def __len__(self):
        return len(self.stage_maps)

    def __getitem__(self, index):
        return self.stage_maps[index]

    @property
    def shapes(self):
        return [m.shape for m in self.stage_maps]

    def validate(self):
        if len(self.stage_maps) != NUM_STAGES:
            raise ContractError(f"pyramid needs {NUM_STAGES} stages, got {len(self.stage_maps)}")
        for previous, current in zip(self.shapes, self.shapes[1:]):
            if current[1] * 2 != previous[1] or current[2] * 2 != previous[2]:
                raise ContractError(f"stage extents must halve: {previous} -> {current}")
            if current[3] <= previous[3]:
                raise ContractError(f"stage channels must increase: {previous} -> {current}")
        return self


def bilinear_matrix(size_in, size_out):
    """(size_out, size_in) matrix of half-pixel-centred bilinear weights."""
    matrix = np.zeros((size_out, size_in))
    scale = size_in / size_out
    for i in range(size_out):
        source = min(max((i + 0.5) * scale - 0.5, 0.0), size_in - 1)
        low = int(np.floor(source))
        high = min(low + 1, size_in - 1)
        weight = source - low
        matrix[i, low] += 1.0 - weight
        matrix[i, high] += weight
    return matrix


def resize_position_embedding(pos_embed, grid_in, grid_out):
    """Bilinearly resize a (h*w, C) position table to a new token grid."""
    if tuple(grid_in) == tuple(grid_out):
        return pos_embed
    (h0, w0), (h1, w1) = grid_in, grid_out
    channels = pos_embed.shape[-1]
    rows = Tensor(bilinear_matrix(h0, h1), dtype=pos_embed.dtype)
    cols = Tensor(bilinear_matrix(w0, w1).T, dtype=pos_embed.dtype)
    table = pos_embed.reshape(h0, w0, channels).transpose(2, 0, 1)
    resized = (rows @ table) @ cols
    return resized.transpose(1, 2, 0).reshape(h1 * w1, channels)


class PatchEmbed(Module):
    """Overlapping patch embedding: sliding windows, projection, norm, position."""

    def __init__(self, in_chans, embed_dim, patch_size, stride, padding, grid, rng=None, eps=1e-5):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.patch_size, self.stride, self.padding = patch_size, stride, padding
        self.grid = tuple(grid)
        self.proj = Linear(patch_size * patch_size * in_chans, embed_dim, rng=rng)
        self.norm = LayerNorm(embed_dim, eps=eps)
        self.pos_embed = Parameter(trunc_normal(rng, (self.grid[0] * self.grid[1], embed_dim)))

    def forward(self, fmap):
        """Return tokens (B, h*w, C) and the grid extents (h, w)."""
        windows = F.sliding_windows(fmap, self.patch_size, self.stride, self.padding)
        batch, height, width, _ = windows.shape
        tokens = self.norm(self.proj(windows)).reshape(batch, height * width, -1)
        pos = resize_position_embedding(self.pos_embed, self.grid, (height, width))
        return tokens + pos, (height, width)


class SRAttention(Module):
    """Multi-head attention whose keys/values come from an sr x sr merged grid."""

    def __init__(self, dim, num_heads, sr_ratio=1, rng=None, eps=1e-5):
        super().__init__()
        self.dim = dim
        self.num_heads = num_heads
        self.sr_ratio = sr_ratio
        self.scale = (dim // num_heads) ** -0.5
        self.q = Linear(dim, dim, rng=rng)
        self.kv = Linear(dim, dim * 2, rng=rng)
        self.proj = Linear(dim, dim, rng=rng)
        if sr_ratio > 1:
            self.reduce = Linear(sr_ratio * sr_ratio * dim, dim, rng=rng)
            self.norm = LayerNorm(dim, eps=eps)

    def reduced_tokens(self, x, grid):
        if self.sr_ratio == 1:
            return x
        batch, _, channels = x.shape
        height, width = grid
        merged = F.sliding_windows(x.reshape(batch, height, width, channels), self.sr_ratio, self.sr_ratio, 0)
        merged = merged.reshape(batch, -1, merged.shape[-1])
        return self.norm(self.reduce(merged))

    def _attend(self, x, grid):
        batch, tokens, channels = x.shape
        height, width = grid
        if tokens != height * width:
            raise ContractError(f"token count {tokens} does not match grid {height}x{width}")
        if height % self.sr_ratio or width % self.sr_ratio:
            raise ConfigError(f"grid {height}x{width} not divisible by sr ratio {self.sr_ratio}")
        head_dim = channels // self.num_heads

        q = self.q(x).reshape(batch, tokens, self.num_heads, head_dim).transpose(0, 2, 1, 3)
        reduced = self.reduced_tokens(x, grid)
        kv = self.kv(reduced).reshape(batch, reduced.shape[1], 2, self.num_heads, head_dim)
        kv = kv.transpose(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]

        attn = F.softmax((q @ k.swapaxes(-1, -2)) * self.scale, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(batch, tokens, channels)
        return self.proj(out), attn

    def forward(self, x, grid):
        return self._attend(x, grid)[0]

    def attention_weights(self, x, grid):
        """Attention map (B, heads, N, N') as a plain array."""
        return self._attend(x, grid)[1].data


class EncoderLayer(Module):
    """Pre-norm transformer layer with spatial-reduction attention."""

    def __init__(self, dim, num_heads, sr_ratio, mlp_ratio, rng=None, eps=1e-5):
        super().__init__()
        self.norm1 = LayerNorm(dim, eps=eps)
        self.attn = SRAttention(dim, num_heads, sr_ratio, rng=rng, eps=eps)
        self.norm2 = LayerNorm(dim, eps=eps)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng=rng)

    def forward(self, x, grid):
        x = x + self.attn(self.norm1(x), grid)
        return x + self.mlp(self.norm2(x))


class PyramidStage(Module):
    def __init__(self, in_chans, cfg, index, grid, rng=None):
        super().__init__()
        dim = cfg.embed_dims[index]
        self.patch_embed = PatchEmbed(
            in_chans, dim, cfg.patch_sizes[index], cfg.strides[index], cfg.paddings[index],
            grid, rng=rng, eps=cfg.eps,
        )
        self.layers = [
            EncoderLayer(dim, cfg.num_heads[index], cfg.sr_ratios[index], cfg.mlp_ratio, rng=rng, eps=cfg.eps)
            for _ in range(cfg.depths[index])
        ]
        self.norm = LayerNorm(dim, eps=cfg.eps)

    def forward(self, fmap):
        tokens, grid = self.patch_embed(fmap)
        for layer in self.layers:
            tokens = layer(tokens, grid)
        tokens = self.norm(tokens)
        return tokens.reshape(fmap.shape[0], grid[0], grid[1], tokens.shape[-1])


class PyramidBackbone(Module):
    """Four-stage pyramid transformer producing maps at 1/4 ... 1/32 resolution."""

    def __init__(self, cfg, rng=None):
        super().__init__()
        self.cfg = cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        in_chans = cfg.in_chans
        self.stages = []
        for index, grid in enumerate(cfg.stage_grids()):
            self.stages.append(PyramidStage(in_chans, cfg, index, grid, rng=rng))
            in_chans = cfg.embed_dims[index]

    def forward(self, images):
        if images.ndim != 4 or images.shape[-1] != self.cfg.in_chans:
            raise ShapeError("forward_pyramid", images.shape, detail=f"expected (B, H, W, {self.cfg.in_chans})")
        height, width = images.shape[1:3]
        if height % 32 or width % 32:
            raise ConfigError(f"image extents {height}x{width} must be divisible by 32")
        maps = []
        fmap = images
        for stage in self.stages:
            fmap = stage(fmap)
            maps.append(fmap)
        return FeatureMapPyramid(maps)
