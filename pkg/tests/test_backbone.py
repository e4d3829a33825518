import numpy as np
import pytest

from src.autodiff import Tensor, grad_check
from src.autodiff import functional as F
from src.core.errors import ConfigError, ShapeError
from src.model.backbone import BackboneConfig, PatchEmbed, PyramidBackbone, SRAttention


def narrow_config(image):
    return BackboneConfig(image_size=(image, image), embed_dims=(4, 8, 12, 16), depths=(1, 1, 1, 1),
                          num_heads=(1, 2, 2, 4), sr_ratios=(8, 4, 2, 1), mlp_ratio=2.0)


class TestConfig:
    def test_desk_default_validates(self):
        cfg = BackboneConfig().validate()
        assert cfg.stage_grids() == [(16, 16), (8, 8), (4, 4), (2, 2)]

    def test_heads_must_divide_dims(self):
        with pytest.raises(ConfigError):
            BackboneConfig(num_heads=(1, 2, 4, 7)).validate()

    def test_dims_must_increase(self):
        with pytest.raises(ConfigError):
            BackboneConfig(embed_dims=(32, 32, 128, 256)).validate()

    def test_image_size_multiple_of_32(self):
        with pytest.raises(ConfigError):
            BackboneConfig(image_size=(48, 64)).validate()

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            BackboneConfig.from_dict({"embed_dim": 3})


class TestPatchEmbed:
    @pytest.mark.parametrize("image,patch,stride,pad,grid", [
        (64, 4, 4, 0, 16),
        (64, 7, 4, 3, 16),
        (224, 4, 4, 0, 56),
    ])
    def test_token_grid(self, image, patch, stride, pad, grid):
        embed = PatchEmbed(3, 8, patch, stride, pad, (grid, grid))
        tokens, hw = embed(Tensor(np.zeros((1, image, image, 3))))
        assert hw == (grid, grid)
        assert tokens.shape == (1, grid * grid, 8)

    def test_window_larger_than_input(self):
        with pytest.raises(ConfigError):
            F.sliding_window_extent(2, 7, 4, 0)


class TestSRAttention:
    def test_rows_sum_to_one_and_kv_count(self, rng):
        attn = SRAttention(8, 2, sr_ratio=4, rng=rng)
        x = Tensor(rng.normal(size=(2, 256, 8)))
        weights = attn.attention_weights(x, (16, 16))
        assert weights.shape == (2, 2, 256, 16)
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-9)
        assert attn(x, (16, 16)).shape == x.shape

    def test_sr_one_is_plain_attention(self, rng):
        attn = SRAttention(4, 2, sr_ratio=1, rng=rng)
        x = rng.normal(size=(1, 6, 4))
        head = 2
        q = (x @ attn.q.weight.data + attn.q.bias.data).reshape(1, 6, 2, head).transpose(0, 2, 1, 3)
        kv = (x @ attn.kv.weight.data + attn.kv.bias.data).reshape(1, 6, 2, 2, head).transpose(2, 0, 3, 1, 4)
        scores = q @ kv[0].swapaxes(-1, -2) / np.sqrt(head)
        probs = np.exp(scores - scores.max(axis=-1, keepdims=True))
        probs /= probs.sum(axis=-1, keepdims=True)
        out = (probs @ kv[1]).transpose(0, 2, 1, 3).reshape(1, 6, 4)
        expected = out @ attn.proj.weight.data + attn.proj.bias.data
        np.testing.assert_allclose(attn(Tensor(x), (2, 3)).data, expected, atol=1e-12)

    def test_grid_not_divisible(self, rng):
        attn = SRAttention(4, 1, sr_ratio=3, rng=rng)
        with pytest.raises(ConfigError):
            attn(Tensor(rng.normal(size=(1, 16, 4))), (4, 4))


class TestPyramid:
    @pytest.mark.parametrize("image", [64, 128, 224])
    def test_four_stage_shapes(self, image):
        backbone = PyramidBackbone(narrow_config(image))
        pyramid = backbone(Tensor(np.zeros((1, image, image, 3))))
        expected = [(1, image // s, image // s, c) for s, c in zip((4, 8, 16, 32), (4, 8, 12, 16))]
        assert pyramid.shapes == expected
        pyramid.validate()

    def test_desk_shapes(self, rng):
        backbone = PyramidBackbone(BackboneConfig(depths=(1, 1, 1, 1)), rng=rng)
        pyramid = backbone(Tensor(rng.normal(size=(2, 64, 64, 3))))
        assert pyramid.shapes == [(2, 16, 16, 32), (2, 8, 8, 64), (2, 4, 4, 128), (2, 2, 2, 256)]

    def test_doubling_resolution_doubles_extents(self, rng):
        backbone = PyramidBackbone(narrow_config(64), rng=rng)
        small = backbone(Tensor(rng.normal(size=(1, 64, 64, 3)))).shapes
        large = backbone(Tensor(rng.normal(size=(1, 128, 128, 3)))).shapes
        for a, b in zip(small, large):
            assert (b[1], b[2]) == (2 * a[1], 2 * a[2])

    def test_batch_permutation_equivariance(self, tiny_backbone, rng):
        backbone = PyramidBackbone(tiny_backbone, rng=rng)
        images = rng.normal(size=(3, 32, 32, 3))
        perm = np.array([2, 0, 1])
        direct = backbone(Tensor(images))
        permuted = backbone(Tensor(images[perm]))
        for a, b in zip(direct.stage_maps, permuted.stage_maps):
            np.testing.assert_allclose(a.data[perm], b.data, atol=1e-12)

    def test_zero_branches_reduce_to_embedding(self, tiny_backbone, rng):
        backbone = PyramidBackbone(tiny_backbone, rng=rng)
        for stage in backbone.stages:
            for layer in stage.layers:
                layer.attn.proj.weight.data[:] = 0.0
                layer.attn.proj.bias.data[:] = 0.0
                layer.mlp.fc2.weight.data[:] = 0.0
                layer.mlp.fc2.bias.data[:] = 0.0
        fmap = Tensor(rng.normal(size=(1, 32, 32, 3)))
        pyramid = backbone(fmap)
        for stage, out in zip(backbone.stages, pyramid.stage_maps):
            tokens, grid = stage.patch_embed(fmap)
            expected = stage.norm(tokens).reshape(1, grid[0], grid[1], -1)
            np.testing.assert_allclose(out.data, expected.data, atol=1e-12)
            fmap = out

    def test_wrong_channels(self, tiny_backbone):
        with pytest.raises(ShapeError):
            PyramidBackbone(tiny_backbone)(Tensor(np.zeros((1, 32, 32, 1))))

    def test_indivisible_input(self, tiny_backbone):
        with pytest.raises(ConfigError):
            PyramidBackbone(tiny_backbone)(Tensor(np.zeros((1, 40, 40, 3))))

    def test_stage4_readout_gradient(self, tiny_backbone, rng):
        backbone = PyramidBackbone(tiny_backbone, rng=rng)
        probe = rng.normal(size=(1, 1, 1, 16))
        report = grad_check(lambda x: (backbone(x)[3] * probe).sum(), rng.normal(size=(1, 32, 32, 3)),
                            floor=1e-6, max_entries=20, rng=rng)
        assert report.passed(1e-4)
