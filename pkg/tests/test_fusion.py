import numpy as np
import pytest

from src.autodiff import Tensor
from src.core.errors import ContractError
from src.model.backbone import FeatureMapPyramid
from src.model.fusion import BatchInstanceNorm, ChannelGate, PyramidFusion, SpatialAttention


def reference_batch_norm(x, eps=1e-5):
    mean = x.mean(axis=(0, 1, 2), keepdims=True)
    var = x.var(axis=(0, 1, 2), keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


def reference_instance_norm(x, eps=1e-5):
    mean = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


class TestSpatialAttention:
    def test_zero_projection_halves_input(self, rng):
        layer = SpatialAttention()
        layer.proj.weight.data[:] = 0.0
        layer.proj.bias.data[:] = 0.0
        x = rng.normal(size=(2, 8, 8, 64))
        np.testing.assert_allclose(layer(Tensor(x)).data, 0.5 * x)

    def test_map_in_open_unit_interval_and_sign_preserved(self, rng):
        layer = SpatialAttention(rng=rng)
        layer.proj.weight.data = rng.normal(size=layer.proj.weight.shape)
        x = rng.normal(size=(2, 8, 8, 5))
        attention = layer.attention_map(Tensor(x)).data
        assert attention.shape == (2, 8, 8, 1)
        assert np.all((attention > 0) & (attention < 1))
        assert np.all(np.sign(layer(Tensor(x)).data) == np.sign(x))

    def test_constant_input_scaled_per_sample(self, rng):
        layer = SpatialAttention(kernel_size=1, rng=rng)
        x = np.broadcast_to(rng.normal(size=(2, 1, 1, 4)), (2, 6, 6, 4)).copy()
        out = layer(Tensor(x)).data
        ratio = out / x
        np.testing.assert_allclose(ratio, ratio[:, :1, :1, :1] * np.ones_like(ratio), rtol=1e-12)


class TestBatchInstanceNorm:
    def test_rho_one_is_batch_norm(self, rng):
        norm = BatchInstanceNorm(4, rho_init=1.0)
        x = rng.normal(2.0, 3.0, size=(3, 5, 5, 4))
        np.testing.assert_allclose(norm(Tensor(x)).data, reference_batch_norm(x), atol=1e-5)

    def test_rho_zero_is_instance_norm(self, rng):
        norm = BatchInstanceNorm(4, rho_init=0.0)
        x = rng.normal(-1.0, 2.0, size=(3, 5, 5, 4))
        out = norm(Tensor(x)).data
        np.testing.assert_allclose(out, reference_instance_norm(x), atol=1e-5)
        np.testing.assert_allclose(out.mean(axis=(1, 2)), 0.0, atol=1e-5)

    def test_brightness_offset_removed_at_rho_zero(self, rng):
        norm = BatchInstanceNorm(3, rho_init=0.0)
        x = rng.normal(size=(2, 4, 4, 3))
        shifted = x.copy()
        shifted[1] += 0.7
        np.testing.assert_allclose(norm(Tensor(x)).data, norm(Tensor(shifted)).data, atol=1e-5)

    def test_batch_of_one_in_train_mode(self, rng):
        norm = BatchInstanceNorm(3)
        with pytest.raises(ContractError):
            norm(Tensor(rng.normal(size=(1, 2, 2, 3))))
        assert norm(Tensor(rng.normal(size=(1, 2, 2, 3))), mode="eval").shape == (1, 2, 2, 3)

    def test_running_statistics(self, rng):
        norm = BatchInstanceNorm(2, momentum=0.1)
        x = rng.normal(3.0, 1.0, size=(4, 3, 3, 2))
        norm(Tensor(x))
        np.testing.assert_allclose(norm.running_mean, 0.1 * x.mean(axis=(0, 1, 2)))

    def test_rho_projected_into_unit_interval(self):
        norm = BatchInstanceNorm(3)
        norm.rho.data = np.array([-0.2, 0.4, 1.3])
        norm.constrain()
        np.testing.assert_allclose(norm.rho.data, [0.0, 0.4, 1.0])


class TestChannelGate:
    def test_zero_descriptor_gives_half(self):
        gate = ChannelGate(32)
        for layer in (gate.fc1, gate.fc2):
            layer.bias.data[:] = 0.0
        np.testing.assert_allclose(gate(Tensor(np.zeros((2, 32)))).data, 0.5)

    def test_range_and_width(self, rng):
        gate = ChannelGate(32, rng=rng)
        out = gate(Tensor(rng.normal(size=(5, 32)) * 10)).data
        assert out.shape == (5, 32)
        assert np.all((out > 0) & (out < 1))


def random_pyramid(rng, batch=2):
    return FeatureMapPyramid([Tensor(rng.normal(size=(batch, e, e, c)))
                              for e, c in ((8, 4), (4, 8), (2, 12), (1, 16))])


class TestPyramidFusion:
    def test_gate_is_shared_across_scales(self, rng):
        fusion = PyramidFusion((4, 8, 12, 16), fusion_dim=8, reduction=2, rng=rng)
        v = Tensor(rng.normal(size=(2, 8)))
        np.testing.assert_array_equal(fusion.gate(v).data, fusion.gate(v).data)
        assert sum(1 for name, _ in fusion.named_parameters() if name.startswith("gate.")) == 4

    def test_retrieval_embedding_unit_norm(self, rng):
        fusion = PyramidFusion((4, 8, 12, 16), fusion_dim=8, reduction=2, rng=rng)
        out = fusion(random_pyramid(rng))
        np.testing.assert_allclose(np.linalg.norm(out.retrieval.data, axis=1), 1.0, atol=1e-6)

    def test_saturated_gates_select_stage_four(self, rng):
        fusion = PyramidFusion((4, 8, 12, 16), fusion_dim=8, reduction=2, rng=rng)
        out = fusion(random_pyramid(rng), gate_shifts=[-30.0, -30.0, -30.0, 30.0])
        np.testing.assert_allclose(out.embedding.data, out.descriptors[3].data, atol=1e-10)

    def test_equal_descriptors_and_gates_sum(self, rng):
        from src.model.fusion import combine_scales

        v = Tensor(rng.normal(size=(2, 8)))
        g = Tensor(rng.uniform(size=(2, 8)))
        fused = combine_scales([v] * 4, [g] * 4)
        np.testing.assert_allclose(fused.data, 4 * g.data * v.data)

    def test_missing_stage(self, rng):
        fusion = PyramidFusion((4, 8, 12, 16), fusion_dim=8, reduction=2, rng=rng)
        pyramid = random_pyramid(rng)
        with pytest.raises(ContractError):
            fusion(FeatureMapPyramid(pyramid.stage_maps[:3]))
