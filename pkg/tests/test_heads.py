import math

import numpy as np
import pytest

from src.autodiff import Tensor
from src.autodiff import functional as F
from src.core.errors import ConfigError
from src.model.heads import CamHead, IdHead, variance_of
from src.model.network import MultiTaskReID


class TestVariance:
    @pytest.mark.parametrize("log_var,expected", [(0.0, 1.0), (1.0, math.e), (-20.0, math.exp(-10)), (50.0, math.exp(10))])
    def test_clamped_exponent(self, log_var, expected):
        np.testing.assert_allclose(variance_of(np.array([log_var])).data, [expected])

    def test_custom_clamp(self):
        np.testing.assert_allclose(variance_of(np.array([5.0]), clamp=(-2.0, 2.0)).data, [math.exp(2.0)])


class TestIdHead:
    def test_shapes(self, rng):
        head = IdHead(16, 8, rng=rng)
        logits, embedding, log_var = head(Tensor(rng.normal(size=(4, 16))))
        assert logits.shape == (4, 8)
        assert embedding.shape == (4, 16)
        assert log_var.shape == (4,)

    def test_zero_classifier_is_uniform(self, rng):
        head = IdHead(16, 5, rng=rng)
        head.classifier.weight.data[:] = 0.0
        logits, _, _ = head(Tensor(rng.normal(size=(3, 16))))
        np.testing.assert_allclose(F.softmax(logits, axis=1).data, 0.2)

    def test_zero_readout_gives_unit_variance(self, rng):
        head = IdHead(16, 5, rng=rng)
        head.log_var.weight.data[:] = 0.0
        head.log_var.bias.data[:] = 0.0
        _, _, log_var = head(Tensor(rng.normal(size=(3, 16))))
        np.testing.assert_allclose(variance_of(log_var).data, 1.0)

    def test_needs_two_identities(self):
        with pytest.raises(ConfigError):
            IdHead(16, 1)


class TestCamHead:
    def test_unit_norm_and_determinism(self, rng):
        head = CamHead(16, cam_dim=128, rng=rng)
        x = Tensor(rng.normal(size=(4, 16)))
        first, _, logits = head(x)
        second, _, _ = head(x)
        np.testing.assert_allclose(np.linalg.norm(first.data, axis=1), 1.0, atol=1e-6)
        np.testing.assert_array_equal(first.data, second.data)
        assert first.shape == (4, 128)
        assert logits is None

    def test_zero_readout(self, rng):
        head = CamHead(16, cam_dim=8, rng=rng)
        head.log_var.weight.data[:] = 0.0
        _, log_var, _ = head(Tensor(rng.normal(size=(2, 16))))
        np.testing.assert_allclose(variance_of(log_var).data, 1.0)

    def test_optional_camera_classifier(self, rng):
        head = CamHead(16, cam_dim=8, num_cams=3, rng=rng)
        _, _, logits = head(Tensor(rng.normal(size=(2, 16))))
        assert logits.shape == (2, 3)


class TestNetwork:
    def test_forward_and_embed(self, tiny_backbone, rng):
        model = MultiTaskReID(tiny_backbone, num_ids=3, fusion_dim=8, cam_dim=4, gate_reduction=4)
        images = rng.normal(size=(4, 32, 32, 3))
        out = model(Tensor(images))
        assert out.heads.id_logits.shape == (4, 3)
        assert out.heads.cam_embedding.shape == (4, 4)
        assert out.retrieval.shape == (4, 8)

        embedded = model.embed(images, batch_size=3)
        assert model.training
        np.testing.assert_allclose(np.linalg.norm(embedded, axis=1), 1.0, atol=1e-6)

    def test_embed_independent_of_workers(self, tiny_backbone, rng):
        model = MultiTaskReID(tiny_backbone, num_ids=3, fusion_dim=8, cam_dim=4, gate_reduction=4)
        images = rng.normal(size=(5, 32, 32, 3))
        np.testing.assert_array_equal(model.embed(images, batch_size=2, workers=1),
                                      model.embed(images, batch_size=2, workers=3))

    def test_state_dict_round_trip(self, tiny_backbone, rng):
        source = MultiTaskReID(tiny_backbone, num_ids=3, fusion_dim=8, cam_dim=4, gate_reduction=4, seed=1)
        target = MultiTaskReID(tiny_backbone, num_ids=3, fusion_dim=8, cam_dim=4, gate_reduction=4, seed=2)
        target.load_state_dict(source.state_dict())
        images = rng.normal(size=(2, 32, 32, 3))
        np.testing.assert_array_equal(source.embed(images), target.embed(images))
