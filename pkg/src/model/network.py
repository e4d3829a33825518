import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from src.autodiff.tensor import Tensor, no_grad
from src.model.backbone import PyramidBackbone
from src.model.fusion import FusionOutput, PyramidFusion
from src.model.heads import CamHead, HeadOutputs, IdHead
from src.model.layers import Module

logger = logging.getLogger(__name__)


@dataclass
class NetworkOutputs:
    heads: HeadOutputs
    fusion: FusionOutput

    @property
    def retrieval(self):
        return self.fusion.retrieval


class MultiTaskReID(Module):
    """Pyramid backbone -> attention fusion -> identity and camera heads."""

    def __init__(self, backbone_cfg, num_ids, fusion_dim=256, cam_dim=128, gate_reduction=16,
                 num_cams=None, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.backbone = PyramidBackbone(backbone_cfg, rng=rng)
        self.fusion = PyramidFusion(
            backbone_cfg.embed_dims, fusion_dim=fusion_dim, reduction=gate_reduction,
            rng=rng, eps=backbone_cfg.eps,
        )
        self.id_head = IdHead(fusion_dim, num_ids, rng=rng, eps=backbone_cfg.eps)
        self.cam_head = CamHead(fusion_dim, cam_dim=cam_dim, num_cams=num_cams, rng=rng)

    @property
    def dtype(self):
        return self.backbone.stages[0].patch_embed.proj.weight.dtype

    def forward(self, images, gate_shifts=None):
        images = images if isinstance(images, Tensor) else Tensor(images, dtype=self.dtype)
        pyramid = self.backbone(images)
        fusion = self.fusion(pyramid, gate_shifts=gate_shifts)
        id_logits, id_embedding, log_var_id = self.id_head(fusion.embedding)
        cam_embedding, log_var_cam, cam_logits = self.cam_head(fusion.embedding)
        heads = HeadOutputs(id_logits, id_embedding, cam_embedding, log_var_id, log_var_cam, cam_logits)
        return NetworkOutputs(heads, fusion)

    def embed(self, images, batch_size=32, workers=1):
        """
        L2-normalized retrieval embeddings in eval mode. Chunks are fixed by
        ``batch_size`` and reassembled in order, so the result does not depend
        on ``workers``.
        """
        was_training = self.training
        self.eval()

        def run(start):
            with no_grad():
                chunk = Tensor(images[start:start + batch_size], dtype=self.dtype)
                return self.forward(chunk).retrieval.data

        try:
            starts = list(range(0, len(images), batch_size))
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    chunks = list(pool.map(run, starts))
            else:
                chunks = [run(start) for start in starts]
        finally:
            self.train(was_training)
        return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, self.fusion.fusion_dim))
