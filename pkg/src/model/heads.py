from dataclasses import dataclass
from typing import Optional

from src.autodiff import functional as F
from src.autodiff.tensor import Tensor, as_tensor
from src.core.errors import ConfigError
from src.model.fusion import BatchInstanceNorm
from src.model.layers import Linear, Module

LOG_VAR_CLAMP = (-10.0, 10.0)


@dataclass
class HeadOutputs:
    id_logits: Tensor
    id_embedding: Tensor
    cam_embedding: Tensor
    log_var_id: Tensor
    log_var_cam: Tensor
    cam_logits: Optional[Tensor] = None


def variance_of(log_var, clamp=LOG_VAR_CLAMP):
    """sigma^2 = exp(clamp(log_var)); always positive and finite."""
    low, high = clamp
    return as_tensor(log_var).clip(low, high).exp()


class IdHead(Module):
    """Affine + BIN neck, identity classifier and a log-variance readout."""

    def __init__(self, dim, num_ids, rng=None, eps=1e-5):
        super().__init__()
        if num_ids < 2:
            raise ConfigError(f"id head needs at least 2 identities, got {num_ids}")
        self.num_ids = num_ids
        self.neck = Linear(dim, dim, rng=rng)
        self.neck_norm = BatchInstanceNorm(dim, eps=eps)
        self.classifier = Linear(dim, num_ids, bias=False, rng=rng)
        self.log_var = Linear(dim, 1, rng=rng)

    def forward(self, embedding):
        """Return (id_logits, id_embedding, log_var_id)."""
        id_embedding = self.neck_norm(self.neck(embedding))
        logits = self.classifier(id_embedding)
        log_var = self.log_var(id_embedding).reshape(-1)
        return logits, id_embedding, log_var


class CamHead(Module):
    """Unit-norm camera embedding plus a log-variance readout."""

    def __init__(self, dim, cam_dim=128, num_cams=None, rng=None):
        super().__init__()
        self.proj = Linear(dim, cam_dim, rng=rng)
        self.log_var = Linear(dim, 1, rng=rng)
        # optional camera-label classifier, off unless num_cams is given
        self.classifier = Linear(cam_dim, num_cams, rng=rng) if num_cams else None

    def forward(self, embedding):
        """Return (cam_embedding, log_var_cam, cam_logits or None)."""
        cam_embedding = F.l2_normalize(self.proj(embedding))
        log_var = self.log_var(embedding).reshape(-1)
        logits = self.classifier(cam_embedding) if self.classifier is not None else None
        return cam_embedding, log_var, logits
