"""
Uncertainty-aware re-identification losses.

Every per-sample term is scaled by 1/sigma^2 and regularized with
1/2 log sigma^2, where sigma^2 = exp(s) and s is a predicted log-variance
clamped to ``clamp``. Distances are squared Euclidean.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Tensor, as_tensor
from src.core.errors import ConfigError, ContractError, ShapeError, TrainingAbortError
from src.losses.mining import batch_hard_mine, compute_centroids, grouped_anchors
from src.model.heads import LOG_VAR_CLAMP, variance_of
from src.model.layers import Module, Parameter

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "total", "softmax", "triplet", "camid", "center", "mean_sigma_id", "mean_sigma_cam"]


@dataclass
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 0.5
    alpha3: float = 5e-4
    cam_ce: float = 0.0

    def validate(self):
        values = asdict(self)
        if not all(math.isfinite(v) and v >= 0 for v in values.values()):
            raise ConfigError(f"loss weights must be finite and non-negative, got {values}")
        if max(self.alpha1, self.alpha2, self.alpha3) <= 0:
            raise ConfigError("at least one of alpha1, alpha2, alpha3 must be positive")
        return self


@dataclass
class LossReport:
    total: Tensor
    components: dict = field(default_factory=dict)
    weights: LossWeights = field(default_factory=LossWeights)
    mean_sigma_id: float = float("nan")
    mean_sigma_cam: float = float("nan")

    @property
    def value(self):
        return self.total.item()

    def recomposed(self):
        """Weighted sum recomputed from the stored component values."""
        c, w = self.components, self.weights
        value = (
            w.alpha1 * (c.get("softmax", 0.0) + c.get("triplet", 0.0) + c.get("id", 0.0))
            + w.alpha2 * c.get("camid", 0.0)
            + w.alpha3 * c.get("center", 0.0)
        )
        return value + w.cam_ce * c.get("cam_ce", 0.0)

    def as_row(self, step):
        row = {"step": step, "total": self.value}
        for name in ("softmax", "triplet", "camid", "center"):
            row[name] = self.components.get(name, 0.0)
        row["mean_sigma_id"] = self.mean_sigma_id
        row["mean_sigma_cam"] = self.mean_sigma_cam
        return row


def _log_variance(log_var, batch, clamp):
    log_var = as_tensor(log_var)
    if log_var.shape != (batch,):
        raise ShapeError("log_var", log_var.shape, (batch,))
    return log_var.clip(*clamp)


def _uncertain_mean(per_sample, log_var):
    # per-sample term / sigma^2 + 1/2 log sigma^2, averaged over the batch
    return (per_sample * (-log_var).exp() + 0.5 * log_var).mean()


def ua_softmax_ce(id_logits, labels, log_var, clamp=LOG_VAR_CLAMP):
    """mean_i [ NLL_i / (2 sigma_i^2) + 1/2 log sigma_i^2 ]."""
    logits = as_tensor(id_logits)
    if logits.ndim != 2:
        raise ShapeError("ua_softmax_ce", logits.shape, detail="expected (B, num_ids)")
    batch, num_ids = logits.shape
    if batch == 0:
        raise ContractError("ua_softmax_ce needs a non-empty batch")
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (batch,):
        raise ShapeError("ua_softmax_ce", logits.shape, labels.shape)
    if labels.min() < 0 or labels.max() >= num_ids:
        raise ContractError(f"labels must lie in [0, {num_ids}), got [{labels.min()}, {labels.max()}]")

    s = _log_variance(log_var, batch, clamp)
    nll = -F.log_softmax(logits, axis=1)[np.arange(batch), labels]
    return _uncertain_mean(0.5 * nll, s)


def ua_soft_triplet(d_ap, d_an, log_var_anchor, clamp=LOG_VAR_CLAMP):
    """mean_a [ log(1 + exp(d_ap - d_an)) / sigma_a^2 + 1/2 log sigma_a^2 ]."""
    d_ap, d_an = as_tensor(d_ap), as_tensor(d_an)
    if d_ap.shape != d_an.shape or d_ap.ndim != 1:
        raise ShapeError("ua_soft_triplet", d_ap.shape, d_an.shape)
    if np.any(d_ap.data < 0) or np.any(d_an.data < 0):
        raise ContractError("triplet distances must be non-negative")
    s = _log_variance(log_var_anchor, d_ap.shape[0], clamp)
    return _uncertain_mean(F.softplus(d_ap - d_an), s)


def ua_camid_loss(cam_embeddings, group_labels, log_var_cam, clamp=LOG_VAR_CLAMP):
    """Soft-margin centroid triplet: anchor vs own-class and nearest other-class centroid."""
    embeddings = as_tensor(cam_embeddings)
    centroids = compute_centroids(embeddings, group_labels, exclude_anchor=True)
    if centroids.negative is None:
        raise ContractError("camera centroid loss needs at least two classes in the batch")
    d_pos = ((embeddings - centroids.positive) ** 2).sum(axis=1)
    d_neg = ((embeddings - centroids.negative) ** 2).sum(axis=1)
    s = _log_variance(log_var_cam, embeddings.shape[0], clamp)
    return _uncertain_mean(F.softplus(d_pos - d_neg), s)


def ua_center_loss(id_embeddings, labels, centers, sigma_sq):
    """sum_i ||f_i - c_{y_i}||^2 / (2 sigma), sigma = mean of ``sigma_sq``."""
    features = as_tensor(id_embeddings)
    centers = as_tensor(centers)
    labels = np.asarray(labels, dtype=np.intp)
    if features.ndim != 2 or centers.ndim != 2 or features.shape[1] != centers.shape[1]:
        raise ShapeError("ua_center_loss", features.shape, centers.shape)
    unknown = labels[(labels < 0) | (labels >= centers.shape[0])]
    if unknown.size:
        raise ContractError(f"unknown label {int(unknown[0])} for a center table of {centers.shape[0]} classes")
    diff = features - centers[labels]
    sigma = as_tensor(sigma_sq).mean()
    return (diff * diff).sum() / (2.0 * sigma)


def total_loss(components, weights, batch_index=None):
    """
    alpha1 * L_id + alpha2 * L_camid + alpha3 * L_center with
    L_id = L_softmax + L_triplet (or an explicit "id" component).
    """
    values = {}
    components = {name: as_tensor(component) for name, component in components.items()}
    for name, component in components.items():
        if not np.all(np.isfinite(component.data)):
            raise TrainingAbortError(name, batch_index)
        values[name] = component.item()

    def term(name):
        return components.get(name, Tensor(0.0))

    id_term = term("id") if "id" in components else term("softmax") + term("triplet")
    total = weights.alpha1 * id_term + weights.alpha2 * term("camid") + weights.alpha3 * term("center")
    if "cam_ce" in components:
        total = total + weights.cam_ce * components["cam_ce"]
    return LossReport(total=as_tensor(total), components=values, weights=weights)


class ReidCriterion(Module):
    """
    Combines the loss family for one batch of head outputs. Owns the learnable
    center table and, with ``center_sigma="global"``, a learnable log-sigma for
    the center loss (regularized by 1/2 log sigma like the other terms).
    """

    def __init__(self, num_ids, embed_dim, weights=None, clamp=LOG_VAR_CLAMP,
                 center_sigma="batch", camid_grouping="object", seed=0):
        super().__init__()
        if center_sigma not in ("batch", "global"):
            raise ConfigError(f"center_sigma must be 'batch' or 'global', got {center_sigma!r}")
        if camid_grouping not in ("object", "camera"):
            raise ConfigError(f"camid_grouping must be 'object' or 'camera', got {camid_grouping!r}")
        self.weights = (weights or LossWeights()).validate()
        self.clamp = tuple(clamp)
        self.center_sigma = center_sigma
        self.camid_grouping = camid_grouping
        rng = np.random.default_rng(seed)
        self.centers = Parameter(rng.normal(size=(num_ids, embed_dim)))
        if center_sigma == "global":
            self.center_log_sigma = Parameter(np.zeros(()))

    def forward(self, heads, labels, cams, batch_index=None):
        labels = np.asarray(labels, dtype=np.intp)
        cams = np.asarray(cams, dtype=np.intp)
        components = {}
        components["softmax"] = ua_softmax_ce(heads.id_logits, labels, heads.log_var_id, self.clamp)

        dist = F.squared_distance(heads.id_embedding, heads.id_embedding)
        triplets = batch_hard_mine(dist, labels)
        components["triplet"] = ua_soft_triplet(
            dist[triplets.anchors, triplets.positives],
            dist[triplets.anchors, triplets.negatives],
            heads.log_var_id,
            self.clamp,
        )

        # PK batches guarantee two samples per identity but not per camera;
        # anchors alone in their group have no own-class centroid.
        groups = labels if self.camid_grouping == "object" else cams
        anchors = grouped_anchors(groups)
        if anchors is None:
            logger.debug("batch %s: fewer than two %s groups with two samples, camid term skipped",
                         batch_index, self.camid_grouping)
        elif len(anchors) == len(groups):
            components["camid"] = ua_camid_loss(heads.cam_embedding, groups, heads.log_var_cam, self.clamp)
        else:
            components["camid"] = ua_camid_loss(
                heads.cam_embedding[anchors], groups[anchors], heads.log_var_cam[anchors], self.clamp
            )

        sigma_id = variance_of(heads.log_var_id, self.clamp)
        if self.center_sigma == "global":
            log_sigma = self.center_log_sigma.clip(*self.clamp)
            center = ua_center_loss(heads.id_embedding, labels, self.centers, log_sigma.exp())
            components["center"] = center + 0.5 * log_sigma
        else:
            components["center"] = ua_center_loss(heads.id_embedding, labels, self.centers, sigma_id)

        if heads.cam_logits is not None and self.weights.cam_ce > 0:
            components["cam_ce"] = ua_softmax_ce(heads.cam_logits, cams, heads.log_var_cam, self.clamp)

        report = total_loss(components, self.weights, batch_index=batch_index)
        report.mean_sigma_id = float(sigma_id.data.mean())
        report.mean_sigma_cam = float(variance_of(heads.log_var_cam, self.clamp).data.mean())
        logger.debug("batch %s: total %.5f %s", batch_index, report.value, report.components)
        return report
