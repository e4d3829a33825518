from src.losses.mining import CentroidSet, TripletSet, batch_hard_mine, compute_centroids, grouped_anchors
from src.losses.uncertainty import (
    LOG_COLUMNS,
    LossReport,
    LossWeights,
    ReidCriterion,
    total_loss,
    ua_camid_loss,
    ua_center_loss,
    ua_soft_triplet,
    ua_softmax_ce,
)

__all__ = [
    "CentroidSet",
    "LOG_COLUMNS",
    "LossReport",
    "LossWeights",
    "ReidCriterion",
    "TripletSet",
    "batch_hard_mine",
    "compute_centroids",
    "grouped_anchors",
    "total_loss",
    "ua_camid_loss",
    "ua_center_loss",
    "ua_soft_triplet",
    "ua_softmax_ce",
]
