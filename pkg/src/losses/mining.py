"""Batch-hard triplet mining and class centroids.

Ties are always resolved towards the lowest index so that mining is a
deterministic function of the distances.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.autodiff.tensor import Tensor, as_tensor
from src.core.errors import ContractError, ShapeError


@dataclass
class TripletSet:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    d_ap: np.ndarray
    d_an: np.ndarray

    def __len__(self):
        return len(self.anchors)

    def validate(self, labels):
        labels = np.asarray(labels)
        if np.any(labels[self.anchors] != labels[self.positives]) or np.any(self.anchors == self.positives):
            raise ContractError("every positive must share the anchor label and differ from the anchor")
        if np.any(labels[self.anchors] == labels[self.negatives]):
            raise ContractError("every negative must carry a different label")
        return self


@dataclass
class CentroidSet:
    classes: np.ndarray
    counts: np.ndarray
    centroids: Tensor
    anchor_class: np.ndarray
    positive: Tensor
    negative_class: Optional[np.ndarray] = None
    negative: Optional[Tensor] = None


def _check_labels(labels, batch):
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError("labels", labels.shape, (batch,))
    return labels


def batch_hard_mine(dist, labels):
    """
    Hardest positive (largest distance, same label, not self) and hardest
    negative (smallest distance, other label) for every anchor.
    """
    dist = np.asarray(dist.data if isinstance(dist, Tensor) else dist)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ShapeError("batch_hard_mine", dist.shape, detail="expected a square distance matrix")
    batch = dist.shape[0]
    labels = _check_labels(labels, batch)

    identities, counts = np.unique(labels, return_counts=True)
    if np.any(counts < 2):
        raise ContractError(f"identity {identities[counts < 2][0]} has a single sample in the batch")
    if len(identities) < 2:
        raise ContractError("batch-hard mining needs at least two identities")

    same = labels[:, None] == labels[None, :]
    positive_mask = same & ~np.eye(batch, dtype=bool)
    positives = np.argmax(np.where(positive_mask, dist, -np.inf), axis=1)
    negatives = np.argmin(np.where(same, np.inf, dist), axis=1)
    anchors = np.arange(batch)
    return TripletSet(anchors, positives, negatives, dist[anchors, positives], dist[anchors, negatives])


def compute_centroids(embeddings, labels, exclude_anchor=True):
    """
    Class means of ``embeddings`` plus, per anchor, its own-class centroid
    (without the anchor when ``exclude_anchor``) and the nearest centroid of
    another class. Centroids stay differentiable w.r.t. the embeddings.
    """
    embeddings = as_tensor(embeddings)
    if embeddings.ndim != 2:
        raise ShapeError("compute_centroids", embeddings.shape, detail="expected (B, D)")
    batch = embeddings.shape[0]
    labels = _check_labels(labels, batch)

    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if exclude_anchor and np.any(counts < 2):
        raise ContractError(f"class {classes[counts < 2][0]} has a single member; cannot exclude the anchor")

    membership = np.zeros((len(classes), batch))
    membership[inverse, np.arange(batch)] = 1.0
    sums = Tensor(membership, dtype=embeddings.dtype) @ embeddings
    centroids = sums / Tensor(counts[:, None], dtype=embeddings.dtype)

    if exclude_anchor:
        remaining = Tensor((counts[inverse] - 1)[:, None], dtype=embeddings.dtype)
        positive = (sums[inverse] - embeddings) / remaining
    else:
        positive = centroids[inverse]

    result = CentroidSet(classes, counts, centroids, inverse, positive)
    if len(classes) > 1:
        diff = embeddings.data[:, None, :] - centroids.data[None, :, :]
        distances = np.sum(diff * diff, axis=-1)
        distances[np.arange(batch), inverse] = np.inf
        result.negative_class = np.argmin(distances, axis=1)
        result.negative = centroids[result.negative_class]
    return result


def grouped_anchors(labels):
    """
    Indices of the samples whose class has another member in the batch, or
    ``None`` when fewer than two such classes remain.
    """
    labels = np.asarray(labels)
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if np.sum(counts >= 2) < 2:
        return None
    return np.flatnonzero(counts[inverse] >= 2)
