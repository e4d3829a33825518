"""
Slow, loop-based reference implementations used to cross-check the
vectorized metrics and mining code.
"""

import logging
import math

import numpy as np

from src.core.errors import ContractError
from src.core.metrics import EvalSet, RetrievalReport, evaluate
from src.losses.mining import batch_hard_mine

logger = logging.getLogger(__name__)


def naive_distances(query, gallery):
    """Double loop over pairs."""
    out = np.zeros((len(query), len(gallery)))
    for i, q in enumerate(query):
        for j, g in enumerate(gallery):
            out[i, j] = sum((float(a) - float(b)) ** 2 for a, b in zip(q, g))
    return out


def brute_force_evaluate(eval_set, max_rank=None, distmat=None):
    """CMC and mAP enumerated straight from their definitions."""
    if distmat is None:
        distmat = naive_distances(eval_set.query, eval_set.gallery)
    num_gallery = len(eval_set.gallery_ids)
    max_rank = min(max_rank or 50, num_gallery)

    first_hits, aps = [], []
    for q in range(len(eval_set.query_ids)):
        ranked = sorted(range(num_gallery), key=lambda j: (distmat[q][j], j))
        relevant = []
        for j in ranked:
            same_id = eval_set.gallery_ids[j] == eval_set.query_ids[q]
            if same_id and eval_set.gallery_cams[j] == eval_set.query_cams[q]:
                continue
            relevant.append(bool(same_id))
        if not any(relevant):
            continue

        first_hits.append(relevant.index(True))
        precisions = []
        found = 0
        for position, is_match in enumerate(relevant, start=1):
            if is_match:
                found += 1
                precisions.append(found / position)
        aps.append(math.fsum(precisions) / len(precisions))

    if not aps:
        raise ContractError("no query has a valid cross-camera match in the gallery")
    cmc = np.array([sum(1 for f in first_hits if f < k) / len(aps) for k in range(1, max_rank + 1)])
    return RetrievalReport(
        cmc=cmc,
        mAP=math.fsum(aps) / len(aps),
        average_precision=np.asarray(aps),
        num_valid=len(aps),
        num_skipped=len(eval_set.query_ids) - len(aps),
    )


def exhaustive_mine(dist, labels):
    """(positives, negatives) by scanning every pair; first index wins ties."""
    dist = np.asarray(dist)
    labels = np.asarray(labels)
    positives, negatives = [], []
    for a in range(len(labels)):
        best_p, best_n = None, None
        for j in range(len(labels)):
            if j == a:
                continue
            if labels[j] == labels[a]:
                if best_p is None or dist[a, j] > dist[a, best_p]:
                    best_p = j
            elif best_n is None or dist[a, j] < dist[a, best_n]:
                best_n = j
        positives.append(best_p)
        negatives.append(best_n)
    return np.array(positives), np.array(negatives)


def random_eval_set(rng, max_queries=8, max_gallery=32, num_cams=2, dim=4, quantized=None):
    """
    A small random query/gallery problem; some queries may lack a match.
    Quantized sets (30% of draws when ``quantized`` is None) sit on a small
    integer grid so that many distances tie exactly.
    """
    if quantized is None:
        quantized = rng.random() < 0.3
    nq = int(rng.integers(1, max_queries + 1))
    ng = int(rng.integers(2, max_gallery + 1))
    num_ids = int(rng.integers(2, 6))

    def points(n):
        if quantized:
            return rng.integers(-1, 2, size=(n, dim)).astype(np.float64)
        return rng.normal(size=(n, dim))

    return EvalSet(
        query=points(nq),
        query_ids=rng.integers(0, num_ids, nq),
        query_cams=rng.integers(0, num_cams, nq),
        gallery=points(ng),
        gallery_ids=rng.integers(0, num_ids, ng),
        gallery_cams=rng.integers(0, num_cams, ng),
    )


def random_batch(rng, max_batch=16):
    """Labels with at least two identities and at least two samples each."""
    num_ids = int(rng.integers(2, max_batch // 2 + 1))
    labels = np.repeat(np.arange(num_ids), 2)
    extra = int(rng.integers(0, max_batch - len(labels) + 1))
    labels = rng.permutation(np.concatenate([labels, rng.integers(0, num_ids, extra)]))
    embeddings = rng.normal(size=(len(labels), 3))
    diff = embeddings[:, None, :] - embeddings[None, :, :]
    dist = np.sum(diff * diff, axis=-1)
    if rng.random() < 0.3:
        # quantized distances exercise the tie-breaking rule
        dist = np.round(dist)
    return dist, labels


def run_metric_trials(trials, seed=0):
    """Compare evaluate() against the brute-force oracle; returns the mismatch count."""
    rng = np.random.default_rng(seed)
    mismatches = checked = 0
    for trial in range(trials):
        eval_set = random_eval_set(rng)
        distmat = naive_distances(eval_set.query, eval_set.gallery)
        try:
            expected = brute_force_evaluate(eval_set, distmat=distmat)
        except ContractError:
            continue
        actual = evaluate(eval_set, distmat=distmat)
        checked += 1
        if not (np.array_equal(actual.cmc, expected.cmc) and actual.mAP == expected.mAP
                and actual.num_skipped == expected.num_skipped):
            mismatches += 1
            logger.error("Metric trial %d disagrees with the oracle", trial)
    logger.info("Metric oracle: %d/%d trials agree", checked - mismatches, checked)
    return mismatches, checked


def run_mining_trials(trials, seed=0):
    """Compare batch_hard_mine() against exhaustive search; returns the mismatch count."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for trial in range(trials):
        dist, labels = random_batch(rng)
        mined = batch_hard_mine(dist, labels)
        positives, negatives = exhaustive_mine(dist, labels)
        if not (np.array_equal(mined.positives, positives) and np.array_equal(mined.negatives, negatives)):
            mismatches += 1
            logger.error("Mining trial %d disagrees with exhaustive search", trial)
    logger.info("Mining oracle: %d/%d trials agree", trials - mismatches, trials)
    return mismatches, trials
