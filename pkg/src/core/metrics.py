"""
Cross-camera retrieval evaluation: CMC curve and mAP.

For every query the gallery is ranked by ascending squared Euclidean
distance; ties keep gallery order. Gallery entries with the same object id
AND the same camera as the query are dropped before scoring, and queries
left without any correct match are skipped and counted.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from src.core.errors import ConfigError, ContractError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_MAX_RANK = 50


@dataclass
class EvalSet:
    query: np.ndarray
    query_ids: np.ndarray
    query_cams: np.ndarray
    gallery: np.ndarray
    gallery_ids: np.ndarray
    gallery_cams: np.ndarray

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64)
        self.gallery = np.asarray(self.gallery, dtype=np.float64)
        for name in ("query_ids", "query_cams", "gallery_ids", "gallery_cams"):
            setattr(self, name, np.asarray(getattr(self, name)))

    def validate(self):
        if self.query.ndim != 2 or self.gallery.ndim != 2 or self.query.shape[1] != self.gallery.shape[1]:
            raise ShapeError("eval_set", self.query.shape, self.gallery.shape)
        if self.query_ids.shape != (len(self.query),) or self.query_cams.shape != (len(self.query),):
            raise ShapeError("eval_set", self.query.shape, self.query_ids.shape, detail="query labels")
        if self.gallery_ids.shape != (len(self.gallery),) or self.gallery_cams.shape != (len(self.gallery),):
            raise ShapeError("eval_set", self.gallery.shape, self.gallery_ids.shape, detail="gallery labels")
        if len(self.gallery) == 0:
            raise ContractError("the gallery is empty")
        return self


@dataclass
class RankingResult:
    """Per query: kept gallery indices in rank order and their match flags."""

    order: list = field(default_factory=list)
    matches: list = field(default_factory=list)
    valid: np.ndarray = None


@dataclass
class RetrievalReport:
    cmc: np.ndarray
    mAP: float
    average_precision: np.ndarray
    num_valid: int
    num_skipped: int

    def rank(self, k):
        """CMC@k, 1-based."""
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def to_dict(self):
        return {
            "rank1": self.rank(1),
            "rank5": self.rank(5),
            "rank10": self.rank(10),
            "mAP": float(self.mAP),
            "num_valid_queries": int(self.num_valid),
            "num_skipped_queries": int(self.num_skipped),
            "cmc": [float(v) for v in self.cmc],
        }


def pairwise_distances(query, gallery, chunk_size=256):
    """Squared Euclidean distances, (nq, ng), in difference form so d(x, x) == 0."""
    query = np.asarray(query, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if query.ndim != 2 or gallery.ndim != 2 or query.shape[1] != gallery.shape[1]:
        raise ShapeError("pairwise_distances", query.shape, gallery.shape)
    distances = np.empty((len(query), len(gallery)))
    for start in range(0, len(query), chunk_size):
        diff = query[start:start + chunk_size, None, :] - gallery[None, :, :]
        distances[start:start + chunk_size] = np.einsum("qgd,qgd->qg", diff, diff)
    return distances


def rank_gallery(distmat, eval_set, workers=1):
    """Rank the gallery per query, drop same-id same-camera entries, flag matches."""
    distmat = np.asarray(distmat)
    if distmat.shape != (len(eval_set.query_ids), len(eval_set.gallery_ids)):
        raise ShapeError("rank_gallery", distmat.shape, (len(eval_set.query_ids), len(eval_set.gallery_ids)))

    def rank_one(q):
        order = np.argsort(distmat[q], kind="stable")
        same_id = eval_set.gallery_ids[order] == eval_set.query_ids[q]
        keep = ~(same_id & (eval_set.gallery_cams[order] == eval_set.query_cams[q]))
        return order[keep], same_id[keep]

    queries = range(distmat.shape[0])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ranked = list(pool.map(rank_one, queries))
    else:
        ranked = [rank_one(q) for q in queries]

    result = RankingResult()
    result.order = [order for order, _ in ranked]
    result.matches = [matches for _, matches in ranked]
    result.valid = np.array([bool(m.any()) for m in result.matches], dtype=bool)
    return result


def average_precision(matches):
    """Mean of precision at each relevant rank, no interpolation."""
    ranks = np.flatnonzero(matches) + 1
    if len(ranks) == 0:
        return float("nan")
    precisions = np.arange(1, len(ranks) + 1) / ranks
    return math.fsum(precisions.tolist()) / len(ranks)


def evaluate(eval_set, max_rank=None, workers=1, distmat=None):
    """CMC over ranks 1..K (K = min(50, gallery size) by default) plus mAP."""
    eval_set.validate()
    if distmat is None:
        distmat = pairwise_distances(eval_set.query, eval_set.gallery)
    num_gallery = len(eval_set.gallery_ids)
    max_rank = min(max_rank or DEFAULT_MAX_RANK, num_gallery)
    if max_rank < 1:
        raise ConfigError(f"max_rank must be positive, got {max_rank}")

    ranking = rank_gallery(distmat, eval_set, workers=workers)
    hits = np.zeros(max_rank, dtype=np.int64)
    aps = []
    for matches, valid in zip(ranking.matches, ranking.valid):
        if not valid:
            continue
        first = int(np.argmax(matches))
        if first < max_rank:
            hits[first:] += 1
        aps.append(average_precision(matches))

    num_valid = int(ranking.valid.sum())
    num_skipped = len(ranking.valid) - num_valid
    if num_valid == 0:
        raise ContractError("no query has a valid cross-camera match in the gallery")
    if num_skipped:
        logger.warning("Skipped %d queries without a valid gallery match", num_skipped)

    report = RetrievalReport(
        cmc=hits / num_valid,
        mAP=math.fsum(aps) / num_valid,
        average_precision=np.asarray(aps),
        num_valid=num_valid,
        num_skipped=num_skipped,
    )
    logger.info("Rank-1 %.4f  Rank-5 %.4f  Rank-10 %.4f  mAP %.4f",
                report.rank(1), report.rank(5), report.rank(10), report.mAP)
    return report


def export_curves(report, path, svg=False, palette=None):
    """
    Write ``rank,cmc`` rows for ranks 1..K and a final ``mAP,<value>`` row.
    With ``svg`` a CMC plot is written next to the CSV.
    """
    path = Path(path)
    ranks = [str(k) for k in range(1, len(report.cmc) + 1)] + ["mAP"]
    frame = pd.DataFrame({"rank": ranks, "cmc": list(map(float, report.cmc)) + [float(report.mAP)]})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        raise ConfigError(f"Cannot write curves to {path}: {e}") from e
    written = [path]

    if svg:
        from src.ui.plot_manager import PlotManager

        svg_path = path.with_suffix(".svg")
        PlotManager(palette).save_cmc(report.cmc, report.mAP, svg_path)
        written.append(svg_path)
    return written


def read_curves(path):
    """Return (cmc, mAP) exactly as written by :func:`export_curves`."""
    frame = pd.read_csv(path, dtype={"rank": str}, float_precision="round_trip")
    missing = [col for col in ("rank", "cmc") if col not in frame.columns]
    if missing:
        raise ConfigError(f"Missing required columns: {', '.join(missing)}")
    is_map = frame["rank"] == "mAP"
    if is_map.sum() != 1:
        raise ConfigError(f"{path}: expected exactly one mAP row")
    cmc = frame.loc[~is_map, "cmc"].to_numpy(dtype=np.float64)
    return cmc, float(frame.loc[is_map, "cmc"].iloc[0])
