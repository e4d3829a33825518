import json
import logging
from pathlib import Path

import numpy as np

from src.core.data_handler import to_network_input
from src.core.errors import ConfigError, ContractError
from src.core.metrics import EvalSet, evaluate, export_curves, pairwise_distances
from src.core.trainer import build_model, load_model_checkpoint

logger = logging.getLogger(__name__)


def build_eval_set(model, data_handler, split="test", batch_size=32, workers=1):
    """Embed query and gallery images; ``split`` is "test" or "sanity"."""
    if split == "sanity":
        frame = data_handler.sanity_split()
        query = frame[frame["split"] == "query"].reset_index(drop=True)
        gallery = frame[frame["split"] == "gallery"].reset_index(drop=True)
    elif split == "test":
        query = data_handler.get_split("query")
        gallery = data_handler.get_split("gallery")
    else:
        raise ConfigError(f"split must be 'test' or 'sanity', got {split!r}")

    def embed(frame):
        images = to_network_input(data_handler.load_images(frame, workers=workers), dtype=model.dtype)
        return model.embed(images, batch_size=batch_size, workers=workers)

    return EvalSet(
        query=embed(query),
        query_ids=query["object_id"].to_numpy(),
        query_cams=query["camera_id"].to_numpy(),
        gallery=embed(gallery),
        gallery_ids=gallery["object_id"].to_numpy(),
        gallery_cams=gallery["camera_id"].to_numpy(),
    )


def chance_baseline(eval_set, trials=20, rng=None, distmat=None):
    """
    mAP under random gallery labels: the (object, camera) pairs are shuffled
    jointly over fixed distances. Returns (mean, std) over the usable trials.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if distmat is None:
        distmat = pairwise_distances(eval_set.query, eval_set.gallery)
    scores = []
    for _ in range(trials):
        perm = rng.permutation(len(eval_set.gallery_ids))
        shuffled = EvalSet(
            eval_set.query, eval_set.query_ids, eval_set.query_cams,
            eval_set.gallery, eval_set.gallery_ids[perm], eval_set.gallery_cams[perm],
        )
        try:
            scores.append(evaluate(shuffled, distmat=distmat).mAP)
        except ContractError:
            continue
    if not scores:
        raise ContractError("no label shuffle produced a valid query")
    return float(np.mean(scores)), float(np.std(scores))


def evaluate_model(model, data_handler, out_dir, split="test", svg=False, palette=None,
                   batch_size=32, workers=1, chance_trials=0):
    """Embed, score, and write ``metrics.json`` plus ``cmc.csv`` (and ``cmc.svg``)."""
    eval_set = build_eval_set(model, data_handler, split=split, batch_size=batch_size, workers=workers)
    distmat = pairwise_distances(eval_set.query, eval_set.gallery)
    report = evaluate(eval_set, distmat=distmat, workers=workers)
    metrics = report.to_dict()
    metrics["split"] = split
    metrics["num_query"] = int(len(eval_set.query_ids))
    metrics["num_gallery"] = int(len(eval_set.gallery_ids))
    if chance_trials:
        mean, std = chance_baseline(eval_set, trials=chance_trials, distmat=distmat)
        metrics["chance_mAP_mean"] = mean
        metrics["chance_mAP_std"] = std

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    export_curves(report, out_dir / "cmc.csv", svg=svg, palette=palette)
    return metrics


def evaluate_checkpoint(checkpoint, data_handler, out_dir, config=None, **kwargs):
    """Load ``checkpoint`` (optionally under another config) and evaluate it."""
    model, _, meta = load_model_checkpoint(checkpoint, config=config)
    logger.info("Evaluating %s (epoch %s)", checkpoint, meta.get("epoch"))
    return evaluate_model(model, data_handler, out_dir, **kwargs)


def random_model(config, data_handler):
    """Untrained network with the config's seed, for chance-level comparisons."""
    model, _ = build_model(config, max(data_handler.num_train_ids, 2), data_handler.num_cameras)
    return model
