import logging

import numpy as np

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)


def _identity_chunks(indices, K, rng):
    """Shuffle one identity's images and cut them into chunks of K."""
    shuffled = rng.permutation(indices)
    if len(shuffled) < K:
        return [rng.choice(indices, size=K, replace=True)]
    return [shuffled[i:i + K] for i in range(0, len(shuffled) - K + 1, K)]


def pk_sample(labels, P, K, rng):
    """
    One epoch of P x K batches over ``labels`` (one entry per train image).

    Every batch holds exactly P identities with K images each. Identities are
    drawn without replacement until fewer than P still have unused chunks; if
    some identity was never drawn, extra batches cover it.
    """
    labels = np.asarray(labels)
    if P < 2 or K < 2:
        raise ConfigError(f"PK sampling needs P >= 2 and K >= 2, got P={P}, K={K}")
    identities, counts = np.unique(labels, return_counts=True)
    if np.sum(counts >= K) < P:
        raise ConfigError(f"need at least {P} identities with >= {K} images, got {int(np.sum(counts >= K))}")

    by_id = {ident: np.flatnonzero(labels == ident) for ident in identities}
    chunks = {ident: _identity_chunks(by_id[ident], K, rng) for ident in identities}
    covered = set()
    batches = []

    while True:
        available = [ident for ident in identities if chunks[ident]]
        if len(available) < P:
            break
        chosen = rng.choice(available, size=P, replace=False)
        batches.append(np.concatenate([chunks[ident].pop() for ident in chosen]))
        covered.update(chosen.tolist())

    uncovered = [ident for ident in identities if ident not in covered]
    while uncovered:
        head, uncovered = uncovered[:P], uncovered[P:]
        others = [ident for ident in identities if ident not in head]
        fill = rng.choice(others, size=P - len(head), replace=False) if len(head) < P else []
        chosen = list(head) + list(fill)
        batches.append(np.concatenate([_identity_chunks(by_id[ident], K, rng)[0] for ident in chosen]))

    logger.debug("PK sampler: %d batches of %d x %d", len(batches), P, K)
    return batches
