"""
Gradient checks of every differentiable component in double precision.

Each check builds a small random problem, reduces the component output to a
scalar with a fixed random probe and compares analytic and numeric
gradients. Module parameters are checked by temporarily swapping them for
the perturbed leaf.
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from src.autodiff import functional as F
from src.autodiff.gradcheck import grad_check
from src.core.errors import ConfigError
from src.losses.mining import batch_hard_mine
from src.losses.uncertainty import (
    LossWeights,
    ReidCriterion,
    total_loss,
    ua_camid_loss,
    ua_center_loss,
    ua_soft_triplet,
    ua_softmax_ce,
)
from src.model.backbone import BackboneConfig, SRAttention
from src.model.fusion import BatchInstanceNorm, ChannelGate, PyramidFusion, SpatialAttention
from src.model.network import MultiTaskReID

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4


def tiny_backbone_config(image=32):
    """Smallest pyramid that keeps all four stages and the sr reductions."""
    return BackboneConfig(
        image_size=(image, image),
        embed_dims=(4, 8, 12, 16),
        depths=(1, 1, 1, 1),
        num_heads=(1, 2, 2, 4),
        sr_ratios=(4, 2, 1, 1),
        mlp_ratio=2.0,
    )


@contextmanager
def swapped(module, name, value):
    """Temporarily replace ``module.<name>`` (e.g. a parameter) with ``value``."""
    original = getattr(module, name)
    setattr(module, name, value)
    try:
        yield
    finally:
        setattr(module, name, original)


def _probe_sum(out, probe):
    return (out * probe).sum()


def check_softmax_ce(rng):
    logits = rng.normal(size=(5, 4))
    log_var = rng.normal(scale=0.5, size=5)
    labels = rng.integers(0, 4, 5)
    return grad_check(lambda z, s: ua_softmax_ce(z, labels, s), [logits, log_var])


def check_soft_triplet(rng):
    d_ap = rng.uniform(0.1, 2.0, 6)
    d_an = rng.uniform(0.1, 2.0, 6)
    log_var = rng.normal(scale=0.5, size=6)
    return grad_check(lambda p, n, s: ua_soft_triplet(p, n, s), [d_ap, d_an, log_var])


def check_batch_hard_triplet(rng):
    embeddings = rng.normal(size=(6, 3))
    labels = np.array([0, 0, 1, 1, 2, 2])
    log_var = rng.normal(scale=0.5, size=6)

    def fn(f, s):
        dist = F.squared_distance(f, f)
        mined = batch_hard_mine(dist, labels)
        return ua_soft_triplet(dist[mined.anchors, mined.positives], dist[mined.anchors, mined.negatives], s)

    return grad_check(fn, [embeddings, log_var])


def check_camid(rng):
    embeddings = rng.normal(size=(6, 3))
    labels = np.array([0, 0, 1, 1, 2, 2])
    log_var = rng.normal(scale=0.5, size=6)
    return grad_check(lambda f, s: ua_camid_loss(f, labels, s), [embeddings, log_var])


def check_center(rng):
    features = rng.normal(size=(4, 3))
    centers = rng.normal(size=(3, 3))
    sigma_sq = rng.uniform(0.5, 2.0, 4)
    labels = np.array([0, 2, 1, 2])
    return grad_check(lambda f, c, s: ua_center_loss(f, labels, c, s), [features, centers, sigma_sq])


def check_total(rng):
    weights = LossWeights(alpha1=1.0, alpha2=0.5, alpha3=5e-4)
    values = rng.uniform(0.1, 2.0, 4)

    def fn(v):
        components = {name: v[i] for i, name in enumerate(("softmax", "triplet", "camid", "center"))}
        return total_loss(components, weights).total

    return grad_check(fn, [values])


def check_spatial_attention(rng):
    layer = SpatialAttention(kernel_size=3, rng=rng)
    layer.astype(np.float64)
    fmap = rng.normal(size=(2, 4, 4, 3))
    probe = rng.normal(size=(2, 4, 4, 3))

    def fn(x, w):
        with swapped(layer.proj, "weight", w):
            return _probe_sum(layer(x), probe)

    return grad_check(fn, [fmap, layer.proj.weight.data])


def check_bin(rng):
    norm = BatchInstanceNorm(3, rho_init=0.3)
    norm.astype(np.float64)
    x = rng.normal(size=(3, 2, 2, 3))
    probe = rng.normal(size=(3, 2, 2, 3))

    def fn(x_, rho, gamma):
        with swapped(norm, "rho", rho), swapped(norm, "gamma", gamma):
            return _probe_sum(norm(x_, mode="train"), probe)

    return grad_check(fn, [x, norm.rho.data, rng.uniform(0.5, 1.5, 3)])


def check_channel_gate(rng):
    gate = ChannelGate(8, reduction=2, rng=np.random.default_rng(1))
    gate.astype(np.float64)
    gate.fc1.weight.data = rng.normal(size=gate.fc1.weight.shape)
    gate.fc2.weight.data = rng.normal(size=gate.fc2.weight.shape)
    v = rng.normal(size=(3, 8))
    probe = rng.normal(size=(3, 8))

    def fn(v_, w1):
        with swapped(gate.fc1, "weight", w1):
            return _probe_sum(gate(v_), probe)

    return grad_check(fn, [v, gate.fc1.weight.data])


def check_sra(rng):
    attn = SRAttention(4, 2, sr_ratio=2, rng=rng)
    attn.astype(np.float64)
    for linear in (attn.q, attn.kv, attn.proj, attn.reduce):
        linear.weight.data = rng.normal(scale=0.5, size=linear.weight.shape)
    x = rng.normal(size=(2, 16, 4))
    probe = rng.normal(size=(2, 16, 4))

    def fn(x_, wq):
        with swapped(attn.q, "weight", wq):
            return _probe_sum(attn(x_, (4, 4)), probe)

    return grad_check(fn, [x, attn.q.weight.data])


def check_fusion(rng):
    fusion = PyramidFusion((2, 3, 4, 5), fusion_dim=6, reduction=2, kernel_size=3, rng=rng)
    fusion.astype(np.float64)
    maps = [rng.normal(size=(2, e, e, c)) for e, c in ((8, 2), (4, 3), (2, 4), (1, 5))]
    probe = rng.normal(size=(2, 6))
    return grad_check(lambda *m: _probe_sum(fusion(m).embedding, probe), maps, max_entries=12, rng=rng)


def check_model(rng):
    model = MultiTaskReID(tiny_backbone_config(), num_ids=2, fusion_dim=8, cam_dim=4, gate_reduction=4, seed=3)
    model.astype(np.float64)
    criterion = ReidCriterion(2, 8, seed=4)
    criterion.astype(np.float64)
    images = rng.normal(size=(4, 32, 32, 3))
    labels = np.array([0, 0, 1, 1])
    cams = np.array([0, 1, 0, 1])

    def fn(x):
        return criterion(model(x).heads, labels, cams).total

    return grad_check(fn, [images], floor=1e-6, max_entries=16, rng=rng)


CHECKS = {
    "softmax_ce": check_softmax_ce,
    "soft_triplet": check_soft_triplet,
    "batch_hard_triplet": check_batch_hard_triplet,
    "camid": check_camid,
    "center": check_center,
    "total": check_total,
    "spatial_attention": check_spatial_attention,
    "bin": check_bin,
    "channel_gate": check_channel_gate,
    "sra": check_sra,
    "fusion": check_fusion,
    "model": check_model,
}


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    checked: int
    seconds: float
    passed: bool


def run_gradcheck_suite(names=None, tolerance=DEFAULT_TOLERANCE, seed=0):
    """Run the named checks (all by default) and return one CheckResult each."""
    names = list(names) if names else list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"Unknown gradcheck op(s): {', '.join(unknown)}; choose from {', '.join(CHECKS)}")

    results = []
    for name in names:
        started = time.perf_counter()
        report = CHECKS[name](np.random.default_rng(seed))
        result = CheckResult(name, report.max_rel_error, report.checked,
                             time.perf_counter() - started, report.passed(tolerance))
        (logger.info if result.passed else logger.error)(
            "%-18s max rel error %.2e over %d entries (%.1fs)", name, result.max_rel_error, result.checked, result.seconds
        )
        results.append(result)
    return results
