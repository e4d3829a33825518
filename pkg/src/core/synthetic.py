"""
Desk-scale stand-in for aerial re-identification data.

Every identity is a top-down "vehicle": a body of an identity-specific colour
and shape carrying a quadrant marker pattern. It is drawn at a random
altitude-dependent scale on the fixed clutter background of its camera,
passed through the camera's colour style and perturbed with Gaussian noise.
"""

import colorsys
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from src.core.data_handler import REQUIRED_COLUMNS, write_image
from src.core.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class SyntheticSpec:
    num_ids: int = 8
    cams: int = 2
    images_per_id_per_cam: int = 8
    image_size: int = 64
    altitude_scale_range: tuple = (0.35, 0.6)
    camera_style_strength: float = 0.15
    noise: float = 0.02
    position_jitter: float = 0.05
    holdout_per_id_per_cam: int = 2
    image_format: str = "ppm"
    seed: int = 0

    def __post_init__(self):
        scale = self.altitude_scale_range
        scale = scale if isinstance(scale, (list, tuple)) else (scale, scale)
        self.altitude_scale_range = tuple(float(v) for v in scale)

    @classmethod
    def from_dict(cls, values):
        unknown = sorted(set(values) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"Unknown synthetic spec keys: {', '.join(unknown)}")
        return cls(**values)

    def to_dict(self):
        return asdict(self)

    @property
    def num_images(self):
        return self.num_ids * self.cams * self.images_per_id_per_cam

    def validate(self):
        if self.num_ids < 2:
            raise ConfigError(f"need at least 2 identities, got {self.num_ids}")
        if self.cams < 2:
            raise ConfigError(f"cross-camera retrieval needs at least 2 cameras, got {self.cams}")
        if self.holdout_per_id_per_cam < 2:
            raise ConfigError("holdout_per_id_per_cam must be >= 2 (one query plus gallery)")
        if self.images_per_id_per_cam - self.holdout_per_id_per_cam < 1:
            raise ConfigError(
                f"impossible split: {self.images_per_id_per_cam} images per id per camera "
                f"cannot hold out {self.holdout_per_id_per_cam} and keep one for training"
            )
        if self.image_size < 16:
            raise ConfigError(f"image_size must be >= 16, got {self.image_size}")
        low, high = self.altitude_scale_range
        if not 0 < low <= high <= 1:
            raise ConfigError(f"altitude_scale_range must satisfy 0 < low <= high <= 1, got {self.altitude_scale_range}")
        if self.noise < 0 or self.position_jitter < 0 or self.camera_style_strength < 0:
            raise ConfigError("noise, position_jitter and camera_style_strength must be non-negative")
        if self.image_format not in ("ppm", "png"):
            raise ConfigError(f"image_format must be 'ppm' or 'png', got {self.image_format!r}")
        return self


@dataclass
class IdentitySignature:
    body: np.ndarray
    marker: np.ndarray
    pattern: tuple
    elliptic: bool
    aspect: float


def identity_signature(spec, object_id):
    """Colour, shape and marker pattern; distinct hues and patterns per identity."""
    rng = np.random.default_rng([spec.seed, 7, object_id])
    hue = (object_id / spec.num_ids + 0.05 * rng.random()) % 1.0
    body = np.array(colorsys.hsv_to_rgb(hue, 0.75, 0.55 + 0.35 * rng.random()))
    marker = np.array(colorsys.hsv_to_rgb((hue + 0.5) % 1.0, 0.4, 0.95))
    bits = object_id + 1
    pattern = tuple(bool((bits >> q) & 1) for q in range(4))
    return IdentitySignature(body, marker, pattern, elliptic=bool(object_id % 2), aspect=0.45 + 0.2 * rng.random())


def camera_background(spec, camera_id):
    """Fixed low-frequency clutter of one camera, values in [0, 1]."""
    rng = np.random.default_rng([spec.seed, 11, camera_id])
    cells = 8
    coarse = rng.uniform(0.2, 0.6, size=(cells, cells, 3))
    coarse[..., 1] += 0.1
    repeat = -(-spec.image_size // cells)
    clutter = np.repeat(np.repeat(coarse, repeat, axis=0), repeat, axis=1)
    return np.clip(clutter[:spec.image_size, :spec.image_size], 0.0, 1.0)


def camera_style(spec, camera_id):
    """(brightness offset, per-channel gain) of one camera."""
    rng = np.random.default_rng([spec.seed, 13, camera_id])
    strength = spec.camera_style_strength
    brightness = strength * (2.0 * camera_id / max(spec.cams - 1, 1) - 1.0)
    gain = 1.0 + strength * rng.uniform(-1.0, 1.0, size=3)
    return brightness, gain


def render_image(spec, object_id, camera_id, index):
    """One uint8 (S, S, 3) render; a pure function of its arguments."""
    rng = np.random.default_rng([spec.seed, object_id, camera_id, index])
    signature = identity_signature(spec, object_id)
    size = spec.image_size

    low, high = spec.altitude_scale_range
    scale = rng.uniform(low, high) if high > low else low
    offset = rng.uniform(-spec.position_jitter, spec.position_jitter, size=2) if spec.position_jitter else np.zeros(2)

    # normalized coordinates in [-1, 1], object frame
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(coords - offset[0], coords - offset[1], indexing="ij")
    half_h, half_w = scale, scale * signature.aspect
    u, v = yy / half_h, xx / half_w
    if signature.elliptic:
        body = u ** 2 + v ** 2 <= 1.0
    else:
        body = (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)

    image = camera_background(spec, camera_id).copy()
    image[body] = signature.body

    for quadrant, on in enumerate(signature.pattern):
        if not on:
            continue
        sy = -0.5 if quadrant < 2 else 0.5
        sx = -0.5 if quadrant % 2 == 0 else 0.5
        marker = (np.abs(u - sy) <= 0.25) & (np.abs(v - sx) <= 0.3) & body
        image[marker] = signature.marker

    brightness, gain = camera_style(spec, camera_id)
    image = image * gain + brightness
    if spec.noise:
        image = image + rng.normal(0.0, spec.noise, size=image.shape)
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def assign_split(spec, index):
    """First held-out image per (id, camera) is a query, the other held-out ones gallery."""
    if index == 0:
        return "query"
    if index < spec.holdout_per_id_per_cam:
        return "gallery"
    return "train"


def generate_synthetic(spec, out_dir, workers=1):
    """Render the dataset under ``out_dir`` and write ``manifest.csv``; returns the manifest frame."""
    spec.validate()
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {out_dir}: {e}") from e

    records = []
    for object_id in range(spec.num_ids):
        for camera_id in range(spec.cams):
            for index in range(spec.images_per_id_per_cam):
                name = f"{object_id:03d}_{camera_id}_{index:02d}.{spec.image_format}"
                records.append({
                    "path": f"images/{name}",
                    "object_id": object_id,
                    "camera_id": camera_id,
                    "split": assign_split(spec, index),
                    "_index": index,
                })

    def write(record):
        image = render_image(spec, record["object_id"], record["camera_id"], record["_index"])
        write_image(out_dir / record["path"], image)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(write, records))
    else:
        for record in records:
            write(record)

    manifest = pd.DataFrame(records)[REQUIRED_COLUMNS]
    manifest.to_csv(out_dir / "manifest.csv", index=False)
    logger.info("Wrote %d images for %d identities x %d cameras to %s",
                len(manifest), spec.num_ids, spec.cams, out_dir)
    return manifest
