import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ["path", "object_id", "camera_id", "split"]
SPLITS = ("train", "query", "gallery")


def write_ppm(path, image):
    """Write an (H, W, 3) uint8 array as binary PPM (P6)."""
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ConfigError(f"PPM needs an (H, W, 3) uint8 image, got {image.dtype} {image.shape}")
    height, width = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


def _ppm_tokens(raw, count):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    return tokens, pos + 1


def read_ppm(path):
    """Read a binary PPM (P6, maxval 255) into an (H, W, 3) uint8 array."""
    raw = Path(path).read_bytes()
    tokens, offset = _ppm_tokens(raw, 4)
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ConfigError(f"{path}: only 8-bit binary PPM (P6) is supported")
    width, height = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height * 3, offset=offset)
    return pixels.reshape(height, width, 3)


def read_image(path):
    """PPM natively, PNG through matplotlib; returns uint8 (H, W, 3)."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    if path.suffix.lower() == ".png":
        import matplotlib.image as mpimg

        image = mpimg.imread(path)
        if image.dtype != np.uint8:
            image = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
        return image[..., :3]
    raise ConfigError(f"Unsupported image format: {path.suffix}")


def write_image(path, image):
    path = Path(path)
    if path.suffix.lower() == ".png":
        import matplotlib.image as mpimg

        mpimg.imsave(path, image)
    else:
        write_ppm(path, image)


def to_network_input(images, dtype=np.float64):
    """uint8 (N, H, W, 3) -> float in [-1, 1], channels last."""
    return (np.asarray(images, dtype=dtype) / 255.0 - 0.5) / 0.5


class DataHandler:
    """Loads a dataset manifest and the images it points to."""

    def __init__(self):
        self.data = None
        self.metadata = {}
        self.root = None
        self.id_map = {}

    def load_manifest(self, filepath):
        """Load a ``path,object_id,camera_id,split`` CSV; paths are relative to its folder."""
        filepath = Path(filepath)
        if not filepath.exists():
            raise ConfigError(f"Manifest not found: {filepath}")
        data = pd.read_csv(filepath)

        # Verify required columns exist
        missing_columns = [col for col in REQUIRED_COLUMNS if col not in data.columns]
        if missing_columns:
            raise ConfigError(f"Missing required columns: {', '.join(missing_columns)}")

        unknown = sorted(set(data["split"]) - set(SPLITS) - {"sanity"})
        if unknown:
            raise ConfigError(f"Unknown split names: {', '.join(map(str, unknown))}")
        data["object_id"] = data["object_id"].astype(np.int64)
        data["camera_id"] = data["camera_id"].astype(np.int64)

        self.root = filepath.parent
        missing_files = [p for p in data["path"] if not (self.root / p).exists()]
        if missing_files:
            raise ConfigError(f"{len(missing_files)} manifest paths do not exist, first: {missing_files[0]}")

        self.data = data
        self.id_map = self._remap_train_ids()
        self.metadata = self.describe()
        logger.info("Loaded %s: %s", filepath, ", ".join(f"{k}={v}" for k, v in self.metadata["images"].items()))
        return data, self.metadata

    def _remap_train_ids(self):
        """Map raw train object ids to 0..N-1 in sorted order; every id needs >= 2 images."""
        train = self.data[self.data["split"] == "train"]
        counts = train["object_id"].value_counts()
        too_few = sorted(counts[counts < 2].index.tolist())
        if too_few:
            raise ConfigError(f"train identities with fewer than 2 images: {too_few}")
        return {raw: index for index, raw in enumerate(sorted(counts.index.tolist()))}

    def describe(self):
        """Per-split image, identity and camera counts."""
        if self.data is None:
            return {}
        grouped = self.data.groupby("split")
        return {
            "images": grouped.size().to_dict(),
            "identities": grouped["object_id"].nunique().to_dict(),
            "cameras": grouped["camera_id"].nunique().to_dict(),
        }

    @property
    def num_train_ids(self):
        return len(self.id_map)

    @property
    def num_cameras(self):
        return int(self.data["camera_id"].max()) + 1 if self.data is not None and len(self.data) else 0

    def get_split(self, split):
        if self.data is None:
            raise ConfigError("No manifest loaded")
        if split == "sanity":
            return self.sanity_split()
        frame = self.data[self.data["split"] == split].reset_index(drop=True)
        if frame.empty:
            raise ConfigError(f"Split '{split}' is empty")
        return frame

    def train_labels(self, frame):
        return frame["object_id"].map(self.id_map).to_numpy(dtype=np.int64)

    def sanity_split(self):
        """
        Train images reused for retrieval: per (object, camera) the first image
        is a query, the rest form the gallery.
        """
        train = self.get_split("train")
        first = ~train.duplicated(subset=["object_id", "camera_id"], keep="first")
        query = train[first].assign(split="query")
        gallery = train[~first].assign(split="gallery")
        return pd.concat([query, gallery], ignore_index=True)

    def load_images(self, frame, workers=1):
        """Read every image in ``frame`` in manifest order; all must share one size."""

        def read(path):
            return read_image(self.root / path)

        paths = frame["path"].tolist()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                images = list(pool.map(read, paths))
        else:
            images = [read(p) for p in paths]
        shapes = {img.shape for img in images}
        if len(shapes) > 1:
            raise ConfigError(f"Images have mixed sizes: {sorted(shapes)}")
        logger.debug("Read %d images", len(images))
        return np.stack(images) if images else np.zeros((0, 0, 0, 3), dtype=np.uint8)
