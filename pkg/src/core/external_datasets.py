"""
Manifest builder for re-identification datasets laid out as folders.

Licensed aerial datasets are not bundled. Once unpacked into

    <root>/train/<object>_<camera>_<anything>.<ext>
    <root>/query/...
    <root>/gallery/...

this module writes the ``path,object_id,camera_id,split`` manifest the rest
of the package consumes. Camera tokens may carry a letter prefix (``c1``).
"""

import logging
import os
import re
from pathlib import Path

import pandas as pd

from src.core.data_handler import REQUIRED_COLUMNS, SPLITS
from src.core.errors import ConfigError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".png")
NAME_PATTERN = re.compile(r"^(?P<object>\d+)_[A-Za-z]*(?P<camera>\d+)(?:_.*)?$")


def parse_name(filename):
    """(object_id, camera_id) from ``{object}_{camera}_*``; None if it does not match."""
    match = NAME_PATTERN.match(Path(filename).stem)
    if not match:
        return None
    return int(match.group("object")), int(match.group("camera"))


def scan_folder_layout(root):
    """Collect every image under the split folders, sorted by split then relative path."""
    root = Path(root)
    records, skipped = [], 0
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            raise ConfigError(f"Missing split folder: {split_dir}")
        for folder, _, files in os.walk(split_dir):
            for file in files:
                if not file.lower().endswith(IMAGE_SUFFIXES):
                    continue
                parsed = parse_name(file)
                if parsed is None:
                    skipped += 1
                    continue
                rel_path = os.path.relpath(os.path.join(folder, file), root).replace(os.sep, "/")
                records.append({"path": rel_path, "object_id": parsed[0], "camera_id": parsed[1], "split": split})

    if skipped:
        logger.warning("Skipped %d files whose names do not match {object}_{camera}_*", skipped)
    if not records:
        raise ConfigError(f"No images found under {root}")
    order = {name: i for i, name in enumerate(SPLITS)}
    records.sort(key=lambda r: (order[r["split"]], r["path"]))
    return pd.DataFrame(records, columns=REQUIRED_COLUMNS)


def build_manifest(root, manifest_name="manifest.csv"):
    """Scan ``root`` and write the manifest next to the split folders."""
    manifest = scan_folder_layout(root)
    path = Path(root) / manifest_name
    manifest.to_csv(path, index=False)
    logger.info("Wrote %s with %d images", path, len(manifest))
    return path, manifest
