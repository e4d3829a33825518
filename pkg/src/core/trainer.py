import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.autodiff.tensor import Tensor
from src.core.checkpoint import load_checkpoint, save_checkpoint
from src.core.data_handler import to_network_input
from src.core.errors import ConfigError, TrainingAbortError
from src.core.optim import AdamW, CosineSchedule
from src.core.sampler import pk_sample
from src.losses.uncertainty import LOG_COLUMNS, LossWeights, ReidCriterion
from src.model.backbone import BackboneConfig
from src.model.network import MultiTaskReID

logger = logging.getLogger(__name__)

EPOCH_COLUMNS = ["epoch", "lr", "steps", "mean_total", "mean_softmax", "mean_triplet", "mean_camid", "mean_center", "seconds"]


@dataclass
class TrainConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    fusion_dim: int = 256
    cam_dim: int = 128
    gate_reduction: int = 16
    cam_classifier: bool = False
    center_sigma: str = "batch"
    camid_grouping: str = "object"
    log_var_clamp: tuple = (-10.0, 10.0)
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    min_lr_ratio: float = 0.01
    epochs: int = 200
    P: int = 8
    K: int = 4
    batch_size: int = 32
    seed: int = 0
    dtype: str = "float32"
    workers: int = 1
    checkpoint_every: int = 1

    @classmethod
    def from_profile(cls, profile):
        """Build from a resolved profile (see ProfileManager.resolve)."""
        try:
            backbone = dict(profile["backbone"])
            if not isinstance(backbone.get("image_size"), (list, tuple)):
                backbone["image_size"] = [backbone["image_size"]] * 2
            loss = dict(profile["loss"])
            weights = LossWeights(
                alpha1=float(loss.pop("alpha1")),
                alpha2=float(loss.pop("alpha2")),
                alpha3=float(loss.pop("alpha3")),
                cam_ce=float(loss.pop("alpha_cam_ce", 0.0)),
            )
            values = {**profile["model"], **loss, **profile["optimizer"], **profile["train"]}
        except KeyError as e:
            raise ConfigError(f"profile is missing {e}") from e
        unknown = sorted(set(values) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        values["log_var_clamp"] = tuple(float(v) for v in values.get("log_var_clamp", (-10.0, 10.0)))
        return cls(backbone=BackboneConfig.from_dict(backbone), weights=weights, **values)

    def to_profile(self):
        """Inverse of :meth:`from_profile`, JSON-serializable; stored in checkpoints."""
        flat = asdict(self)
        flat.pop("backbone")
        flat.pop("weights")
        section = {
            "model": ("fusion_dim", "cam_dim", "gate_reduction", "cam_classifier"),
            "loss": ("center_sigma", "camid_grouping", "log_var_clamp"),
            "optimizer": ("lr", "beta1", "beta2", "weight_decay", "min_lr_ratio"),
            "train": ("epochs", "P", "K", "batch_size", "seed", "dtype", "workers", "checkpoint_every"),
        }
        profile = {name: {key: flat[key] for key in keys} for name, keys in section.items()}
        profile["loss"]["log_var_clamp"] = list(self.log_var_clamp)
        profile["loss"].update(alpha1=self.weights.alpha1, alpha2=self.weights.alpha2,
                               alpha3=self.weights.alpha3, alpha_cam_ce=self.weights.cam_ce)
        profile["backbone"] = self.backbone.to_dict()
        return profile

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def validate(self):
        self.backbone.validate()
        self.weights.validate()
        if self.P * self.K != self.batch_size:
            raise ConfigError(f"P * K must equal batch_size, got {self.P} * {self.K} != {self.batch_size}")
        if self.K < 2 or self.P < 2:
            raise ConfigError(f"PK sampling needs P >= 2 and K >= 2, got P={self.P}, K={self.K}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1 or self.checkpoint_every < 1 or self.workers < 1:
            raise ConfigError("epochs, checkpoint_every and workers must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        low, high = self.log_var_clamp
        if not low < high:
            raise ConfigError(f"log_var_clamp must be an increasing pair, got {self.log_var_clamp}")
        return self


def build_model(config, num_ids, num_cams):
    """Network and criterion for ``num_ids`` train identities, cast to the config dtype."""
    model = MultiTaskReID(
        config.backbone,
        num_ids,
        fusion_dim=config.fusion_dim,
        cam_dim=config.cam_dim,
        gate_reduction=config.gate_reduction,
        num_cams=num_cams if config.cam_classifier else None,
        seed=config.seed,
    )
    criterion = ReidCriterion(
        num_ids,
        config.fusion_dim,
        weights=config.weights,
        clamp=config.log_var_clamp,
        center_sigma=config.center_sigma,
        camid_grouping=config.camid_grouping,
        seed=config.seed + 1,
    )
    model.astype(config.np_dtype)
    criterion.astype(config.np_dtype)
    return model, criterion


def checkpoint_tensors(model, criterion, optimizer=None):
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors.update({f"criterion.{k}": v for k, v in criterion.state_dict().items()})
    if optimizer is not None:
        tensors.update({f"optim.{k}": v for k, v in optimizer.state_dict().items()})
    return tensors


def split_tensors(tensors, prefix):
    return {k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}


def load_model_checkpoint(path, config=None):
    """Rebuild (model, criterion, meta) from a checkpoint; ``config`` overrides the stored one."""
    tensors, meta = load_checkpoint(path)
    if config is None:
        config = TrainConfig.from_profile(meta["config"])
    model, criterion = build_model(config, meta["num_ids"], meta["num_cams"])
    model.load_state_dict(split_tensors(tensors, "model"))
    criterion.load_state_dict(split_tensors(tensors, "criterion"))
    return model, criterion, meta


class Trainer:
    """PK-sampled training of the multi-task network with per-step CSV logging."""

    def __init__(self, config, data_handler, out_dir, progress=True):
        self.config = config.validate()
        self.data_handler = data_handler
        self.out_dir = Path(out_dir)
        self.progress = progress
        self.rng = np.random.default_rng(config.seed)
        self.step = 0
        self.step_rows = []
        self.epoch_rows = []
        self.last_report = None

        frame = data_handler.get_split("train")
        self.labels = data_handler.train_labels(frame)
        self.cams = frame["camera_id"].to_numpy(dtype=np.int64)
        images = data_handler.load_images(frame, workers=config.workers)
        if images.shape[1:3] != tuple(config.backbone.image_size):
            raise ConfigError(f"images are {images.shape[1:3]}, backbone expects {config.backbone.image_size}")
        self.images = to_network_input(images, dtype=config.np_dtype)

        self.num_cams = data_handler.num_cameras
        self.model, self.criterion = build_model(config, data_handler.num_train_ids, self.num_cams)
        self.schedule = CosineSchedule(config.lr, config.epochs, config.min_lr_ratio)
        self.optimizer = AdamW(
            self.model.parameters() + self.criterion.parameters(),
            lr=self.schedule(0),
            betas=(config.beta1, config.beta2),
            weight_decay=config.weight_decay,
        )
        logger.info("Model has %d parameters; %d train images, %d identities",
                    self.model.num_parameters(), len(self.labels), data_handler.num_train_ids)

    def train_step(self, batch):
        """Forward, loss, backward and one optimizer step on the images at ``batch``."""
        self.model.train()
        images = Tensor(self.images[batch], dtype=self.config.np_dtype)
        outputs = self.model(images)
        report = self.criterion(outputs.heads, self.labels[batch], self.cams[batch], batch_index=self.step)
        self.optimizer.zero_grad()
        report.total.backward()
        self.optimizer.step()
        self.model.constrain()
        self.last_report = report
        self.step_rows.append(report.as_row(self.step))
        self.step += 1
        return report

    def train(self):
        """Run every epoch; returns the path of ``last.ckpt``."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        epochs = tqdm(range(self.config.epochs), desc="train", unit="epoch", disable=not self.progress)
        for epoch in epochs:
            started = time.perf_counter()
            self.optimizer.lr = self.schedule(epoch)
            batches = pk_sample(self.labels, self.config.P, self.config.K, self.rng)
            first_row = len(self.step_rows)
            for batch in batches:
                try:
                    report = self.train_step(batch)
                except TrainingAbortError as e:
                    self.dump_abort_state(e, epoch)
                    raise
                logger.debug("step %d: total %.6f", self.step - 1, report.value)

            summary = self._epoch_summary(epoch, self.step_rows[first_row:], time.perf_counter() - started)
            self.epoch_rows.append(summary)
            epochs.set_postfix(loss=f"{summary['mean_total']:.4f}", lr=f"{summary['lr']:.2e}")
            logger.info("epoch %d/%d lr %.3e loss %.5f (%.1fs)", epoch + 1, self.config.epochs,
                        summary["lr"], summary["mean_total"], summary["seconds"])
            self.write_logs()
            if (epoch + 1) % self.config.checkpoint_every == 0:
                self.save(self.out_dir / f"epoch_{epoch + 1:03d}.ckpt", epoch + 1)
        return self.save(self.out_dir / "last.ckpt", self.config.epochs)

    def _epoch_summary(self, epoch, rows, seconds):
        frame = pd.DataFrame(rows, columns=LOG_COLUMNS)
        summary = {"epoch": epoch + 1, "lr": self.optimizer.lr, "steps": len(frame)}
        for name in ("total", "softmax", "triplet", "camid", "center"):
            summary[f"mean_{name}"] = float(frame[name].mean())
        summary["seconds"] = seconds
        return summary

    def write_logs(self):
        pd.DataFrame(self.step_rows, columns=LOG_COLUMNS).to_csv(self.out_dir / "train_log.csv", index=False)
        pd.DataFrame(self.epoch_rows, columns=EPOCH_COLUMNS).to_csv(self.out_dir / "epoch_log.csv", index=False)

    def meta(self, epoch):
        return {
            "config": self.config.to_profile(),
            "epoch": epoch,
            "step": self.step,
            "num_ids": self.data_handler.num_train_ids,
            "num_cams": self.num_cams,
            "id_map": {str(raw): index for raw, index in self.data_handler.id_map.items()},
        }

    def save(self, path, epoch):
        return save_checkpoint(path, checkpoint_tensors(self.model, self.criterion, self.optimizer), self.meta(epoch))

    def dump_abort_state(self, error, epoch):
        """Write ``abort_dump.json`` and ``abort_state.ckpt`` describing the failed step."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        non_finite = [name for name, p in self.model.named_parameters() if not np.all(np.isfinite(p.data))]
        dump = {
            "component": error.component,
            "batch_index": error.batch_index,
            "epoch": epoch + 1,
            "step": self.step,
            "lr": self.optimizer.lr,
            "message": str(error),
            "last_good_components": self.last_report.components if self.last_report else None,
            "non_finite_parameters": non_finite,
        }
        (self.out_dir / "abort_dump.json").write_text(json.dumps(dump, indent=2))
        self.save(self.out_dir / "abort_state.ckpt", epoch)
        self.write_logs()
        logger.error("Training aborted: %s; state dumped to %s", error, self.out_dir)
