"""Alternating training: every epoch runs all source batches through the
classification update, then all unsupervised batches through the denoising
reconstruction update, until the monitored loss stabilises."""
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from src.data_io.datasets import Dataset, UnlabeledDataset, concat_unlabeled
from src.drcn_engine.config import Flavor, TrainConfig
from src.drcn_engine.model import (
    DrcnModel,
    classification_loss_and_grads,
    predict_labels,
    reconstruction_loss_and_grads,
)
from src.noise_augment.corruption import augment_batch, corrupt_batch
from src.objective_opt.losses import one_hot
from src.objective_opt.rmsprop import RmspropState, rmsprop_step
from src.tensor_core.errors import ArgumentError, TrainingError
from src.tensor_core.rng import DROPOUT, NOISE, SHUFFLE, Rng
from src.tensor_core.tensor_ops import checksum
from src.utils.benchmarking import benchmark, tracker

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "loss_c", "loss_r", "src_val_acc", "tgt_acc", "seconds"]


class StopDecision(str, Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss_c: Optional[float] = None
    loss_r: Optional[float] = None
    src_val_acc: Optional[float] = None
    tgt_acc: Optional[float] = None
    seconds: float = 0.0

    def __post_init__(self):
        for name in ("loss_c", "loss_r"):
            value = getattr(self, name)
            if value is not None and not np.isfinite(value):
                raise TrainingError(f"epoch {self.epoch}: {name} is not finite ({value})")


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)
    monitor: str = "loss_r"  # which loss the stopping rule watches
    stop_reason: str = "max_epochs"

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise TrainingError(f"epoch {record.epoch} does not follow epoch {self.records[-1].epoch}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def monitored_losses(self) -> List[float]:
        return [getattr(r, self.monitor) for r in self.records if getattr(r, self.monitor) is not None]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.records], columns=LOG_COLUMNS)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


def stopping_rule(log: TrainLog, window: int, tolerance: float) -> StopDecision:
    """Stop once the last ``window`` epoch losses vary by less than ``tolerance`` relative to their max"""
    if window < 2:
        raise ArgumentError(f"stopping window must be >= 2, got {window}")
    losses = log.monitored_losses()
    if len(losses) < window:
        return StopDecision.CONTINUE
    recent = losses[-window:]
    top, bottom = max(recent), min(recent)
    if top <= 0.0 or (top - bottom) / top < tolerance:
        return StopDecision.STOP
    return StopDecision.CONTINUE


def select_unsupervised_pool(
    flavor: Flavor, source_unlabeled: UnlabeledDataset, target_unlabeled: UnlabeledDataset
) -> UnlabeledDataset:
    """Images the reconstruction pipeline trains on for each model flavor"""
    if flavor == "target-only":
        pool = target_unlabeled
    elif flavor == "source-only":
        pool = source_unlabeled
    elif flavor == "source+target":
        pool = concat_unlabeled(source_unlabeled, target_unlabeled)
    else:
        raise ArgumentError(f"unknown flavor '{flavor}'")
    if len(pool) == 0:
        raise ArgumentError(f"unsupervised pool for flavor '{flavor}' is empty")
    return pool


@benchmark("engine", "evaluate")
def evaluate(model: DrcnModel, ds: Dataset) -> float:
    """Fraction of argmax predictions equal to the labels"""
    if ds.labels is None:
        raise ArgumentError("evaluation needs a labeled dataset")
    if len(ds) == 0:
        raise ArgumentError("cannot evaluate on an empty dataset")
    return float(np.mean(predict_labels(model, ds.images) == ds.labels))


def _batches(n: int, batch_size: int, rng: Rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _has_encoder_gradient(model: DrcnModel, grads: Mapping[str, np.ndarray]) -> bool:
    return any(np.any(grads[name]) for name in model.names("enc") if name in grads)


@benchmark("engine", "source_pass")
def _source_pass(model, source, cfg, opt_c, rngs, epoch) -> Tuple[float, bool]:
    """Mean classification loss, and whether any encoder gradient was nonzero"""
    total, count, enc_grad = 0.0, 0, False
    for idx in _batches(len(source), cfg.batch_source, rngs["shuffle_source"]):
        augmented = augment_batch(source.images[idx], cfg.noise, rngs["augment"])
        try:
            loss, grads = classification_loss_and_grads(
                model, augmented, one_hot(source.labels[idx], model.num_classes), cfg.p_keep, rngs["dropout"]
            )
            rmsprop_step(opt_c, model.params, grads, cfg.lam)
            enc_grad = enc_grad or _has_encoder_gradient(model, grads)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}, classification pipeline: {exc}") from exc
        total += loss.scalar * loss.batch_size
        count += loss.batch_size
    return total / count, enc_grad


@benchmark("engine", "target_pass")
def _target_pass(model, pool, cfg, opt_r, rngs, epoch, freeze_encoder) -> Tuple[float, bool]:
    total, count, enc_grad = 0.0, 0, False
    for idx in _batches(len(pool), cfg.batch_target, rngs["shuffle_target"]):
        clean = pool.images[idx]
        noisy = corrupt_batch(clean, cfg.noise, rngs["denoise"])
        try:
            loss, grads = reconstruction_loss_and_grads(model, noisy, clean, freeze_encoder)
            rmsprop_step(opt_r, model.params, grads, 1.0 - cfg.lam)
            enc_grad = enc_grad or _has_encoder_gradient(model, grads)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}, reconstruction pipeline: {exc}") from exc
        total += loss.scalar * loss.batch_size
        count += loss.batch_size
    return total / count, enc_grad


def _check_finite(value: Optional[float], epoch: int, pipeline: str) -> None:
    if value is not None and not np.isfinite(value):
        raise TrainingError(f"epoch {epoch}, {pipeline} pipeline: loss is {value}")


def train(
    model: DrcnModel,
    source: Optional[Dataset],
    target: Optional[UnlabeledDataset],
    cfg: TrainConfig,
    source_val: Optional[Dataset] = None,
    target_eval: Optional[Dataset] = None,
    freeze_encoder: bool = False,
    on_epoch: Optional[Callable[[DrcnModel, EpochRecord], None]] = None,
) -> TrainLog:
    """Run the alternating algorithm.

    ``source=None`` skips the classification loop and ``target=None`` (or a model
    without decoder) skips the reconstruction loop, which gives the ConvNet and
    ConvAE baselines. ``freeze_encoder`` restricts reconstruction updates to the
    decoder. Pipeline isolation is checked bitwise after every inner loop, and
    a loop with a nonzero step scale and nonzero encoder gradients must move
    the shared encoder.
    """
    classify = source is not None
    reconstruct = target is not None and model.has_decoder
    if not classify and not reconstruct:
        raise ArgumentError("nothing to train: no labeled source and no reconstruction pool")
    if classify and source.labels is None:
        raise ArgumentError("the classification pipeline needs a labeled source set")
    for ds in (source, target):
        if ds is not None and ds.image_shape != model.input_shape:
            raise ArgumentError(f"dataset images {ds.image_shape} do not match model input {model.input_shape}")

    master = Rng(cfg.seed)
    rngs = {
        "shuffle_source": master.substream(f"{SHUFFLE}/source"),
        "shuffle_target": master.substream(f"{SHUFFLE}/target"),
        "augment": master.substream(f"{NOISE}/augment"),
        "denoise": master.substream(f"{NOISE}/denoise"),
        "dropout": master.substream(DROPOUT),
    }
    opt_c = RmspropState(model.group("enc", "lab"), cfg.lr_c, cfg.rms_decay, cfg.rms_epsilon) if classify else None
    trainable_r = ("dec",) if freeze_encoder else ("enc", "dec")
    opt_r = (
        RmspropState(model.group(*trainable_r), cfg.lr_r, cfg.rms_decay, cfg.rms_epsilon) if reconstruct else None
    )

    # The reconstruction loss is only watched while the reconstruction pipeline actually learns
    log = TrainLog(monitor="loss_r" if reconstruct and cfg.lam < 1.0 else "loss_c")
    logger.info(
        f"🚀 Training for at most {cfg.max_epochs} epochs: lambda={cfg.lam}, "
        f"source={len(source) if classify else 0}, unsupervised pool={len(target) if reconstruct else 0}, "
        f"stopping on {log.monitor}"
    )

    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        loss_c = loss_r = None

        if classify:
            dec_before = checksum(model.group("dec").values())
            enc_before = checksum(model.group("enc").values())
            loss_c, enc_grad = _source_pass(model, source, cfg, opt_c, rngs, epoch)
            _check_finite(loss_c, epoch, "classification")
            if checksum(model.group("dec").values()) != dec_before:
                raise TrainingError(f"epoch {epoch}: classification loop modified decoder parameters")
            if cfg.lam > 0 and enc_grad and checksum(model.group("enc").values()) == enc_before:
                raise TrainingError(f"epoch {epoch}: classification loop left the shared encoder unchanged")

        if reconstruct:
            lab_before = checksum(model.group("lab").values())
            enc_before = checksum(model.group("enc").values())
            loss_r, enc_grad = _target_pass(model, target, cfg, opt_r, rngs, epoch, freeze_encoder)
            _check_finite(loss_r, epoch, "reconstruction")
            if checksum(model.group("lab").values()) != lab_before:
                raise TrainingError(f"epoch {epoch}: reconstruction loop modified labeler parameters")
            enc_after = checksum(model.group("enc").values())
            if freeze_encoder and enc_after != enc_before:
                raise TrainingError(f"epoch {epoch}: frozen encoder was modified")
            if not freeze_encoder and cfg.lam < 1 and enc_grad and enc_after == enc_before:
                raise TrainingError(f"epoch {epoch}: reconstruction loop left the shared encoder unchanged")

        record = EpochRecord(
            epoch=epoch,
            loss_c=loss_c,
            loss_r=loss_r,
            src_val_acc=evaluate(model, source_val) if source_val is not None and len(source_val) else None,
            tgt_acc=evaluate(model, target_eval) if target_eval is not None else None,
            seconds=time.perf_counter() - start,
        )
        log.append(record)
        tracker.record("engine", "train_epoch", record.seconds, {"epoch": epoch})
        logger.info(
            f"📊 epoch {epoch}: loss_c={_fmt(loss_c)} loss_r={_fmt(loss_r)} "
            f"src_val_acc={_fmt(record.src_val_acc)} tgt_acc={_fmt(record.tgt_acc)} ({record.seconds:.1f}s)"
        )
        if on_epoch is not None:
            on_epoch(model, record)

        if stopping_rule(log, cfg.stop_window, cfg.stop_tolerance) == StopDecision.STOP:
            log.stop_reason = "converged"
            logger.info(f"🛑 {log.monitor} stabilised after {epoch} epochs")
            break

    return log


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"
