"""Experiment driver: resolves datasets, trains the selected model flavor or
baseline, and writes the run directory (config snapshot, train log, checkpoint,
reconstruction grids, report)."""
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.data_io.datasets import Dataset, split_validation
from src.data_io.idx_loader import load_idx
from src.data_io.preprocessing import preprocess
from src.data_io.synthetic import ShiftSpec, make_synthetic_shift
from src.data_io.usps_loader import load_usps
from src.drcn_engine.checkpoint import atomic_write_bytes, save_checkpoint
from src.drcn_engine.model import DrcnModel, build_model
from src.drcn_engine.trainer import EpochRecord, TrainLog, evaluate, select_unsupervised_pool, train
from src.harness.config import DATA_DIR_ENV, ExperimentConfig, data_root, write_config_snapshot
from src.harness.diagnostics import dump_reconstruction_grid, reconstruction_shift_distances
from src.harness.models import RunReport, StageTiming, SweepEntry
from src.tensor_core.errors import ConfigError, ManifestError, TrainingError
from src.tensor_core.rng import Rng
from src.utils.benchmarking import tracker

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.env"
LOG_FILE = "train_log.csv"
REPORT_FILE = "report.json"
CHECKPOINT_FILE = "model.ckpt"
GRID_FILE = "reconstruction.pgm"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
USPS_FILES = {"train": "usps_train.bin", "test": "usps_test.bin"}
SYNTHETIC = "synthetic"


@dataclass
class ExperimentData:
    source_train: Dataset
    source_val: Dataset
    target_train: Dataset  # labels used only by the convnet_tgt baseline
    target_test: Dataset
    shift: Optional[ShiftSpec] = None  # known for synthetic targets


def _domain_kind(root: Path, split: str) -> Optional[str]:
    if (root / MNIST_FILES[split][0]).is_file():
        return "mnist"
    if (root / USPS_FILES[split]).is_file():
        return "usps"
    return None


def load_domain(name: str, split: str) -> Dataset:
    """A real dataset split by name ('mnist', 'usps', under the data root) or by directory path"""
    path = Path(name)
    if path.is_dir():
        root, kind = path, _domain_kind(path, split)
    elif name.lower() in ("mnist", "usps"):
        kind = name.lower()
        root = data_root() / kind
    else:
        root, kind = path, None
    if kind is None:
        raise ConfigError(f"cannot resolve dataset '{name}' (set {DATA_DIR_ENV} or pass a dataset directory)")

    if kind == "mnist":
        images, labels = (root / f for f in MNIST_FILES[split])
        if not images.is_file():
            raise ConfigError(f"dataset '{name}': missing {images}")
        return load_idx(images, labels)
    container = root / USPS_FILES[split]
    if not container.is_file():
        raise ConfigError(f"dataset '{name}': missing {container}")
    return load_usps(container)


def _synthetic_data(cfg: ExperimentConfig, rng: Rng) -> Tuple[Dataset, Dataset, Dataset, ShiftSpec]:
    if not (cfg.source.startswith(SYNTHETIC) and cfg.target.startswith(SYNTHETIC)):
        raise ConfigError(f"synthetic sources pair with synthetic targets, got {cfg.source} -> {cfg.target}")
    shift = cfg.shift
    if cfg.target != SYNTHETIC:
        kind = cfg.target[len(SYNTHETIC) + 1:]
        try:
            shift = shift.model_copy(update={"kind": ShiftSpec(kind=kind).kind})
        except ValueError:
            raise ConfigError(f"unknown synthetic shift '{kind}'") from None
    total = cfg.synthetic_count + cfg.synthetic_test
    total += (-total) % cfg.synthetic_classes
    source, target = make_synthetic_shift(
        rng.substream("synthetic"), total, shift, cfg.synthetic_classes, cfg.synthetic_size
    )
    source = source.subset(np.arange(cfg.synthetic_count))
    target_train = target.subset(np.arange(cfg.synthetic_count), note="train split")
    target_test = target.subset(np.arange(cfg.synthetic_count, total), note="test split")
    return source, target_train, target_test, shift


def resolve_datasets(cfg: ExperimentConfig) -> ExperimentData:
    rng = Rng(cfg.train.seed).substream("data")
    shift = None
    if cfg.source.startswith(SYNTHETIC) or cfg.target.startswith(SYNTHETIC):
        source, target_train, target_test, shift = _synthetic_data(cfg, rng)
    else:
        size = (cfg.input_size, cfg.input_size)
        source = preprocess(load_domain(cfg.source, "train"), size)
        target_train = preprocess(load_domain(cfg.target, "train"), size)
        target_test = preprocess(load_domain(cfg.target, "test"), size)
    source = source.head(cfg.source_size, rng.substream("source_size"))
    target_train = target_train.head(cfg.target_size, rng.substream("target_size"))
    target_test = target_test.head(cfg.test_size, rng.substream("test_size"))
    if cfg.baseline == "convnet_tgt":
        # trained and tested on the target domain only
        source = target_train
    source_train, source_val = split_validation(source, cfg.train.val_fraction, rng.substream("split"))
    logger.info(
        f"📦 Data: {len(source_train)} source train / {len(source_val)} source val, "
        f"{len(target_train)} target train / {len(target_test)} target test"
    )
    return ExperimentData(source_train, source_val, target_train, target_test, shift)


def _renumber(log: TrainLog, offset: int) -> List[EpochRecord]:
    return [dataclasses.replace(r, epoch=r.epoch + offset) for r in log.records]


class Experiment:
    """One configured run: data, model, training and the run directory"""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out_dir = Path(cfg.out_dir)
        self.data: Optional[ExperimentData] = None
        self.model: Optional[DrcnModel] = None
        self.log: Optional[TrainLog] = None

    def load_data(self) -> ExperimentData:
        self.data = resolve_datasets(self.cfg)
        return self.data

    def build(self) -> DrcnModel:
        ds = self.data.source_train
        spec = self.cfg.network_spec(ds.image_shape, ds.num_classes)
        self.model = build_model(
            ds.image_shape, ds.num_classes, self.cfg.train, spec=spec, with_decoder=self.cfg.has_decoder
        )
        return self.model

    def _grid_images(self) -> np.ndarray:
        held_out = self.data.source_val if len(self.data.source_val) else self.data.source_train
        return held_out.images[: self.cfg.grid_images]

    def _on_epoch(self, model: DrcnModel, record: EpochRecord) -> None:
        every = self.cfg.dump_every
        if every and model.has_decoder and record.epoch % every == 0:
            dump_reconstruction_grid(
                model, self._grid_images(), self.out_dir / f"reconstruction_epoch{record.epoch:03d}.pgm"
            )

    def fit(self) -> TrainLog:
        cfg, data, model = self.cfg.train, self.data, self.model
        baseline = self.cfg.baseline
        # classification-only training runs at full scale, as a lambda=1 DRCN would
        supervised_cfg = cfg.model_copy(update={"lam": 1.0})
        pool = None
        if self.cfg.pool_flavor is not None:
            pool = select_unsupervised_pool(
                self.cfg.pool_flavor, data.source_train.unlabeled(), data.target_train.unlabeled()
            )
        logger.info(f"🏋️  Training baseline '{baseline}'")

        if baseline in ("convnet_src", "convnet_tgt"):
            self.log = train(
                model, data.source_train, None, supervised_cfg,
                source_val=data.source_val, target_eval=data.target_test, on_epoch=self._on_epoch,
            )
        elif baseline == "convae":
            self.log = train(model, None, pool, cfg.model_copy(update={"lam": 0.0}), on_epoch=self._on_epoch)
        elif baseline == "convae_convnet_src":
            supervised = train(
                model, data.source_train, None, supervised_cfg,
                source_val=data.source_val, target_eval=data.target_test,
            )
            decoder_only = train(
                model, None, pool, cfg.model_copy(update={"lam": 0.0}),
                freeze_encoder=True, on_epoch=self._on_epoch,
            )
            self.log = TrainLog(
                records=supervised.records + _renumber(decoder_only, len(supervised)),
                monitor=decoder_only.monitor,
                stop_reason=decoder_only.stop_reason,
            )
        else:
            self.log = train(
                model, data.source_train, pool, cfg.model_copy(update={"flavor": self.cfg.pool_flavor}),
                source_val=data.source_val, target_eval=data.target_test, on_epoch=self._on_epoch,
            )
        return self.log

    def report(self, stop_reason: str, message: Optional[str] = None) -> RunReport:
        target_acc = source_acc = None
        distances = (None, None)
        if self.model is not None and stop_reason != "diverged":
            if self.cfg.baseline != "convae":
                target_acc = evaluate(self.model, self.data.target_test)
            if self.cfg.baseline != "convae" and len(self.data.source_val):
                source_acc = evaluate(self.model, self.data.source_val)
            if self.data.shift is not None and self.model.has_decoder and len(self.data.source_val):
                held_out = self.data.source_val.images
                distances = reconstruction_shift_distances(self.model, held_out, self.data.shift.apply(held_out))
        return RunReport(
            baseline=self.cfg.baseline,
            source=self.cfg.source,
            target=self.cfg.target,
            target_accuracy=target_acc,
            source_val_accuracy=source_acc,
            epochs_run=len(self.log) if self.log is not None else 0,
            stop_reason=stop_reason,
            config_hash=self.cfg.config_hash(),
            seed=self.cfg.train.seed,
            message=message,
            recon_distance_source=distances[0],
            recon_distance_shifted=distances[1],
            timings=[StageTiming(**entry) for entry in tracker.get_summary()],
        )

    def write_report(self, report: RunReport) -> None:
        atomic_write_bytes(self.out_dir / REPORT_FILE, report.model_dump_json(indent=2).encode("utf-8"))

    def run(self) -> RunReport:
        tracker.clear()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_config_snapshot(self.cfg, self.out_dir / CONFIG_FILE)
        self.load_data()
        self.build()
        try:
            self.fit()
        except TrainingError as exc:
            logger.error(f"❌ Run diverged: {exc}")
            report = self.report("diverged", str(exc))
            self.write_report(report)
            return report

        self.log.to_csv(self.out_dir / LOG_FILE)
        save_checkpoint(self.model, self.out_dir / CHECKPOINT_FILE)
        if self.model.has_decoder:
            dump_reconstruction_grid(self.model, self._grid_images(), self.out_dir / GRID_FILE)
        report = self.report(self.log.stop_reason)
        self.write_report(report)
        verify_run_dir(self.out_dir, self.model.has_decoder)
        logger.info(
            f"✅ Finished '{self.cfg.baseline}' after {report.epochs_run} epochs: "
            f"target accuracy {_fmt(report.target_accuracy)}"
        )
        return report


def verify_run_dir(out_dir: Path, has_decoder: bool) -> None:
    """The run directory holds exactly the expected artifacts"""
    names = {p.name for p in Path(out_dir).iterdir() if not p.name.startswith(".")}
    required = {CONFIG_FILE, LOG_FILE, REPORT_FILE, CHECKPOINT_FILE}
    missing = required - names
    grids = {n for n in names if n.startswith("reconstruction") and n.endswith(".pgm")}
    if has_decoder and not grids:
        missing.add(GRID_FILE)
    if missing:
        raise ManifestError(f"run directory '{out_dir}' is missing {sorted(missing)}")
    unexpected = names - required - grids
    if unexpected:
        raise ManifestError(f"run directory '{out_dir}' holds unexpected files {sorted(unexpected)}")


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    return Experiment(cfg).run()


def run_repeats(cfg: ExperimentConfig) -> Tuple[List[RunReport], pd.DataFrame]:
    """``cfg.repeat`` runs with seeds seed, seed+1, ... in ``seed_<s>`` subdirectories, plus repeats.csv"""
    if cfg.repeat == 1:
        report = run_experiment(cfg)
        return [report], pd.DataFrame([report.model_dump(exclude={"timings"})])
    base = Path(cfg.out_dir)
    reports = []
    for offset in range(cfg.repeat):
        seed = cfg.train.seed + offset
        run_cfg = cfg.model_copy(update={
            "out_dir": base / f"seed_{seed}",
            "repeat": 1,
            "train": cfg.train.model_copy(update={"seed": seed}),
        })
        reports.append(run_experiment(run_cfg))
    frame = pd.DataFrame([r.model_dump(exclude={"timings"}) for r in reports])
    frame.to_csv(base / "repeats.csv", index=False)
    accuracies = frame["target_accuracy"].dropna()
    if len(accuracies):
        logger.info(
            f"📊 {cfg.baseline}: target accuracy {accuracies.mean():.4f} ± {accuracies.std(ddof=0):.4f} "
            f"over {len(accuracies)} runs (median {accuracies.median():.4f})"
        )
    return reports, frame


def run_sweep(
    cfg: ExperimentConfig,
    lambdas: Sequence[float] = (0.4, 0.5, 0.6, 0.7),
    fc_widths: Optional[Sequence[int]] = None,
) -> Tuple[ExperimentConfig, pd.DataFrame]:
    """Grid over lambda and fc width; the winner has the best source validation accuracy"""
    base = Path(cfg.out_dir)
    entries: List[SweepEntry] = []
    best_cfg, best_acc = None, -1.0
    for width in fc_widths or (cfg.train.fc_width,):
        for lam in lambdas:
            run_cfg = cfg.model_copy(update={
                "out_dir": base / f"lambda_{lam:g}_fc_{width}",
                "train": cfg.train.model_copy(update={"lam": lam, "fc_width": width}),
            })
            report = run_experiment(run_cfg)
            entries.append(SweepEntry(
                lam=lam, fc_width=width, source_val_accuracy=report.source_val_accuracy,
                target_accuracy=report.target_accuracy, out_dir=str(run_cfg.out_dir),
            ))
            score = report.source_val_accuracy if report.source_val_accuracy is not None else -1.0
            if score > best_acc:
                best_cfg, best_acc = run_cfg, score
    frame = pd.DataFrame([e.model_dump() for e in entries])
    frame.to_csv(base / "sweep.csv", index=False)
    logger.info(
        f"🏆 Best by source validation accuracy: lambda={best_cfg.train.lam}, "
        f"fc width={best_cfg.train.fc_width} ({best_acc:.4f})"
    )
    return best_cfg, frame


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"
