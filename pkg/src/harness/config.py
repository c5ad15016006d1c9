"""Experiment configuration: flat ``key=value`` files with ``#`` comments.

Files are read with python-dotenv; command-line flags override file values.
Every key is typed, unknown keys are rejected.
"""
import hashlib
import json
import os
from pathlib import Path
from typing import Callable, Dict, Literal, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from src.data_io.synthetic import ShiftSpec
from src.drcn_engine.checkpoint import atomic_write_bytes
from src.drcn_engine.config import Flavor, TrainConfig
from src.nn_layers.specs import NetworkSpec
from src.tensor_core.errors import ConfigError

Baseline = Literal["drcn", "drcn_s", "drcn_st", "convnet_src", "convnet_tgt", "convae", "convae_convnet_src"]

POOL_FOR_BASELINE: Dict[str, Flavor] = {
    "drcn": "target-only",
    "drcn_s": "source-only",
    "drcn_st": "source+target",
    "convae": "target-only",
    "convae_convnet_src": "target-only",
}

DATA_DIR_ENV = "DRCN_DATA_DIR"


class ExperimentConfig(BaseModel):
    source: str = "mnist"
    target: str = "usps"
    baseline: Baseline = "drcn"
    out_dir: Path = Path("runs/latest")
    dump_every: int = Field(default=0, ge=0)  # epochs between reconstruction grids; 0 = final only
    grid_images: int = Field(default=8, ge=1)
    source_size: Optional[int] = Field(default=None, ge=1)
    target_size: Optional[int] = Field(default=None, ge=1)
    test_size: Optional[int] = Field(default=None, ge=1)
    input_size: int = Field(default=28, ge=4)  # every real digit domain is rescaled to this square
    synthetic_classes: int = Field(default=2, ge=2)
    synthetic_size: int = Field(default=28, ge=4)
    synthetic_count: int = Field(default=2500, ge=2)
    synthetic_test: int = Field(default=500, ge=1)
    shift: ShiftSpec = Field(default_factory=ShiftSpec)
    conv_channels: Tuple[int, ...] = (100, 150, 200)
    kernel_sizes: Tuple[int, ...] = (5, 5, 3)
    repeat: int = Field(default=1, ge=1)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def _distinct_domains(self):
        if self.source == self.target and self.baseline != "convnet_tgt":
            raise ValueError(f"source and target are both '{self.source}'; only convnet_tgt may use one domain")
        return self

    @property
    def pool_flavor(self) -> Optional[Flavor]:
        return POOL_FOR_BASELINE.get(self.baseline)

    @property
    def has_decoder(self) -> bool:
        return self.baseline not in ("convnet_src", "convnet_tgt")

    def network_spec(self, input_shape, num_classes: int) -> NetworkSpec:
        return NetworkSpec(
            input_shape=tuple(input_shape),
            num_classes=num_classes,
            conv_channels=self.conv_channels,
            kernel_sizes=self.kernel_sizes,
            pool_after=tuple(i < 2 for i in range(len(self.conv_channels))),
            fc_width=self.train.fc_width,
            with_decoder=self.has_decoder,
        )

    def config_hash(self) -> str:
        # the output directory does not change results
        resolved = self.model_dump(mode="json", exclude={"out_dir"})
        canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def to_flat(self) -> Dict[str, str]:
        """Resolved config as flat key=value pairs (the run-directory snapshot)"""
        flat = {}
        for key, (section, attr, _) in KEYS.items():
            value = getattr(_section(self, section), attr)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            flat[key] = "" if value is None else str(value)
        return flat


def _section(cfg: ExperimentConfig, section: str):
    return {"experiment": cfg, "train": cfg.train, "noise": cfg.train.noise, "shift": cfg.shift}[section]


def _as_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _as_int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _as_optional_int(text: str) -> Optional[int]:
    return None if text.strip() in ("", "none", "all") else int(text)


Caster = Tuple[str, str, Callable[[str], object]]
KEYS: Dict[str, Caster] = {
    "source": ("experiment", "source", str),
    "target": ("experiment", "target", str),
    "flavor": ("experiment", "baseline", str),
    "out": ("experiment", "out_dir", str),
    "dump_every": ("experiment", "dump_every", int),
    "grid_images": ("experiment", "grid_images", int),
    "source_size": ("experiment", "source_size", _as_optional_int),
    "target_size": ("experiment", "target_size", _as_optional_int),
    "test_size": ("experiment", "test_size", _as_optional_int),
    "input_size": ("experiment", "input_size", int),
    "synthetic_classes": ("experiment", "synthetic_classes", int),
    "synthetic_size": ("experiment", "synthetic_size", int),
    "synthetic_count": ("experiment", "synthetic_count", int),
    "synthetic_test": ("experiment", "synthetic_test", int),
    "conv_channels": ("experiment", "conv_channels", _as_int_list),
    "kernel_sizes": ("experiment", "kernel_sizes", _as_int_list),
    "repeat": ("experiment", "repeat", int),
    "shift": ("shift", "kind", str),
    "shift_angle": ("shift", "angle", float),
    "shift_offset": ("shift", "offset", float),
    "lambda": ("train", "lam", float),
    "lr_c": ("train", "lr_c", float),
    "lr_r": ("train", "lr_r", float),
    "rms_decay": ("train", "rms_decay", float),
    "rms_epsilon": ("train", "rms_epsilon", float),
    "batch_source": ("train", "batch_source", int),
    "batch_target": ("train", "batch_target", int),
    "fc_width": ("train", "fc_width", int),
    "p_keep": ("train", "p_keep", float),
    "stop_window": ("train", "stop_window", int),
    "stop_tolerance": ("train", "stop_tolerance", float),
    "max_epochs": ("train", "max_epochs", int),
    "seed": ("train", "seed", int),
    "val_fraction": ("train", "val_fraction", float),
    "translation": ("noise", "translation", int),
    "rotation": ("noise", "rotation", float),
    "skew": ("noise", "skew", float),
    "scale": ("noise", "scale", float),
    "zero_mask_fraction": ("noise", "zero_mask_fraction", float),
    "gaussian_std": ("noise", "gaussian_std", float),
    "augment": ("noise", "augment", _as_bool),
    "geometric": ("noise", "geometric", _as_bool),
    "zero_mask": ("noise", "zero_mask", _as_bool),
    "gaussian": ("noise", "gaussian", _as_bool),
}

_TYPE_NAMES = {
    str: "string", int: "integer", float: "real number", _as_bool: "boolean",
    _as_int_list: "comma-separated integers", _as_optional_int: "integer or 'all'",
}

# field name in a pydantic section -> flat key, for naming keys in validation errors
_FIELD_TO_KEY = {(section, attr): key for key, (section, attr, _) in KEYS.items()}
_LOC_SECTIONS = {"train": "train", "noise": "noise", "shift": "shift"}


def _coerce(values: Mapping[str, Optional[str]]) -> Dict[str, Dict[str, object]]:
    sections: Dict[str, Dict[str, object]] = {"experiment": {}, "train": {}, "noise": {}, "shift": {}}
    for key, raw in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        section, attr, cast = KEYS[key]
        try:
            sections[section][attr] = cast("" if raw is None else str(raw))
        except ValueError:
            raise ConfigError(f"config key '{key}': expected {_TYPE_NAMES[cast]}, got {raw!r}") from None
    if "lam" in sections["train"]:
        sections["train"]["lambda"] = sections["train"].pop("lam")
    return sections


def _key_for_error(loc: Tuple) -> str:
    section, attr = "experiment", None
    for part in loc:
        if part in _LOC_SECTIONS:
            section = _LOC_SECTIONS[part]
        elif isinstance(part, str):
            attr = "lam" if part == "lambda" else part
    return _FIELD_TO_KEY.get((section, attr), ".".join(str(p) for p in loc))


def build_config(values: Mapping[str, Optional[str]]) -> ExperimentConfig:
    sections = _coerce(values)
    train = dict(sections["train"])
    train["noise"] = sections["noise"]
    experiment = dict(sections["experiment"])
    experiment["train"] = train
    experiment["shift"] = sections["shift"]
    try:
        return ExperimentConfig.model_validate(experiment)
    except ValidationError as exc:
        problems = "; ".join(f"{_key_for_error(err['loc'])}: {err['msg']}" for err in exc.errors())
        raise ConfigError(f"invalid configuration: {problems}") from None


def parse_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, object]] = None
) -> ExperimentConfig:
    """Resolve defaults, then the file at ``path``, then ``overrides`` (flags)"""
    values: Dict[str, Optional[str]] = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file '{path}' does not exist")
        values.update(dotenv_values(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = str(value)
    return build_config(values)


def write_config_snapshot(cfg: ExperimentConfig, path: Union[str, Path]) -> None:
    lines = [f"# resolved configuration, hash {cfg.config_hash()}"]
    lines += [f"{key}={value}" for key, value in cfg.to_flat().items()]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def data_root() -> Path:
    """Dataset root from DRCN_DATA_DIR (environment or .env), defaulting to ./data"""
    load_dotenv()
    return Path(os.getenv(DATA_DIR_ENV, "data"))
