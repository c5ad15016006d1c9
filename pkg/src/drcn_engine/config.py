from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.noise_augment.corruption import NoiseConfig

FC_WIDTH_GRID = tuple(range(300, 1001, 50))

Flavor = Literal["target-only", "source-only", "source+target"]


class TrainConfig(BaseModel):
    """Hyper-parameters of the alternating trainer"""

    model_config = ConfigDict(populate_by_name=True)

    lam: float = Field(default=0.5, ge=0.0, le=1.0, alias="lambda")
    lr_c: float = Field(default=1e-4, gt=0.0)
    lr_r: float = Field(default=1e-4, gt=0.0)
    rms_decay: float = Field(default=0.9, gt=0.0, lt=1.0)
    rms_epsilon: float = Field(default=1e-8, gt=0.0)
    batch_source: int = Field(default=128, ge=1)
    batch_target: int = Field(default=128, ge=1)
    fc_width: int = 300
    p_keep: float = Field(default=0.5, gt=0.0, le=1.0)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    stop_window: int = Field(default=5, ge=2)
    stop_tolerance: float = Field(default=0.01, gt=0.0)
    max_epochs: int = Field(default=30, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    flavor: Flavor = "target-only"
    val_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)

    @field_validator("fc_width")
    @classmethod
    def _fc_width_on_grid(cls, value: int) -> int:
        if value not in FC_WIDTH_GRID:
            raise ValueError(f"fc_width must be one of 300, 350, ..., 1000, got {value}")
        return value
