from typing import List, Optional

from pydantic import BaseModel


class StageTiming(BaseModel):
    """Aggregated duration of one timed engine operation"""
    component: str
    operation: str
    count: int
    total_ms: float
    min_ms: float
    max_ms: float
    avg_ms: float


class RunReport(BaseModel):
    """Outcome of one experiment run"""
    baseline: str
    source: str
    target: str
    target_accuracy: Optional[float] = None
    source_val_accuracy: Optional[float] = None
    epochs_run: int
    stop_reason: str
    config_hash: str
    seed: int
    message: Optional[str] = None
    recon_distance_source: Optional[float] = None
    recon_distance_shifted: Optional[float] = None
    timings: List[StageTiming] = []


class SweepEntry(BaseModel):
    """One grid point of a lambda / fc-width sweep"""
    lam: float
    fc_width: int
    source_val_accuracy: Optional[float] = None
    target_accuracy: Optional[float] = None
    out_dir: str
