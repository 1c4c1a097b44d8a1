"""Request/response bodies for the service.

Field names match CLI flags and `key = value` config keys one-to-one, so a
config line maps directly onto a request field. Requests reject unknown
fields to catch typos at the boundary instead of deep in a handler.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from ..analysis import (DEFAULT_KERNEL_THRESHOLD, DEFAULT_MAX_LAG,
                        DEFAULT_PACF_THRESHOLD)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ErrorBody(_Strict):
    error_kind: str                 # usage | data | numeric
    message: str


# ---------------------------------------------------------------------------
# generate


class GenerateRequest(_Strict):
    out: str
    seed: int = 0
    n_aps: int = 16
    n_subcarriers: int = 16
    n_snapshots: int = 10000
    area_side: float = 250.0
    ap_height_min: float = 5.0
    ap_height_max: float = 25.0
    carrier_freq: float = 13e9
    bandwidth: float = 5e6
    ue_speed: float = 27.78
    snapshot_interval: float = 1e-3
    n_paths: int = 12
    n_sinusoids: int = 16
    rms_delay_spread: float = 100e-9
    spatial_corr_decay: float = 100.0
    spatial_mode: str = "distance"
    noise_std: float = 0.0
    tx_power: float = 1.0
    scenario: Optional[str] = None


class GenerateResponse(_Strict):
    out: str
    n_snapshots: int
    n_subcarriers: int
    n_aps: int
    doppler_freq_hz: float
    subcarrier_spacing_hz: float
    files: List[str]


# ---------------------------------------------------------------------------
# analyze


class AnalyzeRequest(_Strict):
    data: str
    out: str                        # directory for the report and CSVs
    max_lag: int = DEFAULT_MAX_LAG
    pacf_threshold: float = DEFAULT_PACF_THRESHOLD
    kernel_threshold: float = DEFAULT_KERNEL_THRESHOLD
    adjacency_kind: str = "pcc"     # pcc | distance | constant
    pcc_strategy: str = "magnitude-mean"
    distance_sigma: Optional[float] = None
    constant_value: float = 0.3
    write_csv: bool = True


class AnalyzeResponse(_Strict):
    recommended_window: int
    recommended_kernel: int
    window_warning: bool
    adjacency_kind: str
    pcc_strategy: str
    mean_space_pcc: float
    warnings: List[str]
    files: List[str]


# ---------------------------------------------------------------------------
# train / evaluate / predict


class ModelParams(_Strict):
    kind: str = "proposed"
    window: int = 10
    horizon: int = 1
    n_subcarriers: int = 16         # overridden by the dataset when training
    n_aps: int = 16
    d_model: int = 128
    n_heads: int = 2
    d_k: Optional[int] = None
    d_v: Optional[int] = None
    kernel_size: int = 3
    hidden: Optional[int] = None
    d_ff: Optional[int] = None      # unset: kind-appropriate default
    n_blocks: int = 2
    alpha: float = 1.0
    eps: float = 1e-9
    layer_norm_axis: str = "time"


class TrainParams(_Strict):
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 1e-8
    epochs: int = 100
    batch_size: int = 64
    train_fraction: float = 0.8
    part: str = "both"              # both | real | imag
    early_stop_patience: int = 0


class TrainRequest(_Strict):
    data: str
    out: str                        # checkpoint path; reports land beside it
    seed: int = 0
    adjacency: str = "pcc"          # pcc | distance | constant | identity
    pcc_strategy: str = "magnitude-mean"
    distance_sigma: Optional[float] = None
    constant_value: float = 0.3
    model: ModelParams = ModelParams()
    train: TrainParams = TrainParams()


class TrainResponse(_Strict):
    kind: str
    part: str
    seed: int
    epochs_run: int
    n_train_samples: int
    n_test_samples: int
    final_epoch_loss: float
    test_nmse_db: float
    test_nmse_per_horizon_db: List[float]
    epoch_losses: List[float]
    epoch_seconds: List[float]      # wall clock; never written to files
    n_parameters: int
    n_flops: int
    memory_mb: float
    est_time_s: float
    checkpoint: str
    files: List[str]


class EvaluateRequest(_Strict):
    data: str
    checkpoint: str
    checkpoint_im: Optional[str] = None
    out: str                        # directory for nmse_vs_horizon.csv
    train_fraction: float = 0.8
    part: str = "both"


class EvaluateResponse(_Strict):
    nmse_db: float
    nmse_per_horizon_db: List[float]
    n_samples: int
    files: List[str]


class PredictRequest(_Strict):
    data: str
    checkpoint: str
    checkpoint_im: Optional[str] = None
    out: str                        # predictions as a dataset file
    at: Optional[int] = None        # window ends here; default: end of capture
    train_fraction: float = 0.8     # standardization stats when absent


class PredictResponse(_Strict):
    out: str
    horizon: int
    window_start: int
    first_predicted_index: int
    files: List[str]


# ---------------------------------------------------------------------------
# complexity


class ComplexityRequest(_Strict):
    kinds: Optional[List[str]] = None   # default: every model kind
    out: Optional[str] = None           # optional CSV
    model: ModelParams = ModelParams()  # kind field ignored here
    f_gpu: float = 1.35e9
    n_unit: float = 1.0
    n_core: float = 5120.0


class ComplexityRow(_Strict):
    kind: str
    n_parameters: int
    n_flops: int
    memory_mb: float
    est_time_s: float


class ComplexityResponse(_Strict):
    rows: List[ComplexityRow]
    files: List[str]


# ---------------------------------------------------------------------------
# partition


class PartitionRequest(_Strict):
    data: str                       # single mixed capture (M = 1)
    out: str                        # directory for per-source outputs
    tau_th: Optional[int] = None    # delay bins; two-source split
    windows: Optional[List[Tuple[int, int]]] = None


class PartitionResponse(_Strict):
    n_sources: int
    total_energy: float
    leakage_energy: float
    leakage_fraction: float
    source_energies: List[float]
    files: List[str]


# ---------------------------------------------------------------------------
# info


class DatasetInfo(_Strict):
    path: str
    n_snapshots: int
    n_subcarriers: int
    n_aps: int
    standardized: bool
    file_bytes: int


class CheckpointInfo(_Strict):
    path: str
    kind: str
    window: int
    horizon: int
    n_subcarriers: int
    n_aps: int
    d_model: int
    n_heads: int
    d_k: int
    d_v: int
    kernel_size: int
    hidden: int
    d_ff: int
    n_blocks: int
    layer_norm_axis: str
    n_parameters: int
    memory_mb: float
    file_bytes: int


class InfoResponse(_Strict):
    name: str
    version: str
    model_kinds: List[str]
    dataset_format: str
    checkpoint_format: str
    nmse_db_floor: float
    pdp_db_floor: float
    default_f_gpu: float
    default_n_unit: float
    default_n_core: float
    dataset: Optional[DatasetInfo] = None
    checkpoint: Optional[CheckpointInfo] = None
