"""Multi-hypothesis time-series forecasting toolkit.

A channel-independent linear forecaster with K competing trajectory
heads, trained under a relaxed winner-takes-all objective, stabilized by
trimmed, exactly reversible per-window normalization. Includes the
evaluation metrics (distortion, CRPS-Sum, CKA, FLOPs/latency) and the
synthetic tasks used to exercise collapse and robustness behavior.
"""

from .diffcore import Tape, backward, finite_diff_check
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    ParseError,
    ShapeError,
)
from .normalization import (
    NormConfig,
    NormStats,
    ablation_stats,
    denormalize,
    normalize,
    robust_stats,
    window_stats,
)
from .model import (
    ForecastSet,
    ModelConfig,
    ModelParams,
    decode,
    encode,
    expected_param_count,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    fit,
    per_head_loss,
    rwta_loss,
    score_loss,
    select_winner,
    total_loss,
    utilization_entropy,
)
from .metrics import (
    EvalResult,
    count_flops,
    count_flops_instrumented,
    covariance_matrix,
    crps_empirical,
    crps_sum,
    distortion,
    evaluate_windows,
    linear_cka,
    measure_latency,
)
from .data import (
    TimeSeriesDataset,
    WindowPair,
    load_csv,
    save_csv,
    synth_bimodal,
    synth_scale_imbalance,
    synth_spiky,
    windows,
)

__version__ = "0.1.0"
