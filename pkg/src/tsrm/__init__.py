"""Time series representation models with a self-contained autodiff core.

The package trains one shared per-channel encoder for multivariate
forecasting and imputation, exports attention-based explanations mapped back
onto the input timeline, and ships its own tape-based reverse-mode tensor
library so the only numeric dependencies are numpy and scipy.
"""

from . import tensor
from .config import RunConfig, load_run_config
from .data import (
    REGISTRY,
    SeriesDataset,
    WindowBatch,
    iter_minibatches,
    load_csv,
    make_sine_dataset,
    make_windows,
    resolve_dataset,
    split_and_standardize,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    NumericError,
    TSRMError,
)
from .explain import (
    AttentionReport,
    backmap_attention,
    build_report,
    collect_attention,
    report_from_forward,
    report_to_csv,
    report_to_json,
)
from .kernels import BACKEND
from .model import (
    TSRM,
    EncodingLayer,
    ModelConfig,
    count_parameters,
    default_conv_specs,
    load_checkpoint,
    save_checkpoint,
)
from .tasks import (
    MASK_SENTINEL,
    EvalRecord,
    MaskSet,
    apply_mask,
    forecast_loss,
    generate_mask,
    imputation_loss,
    metrics,
)
from .tensor import Tape, Tensor, get_default_dtype, set_default_dtype
from .training import (
    Adam,
    TrainConfig,
    TrainResult,
    early_stop_check,
    fixed_masks,
    plateau_scheduler_step,
    predict,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionReport",
    "Adam",
    "BACKEND",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "EncodingLayer",
    "EvalRecord",
    "MASK_SENTINEL",
    "MaskSet",
    "ModelConfig",
    "NumericError",
    "REGISTRY",
    "RunConfig",
    "SeriesDataset",
    "TSRM",
    "TSRMError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "WindowBatch",
    "apply_mask",
    "backmap_attention",
    "build_report",
    "collect_attention",
    "count_parameters",
    "default_conv_specs",
    "early_stop_check",
    "fixed_masks",
    "forecast_loss",
    "generate_mask",
    "get_default_dtype",
    "imputation_loss",
    "iter_minibatches",
    "load_checkpoint",
    "load_csv",
    "load_run_config",
    "make_sine_dataset",
    "make_windows",
    "metrics",
    "plateau_scheduler_step",
    "predict",
    "report_from_forward",
    "report_to_csv",
    "report_to_json",
    "resolve_dataset",
    "save_checkpoint",
    "set_default_dtype",
    "split_and_standardize",
    "tensor",
    "train",
]
