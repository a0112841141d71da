"""Learned re-ordering of time-series segments, with its own autodiff core.

The package centers on a differentiable segment-shuffle layer: a sequence
is split into segments, the segments are re-ordered by learned priorities
through a straight-through permutation, and the re-ordered sequence is
blended back with the original. Everything trains through a small
reverse-mode tape over float64 numpy arrays, with the convolution kernels
optionally compiled.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import (ConfigError, ContractError, DataError, FormatError,
                     NumericError, ShapeError, ShuffleStitchError)
from .tensor import (Parameter, Tape, Tensor, add, concat, conv1d, detach, matmul,
                     mse_loss, mul, reduce_sum, relu, reshape, scale,
                     softmax_cross_entropy, sub, tslice)
from .layer import (PermutationRecord, ShuffleLayerState, ShuffleStackConfig,
                    init_layer_state, init_stack_states, layer_forward,
                    priority_vector, record_permutations, segment, shuffle,
                    sort_order, stack_forward, stitch)
from .models import (Model, ModelConfig, build_model, forward_classify,
                     forward_forecast, load_checkpoint, save_checkpoint)
from .data import (ForecastSplits, ForecastWindow, LabeledSeries, SyntheticSpec,
                   gen_long_range_pair, gen_permuted_pattern, generate,
                   load_forecast_csv, load_ucr_tsv, write_ucr_tsv)
from .train import (AdamOptimizer, RunReport, SgdOptimizer, TrainConfig, evaluate,
                    loss_trace_std, make_optimizer, train)
from .metrics import (ComparisonResult, accuracy, diff_classification,
                      diff_forecasting, mae, mse)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "ShuffleStitchError", "ShapeError", "ContractError", "ConfigError",
    "FormatError", "DataError", "NumericError",
    "Tensor", "Parameter", "Tape",
    "add", "sub", "mul", "scale", "detach", "reshape", "tslice", "concat",
    "reduce_sum", "matmul", "relu", "softmax_cross_entropy", "mse_loss", "conv1d",
    "ShuffleLayerState", "ShuffleStackConfig", "PermutationRecord",
    "init_layer_state", "init_stack_states", "segment", "priority_vector",
    "sort_order", "shuffle", "stitch", "layer_forward", "stack_forward",
    "record_permutations",
    "Model", "ModelConfig", "build_model", "forward_classify", "forward_forecast",
    "save_checkpoint", "load_checkpoint",
    "LabeledSeries", "ForecastWindow", "ForecastSplits", "SyntheticSpec",
    "gen_permuted_pattern", "gen_long_range_pair", "generate",
    "load_ucr_tsv", "write_ucr_tsv", "load_forecast_csv",
    "TrainConfig", "RunReport", "AdamOptimizer", "SgdOptimizer",
    "make_optimizer", "train", "evaluate", "loss_trace_std",
    "accuracy", "mse", "mae", "diff_classification", "diff_forecasting",
    "ComparisonResult",
    "__version__",
]
