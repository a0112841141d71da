"""Small baseline encoders and task heads hosting an optional shuffle stack.

The backbones are deliberately tiny, with receptive fields far shorter than
the sequences they read, so long-range structure is invisible to them
unless a shuffle stack at the input re-arranges it into reach. The
classification head is a global average pool over time followed by a linear
map; the forecasting head flattens and maps linearly to horizon x channels.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import layer as shuffle_layer
from .errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor, add, conv1d, matmul, reduce_sum, relu, reshape, scale

TASKS = ("classification", "forecasting")
BACKBONES = ("linear", "temporal_conv")


@dataclass
class ModelConfig:
    task: str
    backbone: str
    channels: int
    input_length: int
    hidden: int = 16
    kernel_size: int = 3
    num_classes: Optional[int] = None
    horizon: Optional[int] = None
    shuffle: Optional[shuffle_layer.ShuffleStackConfig] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.channels < 1 or self.input_length < 1 or self.hidden < 1:
            raise ConfigError("channels, input_length, and hidden must all be >= 1")
        if self.task == "classification":
            if self.num_classes is None or self.num_classes < 2:
                raise ConfigError("classification needs num_classes >= 2")
        else:
            if self.horizon is None or self.horizon < 1:
                raise ConfigError("forecasting needs horizon >= 1")
        if self.backbone == "temporal_conv":
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ConfigError(
                    f"temporal_conv kernel_size must be odd and >= 1, got {self.kernel_size}"
                )
            if self.kernel_size > self.input_length:
                raise ConfigError("kernel_size longer than the input")


class Model:
    """A backbone plus task head, optionally preceded by a shuffle stack.

    All learnable state lives in named Parameters so checkpoints and
    optimizers can address them stably.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c, t, h, k = config.channels, config.input_length, config.hidden, config.kernel_size
        self._backbone_params = []

        if config.backbone == "temporal_conv":
            self.conv0_kernel = self._param(
                "backbone.conv0.kernel", rng.normal(0.0, np.sqrt(2.0 / (k * c)), (k, c, h)))
            self.conv0_bias = self._param("backbone.conv0.bias", np.zeros(h))
            self.conv1_kernel = self._param(
                "backbone.conv1.kernel", rng.normal(0.0, np.sqrt(2.0 / (k * h)), (k, h, h)))
            self.conv1_bias = self._param("backbone.conv1.bias", np.zeros(h))
        else:
            self.mix_weight = self._param(
                "backbone.mix.weight", rng.normal(0.0, np.sqrt(1.0 / c), (c, h)))
            self.mix_bias = self._param("backbone.mix.bias", np.zeros(h))

        if config.task == "classification":
            self.head_weight = self._param(
                "head.weight", rng.normal(0.0, np.sqrt(1.0 / h), (h, config.num_classes)))
            self.head_bias = self._param("head.bias", np.zeros(config.num_classes))
        else:
            out_dim = config.horizon * c
            self.head_weight = self._param(
                "head.weight", rng.normal(0.0, np.sqrt(1.0 / (t * h)), (t * h, out_dim)))
            self.head_bias = self._param("head.bias", np.zeros(out_dim))

        # shuffle parameters are drawn after the backbone so a baseline and a
        # shuffle-augmented model share backbone initialization per seed
        if config.shuffle is not None:
            self.shuffle_states = shuffle_layer.init_stack_states(config.shuffle, c, rng)
        else:
            self.shuffle_states = []

    def _param(self, name, values) -> Parameter:
        p = Parameter(name, values)
        self._backbone_params.append(p)
        return p

    # -- parameter bookkeeping ------------------------------------------

    def backbone_parameters(self) -> list:
        """Backbone and head parameters (everything except the shuffle stack)."""
        return list(self._backbone_params)

    def shuffle_parameters(self) -> list:
        return [p for state in self.shuffle_states for p in state.parameters()]

    def parameters(self) -> list:
        return self.backbone_parameters() + self.shuffle_parameters()

    def backbone_param_count(self) -> int:
        return sum(p.values.size for p in self.backbone_parameters())

    def shuffle_param_count(self) -> int:
        return sum(p.values.size for p in self.shuffle_parameters())

    def state_dict(self) -> dict:
        return {p.name: p.values for p in self.parameters()}

    # -- forward ---------------------------------------------------------

    def forward(self, tape, x_values, frozen_shuffle=None) -> Tensor:
        """Logits (num_classes,) or forecast (horizon, channels) for one sample."""
        cfg = self.config
        x_values = np.asarray(x_values, dtype=np.float64)
        if x_values.shape != (cfg.input_length, cfg.channels):
            raise ShapeError(
                f"input shape {x_values.shape} does not match "
                f"({cfg.input_length}, {cfg.channels})"
            )
        x = Tensor(x_values)
        if self.shuffle_states:
            x = shuffle_layer.stack_forward(
                tape, x, cfg.shuffle, self.shuffle_states, frozen=frozen_shuffle)

        def bind(p):
            return p.bind(tape) if tape is not None else Tensor(p.values)

        if cfg.backbone == "temporal_conv":
            pad = cfg.kernel_size // 2
            feat = relu(conv1d(x, bind(self.conv0_kernel), bind(self.conv0_bias), padding=pad))
            feat = relu(conv1d(feat, bind(self.conv1_kernel), bind(self.conv1_bias), padding=pad))
        else:
            feat = add(matmul(x, bind(self.mix_weight)), bind(self.mix_bias))

        if cfg.task == "classification":
            pooled = scale(reduce_sum(feat, axes=[0]), 1.0 / feat.shape[0])
            return add(matmul(pooled, bind(self.head_weight)), bind(self.head_bias))
        flat = reshape(feat, (feat.shape[0] * feat.shape[1],))
        out = add(matmul(flat, bind(self.head_weight)), bind(self.head_bias))
        return reshape(out, (cfg.horizon, cfg.channels))


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, seed=seed)


def forward_classify(model: Model, x, tape=None, frozen_shuffle=None) -> Tensor:
    if model.config.task != "classification":
        raise ConfigError("forward_classify on a non-classification model")
    return model.forward(tape, x, frozen_shuffle=frozen_shuffle)


def forward_forecast(model: Model, x, tape=None, frozen_shuffle=None) -> Tensor:
    if model.config.task != "forecasting":
        raise ConfigError("forward_forecast on a non-forecasting model")
    return model.forward(tape, x, frozen_shuffle=frozen_shuffle)


# ---------------------------------------------------------------------------
# checkpoints: flat name -> array mapping, stored as npz


def save_checkpoint(model: Model, path) -> None:
    np.savez(path, **model.state_dict())


def load_checkpoint(model: Model, path) -> None:
    with np.load(path) as bundle:
        for p in model.parameters():
            if p.name not in bundle.files:
                raise ConfigError(f"checkpoint missing parameter {p.name!r}")
            stored = bundle[p.name]
            if stored.shape != p.values.shape:
                raise ConfigError(
                    f"checkpoint parameter {p.name!r} has shape {stored.shape}, "
                    f"model expects {p.values.shape}"
                )
            p.values[...] = stored
