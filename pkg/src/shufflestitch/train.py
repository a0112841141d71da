"""Training loop, optimizers, and run reporting.

Each optimization step rebuilds the graph on a fresh tape: every sample in
the batch is run forward on that tape, the per-sample losses are averaged
into one scalar, and a single backward call from that scalar populates all
parameter gradients. Given the same seed, data, and config, training is
bitwise deterministic.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import layer as shuffle_layer
from .errors import ConfigError, ContractError, NumericError
from .metrics import accuracy, mae, mse
from .models import Model
from .tensor import Tape, Tensor, add, mse_loss, scale, softmax_cross_entropy

OPTIMIZERS = ("adam", "sgd")
LOSSES = ("auto", "cross_entropy", "mse")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.0
    seed: int = 0
    loss: str = "auto"
    trace_every: int = 1
    # priority tensors step at learning_rate * this multiplier; stitch
    # weights stay at the base rate
    shuffle_lr_multiplier: float = 1.0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.trace_every < 1:
            raise ConfigError("epochs, batch_size, and trace_every must be >= 1")
        # learning_rate 0 is degenerate but well defined: parameters stay put
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("adam betas must lie in [0, 1)")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.shuffle_lr_multiplier <= 0:
            raise ConfigError("shuffle_lr_multiplier must be positive")

    def resolve_loss(self, task: str) -> str:
        expected = "cross_entropy" if task == "classification" else "mse"
        if self.loss not in ("auto", expected):
            raise ConfigError(f"loss {self.loss!r} does not fit task {task!r}")
        return expected

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


class SgdOptimizer:
    """Plain SGD with optional heavy-ball momentum."""

    def __init__(self, groups, momentum: float = 0.0):
        self.groups = list(groups)  # (Parameter, learning rate) pairs
        self.momentum = momentum
        self._velocity = [np.zeros_like(p.values) for p, _ in self.groups]

    def step(self, tape: Tape) -> None:
        for i, (p, lr) in enumerate(self.groups):
            g = p.grad(tape)
            if self.momentum:
                self._velocity[i] = self.momentum * self._velocity[i] + g
                g = self._velocity[i]
            p.values = p.values - lr * g


class AdamOptimizer:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, groups, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.groups = list(groups)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = [np.zeros_like(p.values) for p, _ in self.groups]
        self._v = [np.zeros_like(p.values) for p, _ in self.groups]

    def step(self, tape: Tape) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (p, lr) in enumerate(self.groups):
            g = p.grad(tape)
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / c1
            v_hat = self._v[i] / c2
            p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(model: Model, config: TrainConfig):
    lr = config.learning_rate
    groups = [(p, lr) for p in model.backbone_parameters()]
    for state in model.shuffle_states:
        groups.append((state.priorities, lr * config.shuffle_lr_multiplier))
        for p in (state.weight_original, state.weight_shuffled, state.bias):
            groups.append((p, lr))
    if config.optimizer == "sgd":
        return SgdOptimizer(groups, momentum=config.momentum)
    return AdamOptimizer(groups, beta1=config.beta1, beta2=config.beta2,
                         eps=config.adam_eps)


@dataclass
class RunReport:
    """Everything a single training run produced."""

    task: str
    metric_name: str
    final_metric: float
    final_loss: float
    eval_metrics: dict
    epoch_metrics: list  # one metrics dict per completed epoch
    loss_trace: list
    trace_iterations: list
    permutation_trace: list  # PermutationRecord per trace point
    stitch_weight_trace: list  # per trace point: list of per-layer dicts
    final_orders: list  # per-layer permutation after the last step
    iterations: int
    epochs: int
    param_count_total: int
    param_count_shuffle: int
    clamp_events: int
    wall_seconds: float

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric_name": self.metric_name,
            "final_metric": self.final_metric,
            "final_loss": self.final_loss,
            "eval_metrics": self.eval_metrics,
            "epoch_metrics": self.epoch_metrics,
            "loss_trace": self.loss_trace,
            "trace_iterations": self.trace_iterations,
            "final_orders": [[int(j) for j in order] for order in self.final_orders],
            "iterations": self.iterations,
            "epochs": self.epochs,
            "param_count_total": self.param_count_total,
            "param_count_shuffle": self.param_count_shuffle,
            "clamp_events": self.clamp_events,
            "wall_seconds": self.wall_seconds,
        }


def sample_loss(model: Model, tape, sample):
    """Scalar loss tensor for one labeled series or forecast window."""
    if model.config.task == "classification":
        logits = model.forward(tape, sample.values)
        return softmax_cross_entropy(logits, sample.label)
    pred = model.forward(tape, sample.context)
    return mse_loss(pred, Tensor(sample.target))


def batch_loss(model: Model, tape, batch):
    """Mean of per-sample losses as a single scalar root on ``tape``."""
    losses = [sample_loss(model, tape, sample) for sample in batch]
    total = losses[0]
    for extra in losses[1:]:
        total = add(total, extra)
    return scale(total, 1.0 / len(losses))


def _stitch_snapshot(states, step: int) -> list:
    rows = []
    for idx, state in enumerate(states):
        rows.append({
            "step": step,
            "layer": idx,
            "weight_original": state.weight_original.values.tolist(),
            "weight_shuffled": state.weight_shuffled.values.tolist(),
            "bias": state.bias.values.tolist(),
        })
    return rows


def evaluate(model: Model, dataset: list) -> dict:
    """Task metrics over a dataset, computed without recording gradients."""
    if not dataset:
        raise ContractError("cannot evaluate on an empty dataset")
    if model.config.task == "classification":
        predicted, labels, ce_sum = [], [], 0.0
        for sample in dataset:
            logits = model.forward(None, sample.values)
            predicted.append(int(np.argmax(logits.values)))
            labels.append(sample.label)
            ce_sum += float(softmax_cross_entropy(logits, sample.label).values)
        return {
            "accuracy": accuracy(predicted, labels),
            "cross_entropy": ce_sum / len(dataset),
        }
    preds = np.stack([model.forward(None, w.context).values for w in dataset])
    targets = np.stack([w.target for w in dataset])
    return {"mse": mse(preds, targets), "mae": mae(preds, targets)}


def train(model: Model, train_data: list, config: TrainConfig,
          eval_data=None) -> RunReport:
    """Optimize ``model`` on ``train_data`` and report the trajectory.

    The loss trace is sampled at iterations 1, 1+trace_every, ... so it has
    ceil(iterations / trace_every) entries; permutation and stitch-weight
    snapshots are taken at the same points, before the parameter update that
    iteration applies.
    """
    if not train_data:
        raise ContractError("cannot train on an empty dataset")
    config.resolve_loss(model.config.task)
    eval_set = eval_data if eval_data is not None else train_data
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(model, config)
    loss_trace, trace_iterations = [], []
    permutation_trace, weight_trace = [], []
    epoch_metrics = []
    clamp_events = 0
    iteration = 0
    started = time.perf_counter()

    for _ in range(config.epochs):
        order = rng.permutation(len(train_data))
        for lo in range(0, len(order), config.batch_size):
            batch = [train_data[i] for i in order[lo:lo + config.batch_size]]
            iteration += 1
            tape = Tape()
            loss = batch_loss(model, tape, batch)
            if not np.isfinite(loss.values):
                raise NumericError(f"non-finite loss at iteration {iteration}")
            if (iteration - 1) % config.trace_every == 0:
                loss_trace.append(float(loss.values))
                trace_iterations.append(iteration)
                if model.shuffle_states:
                    permutation_trace.append(
                        shuffle_layer.record_permutations(model.shuffle_states, iteration))
                    weight_trace.append(_stitch_snapshot(model.shuffle_states, iteration))
            tape.backward(loss)
            optimizer.step(tape)
            clamp_events += tape.clamp_events
        epoch_metrics.append(evaluate(model, eval_set))

    wall = time.perf_counter() - started
    metrics = epoch_metrics[-1]
    if model.config.task == "classification":
        metric_name = "accuracy"
    else:
        metric_name = "mse"
    final_loss = float(batch_loss(model, None, list(train_data)).values)
    return RunReport(
        task=model.config.task,
        metric_name=metric_name,
        final_metric=metrics[metric_name],
        final_loss=final_loss,
        eval_metrics=metrics,
        epoch_metrics=epoch_metrics,
        loss_trace=loss_trace,
        trace_iterations=trace_iterations,
        permutation_trace=permutation_trace,
        stitch_weight_trace=weight_trace,
        final_orders=[s.current_order() for s in model.shuffle_states],
        iterations=iteration,
        epochs=config.epochs,
        param_count_total=model.backbone_param_count() + model.shuffle_param_count(),
        param_count_shuffle=model.shuffle_param_count(),
        clamp_events=clamp_events,
        wall_seconds=wall,
    )


def loss_trace_std(trace: list) -> float:
    """Population standard deviation of a recorded loss trace."""
    if len(trace) == 0:
        raise ContractError("loss trace is empty")
    return float(np.asarray(trace, dtype=np.float64).std())
