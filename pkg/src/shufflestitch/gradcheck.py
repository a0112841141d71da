"""Finite-difference verification of every differentiable primitive.

Each check builds a scalar loss from one primitive (a fixed random
projection of the output), computes analytic gradients with one backward
pass, and compares against central finite differences on the same forward.
Shuffle checks differentiate the forward linearized around a frozen
permutation, since the exact forward is locally constant in the priorities.
"""

from dataclasses import dataclass

import numpy as np

from . import layer as shuffle_layer
from .errors import ContractError
from .models import Model
from .tensor import (Tape, Tensor, add, concat, conv1d, detach, matmul, mse_loss, mul,
                     reduce_sum, relu, reshape, scale, softmax_cross_entropy, sub,
                     tslice)

FD_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|, |n|) over all entries."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ContractError(
            f"gradient shapes differ: {analytic.shape} vs {numeric.shape}"
        )
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def fd_gradient(f, values: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar-valued ``f`` at ``values``."""
    values = np.array(values, dtype=np.float64)
    grad = np.zeros_like(values)
    flat, gflat = values.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(values))
        flat[i] = orig - step
        lo = float(f(values))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    return reduce_sum(mul(out, Tensor(weights)))


def _check_inputs(name, fn, inputs, rng, tolerance, zero_grad=()):
    """Compare analytic and numeric input gradients of fn(inputs).

    ``fn`` maps a list of Tensors to one Tensor. Inputs listed in
    ``zero_grad`` must receive an exactly-zero analytic gradient and are
    excluded from finite differencing (detach is not the identity there).
    """
    out_probe = fn([Tensor(v) for v in inputs])
    weights = rng.normal(size=out_probe.values.shape)

    tape = Tape()
    bound = [tape.watch(np.array(v)) for v in inputs]
    loss = _project(fn(bound), weights)
    tape.backward(loss)
    analytic = [tape.grad_of(b) for b in bound]

    worst = 0.0
    for i, base in enumerate(inputs):
        if i in zero_grad:
            worst = max(worst, float(np.max(np.abs(analytic[i]))))
            continue

        def f(vals, _i=i):
            probe = [Tensor(vals if j == _i else v) for j, v in enumerate(inputs)]
            return (fn(probe).values * weights).sum()

        worst = max(worst, max_relative_error(analytic[i], fd_gradient(f, base)))
    return CheckResult(name, worst, tolerance)


def _smooth_relu_input(rng, shape):
    # keep every entry away from the kink so finite differences are valid
    v = rng.normal(size=shape)
    v[np.abs(v) < 0.1] += 0.25
    return v


def run_primitive_checks(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> list:
    """One finite-difference check per differentiable primitive."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 5, size=3)
    target = rng.normal(size=(4, 3))
    checks = [
        ("add", lambda xs: add(xs[0], xs[1]),
         [rng.normal(size=(3, 4)), rng.normal(size=(4,))], ()),
        ("sub", lambda xs: sub(xs[0], xs[1]),
         [rng.normal(size=(3, 4)), rng.normal(size=(4,))], ()),
        ("mul", lambda xs: mul(xs[0], xs[1]),
         [rng.normal(size=(2, 3)), rng.normal(size=(3,))], ()),
        ("scale", lambda xs: scale(xs[0], -1.7), [rng.normal(size=(3, 3))], ()),
        ("detach", lambda xs: mul(detach(xs[0]), xs[1]),
         [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))], (0,)),
        ("reshape", lambda xs: reshape(xs[0], (3, 4)), [rng.normal(size=(2, 6))], ()),
        ("tslice", lambda xs: tslice(xs[0], 0, 1, 4), [rng.normal(size=(5, 4))], ()),
        ("concat", lambda xs: concat(xs, axis=0),
         [rng.normal(size=(2, 3)), rng.normal(size=(1, 3)), rng.normal(size=(4, 3))], ()),
        ("reduce_sum", lambda xs: reduce_sum(xs[0], axes=[0, 2]),
         [rng.normal(size=(2, 3, 4))], ()),
        ("matmul", lambda xs: matmul(xs[0], xs[1]),
         [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], ()),
        ("relu", lambda xs: relu(xs[0]), [_smooth_relu_input(rng, (4, 5))], ()),
        ("softmax_cross_entropy",
         lambda xs: softmax_cross_entropy(xs[0], labels),
         [rng.normal(size=(3, 5))], ()),
        ("mse_loss", lambda xs: mse_loss(xs[0], Tensor(target)),
         [rng.normal(size=(4, 3))], ()),
        ("conv1d", lambda xs: conv1d(xs[0], xs[1], xs[2], padding=1),
         [rng.normal(size=(8, 2)), rng.normal(size=(3, 2, 4)), rng.normal(size=(4,))], ()),
    ]
    return [
        _check_inputs(name, fn, inputs, rng, tolerance, zero_grad=zg)
        for name, fn, inputs, zg in checks
    ]


def check_frozen_shuffle(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE,
                         n: int = 4, tau: int = 3, channels: int = 2) -> CheckResult:
    """Priorities and segments through the shuffle, frozen permutation."""
    rng = np.random.default_rng(seed)
    priorities = rng.uniform(0.2, 1.0, size=n)
    segments = rng.normal(size=(n, tau, channels))
    order = shuffle_layer.sort_order(priorities)
    recip = 1.0 / priorities[order]
    frozen = (order, recip)

    def fn(xs):
        segs = [reshape(tslice(xs[0], 0, j, j + 1), (tau, channels)) for j in range(n)]
        outs = shuffle_layer.shuffle(segs, xs[1], frozen=frozen)
        return concat(outs, axis=0)

    return _check_inputs("shuffle_frozen", fn, [segments, priorities], rng, tolerance)


def check_stitch(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> CheckResult:
    rng = np.random.default_rng(seed)
    t, c = 6, 3
    inputs = [rng.normal(size=(t, c)), rng.normal(size=(t, c)),
              rng.normal(size=c), rng.normal(size=c), rng.normal(size=c)]

    def fn(xs):
        return shuffle_layer.stitch(xs[0], xs[1], xs[2], xs[3], xs[4])

    return _check_inputs("stitch", fn, inputs, rng, tolerance)


def check_layer_forward(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> CheckResult:
    """Whole shuffle layer, including the undivided prefix and rank-2
    priorities, against finite differences at a frozen permutation."""
    rng = np.random.default_rng(seed)
    state = shuffle_layer.init_layer_state(4, 2, 2, rng)
    state.priorities.values = rng.uniform(0.2, 1.0, size=state.priorities.values.shape)
    x = rng.normal(size=(14, 2))
    frozen = state.frozen_shuffle()
    weights = rng.normal(size=x.shape)

    tape = Tape()
    xt = tape.watch(np.array(x))
    loss = _project(shuffle_layer.layer_forward(tape, xt, state, frozen=frozen), weights)
    tape.backward(loss)

    def forward_value():
        out = shuffle_layer.layer_forward(None, Tensor(x), state, frozen=frozen)
        return (out.values * weights).sum()

    worst = max_relative_error(
        tape.grad_of(xt),
        fd_gradient(lambda vals: (
            shuffle_layer.layer_forward(None, Tensor(vals), state, frozen=frozen)
            .values * weights).sum(), x))
    for p in state.parameters():
        analytic = p.grad(tape)

        def f(vals, _p=p):
            saved = _p.values
            _p.values = vals
            try:
                return forward_value()
            finally:
                _p.values = saved

        worst = max(worst, max_relative_error(analytic, fd_gradient(f, p.values)))
    return CheckResult("layer_forward", worst, tolerance)


def run_layer_checks(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> list:
    return [
        check_frozen_shuffle(seed, tolerance),
        check_stitch(seed, tolerance),
        check_layer_forward(seed, tolerance),
    ]


def spot_check_model(model: Model, sample, entries: int = 10, seed: int = 0,
                     tolerance: float = DEFAULT_TOLERANCE) -> CheckResult:
    """End-to-end loss gradients at ``entries`` random parameter entries.

    ``sample`` is a LabeledSeries or ForecastWindow matching the model task.
    The shuffle permutation is frozen at its current value so the loss is
    differentiable along the checked directions.
    """
    rng = np.random.default_rng(seed)
    frozen = [s.frozen_shuffle() for s in model.shuffle_states] or None

    def loss_tensor(tape):
        if model.config.task == "classification":
            logits = model.forward(tape, sample.values, frozen_shuffle=frozen)
            return softmax_cross_entropy(logits, sample.label)
        pred = model.forward(tape, sample.context, frozen_shuffle=frozen)
        return mse_loss(pred, Tensor(sample.target))

    tape = Tape()
    tape.backward(loss_tensor(tape))

    params = model.parameters()
    sizes = np.array([p.values.size for p in params])
    flat_ids = rng.choice(int(sizes.sum()), size=min(entries, int(sizes.sum())),
                          replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for fid in flat_ids:
        pi = int(np.searchsorted(bounds, fid, side="right"))
        offset = int(fid - (bounds[pi - 1] if pi else 0))
        p = params[pi]
        analytic = p.grad(tape).reshape(-1)[offset]
        flat = p.values.reshape(-1)
        orig = flat[offset]
        flat[offset] = orig + FD_STEP
        hi = float(loss_tensor(None).values)
        flat[offset] = orig - FD_STEP
        lo = float(loss_tensor(None).values)
        flat[offset] = orig
        numeric = (hi - lo) / (2.0 * FD_STEP)
        worst = max(worst, max_relative_error(np.asarray(analytic), np.asarray(numeric)))
    return CheckResult(f"model_{model.config.task}", worst, tolerance)


def run_all(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> list:
    """The full registry: primitives, shuffle layer, and two end-to-end models."""
    from .data import LabeledSeries, ForecastWindow
    from .models import ModelConfig

    results = run_primitive_checks(seed, tolerance)
    results += run_layer_checks(seed, tolerance)

    rng = np.random.default_rng(seed + 1)
    cls_model = Model(ModelConfig(
        task="classification", backbone="temporal_conv", channels=2,
        input_length=12, hidden=4, kernel_size=3, num_classes=3,
        shuffle=shuffle_layer.ShuffleStackConfig(segments=4, layers=2,
                                                 segment_multiplier=0.5)), seed=seed)
    cls_sample = LabeledSeries(values=rng.normal(size=(12, 2)), label=1)
    results.append(spot_check_model(cls_model, cls_sample, seed=seed,
                                    tolerance=tolerance))

    fc_model = Model(ModelConfig(
        task="forecasting", backbone="linear", channels=2, input_length=12,
        hidden=4, horizon=3,
        shuffle=shuffle_layer.ShuffleStackConfig(segments=3)), seed=seed)
    fc_sample = ForecastWindow(context=rng.normal(size=(12, 2)),
                               target=rng.normal(size=(3, 2)))
    results.append(spot_check_model(fc_model, fc_sample, seed=seed,
                                    tolerance=tolerance))
    return results
