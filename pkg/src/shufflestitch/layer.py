"""Learned differentiable re-ordering of time-series segments.

The layer splits a (T, C) sequence into n contiguous segments, re-orders
them by the descending sort of a learned priority vector, and blends the
re-ordered sequence back with the original through a learned per-channel
affine combination. Sorting is discrete, so the permutation itself carries
no gradient; instead the permutation matrix is built with forward value
exactly 1 at each selected entry while its backward rule scales incoming
gradients by the (detached, clamped) reciprocal of the selecting priority.
That routes a useful gradient into the priorities without disturbing the
forward values.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError
from .tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    mul,
    reduce_sum,
    reshape,
    tslice,
)

logger = logging.getLogger(__name__)

# Sort convention: higher priority value means earlier output slot. Stable
# ascending-index tie-break. Flip this constant to invert the convention.
SORT_DESCENDING = True

# Guard for the detached reciprocal in the gradient path: priorities with
# magnitude below this are clamped to sign/EPS instead of blowing up.
RECIPROCAL_EPS = 1e-4


@dataclass
class ShuffleLayerState:
    """Learnable state of one shuffle layer.

    ``priorities`` has shape (n,)*rank; its reduction to length n is what
    gets sorted. ``weight_original``/``weight_shuffled``/``bias`` are the
    per-channel stitch coefficients.
    """

    n_segments: int
    priority_rank: int
    priorities: Parameter
    weight_original: Parameter
    weight_shuffled: Parameter
    bias: Parameter

    @property
    def channels(self) -> int:
        return self.weight_original.values.shape[0]

    def parameters(self) -> list:
        return [self.priorities, self.weight_original, self.weight_shuffled, self.bias]

    def param_count(self) -> int:
        return self.n_segments ** self.priority_rank + 3 * self.channels

    def current_order(self) -> np.ndarray:
        """Permutation induced by the current priority values."""
        return sort_order(priority_vector_values(self.priorities.values))

    def frozen_shuffle(self):
        """(order, clamped reciprocals) at the current priorities.

        Used by the frozen-permutation gradient checks: finite differences
        are taken on the forward linearized around this point.
        """
        pv = priority_vector_values(self.priorities.values)
        order = sort_order(pv)
        return order, _clamped_reciprocal(pv[order])


@dataclass
class ShuffleStackConfig:
    """Hyperparameters of a stack of shuffle layers.

    ``segments`` is the first layer's segment count, ``segment_multiplier``
    scales it geometrically per layer, ``priority_rank`` is the number of
    axes of each layer's priority tensor.
    """

    segments: int
    layers: int = 1
    segment_multiplier: float = 1.0
    priority_rank: int = 1

    def __post_init__(self):
        if self.segments < 1 or int(self.segments) != self.segments:
            raise ConfigError(f"segments must be a positive integer, got {self.segments}")
        if self.layers < 1 or int(self.layers) != self.layers:
            raise ConfigError(f"layers must be a positive integer, got {self.layers}")
        if self.priority_rank < 1 or int(self.priority_rank) != self.priority_rank:
            raise ConfigError(f"priority_rank must be a positive integer, got {self.priority_rank}")
        if not self.segment_multiplier > 0:
            raise ConfigError(f"segment_multiplier must be positive, got {self.segment_multiplier}")

    def layer_segment_counts(self) -> list:
        """Per-layer segment counts, geometrically scaled and rounded half-up."""
        counts = []
        for level in range(self.layers):
            raw = self.segments * self.segment_multiplier ** level
            counts.append(max(1, int(np.floor(raw + 0.5))))
        return counts

    def added_param_count(self, channels: int) -> int:
        return sum(n ** self.priority_rank + 3 * channels for n in self.layer_segment_counts())


@dataclass
class PermutationRecord:
    """Snapshot of every layer's priority vector and induced order."""

    step: int
    priority_values: list = field(default_factory=list)  # one (n,) array per layer
    orders: list = field(default_factory=list)  # one (n,) int array per layer

    def rows(self):
        """(step, layer, priorities-as-csv, order-as-csv) per layer."""
        for idx, (pv, order) in enumerate(zip(self.priority_values, self.orders)):
            yield (
                self.step,
                idx,
                ",".join(repr(float(v)) for v in pv),
                ",".join(str(int(j)) for j in order),
            )


def init_layer_state(n: int, rank: int, channels: int, rng: np.random.Generator,
                     name: str = "shuffle") -> ShuffleLayerState:
    """Fresh layer state.

    Rank-1 priorities start strictly decreasing, (n-j+1)/n for j = 1..n, so
    the initial order is the identity and every entry stays clear of the
    reciprocal guard. Higher-rank priorities are i.i.d. uniform on
    [0.45, 0.55]. Stitch weights start at an unbiased 0.5/0.5 blend.
    """
    if n < 1 or rank < 1 or channels < 1:
        raise ConfigError(f"invalid layer dims: n={n}, rank={rank}, channels={channels}")
    if rank == 1:
        priorities = (np.arange(n, 0, -1, dtype=np.float64)) / n
    else:
        priorities = rng.uniform(0.45, 0.55, size=(n,) * rank)
    return ShuffleLayerState(
        n_segments=n,
        priority_rank=rank,
        priorities=Parameter(f"{name}.priorities", priorities),
        weight_original=Parameter(f"{name}.weight_original", np.full(channels, 0.5)),
        weight_shuffled=Parameter(f"{name}.weight_shuffled", np.full(channels, 0.5)),
        bias=Parameter(f"{name}.bias", np.zeros(channels)),
    )


def init_stack_states(config: ShuffleStackConfig, channels: int,
                      rng: np.random.Generator, name: str = "shuffle") -> list:
    return [
        init_layer_state(n, config.priority_rank, channels, rng, name=f"{name}{idx}")
        for idx, n in enumerate(config.layer_segment_counts())
    ]


# ---------------------------------------------------------------------------
# the five stages


def segment(x: Tensor, n: int) -> list:
    """Split (T, C) into n non-overlapping (T/n, C) segments, in order."""
    if n < 1:
        raise ContractError(f"segment count must be >= 1, got {n}")
    t = x.shape[0]
    if t % n != 0:
        raise ContractError(
            f"length {t} not divisible by {n} segments; truncate before segmenting"
        )
    tau = t // n
    return [tslice(x, 0, j * tau, (j + 1) * tau) for j in range(n)]


def priority_vector(priorities: Tensor) -> Tensor:
    """Reduce a (n,)*rank priority tensor to length n by summing the leading
    rank-1 axes. Rank 1 passes through; gradients reach every element."""
    shape = priorities.shape
    if len(shape) == 0 or any(s != shape[0] for s in shape):
        raise ShapeError(f"priorities must be (n,)*rank, got {shape}")
    if len(shape) == 1:
        return priorities
    return reduce_sum(priorities, axes=list(range(len(shape) - 1)))


def priority_vector_values(values: np.ndarray) -> np.ndarray:
    """Value-only counterpart of priority_vector for logging and sorting."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0 or any(s != values.shape[0] for s in values.shape):
        raise ShapeError(f"priorities must be (n,)*rank, got {values.shape}")
    if values.ndim == 1:
        return values
    return values.sum(axis=tuple(range(values.ndim - 1)))


def sort_order(priority_values, descending: bool = SORT_DESCENDING) -> np.ndarray:
    """Segment indices ordered by priority, ties broken by original index.

    Value-only: the discrete sort carries no gradient.
    """
    values = priority_values.values if isinstance(priority_values, Tensor) else priority_values
    values = np.asarray(values, dtype=np.float64)
    if np.isnan(values).any():
        raise NumericError("NaN in priority vector")
    key = -values if descending else values
    return np.argsort(key, kind="stable")


def _clamped_reciprocal(sorted_priorities: np.ndarray) -> np.ndarray:
    """Detached reciprocals of the selected priorities, guarded near zero."""
    small = np.abs(sorted_priorities) < RECIPROCAL_EPS
    safe = np.where(small, np.copysign(RECIPROCAL_EPS, sorted_priorities), sorted_priorities)
    return 1.0 / safe


def _permutation_gate(priority: Tensor, order: np.ndarray, recip: np.ndarray,
                      linearized: bool) -> Tensor:
    """(n, n) matrix selecting segment order[j] into output slot j.

    Forward: exactly 1.0 at each (j, order[j]), 0 elsewhere, so downstream
    products keep segment values bit-identical. Backward: the gradient at
    (j, order[j]) reaches priority[order[j]] scaled by the frozen reciprocal
    recip[j], which is the detached 1/priority factor of the construction.

    ``linearized`` substitutes priority[order[j]] * recip[j] for the exact
    1.0 forward, exposing the linear dependence on the priorities that the
    frozen-permutation finite-difference oracle differentiates.
    """
    n = order.size
    rows = np.arange(n)
    gate_values = np.zeros((n, n))
    if linearized:
        gate_values[rows, order] = priority.values[order] * recip
    else:
        gate_values[rows, order] = 1.0
    if priority.node_id is None:
        return Tensor(gate_values)
    p_id = priority.node_id

    def backward_fn(g):
        gp = np.zeros(n)
        gp[order] = recip * g[rows, order]
        return [(p_id, gp)]

    return priority.tape.record(gate_values, backward_fn)


def _shuffle_stacked(stacked: Tensor, priority: Tensor, frozen=None) -> Tensor:
    """Re-order a (n, tau, C) stack of segments by the priority sort.

    This is the matrix construction: broadcast the stack across rows, gate
    it with the permutation matrix, and sum out the segment axis. Output
    slot j holds segment order[j] bit-exactly.
    """
    n, tau, c = stacked.shape
    if priority.shape != (n,):
        raise ShapeError(f"priority length {priority.shape} does not match {n} segments")
    if frozen is None:
        pv = priority.values
        order = sort_order(pv)
        sorted_pv = pv[order]
        recip = _clamped_reciprocal(sorted_pv)
        n_clamped = int((np.abs(sorted_pv) < RECIPROCAL_EPS).sum())
        if n_clamped:
            if priority.tape is None or priority.tape.clamp_events == 0:
                logger.warning(
                    "priority magnitude below %g; reciprocal clamped for %d segment(s)",
                    RECIPROCAL_EPS, n_clamped,
                )
            if priority.tape is not None:
                priority.tape.clamp_events += n_clamped
        gate = _permutation_gate(priority, order, recip, linearized=False)
    else:
        order, recip = frozen
        gate = _permutation_gate(priority, np.asarray(order), np.asarray(recip),
                                 linearized=True)
    spread = mul(reshape(gate, (n, n, 1, 1)), reshape(stacked, (1, n, tau, c)))
    return reduce_sum(spread, axes=[1])


def shuffle(segments: list, priority: Tensor, frozen=None) -> list:
    """Re-order segments by the descending priority sort, differentiably.

    Forward values equal the naive gather segments[order[j]] bit-exactly.
    Gradients: each segment receives its output slot's upstream gradient
    unchanged; priority[order[j]] receives the elementwise inner product of
    slot j's upstream gradient with segment order[j], scaled by the frozen
    clamped reciprocal of priority[order[j]].
    """
    n = len(segments)
    if n == 0:
        raise ContractError("shuffle of zero segments")
    if priority.values.shape != (n,):
        raise ShapeError(
            f"priority shape {priority.values.shape} does not match {n} segments"
        )
    seg_shape = segments[0].shape
    if len(seg_shape) != 2:
        raise ShapeError(f"segments must be (tau, C), got {seg_shape}")
    for s in segments[1:]:
        if s.shape != seg_shape:
            raise ShapeError(f"segment shapes differ: {seg_shape} vs {s.shape}")
    stacked = concat([reshape(s, (1,) + seg_shape) for s in segments], axis=0)
    summed = _shuffle_stacked(stacked, priority, frozen=frozen)
    return [
        reshape(tslice(summed, 0, j, j + 1), seg_shape)
        for j in range(n)
    ]


def stitch(x: Tensor, shuffled: Tensor, w_original: Tensor, w_shuffled: Tensor,
           bias: Tensor) -> Tensor:
    """Per-channel affine blend of the original and re-ordered sequences:
    out[t, c] = w_original[c] * x[t, c] + w_shuffled[c] * shuffled[t, c] + bias[c].
    """
    if x.shape != shuffled.shape:
        raise ShapeError(f"stitch inputs differ: {x.shape} vs {shuffled.shape}")
    if len(x.shape) != 2:
        raise ShapeError(f"stitch expects (T, C), got {x.shape}")
    c = x.shape[1]
    for name, w in (("w_original", w_original), ("w_shuffled", w_shuffled), ("bias", bias)):
        if w.shape != (c,):
            raise ShapeError(f"{name} shape {w.shape} does not match {c} channels")
    return add(add(mul(x, w_original), mul(shuffled, w_shuffled)), bias)


# ---------------------------------------------------------------------------
# whole layers and stacks


def layer_forward(tape, x: Tensor, state: ShuffleLayerState, layer_index: int = 0,
                  frozen=None) -> Tensor:
    """One full segment/shuffle/stitch pass preserving the input shape.

    When T is not divisible by the segment count, the first T mod n steps
    are split off, the remainder is shuffled and stitched, and the prefix is
    re-prepended unchanged.

    Internally segmentation and re-concatenation are a single reshape of the
    contiguous body, which is value- and gradient-identical to slicing out
    the segments and concatenating them back.
    """
    t, c = x.shape
    n = state.n_segments
    if t < n:
        raise ConfigError(
            f"shuffle layer {layer_index}: input length {t} is shorter than "
            f"its segment count {n}"
        )
    if c != state.channels:
        raise ShapeError(
            f"shuffle layer {layer_index}: input has {c} channels, state has {state.channels}"
        )
    remainder = t % n
    body = tslice(x, 0, remainder, t) if remainder else x
    tau = (t - remainder) // n

    def bind(p):
        return p.bind(tape) if tape is not None else Tensor(p.values)

    pv = priority_vector(bind(state.priorities))
    stacked = reshape(body, (n, tau, c))
    shuffled_stack = _shuffle_stacked(stacked, pv, frozen=frozen)
    shuffled_seq = reshape(shuffled_stack, (t - remainder, c))
    out_body = stitch(body, shuffled_seq, bind(state.weight_original),
                      bind(state.weight_shuffled), bind(state.bias))
    if remainder:
        prefix = tslice(x, 0, 0, remainder)
        return concat([prefix, out_body], axis=0)
    return out_body


def stack_forward(tape, x: Tensor, config: ShuffleStackConfig, states: list,
                  frozen=None) -> Tensor:
    """Sequential shuffle layers; layer l consumes layer l-1's output."""
    counts = config.layer_segment_counts()
    if len(states) != config.layers:
        raise ConfigError(
            f"stack expects {config.layers} layer states, got {len(states)}"
        )
    for idx, (state, n) in enumerate(zip(states, counts)):
        if state.n_segments != n:
            raise ConfigError(
                f"layer {idx} has {state.n_segments} segments, config derives {n}"
            )
    out = x
    for idx, state in enumerate(states):
        layer_frozen = None if frozen is None else frozen[idx]
        out = layer_forward(tape, out, state, layer_index=idx, frozen=layer_frozen)
    return out


def record_permutations(states: list, step: int) -> PermutationRecord:
    """Snapshot each layer's priority vector and induced order at a step."""
    record = PermutationRecord(step=step)
    for state in states:
        pv = priority_vector_values(state.priorities.values)
        record.priority_values.append(pv.copy())
        record.orders.append(sort_order(pv))
    return record
