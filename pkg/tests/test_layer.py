"""Segment, shuffle, stitch: forward exactness and the gradient contract."""

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import max_rel_err
from shufflestitch.errors import (ConfigError, ContractError, NumericError,
                                  ShapeError)
from shufflestitch.layer import (RECIPROCAL_EPS, PermutationRecord,
                                 ShuffleStackConfig, init_layer_state,
                                 init_stack_states, layer_forward,
                                 priority_vector, priority_vector_values,
                                 record_permutations, segment, shuffle,
                                 sort_order, stack_forward, stitch)
from shufflestitch.tensor import Tape, Tensor, concat, mul, reduce_sum


def _rand_segments(rng, n, tau=3, channels=2):
    return [Tensor(rng.normal(size=(tau, channels))) for _ in range(n)]


# --- segment -----------------------------------------------------------------

def test_segment_splits_in_order():
    x = np.arange(16.0).reshape(8, 2)
    parts = segment(Tensor(x), 4)
    assert len(parts) == 4
    for j, part in enumerate(parts):
        np.testing.assert_array_equal(part.values, x[2 * j:2 * j + 2])


def test_segment_single_is_whole_input():
    x = np.arange(10.0).reshape(5, 2)
    (only,) = segment(Tensor(x), 1)
    np.testing.assert_array_equal(only.values, x)


def test_segment_concat_roundtrip():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(12, 3))
    for n in (2, 3, 4, 6):
        parts = segment(Tensor(x), n)
        np.testing.assert_array_equal(concat(parts, axis=0).values, x)


def test_segment_indivisible_length_raises():
    with pytest.raises(ContractError, match="truncate before segmenting"):
        segment(Tensor(np.zeros((10, 1))), 4)


# --- priority reduction ------------------------------------------------------

def test_priority_vector_rank1_identity():
    p = np.array([0.3, 0.9, 0.1])
    np.testing.assert_array_equal(priority_vector(Tensor(p)).values, p)


def test_priority_vector_rank2_sums_first_axis():
    out = priority_vector(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])))
    np.testing.assert_array_equal(out.values, [4.0, 6.0])


def test_priority_vector_gradient_reaches_every_entry():
    for shape in [(3,), (3, 3), (2, 2, 2)]:
        tape = Tape()
        p = tape.watch(np.random.default_rng(1).uniform(size=shape))
        tape.backward(reduce_sum(priority_vector(p)))
        np.testing.assert_array_equal(tape.grad_of(p), np.ones(shape))


def test_priority_vector_rejects_ragged_shapes():
    with pytest.raises(ShapeError, match=r"\(n,\)\*rank"):
        priority_vector(Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        priority_vector_values(np.zeros((3, 2)))


# --- sorting -----------------------------------------------------------------

def test_sort_order_descending_and_stable():
    np.testing.assert_array_equal(sort_order(np.array([0.3, 0.9, 0.1])), [1, 0, 2])
    np.testing.assert_array_equal(sort_order(np.array([0.5, 0.4, 0.3])), [0, 1, 2])
    np.testing.assert_array_equal(sort_order(np.array([0.1, 0.1])), [0, 1])


def test_sort_order_matches_exhaustive_oracle():
    rng = np.random.default_rng(7)
    for trial in range(200):
        n = int(rng.integers(1, 7))
        values = rng.uniform(size=n)
        if trial % 3 == 0:
            values = np.round(values, 1)  # force frequent ties
        expect = sorted(range(n), key=lambda j: (-values[j], j))
        np.testing.assert_array_equal(sort_order(values), expect)


def test_sort_order_rejects_nan():
    with pytest.raises(NumericError, match="NaN"):
        sort_order(np.array([0.3, np.nan]))


def test_sort_order_invariant_under_positive_scaling():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = rng.uniform(0.1, 1.0, size=6)
        for c in (0.5, 3.0, 1e6):
            np.testing.assert_array_equal(sort_order(p), sort_order(c * p))


# --- shuffle forward ---------------------------------------------------------

def test_shuffle_worked_example():
    # priorities chosen so the descending order is [s3, s4, s1, s2]
    rng = np.random.default_rng(13)
    segs = _rand_segments(rng, 4)
    priority = Tensor(np.array([0.2, 0.1, 0.9, 0.8]))
    assert sort_order(priority.values).tolist() == [2, 3, 0, 1]
    out = shuffle(segs, priority)
    for slot, src in enumerate([2, 3, 0, 1]):
        np.testing.assert_array_equal(out[slot].values, segs[src].values)


def test_shuffle_identity_priorities_return_inputs():
    rng = np.random.default_rng(17)
    segs = _rand_segments(rng, 5)
    out = shuffle(segs, Tensor(np.linspace(1.0, 0.2, 5)))
    for got, src in zip(out, segs):
        np.testing.assert_array_equal(got.values, src.values)


def test_shuffle_matches_naive_gather_bit_exactly():
    rng = np.random.default_rng(19)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        segs = _rand_segments(rng, n, tau=int(rng.integers(1, 4)),
                              channels=int(rng.integers(1, 4)))
        priority = rng.uniform(0.05, 1.0, size=n)
        order = sort_order(priority)
        assert sorted(order.tolist()) == list(range(n))
        out = shuffle(segs, Tensor(priority))
        for j in range(n):
            np.testing.assert_array_equal(out[j].values, segs[order[j]].values)


def test_shuffle_argument_errors():
    rng = np.random.default_rng(23)
    segs = _rand_segments(rng, 3)
    with pytest.raises(ContractError, match="zero segments"):
        shuffle([], Tensor(np.zeros(0)))
    with pytest.raises(ShapeError, match="does not match"):
        shuffle(segs, Tensor(np.ones(4)))
    with pytest.raises(ShapeError, match="tau, C"):
        shuffle([Tensor(np.zeros(3))] * 2, Tensor(np.ones(2)))
    bad = segs[:2] + [Tensor(np.zeros((4, 2)))]
    with pytest.raises(ShapeError, match="differ"):
        shuffle(bad, Tensor(np.ones(3)))


# --- shuffle gradients -------------------------------------------------------

def test_shuffle_gradient_contract_hand_formula():
    """Priorities receive recip * <upstream, selected segment>; segments
    receive their output slot's upstream unchanged."""
    rng = np.random.default_rng(29)
    n, tau, c = 4, 3, 2
    seg_values = [rng.normal(size=(tau, c)) for _ in range(n)]
    priority = rng.uniform(0.2, 1.0, size=n)
    upstream = [rng.normal(size=(tau, c)) for _ in range(n)]

    tape = Tape()
    p = tape.watch(priority.copy())
    segs = [tape.watch(v.copy()) for v in seg_values]
    out = shuffle(segs, p)
    from shufflestitch.tensor import add
    loss_terms = [reduce_sum(mul(o, Tensor(w))) for o, w in zip(out, upstream)]
    total = loss_terms[0]
    for term in loss_terms[1:]:
        total = add(total, term)
    tape.backward(total)

    order = sort_order(priority)
    expect_p = np.zeros(n)
    for j in range(n):
        src = order[j]
        expect_p[src] = (1.0 / priority[src]) * float(
            (upstream[j] * seg_values[src]).sum())
    np.testing.assert_allclose(tape.grad_of(p), expect_p, rtol=1e-12, atol=1e-12)

    inverse = np.empty(n, dtype=int)
    inverse[order] = np.arange(n)
    for i in range(n):
        np.testing.assert_array_equal(tape.grad_of(segs[i]), upstream[inverse[i]])


def test_frozen_shuffle_matches_finite_differences():
    rng = np.random.default_rng(31)
    n, tau, c = 5, 2, 3
    seg_values = [rng.normal(size=(tau, c)) for _ in range(n)]
    priority = rng.uniform(0.2, 1.0, size=n)
    order = sort_order(priority)
    recip = 1.0 / priority[order]
    weights = [rng.normal(size=(tau, c)) for _ in range(n)]

    tape = Tape()
    p = tape.watch(priority.copy())
    out = shuffle([Tensor(v) for v in seg_values], p, frozen=(order, recip))
    from shufflestitch.tensor import add
    total = reduce_sum(mul(out[0], Tensor(weights[0])))
    for o, w in zip(out[1:], weights[1:]):
        total = add(total, reduce_sum(mul(o, Tensor(w))))
    tape.backward(total)

    def scalar(pv):
        outs = shuffle([Tensor(v) for v in seg_values], Tensor(pv),
                       frozen=(order, recip))
        return sum(float((o.values * w).sum()) for o, w in zip(outs, weights))

    step = 1e-5
    numeric = np.zeros(n)
    for i in range(n):
        hi = priority.copy()
        hi[i] += step
        lo = priority.copy()
        lo[i] -= step
        numeric[i] = (scalar(hi) - scalar(lo)) / (2 * step)
    assert max_rel_err(tape.grad_of(p), numeric) <= 1e-4


def test_near_zero_priority_clamps_reciprocal_and_warns(caplog):
    rng = np.random.default_rng(37)
    n = 3
    seg_values = [rng.normal(size=(2, 1)) for _ in range(n)]
    priority = np.array([0.5, 1e-6, -0.2])

    tape = Tape()
    p = tape.watch(priority.copy())
    with caplog.at_level(logging.WARNING, logger="shufflestitch.layer"):
        out = shuffle([tape.watch(v.copy()) for v in seg_values], p)
    assert tape.clamp_events == 1
    assert any("clamped" in rec.getMessage() for rec in caplog.records)

    from shufflestitch.tensor import add
    total = reduce_sum(out[0])
    for o in out[1:]:
        total = add(total, reduce_sum(o))
    tape.backward(total)
    # the 1e-6 entry gets gradient segment_sum / EPS, not segment_sum * 1e6
    grad = tape.grad_of(p)
    expect_tiny = seg_values[1].sum() / RECIPROCAL_EPS
    assert grad[1] == pytest.approx(expect_tiny, rel=1e-12)


def test_clamp_warning_emitted_once_per_tape(caplog):
    rng = np.random.default_rng(41)
    seg_values = [rng.normal(size=(2, 1)) for _ in range(2)]
    tape = Tape()
    p = tape.watch(np.array([0.5, 1e-9]))
    with caplog.at_level(logging.WARNING, logger="shufflestitch.layer"):
        shuffle([Tensor(v) for v in seg_values], p)
        shuffle([Tensor(v) for v in seg_values], p)
    warned = [rec for rec in caplog.records if rec.levelno == logging.WARNING]
    assert len(warned) == 1
    assert tape.clamp_events == 2


def test_clamped_reciprocal_sign_convention():
    from shufflestitch.layer import _clamped_reciprocal
    recip = _clamped_reciprocal(np.array([2.0, 1e-6, -1e-6, 0.0]))
    np.testing.assert_allclose(
        recip, [0.5, 1.0 / RECIPROCAL_EPS, -1.0 / RECIPROCAL_EPS,
                1.0 / RECIPROCAL_EPS])


# --- stitch ------------------------------------------------------------------

def test_stitch_identity_weightings():
    rng = np.random.default_rng(43)
    x, x2 = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    ones, zeros = Tensor(np.ones(2)), Tensor(np.zeros(2))
    np.testing.assert_array_equal(
        stitch(Tensor(x), Tensor(x2), ones, zeros, zeros).values, x)
    np.testing.assert_array_equal(
        stitch(Tensor(x), Tensor(x2), zeros, ones, zeros).values, x2)


def test_stitch_formula_matches_numpy():
    rng = np.random.default_rng(47)
    x, x2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    w1, w2, b = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
    out = stitch(Tensor(x), Tensor(x2), Tensor(w1), Tensor(w2), Tensor(b))
    np.testing.assert_allclose(out.values, w1 * x + w2 * x2 + b,
                               rtol=0, atol=1e-15)


def test_stitch_shape_errors():
    x = Tensor(np.zeros((4, 2)))
    with pytest.raises(ShapeError, match="stitch inputs differ"):
        stitch(x, Tensor(np.zeros((5, 2))), Tensor(np.ones(2)),
               Tensor(np.ones(2)), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError, match="w_original"):
        stitch(x, x, Tensor(np.ones(3)), Tensor(np.ones(2)), Tensor(np.zeros(2)))


# --- whole layer -------------------------------------------------------------

def test_layer_preserves_shape_and_prefix():
    rng = np.random.default_rng(53)
    state = init_layer_state(4, 1, 2, rng)
    state.priorities.values = rng.uniform(0.2, 1.0, size=4)
    state.weight_original.values = rng.normal(size=2)
    state.weight_shuffled.values = rng.normal(size=2)
    x = rng.normal(size=(10, 2))
    out = layer_forward(None, Tensor(x), state)
    assert out.shape == (10, 2)
    # T mod n = 2 leading steps pass through untouched
    np.testing.assert_array_equal(out.values[:2], x[:2])


def test_layer_matches_explicit_pipeline():
    """The reshape-based body equals segment -> shuffle -> concat -> stitch."""
    rng = np.random.default_rng(59)
    state = init_layer_state(4, 1, 2, rng)
    state.priorities.values = rng.uniform(0.2, 1.0, size=4)
    x = rng.normal(size=(12, 2))
    out = layer_forward(None, Tensor(x), state)

    segs = segment(Tensor(x), 4)
    shuffled = shuffle(segs, Tensor(state.priorities.values))
    seq = concat(shuffled, axis=0)
    expect = stitch(Tensor(x), seq, Tensor(state.weight_original.values),
                    Tensor(state.weight_shuffled.values),
                    Tensor(state.bias.values))
    np.testing.assert_array_equal(out.values, expect.values)


def test_layer_single_segment_is_self_stitch():
    rng = np.random.default_rng(61)
    state = init_layer_state(1, 1, 3, rng)
    state.weight_original.values = rng.normal(size=3)
    state.weight_shuffled.values = rng.normal(size=3)
    state.bias.values = rng.normal(size=3)
    x = rng.normal(size=(7, 3))
    out = layer_forward(None, Tensor(x), state)
    expect = stitch(Tensor(x), Tensor(x), Tensor(state.weight_original.values),
                    Tensor(state.weight_shuffled.values),
                    Tensor(state.bias.values))
    np.testing.assert_array_equal(out.values, expect.values)


def test_layer_shorter_than_segments_raises():
    state = init_layer_state(8, 1, 1, np.random.default_rng(0))
    with pytest.raises(ConfigError, match="layer 3"):
        layer_forward(None, Tensor(np.zeros((5, 1))), state, layer_index=3)


def test_layer_channel_mismatch_raises():
    state = init_layer_state(2, 1, 2, np.random.default_rng(0))
    with pytest.raises(ShapeError, match="channels"):
        layer_forward(None, Tensor(np.zeros((8, 3))), state)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 64), st.integers(1, 4), st.sampled_from([2, 4, 8]),
       st.integers(0, 2**31 - 1))
def test_layer_output_shape_always_matches_input(t, c, n, seed):
    rng = np.random.default_rng(seed)
    state = init_layer_state(n, 1, c, rng)
    out = layer_forward(None, Tensor(rng.normal(size=(t, c))), state)
    assert out.shape == (t, c)


def test_layer_gradients_reach_every_parameter():
    rng = np.random.default_rng(67)
    state = init_layer_state(4, 2, 2, rng)
    x = rng.normal(size=(9, 2))
    tape = Tape()
    out = layer_forward(tape, tape.watch(x), state)
    tape.backward(reduce_sum(mul(out, out)))
    for p in state.parameters():
        grad = p.grad(tape)
        assert grad.shape == p.values.shape
    assert np.any(state.priorities.grad(tape) != 0.0)
    assert np.any(state.weight_shuffled.grad(tape) != 0.0)


# --- initialization ----------------------------------------------------------

def test_initial_priorities_are_identity_inducing():
    state = init_layer_state(6, 1, 1, np.random.default_rng(0))
    np.testing.assert_allclose(state.priorities.values,
                               [6 / 6, 5 / 6, 4 / 6, 3 / 6, 2 / 6, 1 / 6])
    np.testing.assert_array_equal(state.current_order(), np.arange(6))
    assert np.all(np.abs(state.priorities.values) > RECIPROCAL_EPS)


def test_initial_higher_rank_priorities_are_near_uniform():
    state = init_layer_state(4, 2, 1, np.random.default_rng(5))
    assert state.priorities.values.shape == (4, 4)
    assert np.all((state.priorities.values >= 0.45)
                  & (state.priorities.values <= 0.55))


def test_initial_stitch_weights_form_even_blend():
    state = init_layer_state(3, 1, 4, np.random.default_rng(0))
    np.testing.assert_array_equal(state.weight_original.values, np.full(4, 0.5))
    np.testing.assert_array_equal(state.weight_shuffled.values, np.full(4, 0.5))
    np.testing.assert_array_equal(state.bias.values, np.zeros(4))


def test_initial_layer_is_identity_map():
    # identity order + 0.5/0.5 blend of two identical sequences
    rng = np.random.default_rng(71)
    state = init_layer_state(4, 1, 2, rng)
    x = rng.normal(size=(8, 2))
    np.testing.assert_allclose(layer_forward(None, Tensor(x), state).values, x,
                               rtol=0, atol=1e-15)


# --- stacks ------------------------------------------------------------------

def test_stack_segment_counts_double_and_halve():
    assert ShuffleStackConfig(segments=2, layers=3,
                              segment_multiplier=2.0).layer_segment_counts() == [2, 4, 8]
    assert ShuffleStackConfig(segments=8, layers=3,
                              segment_multiplier=0.5).layer_segment_counts() == [8, 4, 2]


def test_stack_segment_counts_round_half_up_and_floor_at_one():
    assert ShuffleStackConfig(segments=3, layers=3,
                              segment_multiplier=0.5).layer_segment_counts() == [3, 2, 1]
    assert ShuffleStackConfig(segments=2, layers=3,
                              segment_multiplier=0.5).layer_segment_counts() == [2, 1, 1]


def test_stack_config_validation():
    with pytest.raises(ConfigError, match="segments"):
        ShuffleStackConfig(segments=0)
    with pytest.raises(ConfigError, match="layers"):
        ShuffleStackConfig(segments=2, layers=0)
    with pytest.raises(ConfigError, match="multiplier"):
        ShuffleStackConfig(segments=2, segment_multiplier=0.0)
    with pytest.raises(ConfigError, match="priority_rank"):
        ShuffleStackConfig(segments=2, priority_rank=0)


def test_stack_single_layer_equals_layer_forward():
    rng = np.random.default_rng(73)
    config = ShuffleStackConfig(segments=4)
    states = init_stack_states(config, 2, rng)
    states[0].priorities.values = rng.uniform(0.2, 1.0, size=4)
    x = rng.normal(size=(12, 2))
    via_stack = stack_forward(None, Tensor(x), config, states)
    via_layer = layer_forward(None, Tensor(x), states[0])
    np.testing.assert_array_equal(via_stack.values, via_layer.values)


def test_stack_rejects_mismatched_states():
    rng = np.random.default_rng(79)
    config = ShuffleStackConfig(segments=4, layers=2)
    states = init_stack_states(config, 1, rng)
    with pytest.raises(ConfigError, match="layer states"):
        stack_forward(None, Tensor(np.zeros((8, 1))), config, states[:1])
    states[1] = init_layer_state(3, 1, 1, rng)
    with pytest.raises(ConfigError, match="config derives"):
        stack_forward(None, Tensor(np.zeros((8, 1))), config, states)


def test_stack_forward_shape_across_configs():
    rng = np.random.default_rng(83)
    for segments, layers, mult in [(2, 3, 2.0), (8, 3, 0.5), (4, 2, 1.0)]:
        config = ShuffleStackConfig(segments=segments, layers=layers,
                                    segment_multiplier=mult)
        states = init_stack_states(config, 2, rng)
        t = max(16, max(config.layer_segment_counts()))
        out = stack_forward(None, Tensor(rng.normal(size=(t, 2))), config, states)
        assert out.shape == (t, 2)


# --- parameter accounting ----------------------------------------------------

def test_layer_param_count_formula():
    rng = np.random.default_rng(89)
    for n, rank, c in [(2, 1, 1), (4, 1, 3), (3, 2, 2), (2, 3, 5)]:
        state = init_layer_state(n, rank, c, rng)
        actual = sum(p.values.size for p in state.parameters())
        assert state.param_count() == actual == n ** rank + 3 * c


def test_stack_added_param_count_sums_layers():
    config = ShuffleStackConfig(segments=2, layers=3, segment_multiplier=2.0,
                                priority_rank=2)
    # counts [2, 4, 8] with rank 2 and 3 channels
    expect = (2 ** 2 + 9) + (4 ** 2 + 9) + (8 ** 2 + 9)
    assert config.added_param_count(3) == expect
    states = init_stack_states(config, 3, np.random.default_rng(0))
    assert sum(s.param_count() for s in states) == expect


def test_minimal_config_adds_five_parameters():
    assert ShuffleStackConfig(segments=2).added_param_count(1) == 5


# --- trajectory records ------------------------------------------------------

def test_record_permutations_snapshot_and_rows():
    rng = np.random.default_rng(97)
    states = init_stack_states(ShuffleStackConfig(segments=3, layers=2), 1, rng)
    record = record_permutations(states, step=4)
    assert isinstance(record, PermutationRecord)
    assert record.step == 4
    for order in record.orders:
        np.testing.assert_array_equal(order, np.arange(3))
    rows = list(record.rows())
    assert [r[1] for r in rows] == [0, 1]
    assert rows[0][3] == "0,1,2"
    parsed = [float(v) for v in rows[0][2].split(",")]
    np.testing.assert_allclose(parsed, states[0].priorities.values)


def test_recorded_steps_are_monotone_over_a_run():
    states = init_stack_states(ShuffleStackConfig(segments=2), 1,
                               np.random.default_rng(0))
    steps = [record_permutations(states, step=s).step for s in (1, 3, 9)]
    assert steps == sorted(steps)


def test_frozen_shuffle_exposes_order_and_reciprocals():
    state = init_layer_state(4, 1, 1, np.random.default_rng(0))
    state.priorities.values = np.array([0.2, 0.8, 0.4, 1.0])
    order, recip = state.frozen_shuffle()
    np.testing.assert_array_equal(order, [3, 1, 2, 0])
    np.testing.assert_allclose(recip, 1.0 / np.array([1.0, 0.8, 0.4, 0.2]))
