import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spartq.data import BBox, CellHistogram, GridSpec
from spartq.env import (
    EnvState,
    PartitionEnv,
    action_count,
    action_index,
    encode_state,
    index_action,
    mask_from_states,
    reset,
    state_size,
    step,
    valid_mask,
)
from spartq.partition import DOWN, RIGHT, CutAction, InvalidAction, enumerate_valid_actions, partition_counts


def grid_of(g):
    return GridSpec(BBox(0.0, 0.0, 1.0, 1.0), g)


def channels(vec, g):
    return vec.reshape(g + 1, g + 1, 3)


def test_sizes():
    assert state_size(30) == 2883
    assert action_count(30) == 1800


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 40), st.data())
def test_action_index_round_trip(g, data):
    idx = data.draw(st.integers(0, 2 * g * g - 1))
    assert action_index(index_action(idx, g), g) == idx


def test_action_index_layout():
    assert action_index(CutAction(0, 0, RIGHT), 30) == 0
    assert action_index(CutAction(0, 0, DOWN), 30) == 1
    assert action_index(CutAction(1, 2, DOWN), 30) == (30 + 2) * 2 + 1
    with pytest.raises(IndexError):
        index_action(1800, 30)


def test_initial_p_is_cell_share():
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 9, size=(5, 5))
    hist = CellHistogram(counts, int(counts.sum()))
    s = channels(encode_state(reset(grid_of(5), hist)), 5)
    np.testing.assert_allclose(s[:5, :5, 2], counts / counts.sum(), rtol=1e-6)
    assert (s[5, :, 2] == 0).all() and (s[:, 5, 2] == 0).all()


def test_p_substitution_example():
    hist = CellHistogram(np.array([[10, 15], [40, 35]]), 100)
    e = reset(grid_of(2), hist)
    e, _ = step(e, CutAction(0, 1, DOWN), 3)
    s = channels(encode_state(e), 2)
    assert s[0, 0, 2] == pytest.approx(0.05, rel=1e-7)


def test_p_shrinks_when_partition_shrinks():
    hist = CellHistogram(np.ones((5, 5), dtype=int), 25)
    e = reset(grid_of(5), hist)
    p = [channels(encode_state(e), 5)[2, 3, 2]]
    for a in (CutAction(0, 3, DOWN), CutAction(2, 3, RIGHT)):
        e, _ = step(e, a, 4)
        p.append(channels(encode_state(e), 5)[2, 3, 2])
    assert p[0] > p[1] > p[2]
    assert hist.counts[2, 3] == 1


def test_state_channels_and_exact_p():
    rng = np.random.default_rng(1)
    counts = rng.integers(0, 30, size=(8, 8))
    hist = CellHistogram(counts, int(counts.sum()))
    e = reset(grid_of(8), hist)
    for _ in range(5):
        acts = enumerate_valid_actions(e.ps)
        e, _ = step(e, acts[int(rng.integers(len(acts)))], 6)
    s = channels(encode_state(e), 8)
    assert np.array_equal(s[..., 0], e.ps.h) and np.array_equal(s[..., 1], e.ps.v)
    per_rect = partition_counts(e.ps, hist)
    want = (counts * per_rect[e.ps.owner] / float(hist.total) ** 2).astype(np.float32)
    assert np.array_equal(s[:8, :8, 2], want)
    assert ((0 <= s[..., 2]) & (s[..., 2] <= 1)).all()
    assert encode_state(e).dtype == np.float32


def test_mask_counts_and_agreement():
    hist = CellHistogram(np.ones((30, 30), dtype=int), 900)
    e = reset(grid_of(30), hist)
    mask = valid_mask(e)
    assert mask.sum() == 58
    expect = np.zeros_like(mask)
    for a in enumerate_valid_actions(e.ps):
        expect[action_index(a, 30)] = True
    assert np.array_equal(mask, expect)
    assert np.array_equal(mask_from_states(encode_state(e), 30), mask)


def test_mask_from_batch():
    hist = CellHistogram(np.ones((4, 4), dtype=int), 16)
    e0 = reset(grid_of(4), hist)
    e1, _ = step(e0, CutAction(0, 2, DOWN), 3)
    batch = np.stack([encode_state(e0), encode_state(e1)])
    masks = mask_from_states(batch, 4)
    assert masks.shape == (2, 32)
    assert np.array_equal(masks[1], valid_mask(e1))


def test_step_terminal_and_errors():
    hist = CellHistogram(np.ones((5, 5), dtype=int), 25)
    e = reset(grid_of(5), hist)
    with pytest.raises(InvalidAction):
        step(e, CutAction(0, 0, DOWN), 3)
    assert e.t == 0 and len(e.ps.rects) == 1
    e, done = step(e, CutAction(0, 3, DOWN), 3)
    assert not done
    e, done = step(e, CutAction(2, 3, RIGHT), 3)
    assert done and len(e.ps.rects) == 3
    with pytest.raises(InvalidAction):
        step(e, CutAction(1, 0, RIGHT), 3)


def test_terminal_at_t7_for_m8():
    hist = CellHistogram(np.ones((10, 10), dtype=int), 100)
    env = PartitionEnv(grid_of(10), hist, 8)
    env.reset()
    dones = []
    for _ in range(7):
        idx = int(np.flatnonzero(env.mask())[0])
        _, done = env.step(idx)
        dones.append(done)
    assert dones == [False] * 6 + [True]
    assert env.state.t == 7 and len(env.partitions.rects) == 8


def test_fixed_actions_fixed_result():
    hist = CellHistogram(np.arange(36).reshape(6, 6), int(np.arange(36).sum()))
    runs = []
    for _ in range(2):
        env = PartitionEnv(grid_of(6), hist, 4)
        env.reset()
        for a in (CutAction(0, 3, DOWN), CutAction(2, 0, RIGHT), CutAction(4, 3, RIGHT)):
            env.step(action_index(a, 6))
        runs.append(env.partitions)
    assert runs[0].same_partition(runs[1])
    assert isinstance(EnvState(runs[0].copy(), hist), EnvState)
