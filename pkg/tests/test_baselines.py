import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spartq.baselines import (
    BaselineError,
    DemoEpisode,
    balanced_line,
    baseline,
    kdb_actions,
    quadtree_actions,
    uniform_actions,
)
from spartq.data import BBox, CellHistogram, GridSpec
from spartq.partition import DOWN, RIGHT, CutAction, Rect, apply_cut, check_invariants, init_single, is_valid_cut, partition_counts


def grid_of(g):
    return GridSpec(BBox(0.0, 0.0, 1.0, 1.0), g)


def hist(counts):
    counts = np.asarray(counts, dtype=np.int64)
    return CellHistogram(counts, int(counts.sum()))


def replay_checked(ep: DemoEpisode):
    ps = init_single(ep.final.grid)
    for a in ep.actions:
        assert is_valid_cut(ps, a), a
        ps = apply_cut(ps, a)
    assert ps.same_partition(ep.final)
    assert not check_invariants(ps)


def test_kdb_marginal_example():
    counts = np.zeros((8, 8), dtype=int)
    counts[0] = [1, 1, 1, 1, 4, 0, 0, 0]
    ep = kdb_actions(hist(counts), grid_of(8), 2)
    assert ep.actions == [CutAction(0, 4, DOWN)]
    assert sorted(partition_counts(ep.final, hist(counts)).tolist()) == [4, 4]


def test_balanced_line_scores_every_candidate():
    marginal = np.array([1, 1, 1, 1, 4, 0, 0, 0])
    scores = [abs(int(marginal[:k].sum()) - int(marginal[k:].sum())) for k in range(1, 8)]
    assert balanced_line(marginal) == 1 + int(np.argmin(scores)) == 4
    # tie between offsets 1 and 2 goes to the lower one
    assert balanced_line(np.array([1, 0, 1])) == 1


def test_kdb_uniform_splits_in_middle():
    ep = kdb_actions(hist(np.ones((4, 4))), grid_of(4), 2)
    assert ep.actions == [CutAction(0, 2, DOWN)]


def test_kdb_m8_has_seven_actions():
    rng = np.random.default_rng(0)
    h = hist(rng.integers(0, 50, size=(30, 30)))
    ep = kdb_actions(h, grid_of(30), 8)
    assert len(ep.actions) == 7 and len(ep.final.rects) == 8
    replay_checked(ep)


def test_kdb_range_checked():
    h = hist(np.ones((4, 4)))
    for m in (1, 5):
        with pytest.raises(BaselineError):
            kdb_actions(h, grid_of(4), m)


def _imbalance_options(h, r, vertical):
    block = h.counts[r.top : r.bottom, r.left : r.right]
    marg = block.sum(axis=0 if vertical else 1)
    return [abs(int(marg[:k].sum()) - int(marg[k:].sum())) for k in range(1, len(marg))]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31))
def test_kdb_split_is_most_balanced(g, seed):
    rng = np.random.default_rng(seed)
    h = hist(rng.integers(0, 20, size=(g, g)) * (rng.random((g, g)) < 0.6))
    ep = kdb_actions(h, grid_of(g), 2)
    a = ep.actions[0]
    vertical = a.dir == DOWN
    options = _imbalance_options(h, Rect(0, 0, g, g), vertical)
    got = sorted(partition_counts(ep.final, h).tolist())
    assert got[1] - got[0] == min(options)


def test_kdb_deterministic_and_json_round_trip():
    rng = np.random.default_rng(3)
    h = hist(rng.integers(0, 9, size=(10, 10)))
    a, b = kdb_actions(h, grid_of(10), 5), kdb_actions(h, grid_of(10), 5)
    assert a.actions == b.actions
    back = DemoEpisode.from_dict(json.loads(json.dumps(a.to_dict())))
    assert back.actions == a.actions and back.final.same_partition(a.final)
    assert a.to_dict()["actions"][0][2] in ("right", "down")


def test_demo_json_with_wrong_actions_rejected():
    h = hist(np.ones((6, 6)))
    doc = kdb_actions(h, grid_of(6), 3).to_dict()
    doc["actions"] = doc["actions"][:1]
    with pytest.raises(ValueError):
        DemoEpisode.from_dict(doc)


def test_uniform_layouts():
    ep = uniform_actions(grid_of(30), 4)
    assert sorted(ep.final.rects) == [(0, 0, 15, 15), (0, 15, 15, 30), (15, 0, 30, 15), (15, 15, 30, 30)]
    ep = uniform_actions(grid_of(30), 8)
    lefts = sorted({r.left for r in ep.final.rects})
    tops = sorted({r.top for r in ep.final.rects})
    assert lefts == [0, 8, 15, 23] and tops == [0, 15]
    ep = uniform_actions(grid_of(30), 7)
    assert len(ep.final.rects) == 7 and all(r.top == 0 and r.bottom == 30 for r in ep.final.rects)
    for m in (1, 2, 4, 6, 7, 8, 9, 12):
        ep = uniform_actions(grid_of(30), m)
        assert len(ep.actions) == m - 1
        replay_checked(ep)
    with pytest.raises(BaselineError):
        uniform_actions(grid_of(3), 10)


def test_quadtree_uniform_m4():
    ep = quadtree_actions(hist(np.ones((8, 8))), grid_of(8), 4)
    assert sorted(ep.final.rects) == [(0, 0, 4, 4), (0, 4, 4, 8), (4, 0, 8, 4), (4, 4, 8, 8)]


def test_quadtree_m8_by_hand():
    counts = np.ones((8, 8), dtype=int)
    counts[0, 0] = 100
    ep = quadtree_actions(hist(counts), grid_of(8), 8)
    assert ep.actions == [
        CutAction(0, 4, DOWN),
        CutAction(4, 0, RIGHT),
        CutAction(4, 4, RIGHT),
        CutAction(0, 2, DOWN),
        CutAction(2, 0, RIGHT),
        CutAction(2, 2, RIGHT),
        CutAction(0, 1, DOWN),
    ]
    assert len(ep.final.rects) == 8
    replay_checked(ep)


def test_quadtree_m2_is_binary_split():
    ep = quadtree_actions(hist(np.ones((6, 6))), grid_of(6), 2)
    assert ep.actions == [CutAction(0, 3, DOWN)]


def test_quadtree_runs_out_of_room():
    with pytest.raises(BaselineError):
        quadtree_actions(hist(np.ones((2, 2))), grid_of(2), 4 + 1)


@pytest.mark.parametrize("method", ["uniform", "quad", "kdb"])
@pytest.mark.parametrize("m", [2, 3, 5, 8])
def test_every_baseline_replays(method, m):
    rng = np.random.default_rng(m)
    h = hist(rng.integers(0, 30, size=(10, 10)))
    ep = baseline(method, h, grid_of(10), m)
    assert len(ep.final.rects) == m
    replay_checked(ep)


def test_unknown_method():
    with pytest.raises(BaselineError):
        baseline("rtree", hist(np.ones((4, 4))), grid_of(4), 2)
