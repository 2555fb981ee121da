import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from spartq.replay import (
    NStepBuilder,
    PrioritizedMemory,
    SumTree,
    Transition,
    build_nstep,
    load_transitions,
    sample_mixed,
    save_transitions,
    update_batch_priorities,
)


def tr(k, demo=False, size=4):
    s = np.full(size, k, dtype=np.float32)
    return Transition(s, k, 0.0, s + 1, 1, True, demo)


def test_sumtree_root_is_leaf_sum():
    t = SumTree(5)
    assert t.capacity == 8
    rng = np.random.default_rng(0)
    for _ in range(200):
        t.set(int(rng.integers(5)), float(rng.random() * 10))
        assert t.total == pytest.approx(t.leaves().sum(), rel=1e-12)


def test_push_uses_max_priority():
    mem = PrioritizedMemory(4)
    mem.push(tr(0))
    assert mem.tree.get(0) == 1.0
    mem.update_priorities([0], [4.0])
    mem.push(tr(1))
    assert mem.tree.get(1) == mem.tree.get(0)


def test_agent_memory_evicts_oldest():
    mem = PrioritizedMemory(10000)
    for k in range(10001):
        mem.push(tr(k))
    assert len(mem) == 10000
    assert mem.data[0].a == 10000
    assert mem.data[1].a == 1


def test_demo_memory_grows():
    mem = PrioritizedMemory(100, evict=False)
    for k in range(150):
        mem.push(tr(k, demo=True))
    assert len(mem) == 150
    assert [t.a for t in mem.data] == list(range(150))
    assert mem.tree.total == pytest.approx(mem.tree.leaves()[:150].sum())


def test_td_zero_gives_eps():
    mem = PrioritizedMemory(4, alpha=0.6, eps_p=1e-3)
    mem.push(tr(0))
    mem.update_priorities([0], [0.0])
    assert mem.priorities[0] == 1e-3
    assert mem.tree.get(0) == pytest.approx(1e-3**0.6)


def test_update_out_of_range():
    mem = PrioritizedMemory(4)
    mem.push(tr(0))
    with pytest.raises(IndexError):
        mem.update_priorities([1], [0.5])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 19), st.floats(0, 100)), min_size=1, max_size=60))
def test_root_matches_leaves_after_updates(updates):
    mem = PrioritizedMemory(20)
    for k in range(20):
        mem.push(tr(k))
    for idx, td in updates:
        mem.update_priorities([idx], [td])
    leaves = mem.tree.leaves()[:20]
    assert mem.tree.total == pytest.approx(float(np.sum(leaves)), rel=1e-6)
    np.testing.assert_allclose(leaves, mem.priorities[:20] ** 0.6, rtol=1e-12)


def test_larger_td_larger_probability():
    mem = PrioritizedMemory(8)
    for k in range(3):
        mem.push(tr(k))
    mem.update_priorities([0, 1, 2], [0.1, 1.0, 5.0])
    p = mem.probabilities()
    assert p[0] < p[1] < p[2]


def test_two_leaves_sampling_law():
    mem = PrioritizedMemory(2, alpha=1.0, eps_p=0.0)
    mem.push(tr(0))
    mem.push(tr(1))
    mem.update_priorities([0, 1], [1.0, 3.0])
    idx, _ = mem.sample(100_000, np.random.default_rng(0))
    counts = np.bincount(idx, minlength=2)
    assert chisquare(counts, [25_000, 75_000]).pvalue > 0.01


def test_mixed_split_and_weights():
    rng = np.random.default_rng(1)
    demo, agent = PrioritizedMemory(100, evict=False), PrioritizedMemory(1000)
    for k in range(20):
        demo.push(tr(k, demo=True))
    for k in range(200):
        agent.push(tr(k))
    b = sample_mixed(demo, agent, 32, 0.25, 0.4, rng)
    assert b.from_demo.sum() == 8 and (~b.from_demo).sum() == 24
    assert all(t.is_demo for t in b.transitions[:8])
    assert b.weights.max() == 1.0 and (b.weights > 0).all()


def test_mixed_all_demo_when_agent_empty():
    demo, agent = PrioritizedMemory(100, evict=False), PrioritizedMemory(10)
    for k in range(5):
        demo.push(tr(k, demo=True))
    b = sample_mixed(demo, agent, 32, 0.25, 0.4, np.random.default_rng(0))
    assert len(b) == 32 and b.from_demo.all()
    agent.push(tr(99))
    b = sample_mixed(demo, agent, 32, 0.25, 0.4, np.random.default_rng(0))
    assert (~b.from_demo).sum() == 1
    with pytest.raises(ValueError):
        sample_mixed(PrioritizedMemory(4), PrioritizedMemory(4), 32)


def test_importance_weights_formula():
    demo, agent = PrioritizedMemory(4, evict=False, alpha=1.0, eps_p=0.0), PrioritizedMemory(4)
    demo.push(tr(0, True))
    demo.push(tr(1, True))
    demo.update_priorities([0, 1], [1.0, 3.0])
    b = sample_mixed(demo, agent, 200, 0.25, 0.5, np.random.default_rng(0))
    p = np.where(b.indices == 0, 0.25, 0.75)
    w = (2 * p) ** -0.5
    np.testing.assert_allclose(b.weights, w / w.max())


def test_batch_priority_update_routes_to_owner():
    demo, agent = PrioritizedMemory(4, evict=False), PrioritizedMemory(4)
    demo.push(tr(0, True))
    agent.push(tr(1))
    b = sample_mixed(demo, agent, 4, 0.5, 0.4, np.random.default_rng(0))
    update_batch_priorities(demo, agent, b, np.where(b.from_demo, 2.0, 0.0))
    assert demo.priorities[0] == pytest.approx(2.001)
    assert agent.priorities[0] == pytest.approx(0.001)


def test_nstep_returns_exact():
    states = [np.full(3, k, dtype=np.float32) for k in range(4)]
    episode = [(states[0], 0, 0.0), (states[1], 1, 0.0), (states[2], 2, 1.0)]
    out = build_nstep(episode, states[3], 3, 0.99)
    assert [t.ret for t in out] == [0.9801, 0.99, 1.0]
    assert [t.steps for t in out] == [3, 2, 1]
    assert all(t.terminal for t in out)
    assert all(np.array_equal(t.s_next, states[3]) for t in out)


def test_nstep_window_arithmetic():
    states = [np.full(2, k, dtype=np.float32) for k in range(8)]
    episode = [(states[k], k, 1.0 if k == 6 else 0.0) for k in range(7)]
    out = build_nstep(episode, states[7], 3, 0.99)
    for t in out[:4]:
        assert t.steps == 3 and not t.terminal and t.ret == 0.0
        assert t.s_next[0] == t.s[0] + 3
    assert [t.terminal for t in out[4:]] == [True, True, True]
    assert out[4].ret == 0.99**2


def test_builder_flushes_and_overrides_final_reward():
    b = NStepBuilder(3, 0.99)
    for k in range(2):
        b.add(np.zeros(2), k)
    out = b.finish(np.ones(2), is_demo=True, final_reward=0.2)
    assert out[-1].ret == 0.2 and out[0].ret == 0.99 * 0.2
    assert all(t.is_demo for t in out)
    assert b.steps == []
    with pytest.raises(ValueError):
        build_nstep([], np.zeros(2))


def test_transition_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    items = [
        Transition(rng.random(12).astype(np.float32), k, 0.9801 * k, rng.random(12).astype(np.float32), 3, k % 2 == 0, True)
        for k in range(5)
    ]
    path = tmp_path / "d.transitions"
    save_transitions(path, items, 12)
    back = load_transitions(path, 12)
    for a, b in zip(items, back):
        assert (a.a, a.ret, a.steps, a.terminal, a.is_demo) == (b.a, b.ret, b.steps, b.terminal, b.is_demo)
        assert np.array_equal(a.s, b.s) and np.array_equal(a.s_next, b.s_next)
    with pytest.raises(ValueError):
        load_transitions(path, 13)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(ValueError, match="truncated"):
        load_transitions(path)
