import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spartq import kernels
from spartq.kernels import _pykernels

BACKENDS = kernels.backends()


def brute_pairs(x, y, eps):
    d2 = (x[:, None] - x[None, :]) ** 2 + (y[:, None] - y[None, :]) ** 2
    i, j = np.nonzero(np.triu(d2 <= eps * eps, k=1))
    return i, j


def brute_candidates(x, y, x0, y0, eps):
    bx = np.floor((x - x0) / eps).astype(int)
    by = np.floor((y - y0) / eps).astype(int)
    cells = {}
    for a, b in zip(bx, by):
        cells[(a, b)] = cells.get((a, b), 0) + 1
    total = 0
    for (a, b), n in cells.items():
        near = sum(cells.get((a + da, b + db), 0) for da in (-1, 0, 1) for db in (-1, 0, 1) if (da, db) != (0, 0))
        total += n * (n + near)
    return total


def test_selected_backend_is_listed():
    assert kernels.BACKEND in BACKENDS
    assert "python" in BACKENDS


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("seed", range(5))
def test_epsilon_join_matches_brute_force(name, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 400))
    x, y = rng.random(n), rng.random(n)
    eps = float(rng.uniform(0.01, 0.2))
    i, j = BACKENDS[name].epsilon_join(x, y, eps)
    bi, bj = brute_pairs(x, y, eps)
    got = sorted(zip(i.tolist(), j.tolist()))
    assert got == sorted(zip(bi.tolist(), bj.tolist()))


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("seed", range(5))
def test_neighbor_candidates_matches_dict_count(name, seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(1, 500))
    x, y = rng.random(n), rng.random(n)
    eps = float(rng.uniform(0.02, 0.3))
    keys, stride = _pykernels.bucket_keys(x, y, 0.0, 0.0, eps)
    uk, counts = np.unique(keys, return_counts=True)
    got = BACKENDS[name].neighbor_candidates(uk, counts, stride)
    assert got == brute_candidates(x, y, 0.0, 0.0, eps)


def test_empty_inputs():
    for mod in BACKENDS.values():
        i, j = mod.epsilon_join(np.zeros(0), np.zeros(0), 0.1)
        assert len(i) == len(j) == 0
        assert mod.neighbor_candidates(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), 3) == 0


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_sumtree_find_lands_on_nonzero_leaves(name):
    cap = 8
    leaves = np.array([0.0, 1.0, 0.0, 3.0, 0.5, 0.0, 0.0, 0.0])
    tree = np.zeros(2 * cap)
    tree[cap:] = leaves
    for node in range(cap - 1, 0, -1):
        tree[node] = tree[2 * node] + tree[2 * node + 1]
    values = np.linspace(0.0, tree[1], 2001)
    idx = BACKENDS[name].sumtree_find(tree, cap, values)
    assert set(idx.tolist()) <= {1, 3, 4}
    edges = np.concatenate([[0], np.cumsum(leaves)])
    expect = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, cap - 1)
    # boundary values may fall either side; interior ones must agree exactly
    interior = ~np.isin(values, edges)
    assert np.array_equal(idx[interior], expect[interior])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=33), st.floats(0.0, 1.0))
def test_sumtree_backends_agree(leaves, frac):
    cap = 1 << max(0, len(leaves) - 1).bit_length()
    tree = np.zeros(2 * cap)
    tree[cap : cap + len(leaves)] = leaves
    for node in range(cap - 1, 0, -1):
        tree[node] = tree[2 * node] + tree[2 * node + 1]
    v = np.array([frac * tree[1]])
    results = {name: mod.sumtree_find(tree, cap, v)[0] for name, mod in BACKENDS.items()}
    assert len(set(results.values())) == 1
    if tree[1] > 0:
        assert tree[cap + results["python"]] > 0


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_adam_update_matches_reference(name):
    rng = np.random.default_rng(3)
    p, g = rng.standard_normal((2, 50)).astype(np.float32)
    m, v = np.abs(rng.standard_normal((2, 50))).astype(np.float32) * 0.1
    ref_p, ref_m, ref_v = (a.astype(np.float64) for a in (p, m, v))
    lr, b1, b2, eps, c1, c2 = 1e-3, 0.9, 0.999, 1e-8, 1 - 0.9**3, 1 - 0.999**3
    ref_m = b1 * ref_m + (1 - b1) * g
    ref_v = b2 * ref_v + (1 - b2) * g.astype(np.float64) ** 2
    ref_p = ref_p - lr * (ref_m / c1) / (np.sqrt(ref_v / c2) + eps)
    BACKENDS[name].adam_update(p, g, m, v, lr, b1, b2, eps, c1, c2)
    np.testing.assert_allclose(m, ref_m, rtol=1e-5)
    np.testing.assert_allclose(v, ref_v, rtol=1e-5)
    np.testing.assert_allclose(p, ref_p, rtol=1e-5, atol=1e-7)
