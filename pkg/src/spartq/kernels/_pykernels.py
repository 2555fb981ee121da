"""Reference implementations of the hot kernels (numpy / pure Python)."""

from collections import defaultdict

import numpy as np

NEIGHBOR_OFFSETS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]


def bucket_keys(x, y, x0, y0, eps):
    """Integer bucket coordinates and a flat key with a wrap-proof stride."""
    bx = np.floor((x - x0) / eps).astype(np.int64)
    by = np.floor((y - y0) / eps).astype(np.int64)
    if len(bx):
        bx -= bx.min()
        by -= by.min()
        stride = int(by.max()) + 3
    else:
        stride = 3
    return bx * stride + by, stride


def neighbor_candidates(keys, counts, stride):
    """Sum over buckets of n_b * (n_b + counts of the 8 neighbouring buckets).

    ``keys`` must be sorted and unique, ``counts`` aligned with them.
    """
    keys = np.asarray(keys, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    if len(keys) == 0:
        return 0
    total = counts.copy()
    for dx, dy in NEIGHBOR_OFFSETS:
        if dx == 0 and dy == 0:
            continue
        target = keys + dx * stride + dy
        pos = np.searchsorted(keys, target)
        pos_c = np.minimum(pos, len(keys) - 1)
        hit = keys[pos_c] == target
        total += np.where(hit, counts[pos_c], 0)
    return int(np.dot(counts, total))


def epsilon_join(x, y, eps):
    """All index pairs (i < j) with squared distance <= eps**2, lexicographic order."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy()
    buckets = defaultdict(list)
    bx = np.floor((x - x.min()) / eps).astype(np.int64)
    by = np.floor((y - y.min()) / eps).astype(np.int64)
    for k in range(len(x)):
        buckets[(int(bx[k]), int(by[k]))].append(k)
    eps2 = eps * eps
    pairs = []
    for (cx, cy), members in buckets.items():
        for dx, dy in NEIGHBOR_OFFSETS:
            others = buckets.get((cx + dx, cy + dy))
            if not others:
                continue
            for a in members:
                xa, ya = x[a], y[a]
                for b in others:
                    if b <= a:
                        continue
                    ddx = xa - x[b]
                    ddy = ya - y[b]
                    if ddx * ddx + ddy * ddy <= eps2:
                        pairs.append((a, b))
    pairs.sort()
    if not pairs:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy()
    arr = np.asarray(pairs, dtype=np.int64)
    return arr[:, 0].copy(), arr[:, 1].copy()


def sumtree_find(tree, capacity, values):
    """Descend a heap-layout sum tree (root at 1) for each prefix-sum value.

    Returns 0-based leaf indices. Empty right subtrees are never entered, so
    rounding at the top of the range cannot land on a zero-priority slot.
    """
    tree = np.asarray(tree, dtype=np.float64)
    u = np.array(values, dtype=np.float64, copy=True)
    node = np.ones(len(u), dtype=np.int64)
    while node[0] < capacity if len(node) else False:
        left = 2 * node
        lv = tree[left]
        rv = tree[left + 1]
        go_right = (u >= lv) & (rv > 0)
        u = np.where(go_right, u - lv, u)
        node = np.where(go_right, left + 1, left)
    return node - capacity


def adam_update(p, g, m, v, lr, beta1, beta2, eps, c1, c2):
    """In-place bias-corrected Adam step on float32 arrays of equal shape.

    ``c1``/``c2`` are the bias corrections ``1 - beta**t``.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    denom = np.sqrt(v / c2)
    denom += eps
    step = m * (lr / c1)
    step /= denom
    p -= step
