# cython: language_level=3
"""Compiled versions of the hot kernels; same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline Py_ssize_t _search(const long long[:] keys, long long target) noexcept nogil:
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = keys.shape[0]
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < target:
            lo = mid + 1
        else:
            hi = mid
    if lo < keys.shape[0] and keys[lo] == target:
        return lo
    return -1


def neighbor_candidates(keys, counts, long long stride):
    cdef const long long[:] k = np.ascontiguousarray(keys, dtype=np.int64)
    cdef const long long[:] c = np.ascontiguousarray(counts, dtype=np.int64)
    cdef Py_ssize_t n = k.shape[0]
    cdef Py_ssize_t b, pos
    cdef long long off, target
    cdef long long total = 0
    cdef int dx, dy
    cdef long long[:] acc = np.array(counts, dtype=np.int64)
    with nogil:
        # keys are sorted, so shifted targets are too: one merge sweep per offset
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                if dx == 0 and dy == 0:
                    continue
                off = dx * stride + dy
                pos = 0
                for b in range(n):
                    target = k[b] + off
                    while pos < n and k[pos] < target:
                        pos += 1
                    if pos == n:
                        break
                    if k[pos] == target:
                        acc[b] += c[pos]
        for b in range(n):
            total += c[b] * acc[b]
    return int(total)


cdef Py_ssize_t _join_pass(const double[:] x, const double[:] y, const long long[:] order,
                           const long long[:] ukeys, const long long[:] starts,
                           long long stride, double eps2,
                           long long[:] out_i, long long[:] out_j, bint fill) noexcept nogil:
    cdef Py_ssize_t nb = ukeys.shape[0]
    cdef Py_ssize_t b, q, s, t, pos
    cdef long long a, o, lo_id, hi_id
    cdef int dx, dy
    cdef double ddx, ddy
    cdef Py_ssize_t found = 0
    for b in range(nb):
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                pos = _search(ukeys, ukeys[b] + dx * stride + dy)
                # visit each unordered bucket pair once
                if pos < b:
                    continue
                for s in range(starts[b], starts[b + 1]):
                    a = order[s]
                    if pos == b:
                        q = s + 1
                    else:
                        q = starts[pos]
                    for t in range(q, starts[pos + 1]):
                        o = order[t]
                        ddx = x[a] - x[o]
                        ddy = y[a] - y[o]
                        if ddx * ddx + ddy * ddy <= eps2:
                            if fill:
                                if a < o:
                                    lo_id = a
                                    hi_id = o
                                else:
                                    lo_id = o
                                    hi_id = a
                                out_i[found] = lo_id
                                out_j[found] = hi_id
                            found += 1
    return found


def epsilon_join(x, y, double eps):
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:] yv = np.ascontiguousarray(y, dtype=np.float64)
    n = xv.shape[0]
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy()
    xa = np.asarray(xv)
    ya = np.asarray(yv)
    bx = np.floor((xa - xa.min()) / eps).astype(np.int64)
    by = np.floor((ya - ya.min()) / eps).astype(np.int64)
    stride = int(by.max()) + 3
    keys = bx * stride + by
    order_arr = np.argsort(keys, kind="stable").astype(np.int64)
    ukeys_arr, starts_arr = np.unique(keys[order_arr], return_index=True)
    starts_arr = np.append(starts_arr, n).astype(np.int64)
    cdef const long long[:] order = order_arr
    cdef const long long[:] ukeys = ukeys_arr.astype(np.int64)
    cdef const long long[:] starts = starts_arr
    cdef double eps2 = eps * eps
    cdef long long st = stride
    dummy = np.empty(0, dtype=np.int64)
    cdef long long[:] di = dummy
    cdef Py_ssize_t count
    with nogil:
        count = _join_pass(xv, yv, order, ukeys, starts, st, eps2, di, di, False)
    oi = np.empty(count, dtype=np.int64)
    oj = np.empty(count, dtype=np.int64)
    cdef long long[:] vi = oi
    cdef long long[:] vj = oj
    with nogil:
        _join_pass(xv, yv, order, ukeys, starts, st, eps2, vi, vj, True)
    srt = np.lexsort((oj, oi))
    return oi[srt], oj[srt]


def sumtree_find(tree, long long capacity, values):
    cdef const double[:] tr = np.ascontiguousarray(tree, dtype=np.float64)
    cdef const double[:] vals = np.ascontiguousarray(values, dtype=np.float64)
    out = np.empty(vals.shape[0], dtype=np.int64)
    cdef long long[:] res = out
    cdef Py_ssize_t k
    cdef long long node
    cdef double u, lv
    with nogil:
        for k in range(vals.shape[0]):
            u = vals[k]
            node = 1
            while node < capacity:
                lv = tr[2 * node]
                if u >= lv and tr[2 * node + 1] > 0:
                    u -= lv
                    node = 2 * node + 1
                else:
                    node = 2 * node
            res[k] = node - capacity
    return out


from libc.math cimport sqrtf


def adam_update(p, g, m, v, double lr, double beta1, double beta2, double eps, double c1, double c2):
    cdef float[::1] pv = p.reshape(-1)
    cdef const float[::1] gv = g.reshape(-1)
    cdef float[::1] mv = m.reshape(-1)
    cdef float[::1] vv = v.reshape(-1)
    cdef Py_ssize_t k, n = pv.shape[0]
    cdef float gk, mk, vk
    cdef float b1 = <float>beta1
    cdef float b2 = <float>beta2
    cdef float a1 = <float>(1.0 - beta1)
    cdef float a2 = <float>(1.0 - beta2)
    cdef float scale = <float>(lr / c1)
    cdef float inv_c2 = <float>(1.0 / c2)
    cdef float fe = <float>eps
    with nogil:
        for k in range(n):
            gk = gv[k]
            mk = b1 * mv[k] + a1 * gk
            vk = b2 * vv[k] + a2 * gk * gk
            mv[k] = mk
            vv[k] = vk
            pv[k] = pv[k] - scale * mk / (sqrtf(vk * inv_c2) + fe)
