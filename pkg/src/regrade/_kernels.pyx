# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled transport kernel.

Successive shortest paths with node potentials on the complete bipartite
source/sink graph. Must stay numerically in step with ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


# indexed binary heap over vertices keyed by (dist, index); the index
# tie-break reproduces the lowest-index-first order of a linear scan

cdef inline bint _less(const double* dist, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    return dist[a] < dist[b] or (dist[a] == dist[b] and a < b)


cdef inline void _sift_up(Py_ssize_t* heap, Py_ssize_t* pos, const double* dist,
                          Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t v = heap[k], parent
    while k > 0:
        parent = (k - 1) >> 1
        if not _less(dist, v, heap[parent]):
            break
        heap[k] = heap[parent]
        pos[heap[k]] = k
        k = parent
    heap[k] = v
    pos[v] = k


cdef inline void _sift_down(Py_ssize_t* heap, Py_ssize_t* pos, const double* dist,
                            Py_ssize_t k, Py_ssize_t size) noexcept nogil:
    cdef Py_ssize_t v = heap[k], c
    while True:
        c = 2 * k + 1
        if c >= size:
            break
        if c + 1 < size and _less(dist, heap[c + 1], heap[c]):
            c += 1
        if not _less(dist, heap[c], v):
            break
        heap[k] = heap[c]
        pos[heap[k]] = k
        k = c
    heap[k] = v
    pos[v] = k


cdef inline void _push(Py_ssize_t* heap, Py_ssize_t* pos, const double* dist,
                       Py_ssize_t v, Py_ssize_t* size) noexcept nogil:
    if pos[v] < 0:
        heap[size[0]] = v
        pos[v] = size[0]
        size[0] += 1
    _sift_up(heap, pos, dist, pos[v])


def ssp_transport(const double[:, ::1] cost, const double[::1] supply,
                  const double[::1] demand, double eps):
    """Min-cost flow of value min(sum(supply), sum(demand)).

    Row sums are capped by ``supply`` and column sums by ``demand``. Returns
    ``(flow, augmentations)``.
    """
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    cdef Py_ssize_t V = n + m
    flow_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] flow = flow_arr
    if n == 0 or m == 0:
        return flow_arr, 0

    cdef double[::1] sup = np.array(supply, dtype=np.float64)
    cdef double[::1] dem = np.array(demand, dtype=np.float64)
    cdef double[::1] pot = np.zeros(V, dtype=np.float64)
    cdef double[::1] dist = np.empty(V, dtype=np.float64)
    cdef Py_ssize_t[::1] pred = np.empty(V, dtype=np.intp)
    cdef char[::1] done = np.empty(V, dtype=np.int8)
    cdef Py_ssize_t[::1] heap = np.empty(V, dtype=np.intp)
    cdef Py_ssize_t[::1] hpos = np.empty(V, dtype=np.intp)
    cdef Py_ssize_t hsize

    cdef Py_ssize_t i, j, v, u, best, target, root, k
    cdef double bestd, nd, rc, D, delta
    cdef double left_sup = 0.0, left_dem = 0.0
    cdef long augmentations = 0

    for i in range(n):
        left_sup += sup[i]
    for j in range(m):
        left_dem += dem[j]

    while left_sup > eps and left_dem > eps:
        hsize = 0
        for v in range(V):
            dist[v] = INFINITY
            pred[v] = -1
            done[v] = 0
            hpos[v] = -1
        for i in range(n):
            if sup[i] > eps:
                dist[i] = 0.0
                _push(&heap[0], &hpos[0], &dist[0], i, &hsize)

        target = -1
        while hsize > 0:
            best = heap[0]
            bestd = dist[best]
            hsize -= 1
            hpos[best] = -1
            if hsize > 0:
                heap[0] = heap[hsize]
                hpos[heap[0]] = 0
                _sift_down(&heap[0], &hpos[0], &dist[0], 0, hsize)
            done[best] = 1
            if best >= n:
                j = best - n
                if dem[j] > eps:
                    target = best
                    break
                # backward arcs sink j -> source i where flow is positive
                for i in range(n):
                    if not done[i] and flow[i, j] > eps:
                        rc = -cost[i, j] + pot[best] - pot[i]
                        if rc < 0.0:
                            rc = 0.0
                        nd = bestd + rc
                        if nd < dist[i]:
                            dist[i] = nd
                            pred[i] = best
                            _push(&heap[0], &hpos[0], &dist[0], i, &hsize)
            else:
                i = best
                for j in range(m):
                    v = n + j
                    if not done[v]:
                        rc = cost[i, j] + pot[i] - pot[v]
                        if rc < 0.0:
                            rc = 0.0
                        nd = bestd + rc
                        if nd < dist[v]:
                            dist[v] = nd
                            pred[v] = i
                            _push(&heap[0], &hpos[0], &dist[0], v, &hsize)

        if target < 0:
            break

        D = dist[target]
        for v in range(V):
            if dist[v] < D:
                pot[v] += dist[v]
            else:
                pot[v] += D

        # bottleneck along the path
        delta = dem[target - n]
        v = target
        while True:
            u = pred[v]
            if u < 0:
                root = v
                break
            if v < n:
                # backward arc u (sink) -> v (source)
                if flow[v, u - n] < delta:
                    delta = flow[v, u - n]
            v = u
        if sup[root] < delta:
            delta = sup[root]

        v = target
        while True:
            u = pred[v]
            if u < 0:
                break
            if v >= n:
                flow[u, v - n] += delta
            else:
                flow[v, u - n] -= delta
                if flow[v, u - n] <= eps:
                    flow[v, u - n] = 0.0
            v = u

        sup[root] -= delta
        dem[target - n] -= delta
        left_sup -= delta
        left_dem -= delta
        if sup[root] <= eps:
            sup[root] = 0.0
        if dem[target - n] <= eps:
            dem[target - n] = 0.0
        augmentations += 1

    return flow_arr, augmentations
