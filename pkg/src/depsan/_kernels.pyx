# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for tree distances and Gaussian scaling.

``heads`` arrays are 0-based parent positions with -1 marking the root.
Inputs are assumed valid; validation happens in :mod:`depsan.deptree`.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, M_PI

cnp.import_array()


def tree_distances(heads):
    """All-pairs undirected path lengths by one BFS per node."""
    cdef const cnp.int64_t[::1] h = np.ascontiguousarray(heads, dtype=np.int64)
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t i, j, e, src, v, w, qhead, qtail
    out = np.empty((n, n), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] d = out
    if n == 0:
        return out

    # CSR adjacency of the undirected tree
    cdef cnp.int64_t[::1] deg = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        if h[i] >= 0:
            deg[i + 1] += 1
            deg[h[i] + 1] += 1
    for i in range(n):
        deg[i + 1] += deg[i]
    cdef cnp.int64_t[::1] fill = np.array(deg[:n], dtype=np.int64)
    cdef cnp.int64_t[::1] adj = np.empty(max(2 * (n - 1), 1), dtype=np.int64)
    for i in range(n):
        if h[i] >= 0:
            adj[fill[i]] = h[i]
            fill[i] += 1
            adj[fill[h[i]]] = i
            fill[h[i]] += 1

    cdef cnp.int64_t[::1] queue = np.empty(n, dtype=np.int64)
    for src in range(n):
        for j in range(n):
            d[src, j] = -1
        d[src, src] = 0
        queue[0] = src
        qhead = 0
        qtail = 1
        while qhead < qtail:
            v = queue[qhead]
            qhead += 1
            for e in range(deg[v], deg[v + 1]):
                w = adj[e]
                if d[src, w] < 0:
                    d[src, w] = d[src, v] + 1
                    queue[qtail] = w
                    qtail += 1
    return out


def gauss_matrix(dist, double sigma):
    """Entrywise Gaussian density of non-negative integer distances.

    Distances are small integers, so the density is tabulated once per
    distinct value and then gathered; that keeps ``exp`` calls at O(max d).
    """
    cdef const cnp.int64_t[:, ::1] d = np.ascontiguousarray(dist, dtype=np.int64)
    cdef Py_ssize_t n = d.shape[0], m = d.shape[1]
    cdef Py_ssize_t i, j, top = 0
    cdef double norm = 1.0 / sqrt(2.0 * M_PI * sigma * sigma)
    cdef double two_var = 2.0 * sigma * sigma
    cdef double x
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            if d[i, j] > top:
                top = d[i, j]
            elif d[i, j] < 0:
                raise ValueError("distances must be non-negative")
    cdef double[::1] table = np.empty(top + 1, dtype=np.float64)
    for i in range(top + 1):
        x = <double>i
        table[i] = norm * exp(-(x * x) / two_var)
    for i in range(n):
        for j in range(m):
            o[i, j] = table[d[i, j]]
    return out
