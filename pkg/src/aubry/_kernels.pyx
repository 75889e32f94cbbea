# cython: boundscheck=False, wraparound=False, cdivision=True
"""Hot loops: min-plus matrix products and budgeted graph relaxations.

aubry.kernels selects this module when it was compiled, otherwise the
numpy twin in _kernels_py.  Both expose the same call signatures and
must produce bit-identical results (tests/test_kernels.py checks this).

Conventions: the second matrix operand is passed TRANSPOSED so the
inner loop runs over contiguous memory; budget tables have shape
(cells, levels + 1) and level b means "b quanta of jump budget spent".
"""

from libc.math cimport INFINITY

import numpy as np


def backend_name():
    return "compiled"


def minplus_matmul_block(double[:, ::1] a, double[:, ::1] bt,
                         double[:, ::1] out, Py_ssize_t row0, Py_ssize_t row1):
    """out[i, j] = min_k a[i, k] + bt[j, k] for i in [row0, row1)."""
    cdef Py_ssize_t n = a.shape[1]
    cdef Py_ssize_t m = bt.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double best, v
    with nogil:
        for i in range(row0, row1):
            for j in range(m):
                best = INFINITY
                for k in range(n):
                    v = a[i, k] + bt[j, k]
                    if v < best:
                        best = v
                out[i, j] = best


def minplus_matmul_argmin_block(double[:, ::1] a, double[:, ::1] bt,
                                double[:, ::1] out, int[:, ::1] arg,
                                Py_ssize_t row0, Py_ssize_t row1):
    """As minplus_matmul_block, also recording the minimizing k (ties -> smallest)."""
    cdef Py_ssize_t n = a.shape[1]
    cdef Py_ssize_t m = bt.shape[0]
    cdef Py_ssize_t i, j, k
    cdef int kbest
    cdef double best, v
    with nogil:
        for i in range(row0, row1):
            for j in range(m):
                best = INFINITY
                kbest = -1
                for k in range(n):
                    v = a[i, k] + bt[j, k]
                    if v < best:
                        best = v
                        kbest = <int> k
                out[i, j] = best
                arg[i, j] = kbest


def minplus_matvec_argmin(double[::1] e, double[:, ::1] wt,
                          double[::1] out, int[::1] arg):
    """out[v] = min_u e[u] + wt[v, u]; arg records the minimizing u (ties -> smallest)."""
    cdef Py_ssize_t n = e.shape[0]
    cdef Py_ssize_t m = wt.shape[0]
    cdef Py_ssize_t u, v
    cdef int ubest
    cdef double best, x
    with nogil:
        for v in range(m):
            best = INFINITY
            ubest = -1
            for u in range(n):
                x = e[u] + wt[v, u]
                if x < best:
                    best = x
                    ubest = <int> u
            out[v] = best
            arg[v] = ubest


def budget_jump_relax(double[:, ::1] vin, double[:, ::1] vout,
                      int[::1] indptr, int[::1] srcs, signed char[::1] units):
    """Single jump relaxation, CSR by target cell.

    vout must enter as a copy of vin (the no-jump option); an edge into
    cell c from cell s costing u budget quanta relaxes
    vout[c, b] <- min(vout[c, b], vin[s, b - u]) for every feasible b.
    """
    cdef Py_ssize_t ncells = vout.shape[0]
    cdef Py_ssize_t nb = vout.shape[1]
    cdef Py_ssize_t c, e, b
    cdef Py_ssize_t s
    cdef int u
    cdef double v
    with nogil:
        for c in range(ncells):
            for e in range(indptr[c], indptr[c + 1]):
                s = srcs[e]
                u = units[e]
                for b in range(u, nb):
                    v = vin[s, b - u]
                    if v < vout[c, b]:
                        vout[c, b] = v


def budget_flow_apply(double[:, ::1] vin, double[:, ::1] vout,
                      int[::1] indptr, int[::1] srcs,
                      double[::1] w, signed char[::1] units):
    """One time-period flow step, CSR by landing cell; vout enters all +inf."""
    cdef Py_ssize_t ncells = vout.shape[0]
    cdef Py_ssize_t nb = vout.shape[1]
    cdef Py_ssize_t c, e, b
    cdef Py_ssize_t s
    cdef int u
    cdef double v
    with nogil:
        for c in range(ncells):
            for e in range(indptr[c], indptr[c + 1]):
                s = srcs[e]
                u = units[e]
                for b in range(0, nb - u):
                    v = vin[s, b] + w[e]
                    if v < vout[c, b + u]:
                        vout[c, b + u] = v
