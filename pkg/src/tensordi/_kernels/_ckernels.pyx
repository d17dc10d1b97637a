# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: coordinate-descent sweeps and in-place covariance thresholding.

Semantics must stay in lockstep with ``_pykernels``; the backend is picked at
import time in ``tensordi._kernels``.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _soft(double z, double lam) nogil:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


cdef inline double _apply(double z, int kind, double lam, double a) nogil:
    cdef double az
    if kind == 0:  # hard
        az = z if z >= 0 else -z
        return z if az > lam else 0.0
    if kind == 1:  # soft
        return _soft(z, lam)
    # scad: soft up to 2*lam, linear interpolation to a*lam, identity beyond
    az = z if z >= 0 else -z
    if az <= 2.0 * lam:
        return _soft(z, lam)
    if az <= a * lam:
        if z >= 0:
            return ((a - 1.0) * z - a * lam) / (a - 2.0)
        return ((a - 1.0) * z + a * lam) / (a - 2.0)
    return z


def cd_sweeps(double[:, ::1] gram, double[::1] corr, double[::1] lam,
              double[::1] beta, int max_sweeps, double tol):
    """Cyclic coordinate descent on the gram form of the LASSO problem.

    Minimizes 0.5*beta'G*beta - corr'beta + sum_j lam_j |beta_j| in place.
    Returns (sweeps_used, converged, last_max_change).
    """
    cdef Py_ssize_t p = gram.shape[0]
    cdef Py_ssize_t j, l
    cdef int sweep = 0
    cdef bint converged = 0
    cdef double delta, bj_new, bj_old, rj, maxdelta = 0.0
    cdef cnp.ndarray[double, ndim=1] q_arr = np.empty(p, dtype=np.float64)
    cdef double[::1] q = q_arr

    # q = G @ beta (kept incrementally up to date)
    for j in range(p):
        rj = 0.0
        for l in range(p):
            rj += gram[j, l] * beta[l]
        q[j] = rj

    with nogil:
        while sweep < max_sweeps:
            maxdelta = 0.0
            for j in range(p):
                if gram[j, j] <= 0.0:
                    continue
                bj_old = beta[j]
                rj = corr[j] - q[j] + gram[j, j] * bj_old
                bj_new = _soft(rj, lam[j]) / gram[j, j]
                delta = bj_new - bj_old
                if delta != 0.0:
                    beta[j] = bj_new
                    for l in range(p):
                        q[l] += gram[l, j] * delta
                    if delta < 0.0:
                        delta = -delta
                    if delta > maxdelta:
                        maxdelta = delta
            sweep += 1
            if maxdelta <= tol:
                converged = 1
                break

    return sweep, bool(converged), maxdelta


def threshold_inplace(double[:, ::1] mat, int kind, double lam, double a,
                      bint skip_diagonal):
    """Apply the thresholding rule entrywise, in place. Returns off-diagonal nnz."""
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t m = mat.shape[1]
    cdef Py_ssize_t i, j
    cdef double v
    cdef long nnz = 0
    with nogil:
        for i in range(n):
            for j in range(m):
                if skip_diagonal and i == j:
                    continue
                v = _apply(mat[i, j], kind, lam, a)
                mat[i, j] = v
                if v != 0.0 and i != j:
                    nnz += 1
    return int(nnz)
