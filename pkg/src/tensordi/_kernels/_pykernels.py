"""Pure-Python fallbacks for the compiled kernels.

Same contracts as ``_ckernels``; used when the extension is unavailable or
when ``TENSORDI_PURE_PYTHON=1``.
"""

import numpy as np

_BLOCK = 256  # row block for thresholding, bounds temporary allocations


def _soft(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def _apply_block(block, kind, lam, a):
    if kind == 0:  # hard
        return np.where(np.abs(block) > lam, block, 0.0)
    if kind == 1:  # soft
        return _soft(block, lam)
    # scad
    az = np.abs(block)
    mid = ((a - 1.0) * block - np.sign(block) * a * lam) / (a - 2.0)
    out = np.where(az <= 2.0 * lam, _soft(block, lam), np.where(az <= a * lam, mid, block))
    return out


def cd_sweeps(gram, corr, lam, beta, max_sweeps, tol):
    p = gram.shape[0]
    q = gram @ beta
    sweep = 0
    converged = False
    maxdelta = 0.0
    diag = np.diagonal(gram)
    while sweep < max_sweeps:
        maxdelta = 0.0
        for j in range(p):
            gjj = diag[j]
            if gjj <= 0.0:
                continue
            bj_old = beta[j]
            rj = corr[j] - q[j] + gjj * bj_old
            bj_new = float(_soft(rj, lam[j])) / gjj
            delta = bj_new - bj_old
            if delta != 0.0:
                beta[j] = bj_new
                q += gram[:, j] * delta
                maxdelta = max(maxdelta, abs(delta))
        sweep += 1
        if maxdelta <= tol:
            converged = True
            break
    return sweep, converged, maxdelta


def threshold_inplace(mat, kind, lam, a, skip_diagonal):
    n = mat.shape[0]
    nnz = 0
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        block = _apply_block(mat[start:stop], kind, lam, a)
        if skip_diagonal:
            idx = np.arange(start, stop)
            block[idx - start, idx] = mat[start:stop][idx - start, idx]
        mat[start:stop] = block
        nz = np.count_nonzero(block)
        nz -= np.count_nonzero(block[np.arange(stop - start), np.arange(start, stop)])
        nnz += nz
    return int(nnz)
