"""Pure-Python implementations of the hot kernels.

The compiled module ``_kernels`` mirrors these functions operation for
operation, so both backends return the same floating-point results.
"""

import math

import numpy as np

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 100


def jacobi_singular_values(core):
    """Singular values of a small dense matrix by one-sided Jacobi rotations.

    Columns are orthogonalised pairwise until every pair satisfies
    ``|<a_i, a_j>| <= tol * |a_i| |a_j|``; the column norms are then the
    singular values. Returned unsorted, one value per column of the
    (possibly transposed) working copy, i.e. ``min(rows, cols)`` values.
    """
    g = np.array(core, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("core must be 2-D")
    if g.shape[1] > g.shape[0]:
        g = g.T.copy()
    rows, cols = g.shape
    # list-of-lists keeps the scalar loop out of numpy's per-call overhead
    cm = [[float(g[k, j]) for k in range(rows)] for j in range(cols)]

    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for i in range(cols - 1):
            ci = cm[i]
            for j in range(i + 1, cols):
                cj = cm[j]
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(rows):
                    a = ci[k]
                    b = cj[k]
                    alpha += a * a
                    beta += b * b
                    gamma += a * b
                if gamma == 0.0 or abs(gamma) <= JACOBI_TOL * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 1.0 / (2.0 * zeta)
                elif zeta >= 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for k in range(rows):
                    a = ci[k]
                    b = cj[k]
                    ci[k] = c * a - s * b
                    cj[k] = s * a + c * b
        if not rotated:
            break

    out = np.empty(cols, dtype=np.float64)
    for j in range(cols):
        acc = 0.0
        for v in cm[j]:
            acc += v * v
        out[j] = math.sqrt(acc)
    return out


def quantize_blocks(flat, codes, block_size):
    """Blockwise absmax scaling followed by nearest-code lookup.

    ``codes`` must be strictly increasing. Ties between two codes resolve to
    the lower index. An all-zero block gets scale 0 and the code nearest 0.
    Returns ``(indices int64, scales float64)``.
    """
    x = np.ascontiguousarray(flat, dtype=np.float64).ravel()
    codes = np.ascontiguousarray(codes, dtype=np.float64)
    n = x.size
    n_blocks = -(-n // block_size)
    pad = n_blocks * block_size - n
    blocks = np.concatenate([x, np.zeros(pad)]).reshape(n_blocks, block_size)
    scales = np.abs(blocks).max(axis=1)
    safe = np.where(scales > 0.0, scales, 1.0)
    v = (blocks / safe[:, None]).ravel()[:n]

    last = codes.size - 1
    hi = np.searchsorted(codes, v, side="left")
    hi = np.clip(hi, 1, last)
    lo = hi - 1
    d_lo = v - codes[lo]
    d_hi = codes[hi] - v
    idx = np.where(d_hi < d_lo, hi, lo)
    # below the first code or above the last one the clipped pair still picks correctly
    return idx.astype(np.int64), scales.astype(np.float64)
