"""Numeric kernels for partition scans.

Scores are accumulated in float64 from the stored float32 rows and only
then rounded to float32. Rounding last makes the result insensitive to the
accumulation order: any float64 path (this kernel, BLAS, a plain np.dot)
lands on the same float32 value, so independently written checkers can
compare results bit-for-bit. The kernel keeps a fixed unroll with strict
IEEE ordering, so repeated scans of the same partition are bitwise
reproducible regardless of thread count or array alignment.
"""

from __future__ import annotations

import numpy as np


def _score_rows_numpy(rows: np.ndarray, query: np.ndarray, out: np.ndarray) -> None:
    # Chunked so the float64 staging buffer stays cache-sized.
    chunk = 8192
    n = rows.shape[0]
    for i0 in range(0, n, chunk):
        i1 = min(i0 + chunk, n)
        out[i0:i1] = rows[i0:i1].astype(np.float64) @ query


try:
    import warnings

    import numba

    # Older TBB runtimes make numba fall back to another threading layer
    # and say so loudly; the fallback is correct, so keep it quiet.
    warnings.filterwarnings(
        "ignore", message=".*TBB.*", category=numba.NumbaWarning
    )

    @numba.njit(parallel=True, cache=True)
    def _score_rows_nb(rows: np.ndarray, query: np.ndarray, out: np.ndarray) -> None:  # pragma: no cover
        n, d = rows.shape
        for i in numba.prange(n):
            a0 = a1 = a2 = a3 = a4 = a5 = a6 = a7 = 0.0
            j = 0
            while j + 8 <= d:
                a0 += np.float64(rows[i, j]) * query[j]
                a1 += np.float64(rows[i, j + 1]) * query[j + 1]
                a2 += np.float64(rows[i, j + 2]) * query[j + 2]
                a3 += np.float64(rows[i, j + 3]) * query[j + 3]
                a4 += np.float64(rows[i, j + 4]) * query[j + 4]
                a5 += np.float64(rows[i, j + 5]) * query[j + 5]
                a6 += np.float64(rows[i, j + 6]) * query[j + 6]
                a7 += np.float64(rows[i, j + 7]) * query[j + 7]
                j += 8
            acc = ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7))
            while j < d:
                acc += np.float64(rows[i, j]) * query[j]
                j += 1
            out[i] = acc

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def score_rows(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Dot every float32 row with a float64 query vector.

    Returns float32 scores clipped to [-1, 1]; clipping is monotone, so
    ordering is unaffected.
    """
    if rows.ndim != 2:
        raise ValueError("rows must be 2-d")
    if rows.shape[1] != query.shape[0]:
        raise ValueError(f"dimension mismatch: rows d={rows.shape[1]}, query d={query.shape[0]}")
    out = np.empty(rows.shape[0], dtype=np.float64)
    if _HAVE_NUMBA:
        _score_rows_nb(rows, query, out)
    else:
        _score_rows_numpy(rows, query, out)
    scores = out.astype(np.float32)
    np.clip(scores, -1.0, 1.0, out=scores)
    return scores
