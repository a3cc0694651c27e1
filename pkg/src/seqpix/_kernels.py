"""Hot inner loops for training and batched evaluation.

Each kernel has a plain numpy implementation; when numba is importable
the jitted version replaces it (same arithmetic, no fastmath, so results
stay deterministic within an environment). The prefix scans exist
because numpy's cumsum runs a serial scalar scan (~3 ns/element) while a
row-vectorized scan is memory-bound.
"""

from __future__ import annotations

import numpy as np


def _prefix_rows_np(a):
    np.cumsum(a, axis=0, out=a)
    return a


def _prefix_rows_batch_np(a):
    np.cumsum(a, axis=1, out=a)
    return a


def _uv_backward_np(Ut, Vt, h, dyv, xb, eta):
    dhv = (Vt * dyv[:, None]) * (h * (1.0 - h))
    total = dhv.sum(axis=0)
    suffix = total[None, :] - np.cumsum(dhv, axis=0)
    Ut -= (eta * xb)[:, None] * suffix
    Vt -= (eta * dyv)[:, None] * h
    return total


def _r_update_np(R, dyv, xb, eta):
    grad = dyv[:, None] * xb[None, :]
    grad *= _tril_mask(R.shape[0], R.dtype)
    R -= eta * grad


_MASK_CACHE = {}


def _tril_mask(n, dtype):
    key = (n, np.dtype(dtype).str)
    if key not in _MASK_CACHE:
        _MASK_CACHE[key] = np.tril(np.ones((n, n), dtype=dtype), -1)
    return _MASK_CACHE[key]


prefix_rows = _prefix_rows_np
prefix_rows_batch = _prefix_rows_batch_np
uv_backward = _uv_backward_np
r_update = _r_update_np
HAVE_NUMBA = False

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is an optional speedup
    njit = None

if njit is not None:
    @njit(cache=True)
    def _prefix_rows_nb(a):
        for j in range(1, a.shape[0]):
            for t in range(a.shape[1]):
                a[j, t] += a[j - 1, t]
        return a

    @njit(cache=True)
    def _prefix_rows_batch_nb(a):
        for b in range(a.shape[0]):
            for j in range(1, a.shape[1]):
                for t in range(a.shape[2]):
                    a[b, j, t] += a[b, j - 1, t]
        return a

    @njit(cache=True)
    def _uv_backward_nb(Ut, Vt, h, dyv, xb, eta):
        n_x, n_h = Ut.shape
        suffix = np.zeros(n_h, dtype=Ut.dtype)
        for j in range(n_x - 1, -1, -1):
            dj = dyv[j]
            e_xb = eta * xb[j]
            e_d = eta * dj
            for t in range(n_h):
                hjt = h[j, t]
                Ut[j, t] -= e_xb * suffix[t]  # gradient from predictions after j
                suffix[t] += (Vt[j, t] * dj) * (hjt * (1.0 - hjt))
                Vt[j, t] -= e_d * hjt
        return suffix

    @njit(cache=True)
    def _r_update_nb(R, dyv, xb, eta):
        for k in range(R.shape[0]):
            g = eta * dyv[k]
            row = R[k]
            for q in range(k):
                row[q] -= g * xb[q]

    prefix_rows = _prefix_rows_nb
    prefix_rows_batch = _prefix_rows_batch_nb
    uv_backward = _uv_backward_nb
    r_update = _r_update_nb
    HAVE_NUMBA = True
