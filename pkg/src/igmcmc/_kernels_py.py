"""Pure numpy fallback for the Sturm-sequence kernels.

Vectorised over the batch; the recurrence over the matrix index stays a
Python loop, so expect it to be one to two orders slower than the compiled
module for large K.
"""
import numpy as np

_TINY = 1e-300


def _count_above(diag, off2, t):
    t = np.asarray(t, dtype=float)
    q = t - diag[:, 0]
    cnt = (q < 0).astype(np.int64)
    for j in range(1, diag.shape[1]):
        q = np.where(q == 0.0, _TINY, q)
        q = (t - diag[:, j]) - off2[j - 1] / q
        cnt += q < 0
    return cnt


def sturm_count(diag, off2, t):
    diag = np.ascontiguousarray(diag, dtype=float)
    off2 = np.ascontiguousarray(off2, dtype=float)
    if off2.shape[0] != diag.shape[1] - 1:
        raise ValueError("off2 must have length K-1")
    return _count_above(diag, off2, float(t))


def _gershgorin(diag, off2):
    off = np.sqrt(off2)
    r = np.zeros(diag.shape[1])
    r[:-1] += off
    r[1:] += off
    return (diag - r).min(axis=1), (diag + r).max(axis=1)


def top_eigvals(diag, off2, p):
    diag = np.ascontiguousarray(diag, dtype=float)
    off2 = np.ascontiguousarray(off2, dtype=float)
    B, K = diag.shape
    if off2.shape[0] != K - 1:
        raise ValueError("off2 must have length K-1")
    if not 1 <= p <= K:
        raise ValueError("need 1 <= p <= K")
    lo0, top = _gershgorin(diag, off2)
    out = np.empty((B, p))
    for j in range(p):
        lo, hi = lo0.copy(), top.copy()
        active = np.ones(B, dtype=bool)
        for _ in range(2000):
            mid = 0.5 * (lo + hi)
            active &= (mid > lo) & (mid < hi)
            if not active.any():
                break
            c = _count_above(diag[active], off2, mid[active])
            up = c >= j + 1
            idx = np.flatnonzero(active)
            lo[idx[up]] = mid[idx[up]]
            hi[idx[~up]] = mid[idx[~up]]
        out[:, j] = 0.5 * (lo + hi)
        top = out[:, j] + 1e-300 + np.abs(out[:, j]) * 1e-15
    return out


def count_in_window(diag, off2, lo, hi):
    diag = np.ascontiguousarray(diag, dtype=float)
    off2 = np.ascontiguousarray(off2, dtype=float)
    a = _count_above(diag, off2, float(lo))
    c = np.zeros_like(a)
    m = a > 0
    if m.any():
        c[m] = _count_above(diag[m], off2, float(hi))
    return a, c
