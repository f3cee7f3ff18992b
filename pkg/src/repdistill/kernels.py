"""Hot numeric kernels: cluster assignment and Gaussian-kernel sums.

Each kernel has a pure-numpy implementation and a numba ``@njit`` version.
The numba path is the default; set ``REPDISTILL_DISABLE_NUMBA=1`` to force
the numpy fallback (also the automatic fallback when numba is absent).
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

import numpy as np

_DISABLE = os.environ.get("REPDISTILL_DISABLE_NUMBA", "0") not in ("", "0", "false")

try:
    if _DISABLE:
        raise ImportError
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised via env flag
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


def pairwise_sq_dists_numpy(a, b):
    """Squared Euclidean distances between rows of a [m,d] and b [k,d]."""
    aa = np.einsum("ij,ij->i", a, a)[:, None]
    bb = np.einsum("ij,ij->i", b, b)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


@njit(cache=True)
def _assign_numba(points, centers):
    m = points.shape[0]
    k = centers.shape[0]
    d = points.shape[1]
    labels = np.empty(m, dtype=np.int64)
    dists = np.empty(m, dtype=np.float64)
    for i in range(m):
        best = 0
        best_d = np.inf
        for j in range(k):
            acc = 0.0
            for c in range(d):
                diff = points[i, c] - centers[j, c]
                acc += diff * diff
            if acc < best_d:
                best_d = acc
                best = j
        labels[i] = best
        dists[i] = best_d
    return labels, dists


def _assign_numpy(points, centers):
    d2 = pairwise_sq_dists_numpy(points.astype(np.float64), centers.astype(np.float64))
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(labels)), labels]


def assign_clusters(points, centers):
    """Nearest-center assignment.

    Returns (labels [m] int64, squared distances [m] float64).
    """
    points = np.ascontiguousarray(points, dtype=np.float32)
    centers = np.ascontiguousarray(centers, dtype=np.float32)
    if NUMBA_ENABLED:
        return _assign_numba(points.astype(np.float64), centers.astype(np.float64))
    return _assign_numpy(points, centers)


@njit(cache=True)
def _kernel_mean_numba(a, b, h2):
    s = 0.0
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            acc = 0.0
            for c in range(a.shape[1]):
                diff = a[i, c] - b[j, c]
                acc += diff * diff
            s += np.exp(-acc / (2.0 * h2))
    return s / (a.shape[0] * b.shape[0])


def _kernel_mean_numpy(a, b, h2):
    d2 = pairwise_sq_dists_numpy(a, b)
    return float(np.exp(-d2 / (2.0 * h2)).mean())


def gaussian_kernel_mean(a, b, bandwidth):
    """Mean of exp(-||x-y||^2 / (2 h^2)) over all row pairs of a and b."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    h2 = float(bandwidth) ** 2
    if NUMBA_ENABLED:
        return float(_kernel_mean_numba(a, b, h2))
    return _kernel_mean_numpy(a, b, h2)
