"""Hot loops: counter-based RNG, categorical sampling, K-Means assignment.

Each kernel has a numba implementation (``*_nb``) and a numpy one
(``*_np``).  Both produce bit-identical results; the public names dispatch
on :data:`xrfrecolor._accel.USE_NUMBA`.
"""
import numpy as np

from . import _accel
from ._accel import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def _finalize_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def _finalize_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def stream_keys(seed, xs, ys):
    """Per-pixel stream keys ``hash(seed, x, y)`` (splitmix64 chaining)."""
    with np.errstate(over="ignore"):
        k = _finalize_np(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + GOLDEN)
        k = _finalize_np(k ^ (np.asarray(xs, dtype=np.uint64) + GOLDEN))
        k = _finalize_np(k ^ (np.asarray(ys, dtype=np.uint64) + GOLDEN))
    return k


def uniforms_np(key, start, n):
    """Draws ``start .. start+n-1`` of the splitmix64 stream ``key`` as doubles in [0, 1)."""
    key = np.asarray(key, dtype=np.uint64)
    ctr = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _finalize_np(key[..., None] + ctr * GOLDEN)
    return (z >> _S11).astype(np.float64) * _INV53


@njit
def _categorical_counts_nb(cdfs, labels, keys, n, out):
    E = cdfs.shape[1]
    golden = np.uint64(0x9E3779B97F4A7C15)
    for p in range(keys.shape[0]):
        lab = labels[p]
        if lab < 0:
            continue
        cdf = cdfs[lab]
        state = keys[p]
        for _ in range(n):
            state = state + golden
            u = np.float64(_finalize_nb(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
            lo = 0
            hi = E
            while lo < hi:  # first index with cdf > u
                mid = (lo + hi) >> 1
                if cdf[mid] > u:
                    hi = mid
                else:
                    lo = mid + 1
            if lo >= E:
                lo = E - 1
            out[p, lo] += 1
    return out


def _categorical_counts_np(cdfs, labels, keys, n, out, max_draws=1 << 22):
    E = cdfs.shape[1]
    step = max(1, max_draws // n)
    for s in range(0, keys.shape[0], step):
        e = min(keys.shape[0], s + step)
        for lab in np.unique(labels[s:e]):
            if lab < 0:
                continue
            rows = np.nonzero(labels[s:e] == lab)[0] + s
            u = uniforms_np(keys[rows], 0, n)
            idx = np.minimum(np.searchsorted(cdfs[lab], u, side="right"), E - 1)
            flat = (np.arange(rows.size)[:, None] * E + idx).ravel()
            out[rows] += np.bincount(flat, minlength=rows.size * E).reshape(rows.size, E).astype(out.dtype)
    return out


def categorical_counts(cdfs, labels, keys, n):
    """Draw ``n`` categorical samples per pixel; pixel ``p`` uses ``cdfs[labels[p]]``.

    Pixels with a negative label are left at zero.  Returns a ``(P, E)`` uint32
    count matrix.
    """
    cdfs = np.ascontiguousarray(cdfs, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    out = np.zeros((keys.shape[0], cdfs.shape[1]), dtype=np.uint32)
    if n <= 0:
        return out
    if _accel.USE_NUMBA:
        return _categorical_counts_nb(cdfs, labels, keys, int(n), out)
    return _categorical_counts_np(cdfs, labels, keys, int(n), out)


def make_cdf(p):
    cdf = np.cumsum(np.asarray(p, dtype=np.float64), axis=-1)
    cdf /= cdf[..., -1:]
    cdf[..., -1] = 1.0
    return cdf


@njit
def _assign_nb(X, C):
    n = X.shape[0]
    k = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = np.inf
        bj = 0
        for j in range(k):
            d = 0.0
            for c in range(X.shape[1]):
                t = X[i, c] - C[j, c]
                d = d + t * t
            if d < best:
                best = d
                bj = j
        labels[i] = bj
        d2[i] = best
    return labels, d2


def _assign_np(X, C):
    d = np.zeros((X.shape[0], C.shape[0]))
    for c in range(X.shape[1]):
        d = d + (X[:, c, None] - C[None, :, c]) ** 2
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(X.shape[0]), labels]


def assign(X, C):
    """Nearest-centroid labels (ties to lowest index) and squared distances."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if _accel.USE_NUMBA:
        return _assign_nb(X, C)
    return _assign_np(X, C)


@njit
def _cluster_sums_nb(X, labels, k):
    sums = np.zeros((k, X.shape[1]))
    counts = np.zeros(k, dtype=np.int64)
    for i in range(X.shape[0]):
        j = labels[i]
        counts[j] += 1
        for c in range(X.shape[1]):
            sums[j, c] += X[i, c]
    return sums, counts


def _cluster_sums_np(X, labels, k):
    sums = np.stack([np.bincount(labels, weights=X[:, c], minlength=k) for c in range(X.shape[1])], axis=1)
    return sums, np.bincount(labels, minlength=k)


def cluster_sums(X, labels, k):
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if _accel.USE_NUMBA:
        return _cluster_sums_nb(X, labels, k)
    return _cluster_sums_np(X, labels, k)


@njit
def _cluster_mean_dist_nb(X, labels, k):
    n = X.shape[0]
    out = np.zeros((n, k))
    for i in range(n):
        for j in range(n):
            d = 0.0
            for c in range(X.shape[1]):
                t = X[i, c] - X[j, c]
                d += t * t
            out[i, labels[j]] += np.sqrt(d)
    return out


def _cluster_mean_dist_np(X, labels, k):
    d2 = np.zeros((X.shape[0], X.shape[0]))
    for c in range(X.shape[1]):
        d2 += (X[:, c, None] - X[None, :, c]) ** 2
    n = X.shape[0]
    out = np.zeros((n, k))
    # unbuffered, row-major accumulation: same summation order as the loop kernel
    np.add.at(out, (np.arange(n)[:, None], np.broadcast_to(labels, (n, n))), np.sqrt(d2))
    return out


def cluster_distance_sums(X, labels, k):
    """``out[i, c]`` = sum of Euclidean distances from point ``i`` to members of cluster ``c``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if _accel.USE_NUMBA:
        return _cluster_mean_dist_nb(X, labels, k)
    return _cluster_mean_dist_np(X, labels, k)
