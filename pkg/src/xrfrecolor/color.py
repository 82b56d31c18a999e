"""Colour maths: sRGB/CIELAB, CIEDE2000, redmean distance, similarity, IKMeans."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .metrics import silhouette

# D65 / 2 degree reference white
WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
SRGB_TO_XYZ = np.array([
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
])


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c > 0.04045, ((c + 0.055) / 1.055) ** 2.4, c / 12.92)


def srgb_to_lab(rgb):
    """sRGB in [0,1] (last axis = channels) to CIELAB under D65."""
    xyz = srgb_to_linear(rgb) @ SRGB_TO_XYZ.T
    t = xyz / WHITE_D65
    eps = (6 / 29) ** 3
    f = np.where(t > eps, np.cbrt(t), t / (3 * (6 / 29) ** 2) + 4 / 29)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([np.maximum(L, 0.0), a, b], axis=-1)


def ciede2000(lab1, lab2, kL=1.0, kC=1.0, kH=1.0):
    """CIEDE2000 colour difference; broadcasts over leading axes."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    cbar = 0.5 * (np.hypot(a1, b1) + np.hypot(a2, b2))
    c7 = cbar ** 7
    g = 0.5 * (1 - np.sqrt(c7 / (c7 + 25.0 ** 7)))
    a1p, a2p = (1 + g) * a1, (1 + g) * a2
    c1p, c2p = np.hypot(a1p, b1), np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h1p = np.where((a1p == 0) & (b1 == 0), 0.0, h1p)
    h2p = np.where((a2p == 0) & (b2 == 0), 0.0, h2p)

    dLp = L2 - L1
    dCp = c2p - c1p
    cprod = c1p * c2p
    dh = h2p - h1p
    dh = np.where(dh > 180, dh - 360, np.where(dh < -180, dh + 360, dh))
    dh = np.where(cprod == 0, 0.0, dh)
    dHp = 2 * np.sqrt(cprod) * np.sin(np.radians(dh / 2))

    Lbar = 0.5 * (L1 + L2)
    Cbar = 0.5 * (c1p + c2p)
    hsum = h1p + h2p
    hbar = np.where(
        cprod == 0,
        hsum,
        np.where(np.abs(h1p - h2p) <= 180, hsum / 2,
                 np.where(hsum < 360, (hsum + 360) / 2, (hsum - 360) / 2)),
    )
    T = (1 - 0.17 * np.cos(np.radians(hbar - 30)) + 0.24 * np.cos(np.radians(2 * hbar))
         + 0.32 * np.cos(np.radians(3 * hbar + 6)) - 0.20 * np.cos(np.radians(4 * hbar - 63)))
    dtheta = 30 * np.exp(-(((hbar - 275) / 25) ** 2))
    cbar7 = Cbar ** 7
    Rc = 2 * np.sqrt(cbar7 / (cbar7 + 25.0 ** 7))
    Sl = 1 + 0.015 * (Lbar - 50) ** 2 / np.sqrt(20 + (Lbar - 50) ** 2)
    Sc = 1 + 0.045 * Cbar
    Sh = 1 + 0.015 * Cbar * T
    Rt = -np.sin(np.radians(2 * dtheta)) * Rc
    tl, tc, th = dLp / (kL * Sl), dCp / (kC * Sc), dHp / (kH * Sh)
    return np.sqrt(np.maximum(tl ** 2 + tc ** 2 + th ** 2 + Rt * tc * th, 0.0))


def redmean(c1, c2):
    """Redmean sRGB distance with channels in [0,1]; broadcasts over leading axes."""
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    r = 0.5 * (c1[..., 0] + c2[..., 0])
    d = c2 - c1
    return np.sqrt((2 + r) * d[..., 0] ** 2 + 4 * d[..., 1] ** 2 + (3 - r) * d[..., 2] ** 2)


def color_similarity(c1, c2, scale=100.0):
    """``max(0, 1 - dE00 / scale)`` between sRGB colours in [0,1]."""
    de = ciede2000(srgb_to_lab(c1), srgb_to_lab(c2))
    return np.maximum(0.0, 1.0 - de / scale)


@dataclass
class IKMeansConfig:
    k_min: int = 2
    k_max: int = 12
    max_iter: int = 100
    tol: float = 1e-4
    silhouette_subsample: int = 2048
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__})


@dataclass
class ClusterModel:
    centroids: np.ndarray
    labels: np.ndarray
    k: int
    inertia: float = 0.0
    inertia_history: list = field(default_factory=list)
    silhouette: float = float("nan")
    scores: dict = field(default_factory=dict)


def _spread_init(X, k, rng):
    # farthest-point seeding; first seed drawn from rng, ties to lowest index
    centers = [X[rng.integers(X.shape[0])]]
    d2 = kernels.assign(X, np.asarray(centers))[1]
    for _ in range(1, k):
        centers.append(X[int(np.argmax(d2))])
        d2 = np.minimum(d2, kernels.assign(X, centers[-1][None])[1])
    return np.array(centers)


def kmeans(X, k, max_iter=100, tol=1e-4, seed=0):
    """Lloyd K-Means on rows of ``X``; returns (centroids, labels, inertia history)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    C = _spread_init(X, k, rng)
    history = []
    labels, d2 = kernels.assign(X, C)
    for _ in range(max_iter):
        history.append(float(d2.sum()))
        sums, counts = kernels.cluster_sums(X, labels, k)
        new = C.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        for j in np.nonzero(~nz)[0]:
            # re-seed empty cluster at the worst-fit point
            far = int(np.argmax(d2))
            new[j] = X[far]
            d2[far] = 0.0
        shift = float(np.max(np.linalg.norm(new - C, axis=1)))
        C = new
        labels, d2 = kernels.assign(X, C)
        if shift < tol:
            break
    history.append(float(d2.sum()))
    return C, labels, history


def ikmeans(img, config=None):
    """K-Means over ``k_min..k_max`` picking the k with the best subsampled silhouette."""
    config = config or IKMeansConfig()
    img = np.asarray(img, dtype=np.float64)
    shape = img.shape[:-1]
    X = img.reshape(-1, img.shape[-1])
    if X.shape[0] < config.k_min:
        raise ValueError(f"need at least k_min={config.k_min} pixels, got {X.shape[0]}")
    uniq = np.unique(X, axis=0)
    if uniq.shape[0] == 1:
        return ClusterModel(uniq.copy(), np.zeros(shape, dtype=np.int64), 1, 0.0, [0.0], float("nan"))
    k_hi = min(config.k_max, uniq.shape[0])
    k_lo = min(config.k_min, k_hi)
    rng = np.random.default_rng(config.seed)
    if X.shape[0] > config.silhouette_subsample:
        sub = np.sort(rng.choice(X.shape[0], config.silhouette_subsample, replace=False))
    else:
        sub = np.arange(X.shape[0])
    best, scores = None, {}
    for k in range(k_lo, k_hi + 1):
        C, labels, hist = kmeans(X, k, config.max_iter, config.tol, config.seed)
        ls = labels[sub]
        score = silhouette(X[sub], ls) if np.unique(ls).size > 1 else -1.0
        scores[k] = score
        if best is None or score > best[0]:
            best = (score, k, C, labels, hist)
    score, k, C, labels, hist = best
    return ClusterModel(C, labels.reshape(shape), k, hist[-1], hist, score, scores)
