"""Image quality (MS-SSIM, UiQi) and clustering (silhouette) metrics."""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.signal import fftconvolve

from . import kernels

MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


@dataclass
class MetricReport:
    ms_ssim: float
    uiqi: float
    per_scale: list = field(default_factory=list)
    degenerate_windows: int = 0

    def as_dict(self):
        return {"ms_ssim": self.ms_ssim, "uiqi": self.uiqi, "per_scale": list(self.per_scale),
                "degenerate_windows": self.degenerate_windows}


def _as_hwc(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    return img


def _channels_first_guess(x):
    # 3xHxW tensors come from the models; H x W x 3 from PNG files
    if x.ndim == 3 and x.shape[0] in (1, 3) and x.shape[2] not in (1, 3):
        return np.moveaxis(x, 0, -1)
    return x


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(x, win):
    return fftconvolve(x, win[::-1, ::-1], mode="valid")


def _ssim_components(x, y, win, c1, c2):
    mx = _filter_valid(x, win)
    my = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    cs_map = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return float(np.mean(lum * cs_map)), float(np.mean(cs_map))


def _downsample(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(x, y, scales=5, window=11, sigma=1.5, data_range=1.0, k1=0.01, k2=0.03,
            auto_reduce=True, return_components=False):
    """Multi-scale SSIM with a Gaussian window, averaged over channels.

    Images are H x W (x C) with values in ``[0, data_range]``.  If the image
    is too small for ``scales`` dyadic levels the scale count is reduced (with
    a warning) and the standard exponents are renormalized.
    """
    x = _as_hwc(_channels_first_guess(np.asarray(x)))
    y = _as_hwc(_channels_first_guess(np.asarray(y)))
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    min_dim = min(x.shape[:2])
    usable = scales
    while usable > 1 and min_dim < window * 2 ** (usable - 1):
        usable -= 1
    if usable < scales:
        if not auto_reduce:
            raise ValueError(f"image of min side {min_dim} too small for {scales} scales with window {window}")
        warnings.warn(f"ms_ssim: reducing scales from {scales} to {usable} for {min_dim}px image", stacklevel=2)
    if min_dim < window:
        window = min_dim if min_dim % 2 else min_dim - 1
    weights = MS_SSIM_WEIGHTS[:usable] / MS_SSIM_WEIGHTS[:usable].sum()
    win = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    values, per_scale = [], []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]
        comps = []
        for s in range(usable):
            ssim_s, cs_s = _ssim_components(a, b, win, c1, c2)
            comps.append(ssim_s if s == usable - 1 else cs_s)
            if s < usable - 1:
                a, b = _downsample(a), _downsample(b)
        comps = np.asarray(comps)
        # negative contrast terms would make the fractional power undefined
        values.append(float(np.prod(np.maximum(comps, 0.0) ** weights)))
        per_scale.append(comps.tolist())
    value = float(np.mean(values))
    if return_components:
        return value, np.mean(np.asarray(per_scale), axis=0).tolist()
    return value


def uiqi(x, y, window=8, return_count=False, eps=1e-12):
    """Universal image quality index over stride-1 windows, averaged over channels.

    Windows whose denominator vanishes (variance or mean energy below ``eps``)
    are skipped and counted.  If every window of every
    channel is degenerate the result is 1.0 when ``x == y`` and 0.0 otherwise.
    """
    x = _as_hwc(_channels_first_guess(np.asarray(x)))
    y = _as_hwc(_channels_first_guess(np.asarray(y)))
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    window = min(window, *x.shape[:2])
    n = window * window
    total, count, degenerate = 0.0, 0, 0
    half = window // 2
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]
        # uniform_filter centres even windows at half; crop to fully-inside windows
        sl = (slice(half, a.shape[0] - window + half + 1), slice(half, a.shape[1] - window + half + 1))
        mean = lambda z: uniform_filter(z, size=window, mode="constant")[sl]  # noqa: E731
        ma, mb = mean(a), mean(b)
        # unbiased (n-1) variances as in the original definition
        saa = (mean(a * a) - ma * ma) * n / (n - 1)
        sbb = (mean(b * b) - mb * mb) * n / (n - 1)
        sab = (mean(a * b) - ma * mb) * n / (n - 1)
        saa, sbb = np.maximum(saa, 0.0), np.maximum(sbb, 0.0)
        den = (saa + sbb) * (ma * ma + mb * mb)
        num = 4 * sab * ma * mb
        ok = (saa + sbb > eps) & (ma * ma + mb * mb > eps)
        total += float(np.sum(num[ok] / den[ok]))
        count += int(ok.sum())
        degenerate += int((~ok).sum())
    if count == 0:
        value = 1.0 if np.array_equal(x, y) else 0.0
    else:
        value = total / count
    if return_count:
        return value, degenerate
    return value


def silhouette(points, labels):
    """Mean silhouette with Euclidean distance; singleton clusters score 0, a=b=0 scores 0."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    labels = np.asarray(labels)
    uniq, labels = np.unique(labels, return_inverse=True)
    k = uniq.size
    if k < 2:
        raise ValueError("silhouette needs at least two clusters")
    sums = kernels.cluster_distance_sums(points, labels, k)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    idx = np.arange(points.shape[0])
    own = counts[labels]
    a = np.where(own > 1, sums[idx, labels] / np.maximum(own - 1, 1), 0.0)
    means = sums / counts[None, :]
    means[idx, labels] = np.inf
    b = means.min(axis=1)
    m = np.maximum(a, b)
    s = np.where((own > 1) & (m > 0), (b - a) / np.where(m > 0, m, 1.0), 0.0)
    return float(s.mean())
