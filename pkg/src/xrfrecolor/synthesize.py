"""Synthetic MA-XRF datacubes from RGB images and a pigment palette.

The image is colour-quantized with IKMeans; each cluster centroid gets a
spectral distribution mixed from the palette pigments whose colour
similarity clears ``alpha_th``; every pixel then receives an independent
Monte Carlo draw of ``counts_per_pixel`` photons from its cluster's
distribution.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .color import IKMeansConfig, color_similarity, ikmeans
from .formats import DataCube
from .palette import normalize_l1


class NoMatchingPigment(ValueError):
    def __init__(self, rgb, best_alpha, best_name=None):
        self.rgb = np.asarray(rgb, dtype=np.float64)
        self.best_alpha = float(best_alpha)
        self.best_name = best_name
        super().__init__(
            f"no pigment reaches the similarity threshold for colour {np.round(self.rgb, 4).tolist()} "
            f"(best: {best_name!r} at {self.best_alpha:.4f})"
        )


@dataclass
class MixingDistribution:
    weights: dict
    normalized: np.ndarray
    contributors: list = field(default_factory=list)
    fallback: bool = False

    @property
    def cdf(self):
        return kernels.make_cdf(self.normalized)


@dataclass
class SynthConfig:
    counts_per_pixel: int = 1000
    alpha_th: float = 0.9
    fallback_nearest: bool = True
    similarity_scale: float = 100.0
    ikmeans: IKMeansConfig = field(default_factory=IKMeansConfig)
    seed: int = 0
    image_size: tuple = None

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        ik_d = dict(d.pop("ikmeans", None) or {})
        ik_d.setdefault("seed", d.get("seed", 0))
        ik = IKMeansConfig.from_dict(ik_d)
        if d.get("image_size") is not None:
            d["image_size"] = tuple(d["image_size"])
        return cls(ikmeans=ik, **{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def as_dict(self):
        d = asdict(self)
        d["image_size"] = list(self.image_size) if self.image_size else None
        return d


def palette_id(palette):
    raw = json.dumps(palette.to_json(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(raw).hexdigest()[:16]


def mix_distribution(cluster_rgb, palette, alpha_th, fallback_nearest=False, similarity_scale=100.0):
    """Similarity-weighted mixture of L1-normalized pigment spectra above ``alpha_th``."""
    alphas = color_similarity(palette.rgb_unit, np.asarray(cluster_rgb, dtype=np.float64)[None, :],
                              scale=similarity_scale)
    keep = np.nonzero(alphas >= alpha_th)[0]
    fallback = False
    if keep.size == 0:
        best = int(np.argmax(alphas))
        if not fallback_nearest:
            raise NoMatchingPigment(cluster_rgb, alphas[best], palette.entries[best].name)
        keep = np.array([best])
        fallback = True
    spectra = normalize_l1(palette.spectra[keep])
    w = alphas[keep] if not fallback else np.ones(1)
    d = (w[:, None] * spectra).sum(axis=0)
    return MixingDistribution(
        weights={int(i): float(a) for i, a in zip(keep, alphas[keep])},
        normalized=normalize_l1(d),
        contributors=[palette.entries[i].name for i in keep],
        fallback=fallback,
    )


def sample_spectrum(dist, n_counts, key):
    """``n_counts`` categorical draws from ``dist`` using the counter stream ``key``."""
    p = dist.normalized if isinstance(dist, MixingDistribution) else np.asarray(dist, dtype=np.float64)
    counts = kernels.categorical_counts(kernels.make_cdf(p)[None, :], np.zeros(1, np.int64),
                                        np.array([key], dtype=np.uint64), int(n_counts))
    return counts[0]


def pixel_keys(seed, H, W):
    yy, xx = np.mgrid[0:H, 0:W]
    return kernels.stream_keys(seed, xx.ravel(), yy.ravel())


def generate_xrf(img, palette, config=None, return_clusters=False):
    """RGB image (H x W x 3 in [0,1]) -> :class:`DataCube` of uint32 counts."""
    config = config or SynthConfig()
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError(f"expected a non-empty H x W x 3 image, got shape {img.shape}")
    H, W = img.shape[:2]
    model = ikmeans(img, config.ikmeans)
    dists = []
    for c in model.centroids:
        dists.append(mix_distribution(c, palette, config.alpha_th, config.fallback_nearest,
                                      config.similarity_scale))
    cdfs = np.stack([d.cdf for d in dists])
    keys = pixel_keys(config.seed, H, W)
    counts = kernels.categorical_counts(cdfs, model.labels.ravel(), keys, config.counts_per_pixel)
    meta = {
        "seed": config.seed,
        "counts_per_pixel": config.counts_per_pixel,
        "alpha_th": config.alpha_th,
        "palette_id": palette_id(palette),
        "k": int(model.k),
        "centroids": np.round(model.centroids, 8).tolist(),
        "contributors": [d.contributors for d in dists],
    }
    cube = DataCube(counts.reshape(H, W, -1), meta)
    if return_clusters:
        return cube, model, dists
    return cube


def split_sizes(n, split=(0.7, 0.2, 0.1)):
    # round first so that e.g. 0.1 * 30 floors to 3, not 2
    n_val = int(np.floor(round(n * split[1], 9)))
    n_test = int(np.floor(round(n * split[2], 9)))
    return n - n_val - n_test, n_val, n_test


def sample_spectra_dataset(cubes, n, split=(0.7, 0.2, 0.1), seed=0, return_indices=False):
    """Draw ``n`` pixel spectra without replacement across cubes and split train/val/test."""
    sizes = [c.counts.shape[0] * c.counts.shape[1] for c in cubes]
    total = int(sum(sizes))
    if n > total:
        raise ValueError(f"requested {n} spectra but only {total} pixels are available")
    rng = np.random.default_rng(seed)
    idx = rng.choice(total, size=n, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    E = cubes[0].counts.shape[-1]
    out = np.empty((n, E), dtype=np.uint32)
    which = np.searchsorted(offsets, idx, side="right") - 1
    for ci, cube in enumerate(cubes):
        sel = np.nonzero(which == ci)[0]
        if sel.size:
            out[sel] = cube.counts.reshape(-1, E)[idx[sel] - offsets[ci]]
    n_train, n_val, _ = split_sizes(n, split)
    parts = (out[:n_train], out[n_train:n_train + n_val], out[n_train + n_val:])
    if return_indices:
        return parts, (idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:])
    return parts
