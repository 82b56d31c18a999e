import numpy as np
import pytest
from scipy.stats import chisquare

from xrfrecolor.color import IKMeansConfig
from xrfrecolor.demo import demo_image, demo_palette
from xrfrecolor.palette import PigmentEntry, PigmentPalette
from xrfrecolor.synthesize import (NoMatchingPigment, SynthConfig, generate_xrf, mix_distribution,
                                   sample_spectra_dataset, sample_spectrum, split_sizes)


@pytest.fixture(scope="module")
def palette():
    return demo_palette()


def _two_pigments():
    a = PigmentEntry("red", (200, 30, 30), np.array([1.0, 0, 0, 1.0]))
    b = PigmentEntry("pink", (210, 40, 40), np.array([0, 2.0, 0, 0]))
    return PigmentPalette((a, b), 4)


def test_mixture_weights_are_similarities():
    pal = _two_pigments()
    d = mix_distribution(np.array([205, 35, 35]) / 255, pal, alpha_th=0.5)
    a0, a1 = d.weights[0], d.weights[1]
    # hand-mixed from L1-normalized spectra
    want = a0 * np.array([0.5, 0, 0, 0.5]) + a1 * np.array([0, 1.0, 0, 0])
    np.testing.assert_allclose(d.normalized, want / want.sum(), rtol=1e-12)
    assert d.contributors == ["red", "pink"]


def test_threshold_excludes_dissimilar():
    pal = _two_pigments()
    d = mix_distribution(np.array([200, 30, 30]) / 255, pal, alpha_th=0.999)
    assert d.contributors == ["red"]


def test_no_pigment_raises_or_falls_back():
    pal = _two_pigments()
    with pytest.raises(NoMatchingPigment) as e:
        mix_distribution(np.array([0.0, 0.0, 1.0]), pal, alpha_th=0.9)
    assert e.value.best_name in ("red", "pink")
    d = mix_distribution(np.array([0.0, 0.0, 1.0]), pal, alpha_th=0.9, fallback_nearest=True)
    assert d.fallback and len(d.contributors) == 1


@pytest.mark.parametrize("kind", ["uniform", "cubed", "pigment"])
def test_sample_spectrum_l1_matches_multinomial_expectation(kind, palette):
    n = 1_000_000
    if kind == "uniform":
        p = np.full(512, 1 / 512)
    elif kind == "cubed":
        p = np.random.default_rng(0).random(512) ** 3
        p /= p.sum()
    else:
        p = palette.spectra[0] / palette.spectra[0].sum()
    c = sample_spectrum(p, n, np.uint64(77))
    assert c.sum() == n
    # E|c_i/n - p_i| ~ sqrt(2 p_i (1 - p_i) / (pi n)) for large n
    expected = np.sum(np.sqrt(2 * p * (1 - p) / (np.pi * n)))
    assert np.abs(c / n - p).sum() == pytest.approx(expected, rel=0.1)


def test_generate_shapes_meta_and_totals(palette):
    img = demo_image(24, seed=1, palette=palette)
    cube = generate_xrf(img, palette, SynthConfig(counts_per_pixel=50, seed=3))
    assert cube.counts.shape == (24, 24, 512)
    assert cube.counts.dtype == np.uint32
    assert (cube.counts.sum(-1) == 50).all()
    for key in ("seed", "counts_per_pixel", "alpha_th", "palette_id", "k", "centroids", "contributors"):
        assert key in cube.meta


def test_generate_deterministic_and_seed_sensitive(palette):
    img = demo_image(16, seed=2, palette=palette)
    a = generate_xrf(img, palette, SynthConfig(counts_per_pixel=30, seed=5))
    b = generate_xrf(img, palette, SynthConfig(counts_per_pixel=30, seed=5))
    c = generate_xrf(img, palette, SynthConfig(counts_per_pixel=30, seed=6))
    np.testing.assert_array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)


def test_pixels_of_one_cluster_follow_its_mixture(palette):
    img = demo_image(32, seed=4, palette=palette)
    cube, model, dists = generate_xrf(img, palette, SynthConfig(counts_per_pixel=200, seed=1),
                                      return_clusters=True)
    for c, d in enumerate(dists):
        obs = cube.counts[model.labels == c].sum(0).astype(float)
        exp = obs.sum() * d.normalized
        keep = exp >= 5
        o, e = obs[keep], exp[keep]
        if (~keep).any():
            o, e = np.append(o, obs[~keep].sum()), np.append(e, exp[~keep].sum())
        assert chisquare(o, e).pvalue > 1e-3


def test_split_sizes():
    assert split_sizes(10) == (7, 2, 1)
    assert split_sizes(30) == (21, 6, 3)
    assert sum(split_sizes(17)) == 17


def test_sample_spectra_dataset_without_replacement(palette):
    cubes = [generate_xrf(demo_image(8, seed=s, palette=palette), palette,
                          SynthConfig(counts_per_pixel=20, seed=s, ikmeans=IKMeansConfig(k_max=4)))
             for s in range(3)]
    (tr, va, te), (itr, iva, ite) = sample_spectra_dataset(cubes, 100, seed=0, return_indices=True)
    assert (tr.shape[0], va.shape[0], te.shape[0]) == (70, 20, 10)
    idx = np.concatenate([itr, iva, ite])
    assert np.unique(idx).size == 100
    flat = np.concatenate([c.counts.reshape(-1, 512) for c in cubes])
    np.testing.assert_array_equal(tr, flat[itr])
    with pytest.raises(ValueError):
        sample_spectra_dataset(cubes, 10_000)


def test_config_from_dict_propagates_seed():
    cfg = SynthConfig.from_dict({"seed": 42, "counts_per_pixel": 10})
    assert cfg.ikmeans.seed == 42
    assert SynthConfig.from_dict({"seed": 1, "ikmeans": {"seed": 9}}).ikmeans.seed == 9
