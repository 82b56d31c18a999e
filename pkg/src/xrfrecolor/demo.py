"""Built-in demo assets: a synthetic pigment palette and seed images.

The spectra are Gaussian fluorescence lines at tabulated element energies
(40 eV bins, 0-20.48 keV) over a weak exponential background.  They are
stand-ins for a measured pigment database, good enough to exercise the
pipeline end to end.
"""
import numpy as np

from .palette import PigmentEntry, PigmentPalette

BIN_KEV = 0.04

# element -> (line energy keV, relative intensity)
LINES = {
    "Ca": [(3.69, 1.0), (4.01, 0.15)],
    "Ti": [(4.51, 1.0), (4.93, 0.15)],
    "Fe": [(6.40, 1.0), (7.06, 0.14)],
    "Co": [(6.93, 1.0), (7.65, 0.14)],
    "Hg": [(9.99, 1.0), (11.82, 0.6)],
    "S": [(2.31, 1.0)],
    "K": [(3.31, 1.0)],
    "Si": [(1.74, 1.0)],
    "As": [(10.54, 1.0), (11.73, 0.15)],
    "Mn": [(5.90, 1.0), (6.49, 0.14)],
    "P": [(2.01, 1.0)],
    "Na": [(1.04, 1.0)],
}

# name, rgb, {element: weight}
PIGMENTS = [
    ("Red Ochre", (160, 60, 40), {"Fe": 1.0, "Ca": 0.4, "Si": 0.2}),
    ("Cinnabar", (200, 40, 35), {"Hg": 1.0, "S": 0.5}),
    ("Cobalt Blue", (30, 70, 170), {"Co": 1.0, "Ca": 0.2}),
    ("Smaltino", (70, 90, 160), {"Co": 0.6, "As": 0.4, "K": 0.5, "Si": 0.3}),
    ("Gold Ochre", (210, 160, 50), {"Fe": 0.8, "Ca": 0.5, "Si": 0.2}),
    ("Dark Ochre", (140, 100, 40), {"Fe": 1.0, "Mn": 0.3, "Ca": 0.4}),
    ("Aegirine", (60, 100, 60), {"Fe": 0.6, "Na": 0.4, "Si": 0.6}),
    ("Green Earth", (110, 130, 90), {"Fe": 0.5, "K": 0.5, "Si": 0.6, "Ca": 0.3}),
    ("Caput Mortuum", (80, 40, 45), {"Fe": 1.0, "Mn": 0.2}),
    ("Ivory Black", (30, 28, 26), {"Ca": 1.0, "P": 0.6}),
    ("Carbon Black", (15, 15, 15), {"Ca": 0.3, "K": 0.2}),
    ("Titanium White", (245, 245, 240), {"Ti": 1.0, "Ca": 0.2}),
]


def synthetic_spectrum(elements, bins=512, counts=1e5, width_kev=0.08, seed=0):
    e = (np.arange(bins) + 0.5) * BIN_KEV
    spec = 0.02 * np.exp(-e / 6.0)
    for el, w in elements.items():
        for energy, rel in LINES[el]:
            spec = spec + w * rel * np.exp(-0.5 * ((e - energy) / width_kev) ** 2)
    spec = spec / spec.sum() * counts
    return np.round(spec, 6)


def demo_palette(bins=512):
    return PigmentPalette(
        tuple(PigmentEntry(n, rgb, synthetic_spectrum(els, bins)) for n, rgb, els in PIGMENTS), bins
    )


def demo_image(size=32, seed=0, palette=None, n_shapes=6):
    """Blocky test image painted with a few palette colours (ellipses and rectangles)."""
    rng = np.random.default_rng(seed)
    palette = palette or demo_palette()
    colours = palette.rgb_unit
    pick = rng.choice(len(colours), size=min(4, len(colours)), replace=False)
    img = np.empty((size, size, 3))
    img[:] = colours[pick[0]]
    yy, xx = np.mgrid[0:size, 0:size]
    for s in range(n_shapes):
        c = colours[pick[1 + s % (len(pick) - 1)]]
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(size / 8, size / 3, 2)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img[mask] = c
    return img
