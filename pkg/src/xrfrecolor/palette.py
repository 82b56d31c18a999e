"""Pigment palettes: reference XRF spectrum plus characteristic RGB per pigment."""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_BINS = 512


class PaletteError(ValueError):
    """Malformed palette file or entry."""


@dataclass(frozen=True)
class PigmentEntry:
    name: str
    rgb: tuple
    spectrum: np.ndarray = field(repr=False)

    def __post_init__(self):
        rgb = tuple(self.rgb)
        if len(rgb) != 3 or not all(isinstance(v, (int, np.integer)) and not isinstance(v, bool) for v in rgb):
            raise PaletteError(f"pigment {self.name!r}: field 'rgb' must be three integers, got {list(rgb)}")
        if any(v < 0 or v > 255 for v in rgb):
            raise PaletteError(f"pigment {self.name!r}: field 'rgb' out of range [0,255]: {list(rgb)}")
        spec = np.asarray(self.spectrum, dtype=np.float64)
        if spec.ndim != 1 or spec.size == 0:
            raise PaletteError(f"pigment {self.name!r}: field 'spectrum' must be a non-empty vector")
        if not np.all(np.isfinite(spec)):
            raise PaletteError(f"pigment {self.name!r}: field 'spectrum' has non-finite values")
        if np.any(spec < 0):
            raise PaletteError(f"pigment {self.name!r}: field 'spectrum' has negative bin {int(np.argmax(spec < 0))}")
        if not np.any(spec > 0):
            raise PaletteError(f"pigment {self.name!r}: field 'spectrum' is all zero")
        spec.setflags(write=False)
        object.__setattr__(self, "rgb", tuple(int(v) for v in rgb))
        object.__setattr__(self, "spectrum", spec)

    @property
    def rgb_unit(self):
        return np.asarray(self.rgb, dtype=np.float64) / 255.0


@dataclass(frozen=True)
class PigmentPalette:
    entries: tuple
    energy_bins: int

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise PaletteError("palette has no pigments")
        seen = set()
        for e in entries:
            if e.name in seen:
                raise PaletteError(f"pigment {e.name!r}: field 'name' is duplicated")
            seen.add(e.name)
            if e.spectrum.size != self.energy_bins:
                raise PaletteError(
                    f"pigment {e.name!r}: field 'spectrum' has length {e.spectrum.size}, expected {self.energy_bins}"
                )
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def names(self):
        return [e.name for e in self.entries]

    @property
    def rgb_unit(self):
        return np.stack([e.rgb_unit for e in self.entries])

    @property
    def spectra(self):
        return np.stack([e.spectrum for e in self.entries])

    def rebinned(self, target_bins):
        if target_bins == self.energy_bins:
            return self
        return PigmentPalette(
            tuple(PigmentEntry(e.name, e.rgb, rebin_spectrum(e.spectrum, target_bins)) for e in self.entries),
            target_bins,
        )

    def to_json(self):
        return {
            "energy_bins": self.energy_bins,
            "pigments": [{"name": e.name, "rgb": list(e.rgb), "spectrum": e.spectrum.tolist()} for e in self.entries],
        }


def rebin_spectrum(spectrum, target_bins):
    """Sum-pool contiguous blocks so that total counts are conserved."""
    spectrum = np.asarray(spectrum)
    n = spectrum.shape[-1]
    if target_bins <= 0 or n % target_bins:
        raise ValueError(f"cannot rebin {n} bins into {target_bins}: not an integer factor")
    return spectrum.reshape(*spectrum.shape[:-1], target_bins, n // target_bins).sum(axis=-1)


def normalize_l1(v):
    v = np.asarray(v, dtype=np.float64)
    total = v.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("cannot L1-normalize a vector with non-positive sum")
    return v / total


def parse_palette(doc, working_bins=DEFAULT_BINS):
    if not isinstance(doc, dict) or "pigments" not in doc or "energy_bins" not in doc:
        raise PaletteError("palette document needs 'energy_bins' and 'pigments'")
    bins = doc["energy_bins"]
    if not isinstance(bins, int) or bins <= 0:
        raise PaletteError(f"field 'energy_bins' must be a positive integer, got {bins!r}")
    entries = []
    for i, p in enumerate(doc["pigments"]):
        name = p.get("name") if isinstance(p, dict) else None
        if not isinstance(name, str):
            raise PaletteError(f"pigment #{i}: field 'name' missing or not a string")
        for key in ("rgb", "spectrum"):
            if key not in p:
                raise PaletteError(f"pigment {name!r}: field {key!r} missing")
        entries.append(PigmentEntry(name, tuple(p["rgb"]), np.asarray(p["spectrum"], dtype=np.float64)))
    palette = PigmentPalette(tuple(entries), bins)
    if working_bins and working_bins != bins and bins % working_bins == 0:
        palette = palette.rebinned(working_bins)
    return palette


def load_palette(path, working_bins=DEFAULT_BINS):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PaletteError(f"{path}: not valid JSON ({exc})") from exc
    return parse_palette(doc, working_bins)


def save_palette(palette, path):
    from .formats import atomic_write_bytes

    atomic_write_bytes(path, json.dumps(palette.to_json(), sort_keys=True).encode("utf-8"))
