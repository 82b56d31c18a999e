import struct

import numpy as np
import pytest

from xrfrecolor.formats import (DataCube, EmbeddedImage, FormatError, read_datacube, read_embedded, read_png,
                                read_spectra, write_datacube, write_embedded, write_png, write_spectra)


def test_datacube_roundtrip_and_layout(tmp_path):
    counts = np.arange(2 * 3 * 4, dtype=np.uint32).reshape(2, 3, 4)
    write_datacube(tmp_path / "c.xrfc", DataCube(counts, {"seed": 1}))
    raw = (tmp_path / "c.xrfc").read_bytes()
    assert raw[:4] == b"XRFC"
    assert struct.unpack_from("<IIIIB", raw, 4) == (1, 2, 3, 4, 0)
    assert raw[21:28] == b"\0" * 7
    assert np.frombuffer(raw[28:28 + 96], "<u4").tolist() == list(range(24))
    back = read_datacube(tmp_path / "c.xrfc")
    np.testing.assert_array_equal(back.counts, counts)
    assert back.meta == {"seed": 1}


def test_datacube_float_payload(tmp_path):
    counts = np.random.default_rng(0).random((2, 2, 3)).astype(np.float32)
    write_datacube(tmp_path / "c.xrfc", DataCube(counts))
    np.testing.assert_array_equal(read_datacube(tmp_path / "c.xrfc").counts, counts)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 9) + b[8:],
    lambda b: b[:40],
    lambda b: b + b"junk",
])
def test_datacube_corruption_detected(tmp_path, mutate):
    write_datacube(tmp_path / "c.xrfc", DataCube(np.ones((2, 2, 2), np.uint32)))
    (tmp_path / "c.xrfc").write_bytes(mutate((tmp_path / "c.xrfc").read_bytes()))
    with pytest.raises(FormatError):
        read_datacube(tmp_path / "c.xrfc")


def test_embedded_roundtrip(tmp_path):
    data = np.random.default_rng(1).standard_normal((4, 5, 3)).astype(np.float32)
    write_embedded(tmp_path / "e.xemb", EmbeddedImage(data, {"latent_dim": 3}))
    raw = (tmp_path / "e.xemb").read_bytes()
    assert raw[:4] == b"XEMB" and struct.unpack_from("<IIII", raw, 4) == (1, 4, 5, 3)
    back = read_embedded(tmp_path / "e.xemb")
    np.testing.assert_array_equal(back.data, data)
    with pytest.raises(FormatError):
        read_datacube(tmp_path / "e.xemb")


def test_png_roundtrip_and_determinism(tmp_path):
    img = np.random.default_rng(2).random((6, 7, 3))
    write_png(tmp_path / "a.png", img)
    write_png(tmp_path / "b.png", img)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    back = read_png(tmp_path / "a.png")
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_png_corrupt(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not a png")
    with pytest.raises(FormatError, match="x.png"):
        read_png(tmp_path / "x.png")


def test_spectra_roundtrip_bit_identical(tmp_path):
    sets = {"train": np.arange(12).reshape(3, 4), "val": np.ones((1, 4)), "test": np.zeros((0, 4))}
    write_spectra(tmp_path / "a.npz", sets, {"n": 4})
    write_spectra(tmp_path / "b.npz", sets, {"n": 4})
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back, meta = read_spectra(tmp_path / "a.npz")
    np.testing.assert_array_equal(back["train"], sets["train"])
    assert meta == {"n": 4}
