import numpy as np
import pytest

from xrfrecolor import diffcore as dc
from xrfrecolor.color import redmean
from xrfrecolor.recolor import (RecolorTrainConfig, SmallUViT, SmallUViTConfig, infer_recolor, load_recolor,
                                loss_srgb, lsa_attention, patchify, save_recolor, spt_tokenize, train_recolor,
                                unpatchify, uvit_forward)


def tiny(**kw):
    base = dict(image_size=16, patch_size=4, embed_dim=16, heads=2, head_dim=8, depth_in=1, depth_mid=1,
                depth_out=1, dropout=0.0, stochastic_depth=0.0)
    base.update(kw)
    return SmallUViTConfig(**base)


def test_patchify_roundtrip_bit_exact():
    x = np.random.default_rng(0).random((2, 3, 16, 12))
    t = patchify(x, 4)
    assert t.shape == (2, 12, 48)
    np.testing.assert_array_equal(unpatchify(t, 4, 3, 16, 12), x)


def test_patchify_first_token_is_top_left_patch():
    x = np.random.default_rng(1).random((1, 3, 8, 8))
    np.testing.assert_array_equal(patchify(x, 4)[0, 0], np.moveaxis(x[0, :, :4, :4], 0, -1).ravel())


def test_spt_token_shape():
    m = SmallUViT(tiny())
    t = spt_tokenize(m, np.zeros((2, 3, 16, 16), np.float32))
    assert t.shape == (2, 16, 16)
    assert m.params["spt.proj.W"].shape == (5 * 3 * 16, 16)


def test_lsa_masks_self_and_rows_sum_to_one():
    m = SmallUViT(tiny())
    x = dc.as_tensor(np.random.default_rng(2).standard_normal((1, 16, 16)).astype(np.float32))
    _, attn = lsa_attention(m, "in.0", x, return_weights=True)
    a = attn.data
    assert a.shape == (1, 2, 16, 16)
    assert np.all(np.diagonal(a, axis1=-2, axis2=-1) == 0)
    np.testing.assert_allclose(a.sum(-1), 1.0, rtol=1e-5)


def test_temperature_initialized_to_sqrt_head_dim():
    m = SmallUViT(tiny())
    np.testing.assert_allclose(m.params["in.0.tau"].data, np.sqrt(8))


def test_forward_shape_and_range():
    m = SmallUViT(tiny())
    y = uvit_forward(m, np.random.default_rng(3).standard_normal((3, 16, 16)).astype(np.float32))
    assert y.shape == (3, 16, 16)
    assert (y.data > 0).all() and (y.data < 1).all()


def test_forward_rejects_bad_shapes():
    m = SmallUViT(tiny())
    with pytest.raises(ValueError):
        uvit_forward(m, np.zeros((4, 16, 16), np.float32))
    with pytest.raises(ValueError):
        uvit_forward(m, np.zeros((3, 18, 18), np.float32))


def test_config_validation():
    with pytest.raises(ValueError):
        SmallUViTConfig(depth_in=2, depth_out=3)
    with pytest.raises(ValueError):
        SmallUViTConfig(image_size=250)


def test_concat_skip_mode_adds_projection():
    a = SmallUViT(tiny(skip_mode="add")).n_params()
    b = SmallUViT(tiny(skip_mode="concat")).n_params()
    assert b - a == 2 * 16 * 16 + 16


def test_loss_srgb_matches_numpy_redmean():
    rng = np.random.default_rng(4)
    y, t = rng.random((2, 3, 5, 5)), rng.random((2, 3, 5, 5))
    with dc.precision("double"):
        got = float(loss_srgb(y, t).data)
    want = redmean(np.moveaxis(y, 1, -1), np.moveaxis(t, 1, -1)).mean()
    assert got == pytest.approx(want, rel=1e-12)


def test_loss_srgb_black_white():
    with dc.precision("double"):
        v = loss_srgb(np.zeros((1, 3, 2, 2)), np.ones((1, 3, 2, 2)))
    assert float(v.data) == 3.0


def test_loss_srgb_zero_has_finite_gradient():
    y = dc.Tensor(np.full((1, 3, 2, 2), 0.5), requires_grad=True)
    loss_srgb(y, np.full((1, 3, 2, 2), 0.5)).backward()
    assert np.isfinite(y.grad).all()


def _pairs(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    Y = rng.random((n, 3, size, size))
    return (Y * 2 - 1).astype(np.float32), Y


def test_train_short_deterministic_and_checkpoint(tmp_path):
    X, Y = _pairs(4)
    cfg = RecolorTrainConfig(model=tiny(), epochs=2, batch_size=2, ms_ssim_scales=1)
    m1, h1 = train_recolor((X, Y), (X, Y), cfg, checkpoint=tmp_path / "r.xckp")
    m2, h2 = train_recolor((X, Y), (X, Y), cfg)
    assert h1 == h2
    assert len(h1) == 2 and h1[-1]["step"] == 4
    back = load_recolor(tmp_path / "r.xckp")
    assert back.config == m1.config


def test_train_max_steps():
    X, Y = _pairs(4)
    cfg = RecolorTrainConfig(model=tiny(), epochs=10, batch_size=2, max_steps=3, ms_ssim_scales=1)
    _, h = train_recolor((X, Y), (X, Y), cfg)
    assert h[-1]["step"] == 3


def test_train_rejects_unpaired():
    X, Y = _pairs(4)
    with pytest.raises(ValueError):
        train_recolor((X, Y[:3]), (X, Y), RecolorTrainConfig(model=tiny()))


def test_augment_keeps_pairs_aligned():
    from xrfrecolor.recolor import _augment

    Y = np.random.default_rng(5).random((3, 16, 16))
    xa, ya = _augment(Y.copy(), Y.copy(), np.random.default_rng(1), True, 5.0)
    np.testing.assert_allclose(xa, ya)


def test_infer_with_and_without_target(tmp_path):
    m = SmallUViT(tiny())
    emb = np.random.default_rng(6).standard_normal((16, 16, 3))
    rgb, rep = infer_recolor(m, emb)
    assert rgb.shape == (16, 16, 3) and rep is None
    _, rep = infer_recolor(m, emb, target=rgb, scales=1)
    assert rep["ms_ssim"] == pytest.approx(1.0) and rep["srgb_loss"] < 1e-6
    with pytest.raises(ValueError):
        infer_recolor(m, np.zeros((16, 16, 4)))


def test_load_wrong_checkpoint_kind(tmp_path):
    dc.save_checkpoint(tmp_path / "x.xckp", {"w": np.zeros(2)}, {"model": "embedder"})
    with pytest.raises(dc.CheckpointError):
        load_recolor(tmp_path / "x.xckp")


def test_save_load_roundtrip(tmp_path):
    m = SmallUViT(tiny(), seed=3)
    save_recolor(tmp_path / "r.xckp", m)
    back = load_recolor(tmp_path / "r.xckp")
    x = np.random.default_rng(7).standard_normal((3, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(uvit_forward(back, x).data, uvit_forward(m, x).data)
