"""SmallUViT: U-shaped ViT with shifted-patch tokens and locality self-attention.

Maps an embedded datacube (C x H x W latent image) to an RGB image in [0, 1].
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import rotate

from . import diffcore as dc
from .embedder import NumericalError
from .metrics import ms_ssim, uiqi

log = logging.getLogger(__name__)


@dataclass
class SmallUViTConfig:
    image_size: int = 256
    patch_size: int = 16
    embed_dim: int = 192
    heads: int = 9
    head_dim: int = 32
    mlp_factor: int = 2
    depth_in: int = 3
    depth_mid: int = 1
    depth_out: int = 3
    dropout: float = 0.1
    stochastic_depth: float = 0.1
    in_channels: int = 3
    out_channels: int = 3
    skip_mode: str = "add"
    qkv_bias: bool = False

    def __post_init__(self):
        if self.depth_in != self.depth_out:
            raise ValueError("depth_in must equal depth_out for U-skip pairing")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.patch_size % 2:
            raise ValueError("patch_size must be even for half-patch shifts")
        if self.skip_mode not in ("add", "concat"):
            raise ValueError(f"unknown skip_mode {self.skip_mode!r}")

    @property
    def n_tokens(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def spt_dim(self):
        return 5 * self.in_channels * self.patch_size ** 2

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__})


@dataclass
class RecolorTrainConfig:
    model: SmallUViTConfig = field(default_factory=SmallUViTConfig)
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-3
    max_steps: int = None
    scheduler: dict = field(default_factory=lambda: {"factor": 0.5, "patience": 5, "min_lr": 1e-6})
    augment_flip: bool = True
    augment_rotate_deg: float = 5.0
    seed: int = 0
    ms_ssim_scales: int = 5

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        model_d = dict(d.pop("model", {}) or {})
        for k in list(d):
            if k in SmallUViTConfig.__dataclass_fields__:
                model_d[k] = d.pop(k)
        sched = {"factor": 0.5, "patience": 5, "min_lr": 1e-6}
        sched.update(d.pop("scheduler", {}) or {})
        return cls(model=SmallUViTConfig.from_dict(model_d), scheduler=sched,
                   **{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def as_dict(self):
        return asdict(self)


class SmallUViT:
    def __init__(self, config=None, seed=0):
        self.config = c = config or SmallUViTConfig()
        rng = np.random.default_rng(seed)
        P = self.params = dc.ParamStore()
        D, inner = c.embed_dim, c.heads * c.head_dim
        hidden = c.mlp_factor * D

        def dense(name, a, b, bias=True):
            P.add(name + ".W", dc.xavier_uniform(rng, a, b))
            if bias:
                P.add(name + ".b", np.zeros(b))

        def norm(name, n):
            P.add(name + ".g", np.ones(n))
            P.add(name + ".b", np.zeros(n))

        norm("spt.norm", c.spt_dim)
        dense("spt.proj", c.spt_dim, D)
        P.add("pos", rng.normal(0.0, 0.02, size=(c.n_tokens, D)))
        self.blocks = {"in": [], "mid": [], "out": []}
        for part, depth in (("in", c.depth_in), ("mid", c.depth_mid), ("out", c.depth_out)):
            for i in range(depth):
                name = f"{part}.{i}"
                if part == "out" and c.skip_mode == "concat":
                    dense(name + ".skip", 2 * D, D)
                norm(name + ".norm1", D)
                dense(name + ".qkv", D, 3 * inner, bias=c.qkv_bias)
                P.add(name + ".tau", np.full(c.heads, np.sqrt(c.head_dim)))
                dense(name + ".proj", inner, D)
                norm(name + ".norm2", D)
                dense(name + ".ff1", D, hidden)
                dense(name + ".ff2", hidden, D)
                self.blocks[part].append(name)
        norm("head.norm", D)
        dense("head.proj", D, c.patch_size ** 2 * c.out_channels)
        P.add("conv.K", rng.normal(0.0, np.sqrt(1.0 / (9 * c.out_channels)), size=(c.out_channels, c.out_channels, 3, 3)))
        P.add("conv.b", np.zeros(c.out_channels))

    def n_params(self):
        return self.params.count()


def patchify(x, p):
    """B x C x H x W -> B x N x (p*p*C), patches row-major, features (p1, p2, c)."""
    B, C, H, W = x.shape
    t = x.reshape(B, C, H // p, p, W // p, p).transpose(0, 2, 4, 3, 5, 1)
    return t.reshape(B, (H // p) * (W // p), p * p * C)


def unpatchify(t, p, C, H, W):
    """Inverse of :func:`patchify`."""
    B = t.shape[0]
    x = t.reshape(B, H // p, W // p, p, p, C).transpose(0, 5, 1, 3, 2, 4)
    return x.reshape(B, C, H, W)


def spt_tokenize(model, x):
    """Shifted patch tokens: input plus four diagonal half-patch shifts, patchified, normalized, projected."""
    c = model.config
    P = model.params
    x = dc.as_tensor(x)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    H, W = x.shape[-2:]
    p = c.patch_size
    if H % p or W % p:
        raise ValueError(f"image {H}x{W} not divisible by patch size {p}")
    if (H // p) * (W // p) != c.n_tokens:
        raise ValueError(f"image {H}x{W} gives {(H // p) * (W // p)} tokens, model expects {c.n_tokens}")
    s = p // 2
    shifted = [x] + [dc.shift2d(x, dy, dx) for dy, dx in ((-s, -s), (-s, s), (s, -s), (s, s))]
    t = patchify(dc.concat(shifted, axis=1), p)
    t = dc.layer_norm(t, P["spt.norm.g"], P["spt.norm.b"])
    return dc.linear(t, P["spt.proj.W"], P["spt.proj.b"]) + P["pos"]


def _diag_mask(n, dtype):
    m = np.zeros((n, n), dtype=dtype)
    np.fill_diagonal(m, -np.inf)
    return m


def lsa_attention(model, name, x, training=False, rng=None, return_weights=False):
    """Multi-head attention with learnable per-head temperature and self-token masking."""
    c = model.config
    P = model.params
    B, N, _ = x.shape
    qkv = dc.linear(x, P[name + ".qkv.W"], P[name + ".qkv.b"] if c.qkv_bias else None)
    qkv = qkv.reshape(B, N, 3, c.heads, c.head_dim).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q @ k.transpose(0, 1, 3, 2)) / P[name + ".tau"].reshape(1, c.heads, 1, 1)
    attn = dc.softmax(logits + _diag_mask(N, x.dtype), axis=-1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, N, c.heads * c.head_dim)
    out = dc.linear(out, P[name + ".proj.W"], P[name + ".proj.b"])
    out = dc.dropout(out, c.dropout, training, rng)
    return (out, attn) if return_weights else out


def ff_block(model, name, x, training=False, rng=None):
    c = model.config
    P = model.params
    h = dc.linear(x, P[name + ".ff1.W"], P[name + ".ff1.b"])
    h = dc.gelu(dc.dropout(h, c.dropout, training, rng))
    h = dc.linear(h, P[name + ".ff2.W"], P[name + ".ff2.b"])
    return dc.dropout(h, c.dropout, training, rng)


def transformer_block(model, name, x, training=False, rng=None):
    c = model.config
    P = model.params
    h = dc.layer_norm(x, P[name + ".norm1.g"], P[name + ".norm1.b"])
    x = x + dc.stochastic_depth(lsa_attention(model, name, h, training, rng), c.stochastic_depth, training, rng)
    h = dc.layer_norm(x, P[name + ".norm2.g"], P[name + ".norm2.b"])
    return x + dc.stochastic_depth(ff_block(model, name, h, training, rng), c.stochastic_depth, training, rng)


def uvit_forward(model, x, training=False, rng=None):
    """(B x) C x H x W latent image -> (B x) 3 x H x W RGB in [0, 1]."""
    c = model.config
    P = model.params
    x = dc.as_tensor(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.shape[1] != c.in_channels:
        raise ValueError(f"expected {c.in_channels} input channels, got {x.shape[1]}")
    if training and rng is None:
        rng = np.random.default_rng()
    H, W = x.shape[-2:]
    t = spt_tokenize(model, x)
    skips = []
    for name in model.blocks["in"]:
        t = transformer_block(model, name, t, training, rng)
        skips.append(t)
    for name in model.blocks["mid"]:
        t = transformer_block(model, name, t, training, rng)
    for name in model.blocks["out"]:
        skip = skips.pop()
        if c.skip_mode == "concat":
            t = dc.linear(dc.concat([t, skip], axis=-1), P[name + ".skip.W"], P[name + ".skip.b"])
        else:
            t = t + skip
        t = transformer_block(model, name, t, training, rng)
    assert not skips, "unpaired U-skip"
    t = dc.layer_norm(t, P["head.norm.g"], P["head.norm.b"])
    t = dc.linear(t, P["head.proj.W"], P["head.proj.b"])
    img = unpatchify(t, c.patch_size, c.out_channels, H, W)
    y = dc.sigmoid(dc.conv3x3(img, P["conv.K"], P["conv.b"]))
    return y.reshape(*y.shape[1:]) if squeeze else y


def redmean_map(y, y_true):
    """Per-pixel redmean distance between B x 3 x H x W tensors (channels in [0,1])."""
    y, y_true = dc.as_tensor(y), dc.as_tensor(y_true)
    if y.shape != y_true.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_true.shape}")
    r = (y[:, 0] + y_true[:, 0]) * 0.5
    d = y - y_true
    dr, dg, db = d[:, 0], d[:, 1], d[:, 2]
    return dc.sqrt((r + 2.0) * dr * dr + dg * dg * 4.0 + (3.0 - r) * db * db)


def loss_srgb(y, y_true):
    """Mean over batch and pixels of the redmean distance."""
    return redmean_map(y, y_true).mean()


def _augment(x, y, rng, flip, rot_deg):
    if flip and rng.random() < 0.5:
        x, y = x[..., ::-1], y[..., ::-1]
    if rot_deg:
        angle = rng.uniform(-rot_deg, rot_deg)
        x = rotate(x, angle, axes=(1, 2), reshape=False, order=1, mode="reflect")
        y = np.clip(rotate(y, angle, axes=(1, 2), reshape=False, order=1, mode="reflect"), 0.0, 1.0)
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def predict(model, X, batch=8):
    X = np.asarray(X, dtype=dc.default_dtype())
    out = []
    with dc.no_grad():
        for s in range(0, X.shape[0], batch):
            out.append(uvit_forward(model, X[s:s + batch]).data)
    return np.concatenate(out)


def mean_ms_ssim(pred, target, scales=5):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(np.mean([ms_ssim(p, t, scales=scales) for p, t in zip(pred, target)]))


def train_recolor(train, val, config=None, model=None, checkpoint=None):
    """Adam on the redmean loss with plateau lr on validation MS-SSIM.

    ``train`` and ``val`` are ``(X, Y)`` pairs of arrays: X is N x C x H x W
    embedded images, Y is N x 3 x H x W RGB in [0, 1].  Returns
    ``(model, history)`` with the best-MS-SSIM weights loaded.
    """
    config = config or RecolorTrainConfig()
    Xtr, Ytr = (np.asarray(a, dtype=np.float64) for a in train)
    Xva, Yva = (np.asarray(a, dtype=np.float64) for a in val)
    if Xtr.shape[0] != Ytr.shape[0] or Xva.shape[0] != Yva.shape[0]:
        raise ValueError("unpaired data: input and target counts differ")
    if Xtr.shape[0] == 0 or Xva.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    if Xtr.shape[-2:] != Ytr.shape[-2:] or Xva.shape[-2:] != Yva.shape[-2:]:
        raise ValueError("input and target spatial sizes differ")
    dtype = dc.default_dtype()
    model = model or SmallUViT(config.model, seed=config.seed)
    opt = dc.Adam(model.params, lr=config.lr)
    sch = config.scheduler
    plateau = dc.ReduceLROnPlateau(opt, "max", sch.get("factor", 0.5), sch.get("patience", 5), sch.get("min_lr", 1e-6))
    rng = np.random.default_rng(config.seed)
    history, best, step = [], (-np.inf, None), 0
    bs = min(config.batch_size, Xtr.shape[0])
    for epoch in range(config.epochs):
        order = rng.permutation(Xtr.shape[0])
        losses = []
        for s in range(0, Xtr.shape[0], bs):
            if config.max_steps is not None and step >= config.max_steps:
                break
            idx = order[s:s + bs]
            xb, yb = [], []
            for i in idx:
                arng = np.random.default_rng([config.seed, epoch, int(i)])
                xa, ya = _augment(Xtr[i], Ytr[i], arng, config.augment_flip, config.augment_rotate_deg)
                xb.append(xa)
                yb.append(ya)
            xb = np.stack(xb).astype(dtype)
            yb = np.stack(yb).astype(dtype)
            model.params.zero_grad()
            step_rng = np.random.default_rng([config.seed, 1_000_003, step])
            loss = loss_srgb(uvit_forward(model, xb, True, step_rng), yb)
            lv = float(loss.data)
            if not np.isfinite(lv):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
            loss.backward()
            opt.step()
            losses.append(lv)
            step += 1
        if not losses:
            break
        pred = predict(model, Xva)
        vloss = float(loss_srgb(pred, Yva.astype(dtype)).data)
        vms = mean_ms_ssim(pred, Yva, config.ms_ssim_scales)
        row = {"epoch": epoch, "step": step, "lr": opt.lr, "train_loss": float(np.mean(losses)),
               "val_loss": vloss, "val_ms_ssim": vms}
        history.append(row)
        if vms > best[0]:
            best = (vms, model.params.state())
            if checkpoint:
                save_recolor(checkpoint, model, {"epoch": epoch, "val_ms_ssim": vms})
        plateau.step(vms)
        log.info("epoch %d step %d loss %.4f val_loss %.4f val_ms_ssim %.4f lr %.2g",
                 epoch, step, row["train_loss"], vloss, vms, opt.lr)
    if best[1] is not None:
        model.params.load_state(best[1])
    return model, history


def infer_recolor(model, embedded, target=None, scales=5):
    """Embedded image (H x W x C array or EmbeddedImage) -> (H x W x 3 RGB, metric report or None)."""
    data = embedded.data if hasattr(embedded, "data") and not isinstance(embedded, np.ndarray) else embedded
    data = np.asarray(data, dtype=np.float64)
    p = model.config.patch_size
    if data.shape[0] % p or data.shape[1] % p:
        raise ValueError(f"embedded image {data.shape[:2]} not divisible by patch size {p}")
    if data.shape[2] != model.config.in_channels:
        raise ValueError(f"embedded image has {data.shape[2]} channels, model expects {model.config.in_channels}")
    y = predict(model, np.moveaxis(data, -1, 0)[None])[0]
    rgb = np.moveaxis(y, 0, -1).astype(np.float64)
    report = None
    if target is not None:
        import warnings

        target = np.asarray(target, dtype=np.float64)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = {
                "ms_ssim": ms_ssim(rgb, target, scales=scales),
                "uiqi": uiqi(rgb, target),
                "srgb_loss": float(loss_srgb(np.moveaxis(rgb, -1, 0)[None], np.moveaxis(target, -1, 0)[None]).data),
            }
    return rgb, report


def save_recolor(path, model, extra=None):
    meta = {"model": "smalluvit", "config": asdict(model.config)}
    meta.update(extra or {})
    dc.save_checkpoint(path, model.params.state(), meta)


def load_recolor(path):
    state, meta = dc.load_checkpoint(path)
    if meta.get("model") != "smalluvit":
        raise dc.CheckpointError(f"{path}: not a SmallUViT checkpoint (model={meta.get('model')!r})")
    model = SmallUViT(SmallUViTConfig.from_dict(meta.get("config", {})))
    model.params.load_state(state)
    return model
