"""Deep variational embedding of XRF spectra into a low-dimensional latent space.

Encoder 512 -> 256 -> 128 -> 64 -> 32 -> (3 means + 3 log-variances), decoder
3 -> 64 -> 128 -> 256 -> 512, SELU hidden layers.  Trained on

    L_rec + beta(epoch) * MMD(z || N(0, I)) + gamma(epoch) * (1 - silhouette) / 2
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .color import IKMeansConfig, ikmeans
from .formats import EmbeddedImage

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class EmbedSchedule:
    gamma: float = 0.01
    beta_amplitude: float = 0.01
    beta_onset_epoch: int = 30

    def beta(self, epoch):
        return self.beta_amplitude if epoch >= self.beta_onset_epoch else 0.0

    def gamma_at(self, epoch):
        return self.gamma


@dataclass
class EmbedderConfig:
    input_dim: int = 512
    encoder_widths: tuple = (256, 128, 64, 32)
    latent_dim: int = 3
    decoder_widths: tuple = (64, 128, 256)
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    schedule: EmbedSchedule = field(default_factory=EmbedSchedule)
    kernel_sigma2: float = None
    k_range: tuple = (2, 6)
    plateau: bool = False
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-6

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        sched = EmbedSchedule(**d.pop("schedule", {}) or {})
        for key in ("encoder_widths", "decoder_widths", "k_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(schedule=sched, **{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def as_dict(self):
        d = asdict(self)
        for key in ("encoder_widths", "decoder_widths", "k_range"):
            d[key] = list(d[key])
        return d

    @property
    def sigma2(self):
        return float(self.kernel_sigma2 if self.kernel_sigma2 is not None else self.latent_dim)


@dataclass
class LatentBatch:
    mu: dc.Tensor
    logvar: dc.Tensor
    z: dc.Tensor
    eps: np.ndarray = None


class EmbedderModel:
    def __init__(self, config=None, seed=None):
        self.config = config or EmbedderConfig()
        c = self.config
        rng = np.random.default_rng(c.seed if seed is None else seed)
        self.params = dc.ParamStore()
        self.enc_layers = self._ladder("enc", (c.input_dim,) + tuple(c.encoder_widths) + (2 * c.latent_dim,), rng)
        self.dec_layers = self._ladder("dec", (c.latent_dim,) + tuple(c.decoder_widths) + (c.input_dim,), rng)

    def _ladder(self, prefix, widths, rng):
        names = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            w = self.params.add(f"{prefix}.{i}.W", dc.lecun_normal(rng, a, b))
            bias = self.params.add(f"{prefix}.{i}.b", np.zeros(b))
            names.append((w, bias))
        return names

    @property
    def latent_dim(self):
        return self.config.latent_dim

    def n_params(self):
        return self.params.count()


def _mlp(x, layers):
    h = x
    for i, (W, b) in enumerate(layers):
        h = dc.linear(h, W, b)
        if i < len(layers) - 1:
            h = dc.selu(h)
    return h


def prepare_spectra(X):
    """Counts -> L1-normalized rows (all-zero rows stay zero)."""
    X = np.asarray(X, dtype=np.float64)
    tot = X.sum(axis=-1, keepdims=True)
    return np.divide(X, tot, out=np.zeros_like(X), where=tot > 0)


def encode(model, X, mode="eval", rng=None):
    X = dc.as_tensor(X, dc.default_dtype()) if not isinstance(X, dc.Tensor) else X
    if X.shape[-1] != model.config.input_dim:
        raise ValueError(f"expected {model.config.input_dim} features, got {X.shape[-1]}")
    out = _mlp(X, model.enc_layers)
    n = model.latent_dim
    mu, logvar = out[..., :n], out[..., n:]
    if mode == "train":
        rng = rng if rng is not None else np.random.default_rng()
        eps = rng.standard_normal(mu.shape).astype(mu.dtype)
        z = mu + dc.exp(logvar * 0.5) * eps
        return LatentBatch(mu, logvar, z, eps)
    return LatentBatch(mu, logvar, mu, None)


def decode(model, z):
    z = dc.as_tensor(z)
    if z.shape[-1] != model.latent_dim:
        raise ValueError(f"expected latent dim {model.latent_dim}, got {z.shape[-1]}")
    return _mlp(z, model.dec_layers)


def loss_rec(X, X_rec):
    X, X_rec = dc.as_tensor(X), dc.as_tensor(X_rec)
    if X.shape != X_rec.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {X_rec.shape}")
    d = X_rec - X
    return (d * d).mean()


def rbf_kernel_sum(a, b, sigma2):
    """Mean of exp(-|a_i - b_j|^2 / (2 sigma2)) over all pairs."""
    a, b = dc.as_tensor(a), dc.as_tensor(b)
    diff = a.reshape(a.shape[0], 1, a.shape[1]) - b.reshape(1, b.shape[0], b.shape[1])
    sq = (diff * diff).sum(axis=-1)
    return dc.exp(sq * (-0.5 / sigma2)).mean()


def loss_mmd(z, prior, sigma2=None):
    """Biased (V-statistic) MMD^2 between samples ``z`` and ``prior`` with an RBF kernel."""
    z, prior = dc.as_tensor(z), dc.as_tensor(prior)
    if z.shape[0] < 2 or prior.shape[0] < 2:
        raise ValueError("MMD needs at least two samples per set")
    sigma2 = float(z.shape[1]) if sigma2 is None else sigma2
    return rbf_kernel_sum(prior, prior, sigma2) + rbf_kernel_sum(z, z, sigma2) - 2.0 * rbf_kernel_sum(z, prior, sigma2)


def silhouette_tensor(z, labels):
    """Mean silhouette of ``z`` under fixed ``labels``, differentiable in ``z``."""
    z = dc.as_tensor(z)
    labels = np.unique(np.asarray(labels), return_inverse=True)[1]
    B = z.shape[0]
    k = int(labels.max()) + 1
    if k < 2:
        raise ValueError("silhouette needs at least two clusters")
    onehot = np.zeros((B, k), dtype=z.dtype)
    onehot[np.arange(B), labels] = 1.0
    counts = onehot.sum(axis=0)
    sums = dc.pairwise_distance(z) @ onehot  # (B, k)
    rows = np.arange(B)
    own = counts[labels]
    means = sums * (1.0 / counts)
    other = means.data.copy()
    other[rows, labels] = np.inf
    nearest = np.argmin(other, axis=1)
    a = sums[rows, labels] * (1.0 / np.maximum(own - 1, 1))
    b = means[rows, nearest]
    m = dc.maximum(a, b)
    valid = (own > 1) & (m.data > 0)
    if not valid.any():
        return z.sum() * 0.0
    idx = np.nonzero(valid)[0]
    s = (b[idx] - a[idx]) / m[idx]
    return s.sum() * (1.0 / B)


def loss_sil(z, k_range=(2, 6), seed=0, return_labels=False):
    """(1 - silhouette) / 2 with IKMeans labels on ``z`` held fixed."""
    z = dc.as_tensor(z)
    if z.shape[0] < max(k_range) + 1:
        raise ValueError(f"batch of {z.shape[0]} too small for k up to {max(k_range)}")
    cfg = IKMeansConfig(k_min=k_range[0], k_max=k_range[1], silhouette_subsample=z.shape[0], seed=seed)
    model = ikmeans(np.asarray(z.data, dtype=np.float64), cfg)
    if model.k < 2:
        loss = dc.as_tensor(np.full((), 0.5, dtype=z.dtype)) + z.sum() * 0.0
        return (loss, model.labels) if return_labels else loss
    loss = (1.0 - silhouette_tensor(z, model.labels)) * 0.5
    return (loss, model.labels) if return_labels else loss


def loss_total(X, X_rec, z, epoch, schedule, prior=None, mu=None, sigma2=None, k_range=(2, 6), seed=0):
    """Weighted sum plus a dict of (float) components.

    ``z`` feeds the MMD term, ``mu`` (defaults to ``z``) the silhouette term.
    """
    beta, gamma = schedule.beta(epoch), schedule.gamma_at(epoch)
    rec = loss_rec(X, X_rec)
    total = rec
    parts = {"rec": float(rec.data), "beta": beta, "gamma": gamma, "mmd": 0.0, "sil": 0.0}
    if beta:
        if prior is None:
            prior = np.random.default_rng(seed).standard_normal(z.shape).astype(z.dtype)
        mmd = loss_mmd(z, prior, sigma2)
        total = total + mmd * beta
        parts["mmd"] = float(mmd.data)
    if gamma:
        sil = loss_sil(mu if mu is not None else z, k_range, seed)
        total = total + sil * gamma
        parts["sil"] = float(sil.data)
    parts["total"] = float(total.data)
    return total, parts


def train_embedder(train, val, config=None, model=None, checkpoint=None, log_every=1):
    """Minibatch Adam on the total loss; keeps the best validation-L_rec weights.

    ``train``/``val`` are count or probability matrices (N x 512).  Returns
    ``(model, history)``; the model holds the best-validation weights.
    """
    config = config or EmbedderConfig()
    train = prepare_spectra(train)
    val = prepare_spectra(val)
    if train.shape[0] == 0 or val.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    dtype = dc.default_dtype()
    train, val = train.astype(dtype), val.astype(dtype)
    model = model or EmbedderModel(config)
    opt = dc.Adam(model.params, lr=config.lr)
    sched = dc.ReduceLROnPlateau(opt, "min", config.plateau_factor, config.plateau_patience, config.min_lr) \
        if config.plateau else None
    rng = np.random.default_rng(config.seed)
    bs = max(min(config.batch_size, train.shape[0]), max(config.k_range) + 1)
    history, best = [], (np.inf, None)
    for epoch in range(config.epochs):
        order = rng.permutation(train.shape[0])
        sums = {"total": 0.0, "rec": 0.0, "mmd": 0.0, "sil": 0.0}
        nb = 0
        for s in range(0, train.shape[0], bs):
            idx = order[s:s + bs]
            if idx.size < max(config.k_range) + 1:
                continue
            xb = train[idx]
            model.params.zero_grad()
            lat = encode(model, xb, "train", rng)
            if not np.isfinite(lat.z.data).all():
                raise NumericalError(f"non-finite latent codes at epoch {epoch}, batch {nb}")
            rec = decode(model, lat.z)
            prior = rng.standard_normal(lat.z.shape).astype(dtype)
            total, parts = loss_total(xb, rec, lat.z, epoch, config.schedule, prior=prior, mu=lat.mu,
                                      sigma2=config.sigma2, k_range=config.k_range,
                                      seed=int(rng.integers(2 ** 31)))
            if not np.isfinite(parts["total"]):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {nb}: {parts}")
            total.backward()
            opt.step()
            for key in sums:
                sums[key] += parts[key]
            nb += 1
        with dc.no_grad():
            vrec = float(loss_rec(val, decode(model, encode(model, val).mu)).data)
        if not np.isfinite(vrec):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        row = {"epoch": epoch, "beta": config.schedule.beta(epoch), "gamma": config.schedule.gamma_at(epoch),
               "lr": opt.lr, "val_rec": vrec}
        row.update({f"train_{k}": v / max(nb, 1) for k, v in sums.items()})
        history.append(row)
        if vrec < best[0]:
            best = (vrec, model.params.state())
            if checkpoint:
                save_embedder(checkpoint, model, {"epoch": epoch, "val_rec": vrec})
        if sched is not None:
            sched.step(vrec)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d total %.5g rec %.5g val_rec %.5g", epoch, row["train_total"], row["train_rec"], vrec)
    if best[1] is not None:
        model.params.load_state(best[1])
    return model, history


def embed_datacube(model, cube, batch=8192):
    """Per-pixel latent means (eval mode) for an H x W x E cube."""
    counts = cube.counts if hasattr(cube, "counts") else np.asarray(cube)
    H, W, E = counts.shape
    if E != model.config.input_dim:
        raise ValueError(f"datacube has {E} energy bins, model expects {model.config.input_dim}")
    flat = prepare_spectra(counts.reshape(-1, E)).astype(np.float32)
    out = np.empty((H * W, model.latent_dim), dtype=np.float32)
    with dc.no_grad():
        for s in range(0, flat.shape[0], batch):
            out[s:s + batch] = encode(model, flat[s:s + batch]).mu.data
    meta = dict(getattr(cube, "meta", {}) or {})
    return EmbeddedImage(out.reshape(H, W, model.latent_dim), {"source": meta.get("source"), "latent_dim": model.latent_dim})


def save_embedder(path, model, extra=None):
    meta = {"model": "embedder", "config": model.config.as_dict()}
    meta.update(extra or {})
    dc.save_checkpoint(path, model.params.state(), meta)


def load_embedder(path):
    state, meta = dc.load_checkpoint(path)
    if meta.get("model") != "embedder":
        raise dc.CheckpointError(f"{path}: not an embedder checkpoint (model={meta.get('model')!r})")
    model = EmbedderModel(EmbedderConfig.from_dict(meta.get("config", {})))
    model.params.load_state(state)
    return model
