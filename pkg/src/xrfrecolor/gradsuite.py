"""Registered finite-difference suites for every differentiable op and both reduced models.

Each suite returns the max relative error between reverse-mode and central
difference gradients, computed in double precision.
"""
import numpy as np

from . import diffcore as dc

TOLERANCE = 1e-4


def _r(seed, *shape, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape)


def _op(fn, *inputs):
    return lambda: max(dc.check_gradients(fn, list(inputs)))


def _away(x, gap=0.2):
    # keep samples clear of kinks
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x) + 0.0


def _dropout(a):
    return dc.dropout(a, 0.3, True, np.random.default_rng(5))


def _stochastic_depth(a):
    return dc.stochastic_depth(a, 0.5, True, np.random.default_rng(3))


def _silhouette(z):
    from .embedder import silhouette_tensor
    return silhouette_tensor(z, np.array([0, 0, 0, 1, 1, 1, 2, 2]))


def _mmd(z, p):
    from .embedder import loss_mmd
    return loss_mmd(z, p)


def _rec(a, b):
    from .embedder import loss_rec
    return loss_rec(a, b)


def _srgb(y, t):
    from .recolor import loss_srgb
    return loss_srgb(y, t)


def _embedder_suite():
    from .embedder import EmbedderConfig, EmbedderModel, decode, encode, loss_mmd, loss_rec

    with dc.precision("double"):
        cfg = EmbedderConfig(input_dim=16, encoder_widths=(12, 8), latent_dim=3, decoder_widths=(8, 12))
        model = EmbedderModel(cfg, seed=0)
        X = np.random.default_rng(1).random((10, 16))
        X /= X.sum(1, keepdims=True)
        prior = np.random.default_rng(2).standard_normal((10, 3))

        def loss():
            lat = encode(model, X, "train", np.random.default_rng(4))
            return loss_rec(X, decode(model, lat.z)) + loss_mmd(lat.z, prior) * 0.5

        return max(dc.check_params(loss, model.params, h=1e-6, max_entries=8).values())


def _uvit_suite():
    from .recolor import SmallUViT, SmallUViTConfig, loss_srgb, uvit_forward

    with dc.precision("double"):
        cfg = SmallUViTConfig(image_size=8, patch_size=4, embed_dim=8, heads=2, head_dim=4, depth_in=1,
                              depth_mid=1, depth_out=1, dropout=0.0, stochastic_depth=0.0)
        model = SmallUViT(cfg, seed=1)
        x, y = _r(6, 2, 3, 8, 8, lo=0, hi=1), _r(7, 2, 3, 8, 8, lo=0, hi=1)
        return max(dc.check_params(lambda: loss_srgb(uvit_forward(model, x), y), model.params,
                                   h=1e-6, max_entries=6).values())


def registry():
    """name -> zero-argument callable returning the max relative error."""
    a, b = _r(0, 3, 4), _r(1, 3, 4)
    pos = _r(2, 3, 4, lo=0.5, hi=2.0)
    return {
        "add": _op(lambda x, y: x + y, a, _r(1, 4)),
        "sub": _op(lambda x, y: x - y, a, b),
        "mul": _op(lambda x, y: x * y, a, _r(1, 3, 1)),
        "div": _op(lambda x, y: x / y, a, pos),
        "pow": _op(lambda x: x ** 3, a),
        "exp": _op(dc.exp, a),
        "log": _op(dc.log, pos),
        "sqrt": _op(dc.sqrt, pos),
        "maximum": _op(dc.maximum, a, a + _away(_r(9, 3, 4))),
        "where": _op(lambda x, y: dc.where(a > 0, x, y), a, b),
        "matmul": _op(dc.matmul, _r(3, 2, 3, 4), _r(4, 4, 5)),
        "sum": _op(lambda x: dc.sum(x, axis=1), a),
        "mean": _op(lambda x: dc.mean(x, axis=0, keepdims=True), a),
        "reshape": _op(lambda x: x.reshape(2, 6), a),
        "transpose": _op(lambda x: x.transpose(1, 0), a),
        "getitem": _op(lambda x: x[np.array([0, 2, 0]), 1:3], a),
        "concat": _op(lambda x, y: dc.concat([x, y], axis=0), a, b),
        "shift2d": _op(lambda x: dc.shift2d(x, 1, -2), _r(5, 2, 5, 6)),
        "pairwise_distance": _op(dc.pairwise_distance, _r(8, 6, 3)),
        "linear": _op(dc.linear, _r(3, 5, 4), _r(4, 4, 3), _r(5, 3)),
        "selu": _op(dc.selu, _away(a)),
        "gelu": _op(dc.gelu, a),
        "sigmoid": _op(dc.sigmoid, a),
        "softmax": _op(dc.softmax, a),
        "layer_norm": _op(dc.layer_norm, _r(6, 3, 5), _r(7, 5), _r(8, 5)),
        "conv3x3": _op(dc.conv3x3, _r(9, 2, 2, 5, 4), _r(10, 3, 2, 3, 3), _r(11, 3)),
        "dropout": _op(_dropout, a),
        "stochastic_depth": _op(_stochastic_depth, _r(12, 4, 3, 2)),
        "loss_rec": _op(_rec, a, b),
        "loss_mmd": _op(_mmd, _r(13, 6, 3), _r(14, 6, 3)),
        "silhouette": _op(_silhouette, _r(15, 8, 2)),
        "loss_srgb": _op(_srgb, _r(16, 2, 3, 4, 4, lo=0, hi=1), _r(17, 2, 3, 4, 4, lo=0, hi=1)),
        "model:embedder": _embedder_suite,
        "model:smalluvit": _uvit_suite,
    }


def run(names=None, suites=None):
    """Run suites; returns a JSON-ready report with per-suite errors and overall ``passed``."""
    suites = suites if suites is not None else registry()
    selected = list(suites) if names is None else list(names)
    unknown = [n for n in selected if n not in suites]
    if unknown:
        raise KeyError(f"unknown gradcheck suites: {unknown}")
    rows, failed = {}, []
    for name in selected:
        try:
            err = float(suites[name]())
        except Exception as exc:  # reported per layer
            rows[name] = {"max_rel_error": None, "passed": False, "error": f"{type(exc).__name__}: {exc}"}
            failed.append(name)
            continue
        ok = bool(np.isfinite(err) and err < TOLERANCE)
        rows[name] = {"max_rel_error": err, "passed": ok}
        if not ok:
            failed.append(name)
    return {"tolerance": TOLERANCE, "coverage": selected, "suites": rows, "failed": failed, "passed": not failed}
