"""xrfrecolor command line.

Exit codes: 0 ok, 1 usage, 2 data/format error, 3 numerical failure.
"""
import argparse
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import version_string
from ._accel import set_threads
from .color import redmean
from .diffcore import CheckpointError
from .embedder import EmbedderConfig, NumericalError, embed_datacube, load_embedder, save_embedder, train_embedder
from .formats import (FormatError, atomic_write_bytes, read_datacube, read_embedded, read_png, read_spectra,
                      write_datacube, write_embedded, write_png, write_spectra)
from .metrics import ms_ssim, uiqi
from .palette import PaletteError, load_palette, save_palette
from .synthesize import NoMatchingPigment, SynthConfig, generate_xrf, palette_id, sample_spectra_dataset, split_sizes

log = logging.getLogger("xrfrecolor")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path, what="file"):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


class Context:
    """Resolved global options: flag > config file > default."""

    def __init__(self, args):
        self.config = read_json(args.config, "config") if args.config else {}
        self.seed = args.seed if args.seed is not None else int(self.config.get("seed", 0))
        self.seed_from_flag = args.seed is not None
        self.out = Path(args.out or self.config.get("out", "out"))
        self.threads = args.threads or self.config.get("threads")
        if self.threads:
            set_threads(self.threads)

    def section(self, name, **flags):
        sec = dict(self.config.get(name, {}) or {})
        if self.seed_from_flag or "seed" not in sec:
            sec["seed"] = self.seed
        sec.update({k: v for k, v in flags.items() if v is not None})
        return sec

    def path(self, name, flag=None, default=None):
        if flag is not None:
            return Path(flag)
        paths = self.config.get("paths", {}) or {}
        if name in paths:
            return Path(paths[name])
        return self.out / default if default is not None else None

    def report(self, cfg):
        return {"config_hash": config_hash(cfg), "version": version_string()}


def _image_seed(seed, name):
    return int.from_bytes(hashlib.sha256(f"{seed}:{name}".encode()).digest()[:4], "little")


def _rel(path, base):
    try:
        return str(Path(path).relative_to(base))
    except ValueError:
        return str(path)


def _resolve(path, base):
    p = Path(path)
    return p if p.is_absolute() else Path(base) / p


# commands -----------------------------------------------------------------

def cmd_palette_validate(ctx, args):
    pal = load_palette(args.path, working_bins=args.bins)
    print(json.dumps({"path": str(args.path), "pigments": pal.names, "energy_bins": pal.energy_bins,
                      "palette_id": palette_id(pal), "valid": True}, indent=2))
    return EXIT_OK


def cmd_palette_demo(ctx, args):
    from .demo import demo_palette

    dest = Path(args.path) if args.path else ctx.out / "palette.json"
    save_palette(demo_palette(), dest)
    print(dest)
    return EXIT_OK


def cmd_demo_images(ctx, args):
    from .demo import demo_image

    dest = Path(args.dir) if args.dir else ctx.out / "images"
    for i in range(args.n):
        write_png(dest / f"img_{i:03d}.png", demo_image(args.size, seed=ctx.seed * 1000 + i))
    print(dest)
    return EXIT_OK


def cmd_gen(ctx, args):
    sec = ctx.section("gen", counts_per_pixel=args.counts, alpha_th=args.alpha_th)
    if args.size is not None:
        sec["image_size"] = [args.size, args.size]
    cfg = SynthConfig.from_dict(sec)
    palette = load_palette(ctx.path("palette", args.palette))
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        raise DataError(f"seed image directory not found: {images_dir}")
    pngs = sorted(images_dir.glob("*.png"))
    if not pngs:
        raise DataError(f"no PNG files in {images_dir}")
    out = ctx.out
    written, errors, items = [], [], []
    for png in pngs:
        try:
            img = read_png(png, cfg.image_size)
            if img.shape[0] == 0 or img.shape[1] == 0:
                raise FormatError(f"{png}: empty image")
            icfg = SynthConfig.from_dict({**cfg.as_dict(), "seed": _image_seed(cfg.seed, png.stem)})
            cube = generate_xrf(img, palette, icfg)
            cube.meta["source"] = png.name
            cube_path, rgb_path = out / "cubes" / f"{png.stem}.xrfc", out / "rgb" / f"{png.stem}.png"
            write_datacube(cube_path, cube)
            written.append(cube_path)
            write_png(rgb_path, img)
            written.append(rgb_path)
            items.append({"name": png.stem, "cube_path": _rel(cube_path, out), "rgb_path": _rel(rgb_path, out)})
        except (FormatError, NoMatchingPigment, ValueError) as exc:
            errors.append(f"{png}: {exc}")
    if errors:
        for p in written:
            p.unlink(missing_ok=True)
        raise DataError("generation failed; partial outputs removed:\n  " + "\n  ".join(errors))
    split = tuple(sec.get("split", (0.7, 0.2, 0.1)))
    n_train, n_val, _ = split_sizes(len(items), split)
    order = np.random.default_rng(cfg.seed).permutation(len(items))
    for rank, i in enumerate(order):
        items[i]["split"] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    full_cfg = {"synth": cfg.as_dict(), "split": list(split), "palette_id": palette_id(palette)}
    write_json(out / "manifest.json", {"items": items, **full_cfg, **ctx.report(full_cfg)})
    print(f"wrote {len(items)} datacubes to {out / 'cubes'}")
    return EXIT_OK


def _load_manifest(path):
    man = read_json(path, "manifest")
    if "items" not in man:
        raise DataError(f"{path}: manifest has no 'items'")
    return man, Path(path).parent


def cmd_sample_spectra(ctx, args):
    sec = ctx.section("sample_spectra", n=args.n)
    mpath = ctx.path("manifest", args.manifest, "manifest.json")
    man, base = _load_manifest(mpath)
    cubes = [read_datacube(_resolve(it["cube_path"], base)) for it in man["items"]]
    bins = {c.counts.shape[-1] for c in cubes}
    if len(bins) != 1:
        raise DataError(f"datacubes disagree on energy bins: {sorted(bins)}")
    total = sum(c.counts.shape[0] * c.counts.shape[1] for c in cubes)
    n = int(sec.get("n", min(total, 100_000)))
    split = tuple(sec.get("split", (0.7, 0.2, 0.1)))
    train, val, test = sample_spectra_dataset(cubes, n, split, seed=sec["seed"])
    cfg = {"n": n, "split": list(split), "seed": sec["seed"]}
    dest = ctx.path("spectra", args.output, "spectra.npz")
    write_spectra(dest, {"train": train, "val": val, "test": test}, {**cfg, **ctx.report(cfg)})
    print(f"wrote {train.shape[0]}/{val.shape[0]}/{test.shape[0]} spectra to {dest}")
    return EXIT_OK


def cmd_train_embed(ctx, args):
    sec = ctx.section("embedder", epochs=args.epochs)
    cfg = EmbedderConfig.from_dict(sec)
    sets, _ = read_spectra(ctx.path("spectra", args.spectra, "spectra.npz"))
    for key in ("train", "val"):
        if key not in sets or sets[key].shape[0] == 0:
            raise DataError(f"spectra set has no '{key}' rows")
        if sets[key].shape[1] != cfg.input_dim:
            raise DataError(f"spectra have {sets[key].shape[1]} bins, embedder expects {cfg.input_dim}")
    ckpt = ctx.path("embedder", args.checkpoint, "embedder.xckp")
    model, history = train_embedder(sets["train"], sets["val"], cfg, checkpoint=ckpt)
    save_embedder(ckpt, model, {"val_rec": min(r["val_rec"] for r in history)})
    write_json(ckpt.with_suffix(".history.json"), {"history": history, "config": cfg.as_dict(),
                                                   **ctx.report(cfg.as_dict())})
    print(f"embedder saved to {ckpt}")
    return EXIT_OK


def cmd_embed(ctx, args):
    model = load_embedder(ctx.path("embedder", args.checkpoint, "embedder.xckp"))
    man, base = _load_manifest(ctx.path("manifest", args.manifest, "manifest.json"))
    out = ctx.out
    rows = []
    for it in man["items"]:
        cube = read_datacube(_resolve(it["cube_path"], base))
        emb = embed_datacube(model, cube)
        dest = out / "embedded" / f"{it['name']}.xemb"
        write_embedded(dest, emb)
        rows.append({"name": it["name"], "embedded_path": _rel(dest, out),
                     "rgb_path": _rel(_resolve(it["rgb_path"], base), out), "split": it["split"]})
    cfg = {"embedder": model.config.as_dict(), "manifest": man.get("config_hash")}
    write_json(ctx.path("dataset", args.dataset, "dataset.json"), {"items": rows, **ctx.report(cfg)})
    print(f"embedded {len(rows)} datacubes")
    return EXIT_OK


def _load_pairs(dataset_path, splits):
    ds, base = _load_manifest(dataset_path)
    X, Y, names = [], [], []
    for it in ds["items"]:
        if it["split"] not in splits:
            continue
        emb = read_embedded(_resolve(it["embedded_path"], base))
        rgb = read_png(_resolve(it["rgb_path"], base))
        if emb.data.shape[:2] != rgb.shape[:2]:
            raise DataError(f"{it['name']}: embedded {emb.data.shape[:2]} vs RGB {rgb.shape[:2]} size mismatch")
        X.append(np.moveaxis(emb.data, -1, 0))
        Y.append(np.moveaxis(rgb, -1, 0))
        names.append(it["name"])
    return names, X, Y


def cmd_train_recolor(ctx, args):
    from .recolor import RecolorTrainConfig, save_recolor, train_recolor

    sec = ctx.section("recolor", epochs=args.epochs, max_steps=args.steps)
    dpath = ctx.path("dataset", args.dataset, "dataset.json")
    _, Xtr, Ytr = _load_pairs(dpath, ("train",))
    _, Xva, Yva = _load_pairs(dpath, ("val",))
    if not Xtr:
        raise DataError(f"{dpath}: no training pairs")
    if not Xva:
        log.warning("no validation pairs; validating on the training split")
        Xva, Yva = Xtr, Ytr
    C, H, W = Xtr[0].shape
    model_sec = dict(sec.get("model", {}) or {})
    model_sec.setdefault("in_channels", C)
    model_sec.setdefault("image_size", H)
    if H != W or H != model_sec["image_size"]:
        raise DataError(f"images are {H}x{W}; model expects square {model_sec['image_size']}px input")
    sec["model"] = model_sec
    cfg = RecolorTrainConfig.from_dict(sec)
    ckpt = ctx.path("recolor", args.checkpoint, "recolor.xckp")
    model, history = train_recolor((np.stack(Xtr), np.stack(Ytr)), (np.stack(Xva), np.stack(Yva)), cfg,
                                   checkpoint=ckpt)
    save_recolor(ckpt, model, {"val_ms_ssim": max(r["val_ms_ssim"] for r in history) if history else None})
    write_json(ckpt.with_suffix(".history.json"), {"history": history, "config": cfg.as_dict(),
                                                   **ctx.report(cfg.as_dict())})
    print(f"recolor model saved to {ckpt}")
    return EXIT_OK


def false_colour(latent):
    lo = latent.min(axis=(0, 1), keepdims=True)
    hi = latent.max(axis=(0, 1), keepdims=True)
    img = (latent - lo) / np.where(hi > lo, hi - lo, 1.0)
    if img.shape[2] < 3:
        img = np.concatenate([img, np.zeros(img.shape[:2] + (3 - img.shape[2],))], axis=2)
    return img[..., :3]


def cmd_infer(ctx, args):
    from .recolor import infer_recolor, load_recolor

    model = load_recolor(ctx.path("recolor", args.checkpoint, "recolor.xckp"))
    dpath = ctx.path("dataset", args.dataset, "dataset.json")
    ds, base = _load_manifest(dpath)
    splits = ("train", "val", "test") if args.split == "all" else (args.split,)
    out = ctx.out
    rows = []
    for it in ds["items"]:
        if it["split"] not in splits:
            continue
        emb = read_embedded(_resolve(it["embedded_path"], base))
        try:
            pred, _ = infer_recolor(model, emb)
        except ValueError as exc:
            raise DataError(f"{it['name']}: {exc}") from exc
        dest = out / "pred" / f"{it['name']}.png"
        write_png(dest, pred)
        rgb_path = _resolve(it["rgb_path"], base)
        row = {"name": it["name"], "pred_path": _rel(dest, out), "rgb_path": _rel(rgb_path, out)}
        if args.montage:
            panels = [false_colour(emb.data.astype(np.float64)), pred]
            if rgb_path.exists():
                panels.append(read_png(rgb_path))
            mdest = out / "montage" / f"{it['name']}.png"
            write_png(mdest, np.concatenate(panels, axis=1))
            row["montage_path"] = _rel(mdest, out)
        rows.append(row)
    if not rows:
        raise DataError(f"{dpath}: no items in split {args.split!r}")
    cfg = {"model": model.config.__dict__, "split": args.split}
    write_json(ctx.path("predictions", args.predictions, "predictions.json"), {"items": rows, **ctx.report(cfg)})
    print(f"wrote {len(rows)} predictions")
    return EXIT_OK


def evaluate_pair(pred, target, scales=5):
    if pred.shape != target.shape:
        raise DataError(f"prediction {pred.shape} vs target {target.shape} shape mismatch")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ms = ms_ssim(pred, target, scales=scales)
    return {"ms_ssim": float(ms), "uiqi": float(uiqi(pred, target)), "srgb_loss": float(redmean(pred, target).mean())}


def cmd_eval(ctx, args):
    sec = ctx.section("eval", scales=args.scales)
    scales = int(sec.get("scales", 5))
    ppath = ctx.path("predictions", args.predictions, "predictions.json")
    man, base = _load_manifest(ppath)
    rows = []
    for it in man["items"]:
        pred = read_png(_resolve(it["pred_path"], base))
        target = read_png(_resolve(it["rgb_path"], base))
        rows.append({"name": it.get("name", it["pred_path"]), **evaluate_pair(pred, target, scales)})
    if not rows:
        raise DataError(f"{ppath}: nothing to evaluate")
    agg = {k: float(np.mean([r[k] for r in rows])) for k in ("ms_ssim", "uiqi", "srgb_loss")}
    cfg = {"scales": scales, "predictions": man.get("config_hash")}
    report = {"images": rows, "aggregate": agg, "n": len(rows), **ctx.report(cfg)}
    write_json(ctx.path("report", args.report, "eval.json"), report)
    print(json.dumps(agg, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(ctx, args):
    from . import gradsuite

    report = gradsuite.run(args.suite or None)
    report["version"] = version_string()
    dest = ctx.path("gradcheck", args.report, "gradcheck.json")
    write_json(dest, report)
    for name, row in report["suites"].items():
        err = row["max_rel_error"]
        print(f"{'ok  ' if row['passed'] else 'FAIL'} {name:<20} {err if err is not None else row.get('error')}")
    if not report["passed"]:
        print(f"gradcheck failed: {', '.join(report['failed'])}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# parser ---------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="xrfrecolor", description="Virtual recolouring of MA-XRF datacubes.")
    p.add_argument("--config", help="JSON config with per-command sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    pal = sub.add_parser("palette", help="palette utilities")
    psub = pal.add_subparsers(dest="palette_command", parser_class=_Parser)
    psub.required = True
    v = psub.add_parser("validate")
    v.add_argument("path")
    v.add_argument("--bins", type=int, default=512)
    v.set_defaults(func=cmd_palette_validate)
    d = psub.add_parser("demo", help="write the built-in demo palette")
    d.add_argument("path", nargs="?")
    d.set_defaults(func=cmd_palette_demo)

    s = sub.add_parser("demo-images", help="write synthetic seed PNGs")
    s.add_argument("dir", nargs="?")
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--size", type=int, default=32)
    s.set_defaults(func=cmd_demo_images)

    s = sub.add_parser("gen", help="synthesize datacubes from seed PNGs")
    s.add_argument("images")
    s.add_argument("--palette")
    s.add_argument("--size", type=int)
    s.add_argument("--counts", type=int)
    s.add_argument("--alpha-th", type=float)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("sample-spectra", help="draw per-pixel spectra for embedder training")
    s.add_argument("--manifest")
    s.add_argument("--n", type=int)
    s.add_argument("--output")
    s.set_defaults(func=cmd_sample_spectra)

    s = sub.add_parser("train-embed")
    s.add_argument("--spectra")
    s.add_argument("--epochs", type=int)
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_train_embed)

    s = sub.add_parser("embed")
    s.add_argument("--manifest")
    s.add_argument("--checkpoint")
    s.add_argument("--dataset")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("train-recolor")
    s.add_argument("--dataset")
    s.add_argument("--epochs", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_train_recolor)

    s = sub.add_parser("infer")
    s.add_argument("--dataset")
    s.add_argument("--checkpoint")
    s.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    s.add_argument("--montage", action="store_true")
    s.add_argument("--predictions")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval")
    s.add_argument("--predictions")
    s.add_argument("--scales", type=int)
    s.add_argument("--report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck")
    s.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    s.add_argument("--report")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ctx = Context(args)
        return args.func(ctx, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, PaletteError, CheckpointError, NoMatchingPigment, FileNotFoundError,
            KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
