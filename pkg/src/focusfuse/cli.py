"""Batch command-line front end: train, fuse, eval, score, synth, diff."""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import resolve_config
from .errors import FocusFuseError, InputError, ModelError, NumericError, PipelineStageError
from .image import load_gray, save_f32map, save_map_pgm, save_pgm
from .metrics import CSV_HEADER, evaluate_fusion, format_table
from .pipeline import diff_map, dump_intermediates, make_multifocus_pair, run_pipeline
from .qnn import gen_training_data, init_model, load_model, save_model, score_map, train

logger = logging.getLogger("focusfuse.cli")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MODEL = 3
EXIT_NUMERIC = 4

IMAGE_SUFFIXES = (".pgm", ".png")

# Flags shared by every subcommand that map straight onto Config fields.
_CONFIG_FLAGS = [
    ("--sigma-xy", "sigma_xy", int, "spatial bandwidth in pixels"),
    ("--sigma-in", "sigma_in", float, "intensity bandwidth"),
    ("--lam", "lam", float, "smoothness weight"),
    ("--cg-tol", "cg_tol", float, "CG relative residual tolerance"),
    ("--cg-max-iters", "cg_max_iters", int, "CG iteration cap"),
    ("--bistoch-iters", "bistoch_iters", int, "bistochastization iterations"),
    ("--thr", "thr", float, "confidence threshold"),
    ("--sigmoid-slope", "sigmoid_slope", float, "weight sigmoid slope"),
    ("--sigmoid-mean", "sigmoid_mean", float, "weight sigmoid mean"),
    ("--window", "window", int, "local normalization window"),
    ("--lr", "learning_rate", float, "training learning rate"),
    ("--batch-size", "batch_size", int, "training mini-batch size"),
    ("--epochs", "epochs", int, "training epochs"),
    ("--seed", "seed", int, "RNG seed"),
    ("--threads", "threads", int, "worker threads (0 = hardware count)"),
]


def _add_common(sub):
    sub.add_argument("--config", help="path to a key = value config file")
    sub.add_argument("--verbose", action="store_true", help="debug logging")
    for flag, dest, typ, help_text in _CONFIG_FLAGS:
        sub.add_argument(flag, dest=dest, type=typ, default=None, help=help_text)


def _config_from_args(args):
    overrides = {dest: getattr(args, dest) for _, dest, _, _ in _CONFIG_FLAGS}
    return resolve_config(overrides, config_path=args.config)


def _list_images(directory):
    root = Path(directory)
    if not root.is_dir():
        raise InputError(f"{directory} is not a directory")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _read_label_table(path):
    table = {}
    try:
        with open(str(path), "r", encoding="utf-8", newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().lower() == "filename":
                    continue
                if len(row) != 3:
                    raise InputError(f"{path}: expected filename,sigma,label rows")
                table[(row[0].strip(), float(row[1]))] = float(row[2])
    except OSError as exc:
        raise InputError(f"cannot read label table {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: bad numeric field: {exc}") from exc
    return table


def cmd_train(args):
    cfg = _config_from_args(args)
    paths = _list_images(args.images)
    if not paths:
        raise InputError(f"no .pgm/.png images found in {args.images}")
    images = [load_gray(p) for p in paths]
    names = [p.name for p in paths]
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip() != ""]
    labels = _read_label_table(args.labels) if args.labels else None
    data = gen_training_data(images, sigmas, labels=labels, names=names, window=cfg.window)
    if data.skipped:
        logger.warning("skipped %d images smaller than 32x32", data.skipped)
    model = init_model(cfg.seed)
    model, losses = train(model, data, cfg.hyper_params())
    save_model(model, args.out)
    if args.loss_csv:
        with open(args.loss_csv, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss\n")
            for epoch, loss in enumerate(losses, 1):
                fh.write(f"{epoch},{loss:.8f}\n")
    print(f"trained on {len(data)} patches; final epoch loss {losses[-1]:.6f}")
    return EXIT_OK


def cmd_fuse(args):
    cfg = _config_from_args(args)
    images = [load_gray(p) for p in args.inputs]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise InputError(f"input sizes differ: {sorted(shapes)}")
    model = load_model(args.model)
    result = run_pipeline(
        images,
        model,
        cfg.solver_params(),
        thr=cfg.thr,
        slope=cfg.sigmoid_slope,
        mean=cfg.sigmoid_mean,
        window=cfg.window,
        threads=cfg.effective_threads(),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_intermediates:
        dump_intermediates(result, images, out)
    else:
        save_pgm(result.fused, out / "fused.pgm")
    if not result.converged:
        logger.warning("solver did not reach cg_tol on every offset")
    print(f"wrote {out / 'fused.pgm'}")
    return EXIT_OK


def _eval_one(i1_path, i2_path, fused_path, gt_path=None):
    i1 = load_gray(i1_path)
    i2 = load_gray(i2_path)
    fused = load_gray(fused_path)
    gt = load_gray(gt_path) if gt_path else None
    return evaluate_fusion(i1, i2, fused, gt)


def _find_in_dir(directory, stem):
    for suffix in IMAGE_SUFFIXES:
        p = Path(directory) / f"{stem}{suffix}"
        if p.exists():
            return p
    return None


def cmd_eval(args):
    _config_from_args(args)
    rows = []
    if args.dir:
        root = Path(args.dir)
        if not root.is_dir():
            raise InputError(f"{args.dir} is not a directory")
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            paths = [_find_in_dir(sub, stem) for stem in ("I1", "I2", "fused")]
            if any(p is None for p in paths):
                raise InputError(f"{sub}: need I1, I2 and fused images")
            gt = _find_in_dir(sub, "gt")
            rows.append((sub.name, _eval_one(*paths, gt)))
    else:
        if not args.fused:
            raise InputError("eval needs I1 I2 FUSED arguments or --dir")
        name = Path(args.fused).stem
        rows.append((name, _eval_one(args.i1, args.i2, args.fused, args.gt)))
    if args.table:
        print(format_table(rows))
    else:
        header = CSV_HEADER + (",psnr" if any(r.psnr_vs_gt is not None for _, r in rows) else "")
        print(header)
        for name, report in rows:
            print(report.csv_row(name))
    return EXIT_OK


def cmd_score(args):
    cfg = _config_from_args(args)
    image = load_gray(args.image)
    model = load_model(args.model)
    scores = score_map(model, image, window=cfg.window)
    save_f32map(scores, args.out)
    if args.pgm:
        save_map_pgm(scores, args.pgm)
    print(f"wrote {args.out}")
    return EXIT_OK


def _make_mask(selector, shape):
    h, w = shape
    if selector == "half-v":
        mask = np.zeros(shape)
        mask[:, : w // 2] = 1.0
        return mask
    if selector == "half-h":
        mask = np.zeros(shape)
        mask[: h // 2, :] = 1.0
        return mask
    loaded = load_gray(selector)
    if loaded.shape != shape:
        raise InputError(f"mask shape {loaded.shape} must match image {shape}")
    values = np.unique(loaded)
    if not np.all(np.isin(values, (0.0, 255.0))):
        raise InputError(f"mask file must contain only 0 and 255, found {values[:8]}")
    return loaded / 255.0


def cmd_synth(args):
    _config_from_args(args)
    sharp = load_gray(args.sharp)
    mask = _make_mask(args.mask, sharp.shape)
    i1, i2, gt = make_multifocus_pair(sharp, mask, args.sigma_blur)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_pgm(i1, out / "I1.pgm")
    save_pgm(i2, out / "I2.pgm")
    save_pgm(gt, out / "gt.pgm")
    print(f"wrote {out / 'I1.pgm'}, {out / 'I2.pgm'}, {out / 'gt.pgm'}")
    return EXIT_OK


def cmd_diff(args):
    _config_from_args(args)
    source = load_gray(args.source)
    fused_list = [(Path(p).stem, load_gray(p)) for p in args.fused]
    diffs = [f - source for _, f in fused_list]
    lo = min(float(d.min()) for d in diffs)
    hi = max(float(d.max()) for d in diffs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for (stem, fused), _ in zip(fused_list, diffs):
        save_pgm(diff_map(fused, source, lo, hi), out / f"diff_{stem}.pgm")
    print(f"wrote {len(fused_list)} difference maps to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="focusfuse",
        description="Multi-focus image fusion via learned quality scores and "
        "an edge-preserving bilateral-grid solver.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train a quality model on blurred pristine images")
    p.add_argument("images", help="directory of pristine .pgm/.png images")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--loss-csv", help="write the per-epoch loss curve here")
    p.add_argument("--sigmas", default="0,0.5,1,2,3,4", help="comma-separated blur sigmas")
    p.add_argument("--labels", help="optional CSV label table: filename,sigma,label")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("fuse", help="fuse two or more multi-focus images")
    p.add_argument("inputs", nargs="+", help="source images (>= 2)")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--dump-intermediates", action="store_true",
                   help="also write every stage map")
    _add_common(p)
    p.set_defaults(func=cmd_fuse)

    p = subs.add_parser("eval", help="fusion metrics for one instance or a directory")
    p.add_argument("i1", nargs="?", help="first source image")
    p.add_argument("i2", nargs="?", help="second source image")
    p.add_argument("fused", nargs="?", help="fused image")
    p.add_argument("--gt", help="ground truth for PSNR")
    p.add_argument("--dir", help="directory of instance subdirectories (I1/I2/fused[/gt])")
    p.add_argument("--table", action="store_true", help="human-readable table output")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("score", help="per-pixel quality score map for one image")
    p.add_argument("image", help="input image")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("-o", "--out", required=True, help="output .f32map path")
    p.add_argument("--pgm", help="also write a x255 PGM preview here")
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = subs.add_parser("synth", help="build a synthetic multi-focus pair with ground truth")
    p.add_argument("sharp", help="all-in-focus source image")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--mask", default="half-v",
                   help="'half-v', 'half-h', or a mask image of 0/255 values")
    p.add_argument("--sigma-blur", type=float, default=2.0, help="defocus blur sigma")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("diff", help="normalized difference maps on a shared range")
    p.add_argument("--source", required=True, help="source image to subtract")
    p.add_argument("fused", nargs="+", help="one or more fused images")
    p.add_argument("-o", "--out", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_diff)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except PipelineStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, ModelError):
            return EXIT_MODEL
        if isinstance(cause, InputError):
            return EXIT_INPUT
        return EXIT_NUMERIC
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FocusFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
