"""Weight normalization, weighted-sum fusion, and end-to-end orchestration."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, PipelineStageError
from .focus_maps import confidence_map, pre_estimate
from .image import as_gray, gaussian_blur, save_f32map, save_pgm
from .qnn import score_map
from .solver import solve_with_block_motion

PARTITION_TOL = 1e-6


@dataclass
class FusionResult:
    """Fused image plus every intermediate of the pipeline."""

    fused: np.ndarray
    score_maps: list
    masks: np.ndarray  # (N, H, W)
    confidence: np.ndarray
    smoothed: list  # W' maps
    weights: list  # W maps
    solver_results: list
    timings: dict = field(default_factory=dict)

    @property
    def converged(self):
        return all(r.converged for r in self.solver_results)


def normalize_weights(raw_maps, slope=40.0, mean=0.5):
    """Turn smoothed maps into a per-pixel partition of unity.

    Per pixel the raw values are normalized to sum to 1, pushed through a
    sigmoid of the given slope centered at the given mean, and re-normalized
    so the weights stay valid convex coefficients. Pixels where every raw
    value is zero fall back to uniform 1/N.
    """
    maps = [as_gray(m, f"raw weight map {i}") for i, m in enumerate(raw_maps)]
    if len(maps) < 2:
        raise InputError(f"need at least 2 weight maps, got {len(maps)}")
    shape = maps[0].shape
    for i, m in enumerate(maps):
        if m.shape != shape:
            raise InputError(f"weight map {i} has shape {m.shape}, expected {shape}")
    stack = np.stack(maps)
    total = stack.sum(axis=0)
    degenerate = total == 0
    safe_total = np.where(degenerate, 1.0, total)
    w = stack / safe_total
    s = 1.0 / (1.0 + np.exp(-slope * (w - mean)))
    weights = s / s.sum(axis=0)
    weights[:, degenerate] = 1.0 / len(maps)
    return [weights[i] for i in range(len(maps))]


def fuse(images, weights):
    """Pixel-wise weighted sum of the sources, clamped to [0, 255].

    The weights must form a per-pixel partition of unity within 1e-6.
    """
    imgs = [as_gray(im, f"image {i}") for i, im in enumerate(images)]
    wmaps = [as_gray(w, f"weight map {i}") for i, w in enumerate(weights)]
    if len(imgs) != len(wmaps):
        raise InputError(f"{len(imgs)} images but {len(wmaps)} weight maps")
    total = np.sum(wmaps, axis=0)
    err = float(np.abs(total - 1.0).max())
    if err > PARTITION_TOL:
        raise InputError(f"weights violate the partition of unity by {err:.3e}")
    fused = np.zeros_like(imgs[0])
    for im, w in zip(imgs, wmaps):
        if im.shape != fused.shape or w.shape != fused.shape:
            raise InputError("images and weight maps must share dimensions")
        fused += w * im
    return np.clip(fused, 0.0, 255.0)


def _stage(name, fn):
    try:
        return fn()
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc


def run_pipeline(images, model, params, thr=0.1, slope=40.0, mean=0.5, window=7, threads=1):
    """Full fusion: score, pre-estimate, smooth per source, normalize, fuse.

    Each source image guides the smoothing of its own mask. With threads > 1
    the per-source stages run concurrently; results are identical to the
    sequential path.
    """
    imgs = [as_gray(im, f"image {i}") for i, im in enumerate(images)]
    if len(imgs) < 2:
        raise InputError(f"need at least 2 source images, got {len(imgs)}")
    shape = imgs[0].shape
    for i, im in enumerate(imgs):
        if im.shape != shape:
            raise InputError(f"image {i} has shape {im.shape}, expected {shape}")

    timings = {}

    def timed(name, fn):
        start = time.perf_counter()
        out = _stage(name, fn)
        timings[name] = time.perf_counter() - start
        return out

    def per_source(fn):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(fn, range(len(imgs))))
        return [fn(i) for i in range(len(imgs))]

    scores = timed("score_map", lambda: per_source(lambda i: score_map(model, imgs[i], window)))
    masks = timed("pre_estimate", lambda: pre_estimate(scores))
    conf = timed("confidence_map", lambda: confidence_map(scores, thr))
    solver_results = timed(
        "solve",
        lambda: per_source(lambda i: solve_with_block_motion(masks[i], conf, imgs[i], params)),
    )
    smoothed = [r.values for r in solver_results]
    weights = timed("normalize_weights", lambda: normalize_weights(smoothed, slope, mean))
    fused = timed("fuse", lambda: fuse(imgs, weights))
    return FusionResult(
        fused=fused,
        score_maps=scores,
        masks=masks,
        confidence=conf,
        smoothed=smoothed,
        weights=weights,
        solver_results=solver_results,
        timings=timings,
    )


def make_multifocus_pair(sharp, mask, sigma_blur):
    """Synthesize a two-source multi-focus pair with known ground truth.

    I1 is sharp where the binary mask is 1 and blurred elsewhere; I2 is the
    complement; the ground truth is the sharp image itself.
    """
    gt = as_gray(sharp, "sharp")
    msk = as_gray(mask, "mask")
    if msk.shape != gt.shape:
        raise InputError(f"mask shape {msk.shape} must match image {gt.shape}")
    if not np.all((msk == 0) | (msk == 1)):
        raise InputError("mask must be binary (0/1 values only)")
    if sigma_blur < 0:
        raise InputError(f"sigma_blur must be >= 0, got {sigma_blur}")
    blurred = gaussian_blur(gt, sigma_blur)
    i1 = np.where(msk == 1, gt, blurred)
    i2 = np.where(msk == 1, blurred, gt)
    return i1, i2, gt.copy()


def diff_map(fused, source, global_min, global_max):
    """Difference image normalized to a caller-supplied shared range.

    Returns (F - I - global_min) / (global_max - global_min) scaled to
    [0, 255] for display; the shared extrema keep several methods' maps
    comparable pixel for pixel.
    """
    f = as_gray(fused, "fused")
    i = as_gray(source, "source")
    if f.shape != i.shape:
        raise InputError(f"fused {f.shape} and source {i.shape} must match")
    if not global_max > global_min:
        raise InputError(f"degenerate range [{global_min}, {global_max}]")
    d = (f - i - global_min) / (global_max - global_min)
    return np.clip(d * 255.0, 0.0, 255.0)


def dump_intermediates(result, sources, directory):
    """Write every stage map of a FusionResult under fixed filenames.

    Sources are numbered from 1. Difference maps against the sources share
    one range computed over all of this result's difference images.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    n = len(result.score_maps)
    for i in range(n):
        save_f32map(result.score_maps[i], out / f"score_{i + 1}.f32map")
        save_f32map(result.masks[i], out / f"mask_{i + 1}.f32map")
        save_f32map(result.smoothed[i], out / f"wprime_{i + 1}.f32map")
        save_f32map(result.weights[i], out / f"weight_{i + 1}.f32map")
    save_f32map(result.confidence, out / "confidence.f32map")
    save_pgm(result.fused, out / "fused.pgm")
    diffs = [result.fused - as_gray(src) for src in sources]
    lo = min(d.min() for d in diffs)
    hi = max(d.max() for d in diffs)
    if hi == lo:
        hi = lo + 1.0  # identical fusion and sources: flat mid-gray maps
    for i in range(n):
        save_pgm(diff_map(result.fused, sources[i], lo, hi), out / f"diff_{i + 1}.pgm")
    return out
