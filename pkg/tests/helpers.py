"""Shared synthetic data generators and the finite-difference gradient oracle."""

import numpy as np
from scipy import ndimage

import focusfuse as ff
from focusfuse.qnn import PARAM_NAMES, _forward_batch

TRAIN_SIGMAS = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0)


def textured_image(seed, h=128, w=128):
    """Photo-like synthetic image: smooth fields, sharp rectangles, fine blocks.

    Fine structured detail is what separates small blur levels; the sharp
    rectangles provide strong edges for the gradient metric.
    """
    rng = np.random.default_rng(seed)
    img = np.zeros((h, w))
    for scale, amp in [(16, 55), (32, 45)]:
        small = rng.normal(size=(h // scale + 4, w // scale + 4))
        img += amp * ndimage.zoom(small, scale, order=3)[:h, :w]
    for _ in range(10):
        y0 = int(rng.integers(0, h - 8))
        x0 = int(rng.integers(0, w - 8))
        hh = int(rng.integers(6, max(7, h // 3)))
        ww = int(rng.integers(6, max(7, w // 3)))
        img[y0 : y0 + hh, x0 : x0 + ww] += rng.uniform(-70, 70)
    fine = np.kron(
        rng.uniform(-1, 1, size=(h // 2 + 1, w // 2 + 1)), np.ones((2, 2))
    )[:h, :w]
    gate = ndimage.gaussian_filter(rng.normal(size=(h, w)), 10)
    img += 30 * fine * (gate > 0)
    img += rng.normal(0, 3, size=(h, w))
    lo, hi = img.min(), img.max()
    return np.rint((img - lo) / (hi - lo) * 255.0)


def region_mask(kind, shape, rng):
    """Binary focus region: half planes, a diagonal, a disc, or smooth blobs."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:
        m = xx < w // 2
    elif kind == 1:
        m = yy < h // 2
    elif kind == 2:
        m = xx + yy < (h + w) // 2
    elif kind == 3:
        cy = int(rng.integers(h // 3, 2 * h // 3))
        cx = int(rng.integers(w // 3, 2 * w // 3))
        m = (yy - cy) ** 2 + (xx - cx) ** 2 < (min(h, w) // 3) ** 2
    else:
        blob = ndimage.gaussian_filter(rng.normal(size=shape), 12)
        m = blob > np.median(blob)
    return m.astype(float)


def _discrete_state(cache):
    """Active-set signature of a forward pass: ReLU signs and pooling winners."""
    return (
        tuple((cache["a1"][0] > 0).tolist()),
        tuple(cache["amax"][0].tolist()),
        tuple(cache["amin"][0].tolist()),
    )


def gradcheck_max_rel_error(model, patch, label, rng, n_coords=40, h=1e-4):
    """Compare backprop gradients against central finite differences.

    Probes a random subset of parameter coordinates. A probe is skipped when
    the +-h perturbation changes the active set (ReLU signs, pooling argmax/
    argmin) or crosses the absolute-loss kink, where the finite difference is
    not a valid derivative. Returns (max relative error, checked count).
    """
    grads = ff.backprop_grads(model, patch, label)
    p = np.asarray(patch, dtype=np.float64)[None]
    sizes = [getattr(model, name).size for name in PARAM_NAMES]
    bounds = np.cumsum(sizes)
    total = int(bounds[-1])
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    worst = 0.0
    checked = 0
    for flat in picks:
        leaf = int(np.searchsorted(bounds, flat, side="right"))
        offset = int(flat - (bounds[leaf - 1] if leaf else 0))
        name = PARAM_NAMES[leaf]
        arr = getattr(model, name)
        idx = np.unravel_index(offset, arr.shape)
        orig = arr[idx]

        arr[idx] = orig + h
        out_p, cache_p = _forward_batch(model, p)
        arr[idx] = orig - h
        out_m, cache_m = _forward_batch(model, p)
        arr[idx] = orig

        s_p, s_m = _discrete_state(cache_p), _discrete_state(cache_m)
        sign_p = np.sign(out_p[0] - label)
        sign_m = np.sign(out_m[0] - label)
        if s_p != s_m or sign_p != sign_m or sign_p == 0:
            continue
        fd = (abs(out_p[0] - label) - abs(out_m[0] - label)) / (2 * h)
        bp = getattr(grads, name)[idx]
        denom = max(abs(fd), abs(bp), 1e-8)
        worst = max(worst, abs(fd - bp) / denom)
        checked += 1
    return worst, checked
