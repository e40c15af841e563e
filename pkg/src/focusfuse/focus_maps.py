"""Binary pre-estimation masks and the shared confidence map from score maps."""

import numpy as np

from .errors import InputError
from .image import as_gray

CONFIDENCE_LOW = 0.1
CONFIDENCE_HIGH = 1.0


def _stack_maps(score_maps, minimum=2):
    maps = [as_gray(m, f"score map {i}") for i, m in enumerate(score_maps)]
    if len(maps) < minimum:
        raise InputError(f"need at least {minimum} score maps, got {len(maps)}")
    shape = maps[0].shape
    for i, m in enumerate(maps):
        if m.shape != shape:
            raise InputError(f"score map {i} has shape {m.shape}, expected {shape}")
    return np.stack(maps)


def pre_estimate(score_maps):
    """Per-pixel winner masks: mask i is 1 where source i has the lowest score.

    Exact ties go to the lowest source index, so the masks partition every
    pixel. Returns an (N, H, W) array of 0/1 values.
    """
    stack = _stack_maps(score_maps)
    winner = np.argmin(stack, axis=0)
    masks = np.zeros_like(stack)
    np.put_along_axis(masks, winner[None], 1.0, axis=0)
    return masks


def confidence_map(score_maps, thr=0.1):
    """Shared reliability map from the spread of the score maps.

    The max-min score difference is rescaled linearly to [0, 1] over the
    whole image; pixels below thr get 0.1, the rest 1.0. A constant
    difference map (nothing distinguishable anywhere) yields all 0.1.
    """
    stack = _stack_maps(score_maps)
    spread = stack.max(axis=0) - stack.min(axis=0)
    lo, hi = spread.min(), spread.max()
    if hi == lo:
        return np.full(spread.shape, CONFIDENCE_LOW)
    scaled = (spread - lo) / (hi - lo)
    return np.where(scaled < thr, CONFIDENCE_LOW, CONFIDENCE_HIGH)
