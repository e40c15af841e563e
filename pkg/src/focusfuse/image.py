"""Grayscale image container conventions, file I/O, and patch-level preprocessing.

Images are plain 2-D float64 arrays indexed [row, col] with intensities in the
nominal range [0, 255]. Per-pixel maps (scores, masks, weights) reuse the same
representation with their own value ranges.
"""

import math
import struct

import numpy as np
from scipy import ndimage

from .errors import FormatError, InputError

PATCH_SIZE = 32
PATCH_HALO = 16  # patch rows/cols span center-16 .. center+15

F32MAP_MAGIC = b"F32MAP\x00\x00"

# ITU-R BT.601 luma weights, fixed by the file-input contract.
_LUMA = np.array([0.299, 0.587, 0.114])


def as_gray(img, name="image"):
    """Validate and return a 2-D float64 image array.

    Raises InputError on wrong rank, empty size, or non-finite values.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError(f"{name} must be at least 1x1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def load_gray(path):
    """Load an 8-bit PGM (P5) or PNG (grayscale/RGB) file as a float image.

    RGB inputs are converted with 0.299 R + 0.587 G + 0.114 B and rounded to
    the nearest integer; values are returned as reals in [0, 255].
    """
    try:
        with open(str(path), "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if head.startswith(b"P5"):
        return load_pgm(path)
    if head.startswith(b"\x89PNG"):
        return _load_png(path)
    raise FormatError(f"{path}: not a P5 PGM or PNG file")


def _load_png(path):
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(str(path)) as im:
            mode = im.mode
            if mode == "L":
                return np.asarray(im, dtype=np.float64)
            if mode == "RGB":
                rgb = np.asarray(im, dtype=np.float64)
                return np.rint(rgb @ _LUMA)
            raise FormatError(f"{path}: unsupported PNG mode '{mode}' (need 8-bit L or RGB)")
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: unreadable PNG: {exc}") from exc


def load_pgm(path):
    """Read a binary (P5) PGM with maxval <= 255."""
    try:
        with open(str(path), "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: missing P5 magic")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed, one whitespace byte terminates the header.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header fields {fields}") from exc
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad PGM dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported (8-bit only)")
    if len(data) < pos + width * height:
        raise FormatError(f"{path}: PGM pixel data truncated")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).astype(np.float64)


def save_pgm(img, path):
    """Write an image as binary P5 PGM; values are clamped to [0, 255] and rounded."""
    arr = as_gray(img)
    q = np.rint(np.clip(arr, 0.0, 255.0)).astype(np.uint8)
    h, w = q.shape
    with open(str(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def save_map_pgm(map01, path):
    """Write a [0, 1]-valued map as PGM scaled x255 for visual inspection."""
    save_pgm(np.asarray(map01, dtype=np.float64) * 255.0, path)


def save_f32map(arr, path):
    """Dump a real-valued map in the raw F32MAP format.

    Layout: 8-byte magic, little-endian u32 width and height, then
    width*height little-endian float32 values in row-major order.
    """
    a = as_gray(arr)
    h, w = a.shape
    with open(str(path), "wb") as fh:
        fh.write(F32MAP_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(a.astype("<f4").tobytes())


def load_f32map(path):
    """Read a raw F32MAP dump back into a float64 array."""
    try:
        with open(str(path), "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if len(data) < 16 or data[:8] != F32MAP_MAGIC:
        raise FormatError(f"{path}: missing F32MAP magic")
    w, h = struct.unpack("<II", data[8:16])
    if len(data) < 16 + 4 * w * h:
        raise FormatError(f"{path}: F32MAP pixel data truncated")
    pixels = np.frombuffer(data, dtype="<f4", count=w * h, offset=16)
    return pixels.reshape(h, w).astype(np.float64)


def replicate_pad(img, amount):
    """Pad an image by edge replication on all four sides."""
    return np.pad(img, amount, mode="edge")


def local_normalize(img, window=7):
    """Remove the local mean and divide by the local standard deviation.

    Statistics are computed over a window x window neighborhood with edge
    replication; the divisor is the population standard deviation plus 1.0,
    so flat regions map to exactly zero.
    """
    arr = as_gray(img)
    if window < 1 or window % 2 == 0:
        raise InputError(f"window must be odd and >= 1, got {window}")
    ones = np.ones((window, window))
    count = float(window * window)
    s1 = ndimage.correlate(arr, ones, mode="nearest")
    s2 = ndimage.correlate(arr * arr, ones, mode="nearest")
    mean = s1 / count
    var = np.maximum(s2 / count - mean * mean, 0.0)
    return (arr - mean) / (np.sqrt(var) + 1.0)


def extract_patch(norm_img, x, y):
    """Cut the 32x32 patch whose 1-based element (17,17) sits at column x, row y.

    Out-of-bounds samples are filled by edge replication. Coordinates are
    0-based: x is the column, y the row.
    """
    arr = as_gray(norm_img, "normalized image")
    h, w = arr.shape
    if not (0 <= x < w and 0 <= y < h):
        raise InputError(f"patch center ({x},{y}) outside {w}x{h} image")
    padded = replicate_pad(arr, PATCH_HALO)
    return padded[y : y + PATCH_SIZE, x : x + PATCH_SIZE].copy()


def gaussian_kernel(sigma):
    """Normalized circular-symmetric 2-D Gaussian kernel with radius ceil(3*sigma).

    sigma = 0 degenerates to the 1x1 identity kernel.
    """
    if sigma < 0:
        raise InputError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones((1, 1))
    radius = math.ceil(3.0 * sigma)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k2 = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    return k2 / k2.sum()


def gaussian_blur(img, sigma):
    """Blur with the gaussian_kernel of the given sigma, edges replicated.

    Applied separably; identical to the full 2-D kernel up to rounding.
    """
    arr = as_gray(img)
    if sigma == 0:
        return arr.copy()
    radius = math.ceil(3.0 * sigma)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k1 = np.exp(-(d * d) / (2.0 * sigma * sigma))
    k1 /= k1.sum()
    out = ndimage.correlate1d(arr, k1, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k1, axis=1, mode="nearest")
