"""Patch-quality network: inference, training, score maps, serialization.

The network maps a locally-normalized 32x32 patch to a score in (0, 1) where
higher means worse visual quality: 7x7 conv (50 filters, valid, stride 1),
joint max- and min-pooling over each 26x26 response map, a 100-unit ReLU
layer, and a single sigmoid output.
"""

import copy
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import InputError, ModelError, NumericError
from .image import PATCH_HALO, PATCH_SIZE, as_gray, gaussian_blur, local_normalize, replicate_pad

N_FILTERS = 50
KERNEL = 7
RESP = PATCH_SIZE - KERNEL + 1  # 26
N_FEATURES = 2 * N_FILTERS  # max-pool and min-pool of every response map
FC1_UNITS = 100

MODEL_MAGIC = b"QNN1"

PARAM_NAMES = ("conv_w", "conv_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")

# Pre-activation bound for the output sigmoid: keeps the score strictly
# inside (0, 1) in float64 (sigmoid(+-36) is one ulp away from the limits).
A2_LIMIT = 36.0

assert RESP == 26 and N_FEATURES == 100


@dataclass
class QnnModel:
    """Weights of the quality network plus a note on the label convention."""

    conv_w: np.ndarray  # (50, 7, 7)
    conv_b: np.ndarray  # (50,)
    fc1_w: np.ndarray  # (100, 100), rows are output units
    fc1_b: np.ndarray  # (100,)
    fc2_w: np.ndarray  # (1, 100)
    fc2_b: np.ndarray  # (1,)
    label_note: str = "sigma-linear"

    def __post_init__(self):
        shapes = {
            "conv_w": (N_FILTERS, KERNEL, KERNEL),
            "conv_b": (N_FILTERS,),
            "fc1_w": (FC1_UNITS, N_FEATURES),
            "fc1_b": (FC1_UNITS,),
            "fc2_w": (1, FC1_UNITS),
            "fc2_b": (1,),
        }
        for name, want in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != want:
                raise ModelError(f"{name} has shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} contains non-finite weights")
            setattr(self, name, arr)

    def copy(self):
        return copy.deepcopy(self)

    @property
    def params(self):
        return (self.conv_w, self.conv_b, self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b)


@dataclass
class QnnGrads:
    """Parameter gradients in the same layout as QnnModel."""

    conv_w: np.ndarray
    conv_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    @property
    def params(self):
        return (self.conv_w, self.conv_b, self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b)


@dataclass
class HyperParams:
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InputError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InputError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class TrainingSet:
    """Non-overlapping normalized patches with per-image labels in [0, 1]."""

    patches: np.ndarray  # (M, 32, 32)
    labels: np.ndarray  # (M,)
    groups: list = field(default_factory=list)  # (name, sigma, label, n_patches)
    skipped: int = 0

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.patches.ndim != 3 or self.patches.shape[1:] != (PATCH_SIZE, PATCH_SIZE):
            raise InputError(f"patches must be (M, 32, 32), got {self.patches.shape}")
        if self.labels.shape != (self.patches.shape[0],):
            raise InputError("labels must match the number of patches")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 1):
            raise InputError("labels must lie in [0, 1]")

    def __len__(self):
        return self.patches.shape[0]


def init_model(seed=0):
    """Fresh model with uniform weights in [-0.05, 0.05] from the seeded RNG."""
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-0.05, 0.05, size=shape)

    return QnnModel(
        conv_w=u(N_FILTERS, KERNEL, KERNEL),
        conv_b=u(N_FILTERS),
        fc1_w=u(FC1_UNITS, N_FEATURES),
        fc1_b=u(FC1_UNITS),
        fc2_w=u(1, FC1_UNITS),
        fc2_b=u(1),
    )


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def _forward_batch(model, patches):
    """Forward pass over a (B, 32, 32) batch; returns (scores, cache)."""
    wins = sliding_window_view(patches, (KERNEL, KERNEL), axis=(1, 2))
    cols = wins.reshape(patches.shape[0], RESP * RESP, KERNEL * KERNEL)
    resp = cols @ model.conv_w.reshape(N_FILTERS, -1).T + model.conv_b
    amax = resp.argmax(axis=1)
    amin = resp.argmin(axis=1)
    fmax = np.take_along_axis(resp, amax[:, None, :], axis=1)[:, 0, :]
    fmin = np.take_along_axis(resp, amin[:, None, :], axis=1)[:, 0, :]
    feat = np.concatenate([fmax, fmin], axis=1)
    if not np.all(np.isfinite(feat)):
        raise NumericError("non-finite convolution response")
    a1 = feat @ model.fc1_w.T + model.fc1_b
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ model.fc2_w[0] + model.fc2_b[0]
    if not np.all(np.isfinite(a2)):
        raise NumericError("non-finite pre-activation in the output layer")
    out = _sigmoid(np.clip(a2, -A2_LIMIT, A2_LIMIT))
    cache = {
        "cols": cols,
        "amax": amax,
        "amin": amin,
        "feat": feat,
        "a1": a1,
        "h1": h1,
        "a2": a2,
        "out": out,
    }
    return out, cache


def forward(model, patch):
    """Quality score in (0, 1) for one normalized 32x32 patch."""
    p = np.asarray(patch, dtype=np.float64)
    if p.shape != (PATCH_SIZE, PATCH_SIZE):
        raise InputError(f"patch must be 32x32, got {p.shape}")
    out, _ = _forward_batch(model, p[None])
    return float(out[0])


def _backward_batch(model, cache, labels):
    """Gradients of mean |out - label| over the batch; subgradient 0 at kinks."""
    out = cache["out"]
    b = out.shape[0]
    dout = np.sign(out - labels) / b
    da2 = dout * out * (1.0 - out)
    da2 = np.where(np.abs(cache["a2"]) > A2_LIMIT, 0.0, da2)

    g_fc2_w = (da2 @ cache["h1"])[None, :]
    g_fc2_b = np.array([da2.sum()])

    dh1 = np.outer(da2, model.fc2_w[0])
    da1 = dh1 * (cache["a1"] > 0.0)
    g_fc1_w = da1.T @ cache["feat"]
    g_fc1_b = da1.sum(axis=0)

    dfeat = da1 @ model.fc1_w
    dmax = dfeat[:, :N_FILTERS]
    dmin = dfeat[:, N_FILTERS:]

    # Pooling routes each map's gradient to its argmax / argmin window only.
    bidx = np.arange(b)[:, None]
    wins_max = cache["cols"][bidx, cache["amax"]]
    wins_min = cache["cols"][bidx, cache["amin"]]
    g_conv_w = np.einsum("bf,bfk->fk", dmax, wins_max) + np.einsum("bf,bfk->fk", dmin, wins_min)
    g_conv_b = (dmax + dmin).sum(axis=0)

    return QnnGrads(
        conv_w=g_conv_w.reshape(N_FILTERS, KERNEL, KERNEL),
        conv_b=g_conv_b,
        fc1_w=g_fc1_w,
        fc1_b=g_fc1_b,
        fc2_w=g_fc2_w,
        fc2_b=g_fc2_b,
    )


def backprop_grads(model, patch, label):
    """Exact gradients of |forward(model, patch) - label| for every parameter."""
    if not 0.0 <= label <= 1.0:
        raise InputError(f"label must lie in [0, 1], got {label}")
    p = np.asarray(patch, dtype=np.float64)
    _, cache = _forward_batch(model, p[None])
    return _backward_batch(model, cache, np.array([float(label)]))


def train(model, data, hp):
    """Plain mini-batch SGD with the absolute-error loss.

    Data are reshuffled each epoch with the seeded RNG; returns a trained
    copy of the model and the per-epoch mean absolute loss. Deterministic
    given (seed, data order, hyperparameters).
    """
    if len(data) == 0:
        raise InputError("training set is empty")
    model = model.copy()
    rng = np.random.default_rng(hp.seed)
    n = len(data)
    losses = []
    for epoch in range(hp.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            idx = perm[start : start + hp.batch_size]
            batch = data.patches[idx]
            labels = data.labels[idx]
            out, cache = _forward_batch(model, batch)
            total += float(np.abs(out - labels).sum())
            grads = _backward_batch(model, cache, labels)
            for p, g in zip(model.params, grads.params):
                p -= hp.learning_rate * g
        loss = total / n
        if not np.isfinite(loss):
            raise NumericError(f"training diverged at epoch {epoch}")
        losses.append(loss)
    return model, losses


def gen_training_data(images, sigmas, labels=None, names=None, window=7):
    """Blur, normalize, and tile pristine images into a labeled TrainingSet.

    Each image is blurred with every sigma (radius ceil(3*sigma), edges
    replicated), locally normalized, and cut into non-overlapping 32x32
    tiles; all tiles of one blurred image share one label. Default labels
    are sigma / max(sigma); an external table {(name, sigma): value}
    overrides them (values outside [0, 1] are min-max rescaled into it).
    Images smaller than 32x32 are skipped and counted.
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise InputError("need at least one sigma")
    if any(s < 0 for s in sigmas):
        raise InputError("sigmas must be >= 0")
    if names is None:
        names = [str(i) for i in range(len(images))]
    if len(names) != len(images):
        raise InputError("names must match images")

    if labels is not None:
        table = {k: float(v) for k, v in labels.items()}
        vals = np.array(list(table.values()))
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            lo, hi = vals.min(), vals.max()
            if hi == lo:
                table = {k: 0.5 for k in table}
            else:
                table = {k: (v - lo) / (hi - lo) for k, v in table.items()}

    sigma_max = max(sigmas)
    patches = []
    patch_labels = []
    groups = []
    skipped = 0
    for name, img in zip(names, images):
        arr = as_gray(img, f"image '{name}'")
        h, w = arr.shape
        if h < PATCH_SIZE or w < PATCH_SIZE:
            skipped += 1
            continue
        ny, nx = h // PATCH_SIZE, w // PATCH_SIZE
        for sigma in sigmas:
            if labels is not None:
                key = (name, sigma)
                if key not in table:
                    raise InputError(f"label table is missing entry for {key}")
                label = table[key]
            else:
                label = sigma / sigma_max if sigma_max > 0 else 0.0
            norm = local_normalize(gaussian_blur(arr, sigma), window)
            tiles = norm[: ny * PATCH_SIZE, : nx * PATCH_SIZE]
            tiles = tiles.reshape(ny, PATCH_SIZE, nx, PATCH_SIZE).swapaxes(1, 2)
            patches.append(tiles.reshape(-1, PATCH_SIZE, PATCH_SIZE))
            patch_labels.append(np.full(ny * nx, label))
            groups.append((name, sigma, label, ny * nx))
    if not patches:
        raise InputError("no image was large enough to tile into 32x32 patches")
    return TrainingSet(
        patches=np.concatenate(patches),
        labels=np.concatenate(patch_labels),
        groups=groups,
        skipped=skipped,
    )


def score_map(model, img, window=7, band_rows=64):
    """Per-pixel quality scores: evaluate the network at every pixel.

    Equivalent to forward(model, extract_patch(local_normalize(img), x, y))
    at each (x, y), computed with shared convolutions and sliding-window
    pooling; output has the input's dimensions. Work proceeds in horizontal
    bands of band_rows pixels to bound memory.
    """
    arr = as_gray(img)
    h, w = arr.shape
    padded = replicate_pad(local_normalize(arr, window), PATCH_HALO)
    wflat = model.conv_w.reshape(N_FILTERS, -1).T
    scores = np.empty((h, w))
    for r0 in range(0, h, band_rows):
        r1 = min(r0 + band_rows, h)
        sub = padded[r0 : r1 + PATCH_SIZE - 1]
        wins = sliding_window_view(sub, (KERNEL, KERNEL))
        rh, rw = wins.shape[:2]
        resp = (wins.reshape(rh * rw, KERNEL * KERNEL) @ wflat).reshape(rh, rw, N_FILTERS)
        resp += model.conv_b
        # Window max/min over each 26x26 response block anchored at (y, x):
        # a centered filter evaluated at (y+13, x+13).
        fmax = ndimage.maximum_filter(resp, size=(RESP, RESP, 1), mode="nearest")
        fmin = ndimage.minimum_filter(resp, size=(RESP, RESP, 1), mode="nearest")
        half = RESP // 2
        rows = slice(half, half + (r1 - r0))
        cols = slice(half, half + w)
        feat = np.concatenate([fmax[rows, cols], fmin[rows, cols]], axis=2)
        if not np.all(np.isfinite(feat)):
            raise NumericError("non-finite convolution response in score map")
        a1 = feat @ model.fc1_w.T + model.fc1_b
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ model.fc2_w[0] + model.fc2_b[0]
        scores[r0:r1] = _sigmoid(np.clip(a2, -A2_LIMIT, A2_LIMIT))
    return scores


def save_model(model, path):
    """Serialize a model: magic, u32 shape header, float32 weights in order."""
    with open(str(path), "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<6I", N_FILTERS, KERNEL, KERNEL, N_FEATURES, FC1_UNITS, 1))
        for p in model.params:
            fh.write(p.astype("<f4").tobytes())


def load_model(path):
    """Read a serialized model; raises ModelError on any inconsistency."""
    try:
        with open(str(path), "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ModelError(f"cannot read model {path}: {exc}") from exc
    if len(data) < 28 or data[:4] != MODEL_MAGIC:
        raise ModelError(f"{path}: missing {MODEL_MAGIC!r} magic")
    header = struct.unpack("<6I", data[4:28])
    if header != (N_FILTERS, KERNEL, KERNEL, N_FEATURES, FC1_UNITS, 1):
        raise ModelError(f"{path}: unsupported shape header {header}")
    shapes = [
        (N_FILTERS, KERNEL, KERNEL),
        (N_FILTERS,),
        (FC1_UNITS, N_FEATURES),
        (FC1_UNITS,),
        (1, FC1_UNITS),
        (1,),
    ]
    need = sum(int(np.prod(s)) for s in shapes)
    if len(data) < 28 + 4 * need:
        raise ModelError(f"{path}: model data truncated")
    flat = np.frombuffer(data, dtype="<f4", count=need, offset=28)
    arrays = []
    pos = 0
    for s in shapes:
        k = int(np.prod(s))
        arrays.append(flat[pos : pos + k].reshape(s).astype(np.float64))
        pos += k
    return QnnModel(*arrays)
