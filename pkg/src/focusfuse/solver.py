"""Confidence-weighted edge-preserving smoothing on a simplified bilateral grid.

Pixels are hard-quantized into (cell-x, cell-y, intensity-bin) vertices of a
grid built from the reference image; a data term weighted by the confidence
map and a smoothness term built from the bistochastized grid blur form a
positive-definite least-squares problem per vertex, solved with Jacobi-
preconditioned conjugate gradient and sliced back to pixels. Re-running with
shifted grid origins and averaging removes the quantization block artifact.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError
from .image import as_gray

logger = logging.getLogger("focusfuse.solver")

# Grid blur weights: the vertex itself counts twice, each of the six
# axis-aligned neighbors once (the [1 2 1] stencil summed over dimensions).
SELF_WEIGHT = 2.0


@dataclass
class SolverParams:
    sigma_xy: int = 8
    sigma_in: float = 16.0
    lam: float = 64.0
    cg_tol: float = 1e-5
    cg_max_iters: int = 25
    bistoch_iters: int = 16

    def __post_init__(self):
        if int(self.sigma_xy) != self.sigma_xy or self.sigma_xy < 1:
            raise InputError(f"sigma_xy must be an integer >= 1, got {self.sigma_xy}")
        self.sigma_xy = int(self.sigma_xy)
        if self.sigma_in <= 0:
            raise InputError(f"sigma_in must be > 0, got {self.sigma_in}")
        if self.lam < 0:
            raise InputError(f"lam must be >= 0, got {self.lam}")
        if self.cg_tol <= 0 or self.cg_max_iters < 1 or self.bistoch_iters < 1:
            raise InputError("cg_tol, cg_max_iters, bistoch_iters must be positive")


@dataclass
class BilateralGrid:
    """Hard-quantized bilateral grid over one reference image."""

    shape: tuple
    assignment: np.ndarray  # (H*W,) vertex index per pixel
    m: np.ndarray  # (V,) pixels per vertex
    neighbor_idx: np.ndarray  # (V, 6) vertex index of each axis neighbor, -1 if absent
    n: np.ndarray = None  # bistochastization diagonal, filled by bistochastize()
    _nb_valid: np.ndarray = field(default=None, repr=False)
    _nb_safe: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._nb_valid = self.neighbor_idx >= 0
        self._nb_safe = np.maximum(self.neighbor_idx, 0)

    @property
    def num_vertices(self):
        return self.m.size

    def splat(self, pixel_values):
        """Sum pixel values into their vertices."""
        return np.bincount(
            self.assignment, weights=np.ravel(pixel_values), minlength=self.num_vertices
        )

    def slice(self, vertex_values):
        """Read each pixel's vertex value back into image space."""
        return vertex_values[self.assignment].reshape(self.shape)

    def blur(self, vertex_values):
        """Grid blur: twice the vertex plus its present axis neighbors."""
        gathered = np.where(self._nb_valid, vertex_values[self._nb_safe], 0.0)
        return SELF_WEIGHT * vertex_values + gathered.sum(axis=1)


def build_grid(reference, params, origin_offset=(0, 0)):
    """Quantize a reference image into grid vertices.

    Vertices exist only for occupied (cell-x, cell-y, intensity-bin) triples;
    cell boundaries start at the origin offset, which must lie in
    [0, sigma_xy) per axis.
    """
    ref = as_gray(reference, "reference")
    s = params.sigma_xy
    ox, oy = origin_offset
    if not (0 <= ox < s and 0 <= oy < s):
        raise InputError(f"origin offset {origin_offset} outside [0, {s})")
    h, w = ref.shape
    cx = (np.arange(w) + ox) // s
    cy = (np.arange(h) + oy) // s
    ci = np.floor(ref / params.sigma_in).astype(np.int64)
    ci -= ci.min()
    ncx = int(cx[-1]) + 1
    nci = int(ci.max()) + 1
    keys = ((cy[:, None] * ncx + cx[None, :]) * nci + ci).ravel()
    uniq, assignment = np.unique(keys, return_inverse=True)
    m = np.bincount(assignment).astype(np.float64)

    civ = uniq % nci
    cxv = (uniq // nci) % ncx
    cyv = uniq // (nci * ncx)
    ncy = int(cy[-1]) + 1
    steps = [
        (civ > 0, -1),
        (civ < nci - 1, 1),
        (cxv > 0, -nci),
        (cxv < ncx - 1, nci),
        (cyv > 0, -nci * ncx),
        (cyv < ncy - 1, nci * ncx),
    ]
    nb = np.full((uniq.size, 6), -1, dtype=np.int64)
    for j, (valid, step) in enumerate(steps):
        cand = uniq + step
        pos = np.searchsorted(uniq, cand)
        pos = np.minimum(pos, uniq.size - 1)
        hit = valid & (uniq[pos] == cand)
        nb[hit, j] = pos[hit]
    return BilateralGrid(shape=(h, w), assignment=assignment.ravel(), m=m, neighbor_idx=nb)


def bistochastize(grid, iters=16):
    """Fill the grid's normalization diagonal n by fixed-point iteration.

    Runs n <- sqrt(n * m / blur(n)) the given number of times from n = 1;
    afterwards diag(n) blur diag(n) has row sums close to the vertex masses.
    """
    n = np.ones(grid.num_vertices)
    for _ in range(int(iters)):
        n = np.sqrt(n * grid.m / grid.blur(n))
        if not np.all(np.isfinite(n)) or np.any(n <= 0):
            raise NumericError("bistochastization produced a non-positive diagonal")
    grid.n = n
    return grid


@dataclass
class SolveResult:
    values: np.ndarray
    converged: bool
    iterations: int
    residual: float
    offset: tuple


@dataclass
class BlockMotionResult:
    values: np.ndarray
    solves: list

    @property
    def converged(self):
        return all(s.converged for s in self.solves)


def _check_same_shape(target, confidence, reference):
    t = as_gray(target, "target")
    c = as_gray(confidence, "confidence")
    r = as_gray(reference, "reference")
    if t.shape != r.shape or c.shape != r.shape:
        raise InputError(
            f"target {t.shape}, confidence {c.shape}, reference {r.shape} must match"
        )
    return t, c, r


def _system(grid, target, confidence, lam):
    """Splat the data term and return (c, b, matvec, diag) of the vertex system.

    A = lam * (diag(m) - diag(n) blur diag(n)) + diag(splat(C)),
    b = splat(C * M).
    """
    c = grid.splat(confidence)
    b = grid.splat(confidence * target)
    m, n = grid.m, grid.n

    def matvec(y):
        return lam * (m * y - n * grid.blur(n * y)) + c * y

    diag = lam * (m - SELF_WEIGHT * n * n) + c
    return c, b, matvec, diag


def _pcg(matvec, b, x0, diag, tol, max_iters):
    """Jacobi-preconditioned CG; returns the best iterate seen and stats."""
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), True, 0, 0.0
    x = x0.copy()
    r = b - matvec(x)
    rnorm = float(np.linalg.norm(r))
    best_x, best_rnorm = x.copy(), rnorm
    if rnorm <= tol * bnorm:
        return x, True, 0, rnorm / bnorm
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    converged = False
    iters = 0
    for _ in range(int(max_iters)):
        ap = matvec(p)
        pap = float(p @ ap)
        if pap <= 0.0 or not np.isfinite(pap):
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        iters += 1
        rnorm = float(np.linalg.norm(r))
        if rnorm < best_rnorm:
            best_rnorm = rnorm
            best_x = x.copy()
        if rnorm <= tol * bnorm:
            converged = True
            break
        z = r / diag
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return best_x, converged, iters, best_rnorm / bnorm


def solve(target, confidence, reference, params, origin_offset=(0, 0)):
    """Smooth a mask against its reference image at one grid offset.

    Minimizes the bilateral-space reduction of the confidence-weighted data
    term plus the smoothness term, then slices back to pixels and clamps to
    [0, 1]. A CG run that misses cg_tol returns its best iterate with
    converged=False rather than raising.
    """
    t, c_map, ref = _check_same_shape(target, confidence, reference)
    grid = bistochastize(build_grid(ref, params, origin_offset), params.bistoch_iters)
    c, b, matvec, diag = _system(grid, t, c_map, params.lam)
    if np.any(diag <= 0):
        raise NumericError("non-positive Jacobi diagonal; confidence must be > 0")
    safe_c = np.where(c > 0, c, 1.0)
    x0 = np.where(c > 0, b / safe_c, 0.0)
    y, converged, iters, residual = _pcg(
        matvec, b, x0, diag, params.cg_tol, params.cg_max_iters
    )
    logger.debug(
        "solve offset=%s vertices=%d cg_iters=%d residual=%.3e",
        origin_offset, grid.num_vertices, iters, residual,
    )
    values = np.clip(grid.slice(y), 0.0, 1.0)
    return SolveResult(values, converged, iters, residual, tuple(origin_offset))


def dense_oracle_solve(target, confidence, reference, params, origin_offset=(0, 0)):
    """Direct dense-factorization solve of the identical vertex system.

    Intended as a testing oracle for small images. With lam = 0, vertices
    whose confidence mass is zero make the system singular; those are
    reported and left at y = 0 while the rest is solved exactly.
    """
    t, c_map, ref = _check_same_shape(target, confidence, reference)
    if t.size > 64 * 64:
        raise InputError("dense oracle is limited to images of at most 64x64 pixels")
    grid = bistochastize(build_grid(ref, params, origin_offset), params.bistoch_iters)
    c, b, _, _ = _system(grid, t, c_map, params.lam)
    v = grid.num_vertices
    blur_mat = SELF_WEIGHT * np.eye(v)
    rows = np.repeat(np.arange(v), 6)
    cols = grid.neighbor_idx.ravel()
    ok = cols >= 0
    np.add.at(blur_mat, (rows[ok], cols[ok]), 1.0)
    n = grid.n
    a = params.lam * (np.diag(grid.m) - n[:, None] * blur_mat * n[None, :]) + np.diag(c)

    y = np.zeros(v)
    if params.lam == 0 and np.any(c == 0):
        active = c > 0
        dead = np.flatnonzero(~active)
        logger.warning("zero-confidence vertices with lam=0 left at 0: %s", dead.tolist())
        if active.any():
            y[active] = np.linalg.solve(a[np.ix_(active, active)], b[active])
    else:
        y = np.linalg.solve(a, b)
    values = np.clip(grid.slice(y), 0.0, 1.0)
    return SolveResult(values, True, 0, 0.0, tuple(origin_offset))


def solve_with_block_motion(target, confidence, reference, params):
    """Average solves over the diagonal grid offsets (t, t), t = 0..sigma_xy-1.

    Shifting the block origin one pixel per repeat and averaging the outputs
    removes the blocking artifact of the hard quantization.
    """
    solves = [
        solve(target, confidence, reference, params, origin_offset=(t, t))
        for t in range(params.sigma_xy)
    ]
    values = np.mean([s.values for s in solves], axis=0)
    return BlockMotionResult(values=values, solves=solves)
