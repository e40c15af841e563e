"""Objective fusion-quality metrics: gradient preservation, normalized mutual
information, nonlinear correlation entropy, and a PSNR helper."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError
from .image import as_gray

# Edge-preservation sigmoid constants of the gradient metric (strength and
# orientation branches), from that metric's literature.
GAMMA_G, KAPPA_G, SIGMA_G = 0.9994, -15.0, 0.5
GAMMA_A, KAPPA_A, SIGMA_A = 0.9879, -22.0, 0.8

PSNR_CAP_DB = 99.0

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


@dataclass
class MetricsReport:
    q_g: float
    q_nmi: float
    ncie: float
    psnr_vs_gt: float = None

    def csv_row(self, name):
        row = f"{name},{self.q_g:.6f},{self.q_nmi:.6f},{self.ncie:.6f}"
        if self.psnr_vs_gt is not None:
            row += f",{self.psnr_vs_gt:.4f}"
        return row


def _check_shapes(*images):
    arrs = [as_gray(im, f"image {i}") for i, im in enumerate(images)]
    shape = arrs[0].shape
    for i, a in enumerate(arrs):
        if a.shape != shape:
            raise InputError(f"image {i} has shape {a.shape}, expected {shape}")
    return arrs


def _sobel(img):
    gx = ndimage.correlate(img, _SOBEL_X, mode="reflect")
    gy = ndimage.correlate(img, _SOBEL_Y, mode="reflect")
    g = np.hypot(gx, gy)
    safe = np.where(gx == 0, 1.0, gx)
    alpha = np.where(gx == 0, np.sign(gy) * (np.pi / 2), np.arctan(gy / safe))
    return g, alpha


def _edge_preservation(g_src, a_src, g_fus, a_fus):
    """Per-pixel preservation of one source's edges in the fused image."""
    safe_src = np.where(g_src == 0, 1.0, g_src)
    safe_fus = np.where(g_fus == 0, 1.0, g_fus)
    rel = np.where(
        g_src > g_fus,
        g_fus / safe_src,
        np.where(g_fus > 0, g_src / safe_fus, 0.0),
    )
    ang = 1.0 - np.abs(a_src - a_fus) * (2.0 / np.pi)
    q_strength = GAMMA_G / (1.0 + np.exp(KAPPA_G * (rel - SIGMA_G)))
    q_orient = GAMMA_A / (1.0 + np.exp(KAPPA_A * (ang - SIGMA_A)))
    return q_strength * q_orient


def q_g(img1, img2, fused):
    """Gradient-based fusion metric: edge strength and orientation transfer.

    Sobel gradients give per-pixel edge strength and orientation; each
    source's preservation in the fused image is the product of the strength
    and orientation sigmoid terms, averaged with the source gradient
    magnitudes as weights. Returns 0 when neither source has any edges.
    """
    a, b, f = _check_shapes(img1, img2, fused)
    g1, al1 = _sobel(a)
    g2, al2 = _sobel(b)
    gf, alf = _sobel(f)
    q1 = _edge_preservation(g1, al1, gf, alf)
    q2 = _edge_preservation(g2, al2, gf, alf)
    denom = float((g1 + g2).sum())
    if denom == 0.0:
        return 0.0
    return float((q1 * g1 + q2 * g2).sum() / denom)


def _quantize(img):
    return np.rint(np.clip(img, 0.0, 255.0)).astype(np.int64)


def _joint_counts(a, b):
    return np.bincount((a * 256 + b).ravel(), minlength=256 * 256).reshape(256, 256)


def _entropy(p, base):
    nz = p[p > 0]
    return float(-(nz * (np.log(nz) / np.log(base))).sum())


def _mutual_information(a, b):
    joint = _joint_counts(a, b) / a.size
    h_a = _entropy(joint.sum(axis=1), 2.0)
    h_b = _entropy(joint.sum(axis=0), 2.0)
    h_ab = _entropy(joint, 2.0)
    return h_a + h_b - h_ab, h_a, h_b


def q_nmi(img1, img2, fused):
    """Normalized mutual information between each source and the fusion.

    2 * [MI(I1,F)/(H(I1)+H(F)) + MI(I2,F)/(H(I2)+H(F))] from 256-bin
    histograms of the 8-bit-quantized images; a term with zero total entropy
    contributes 0.
    """
    a, b, f = (_quantize(x) for x in _check_shapes(img1, img2, fused))
    total = 0.0
    for src in (a, b):
        mi, h_src, h_f = _mutual_information(src, f)
        denom = h_src + h_f
        if denom > 0:
            total += mi / denom
    return 2.0 * total


def _rank_bins(primary, secondary):
    """Equal-count 256-bin indices by rank of primary, ties broken by secondary.

    Samples equal in both coordinates are exchangeable, which makes the
    binning invariant to pixel order.
    """
    n = primary.size
    order = np.lexsort((secondary, primary))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    return ranks * 256 // n


def nonlinear_correlation(x, y):
    """Nonlinear correlation coefficient from the rank-equalized joint histogram.

    Both marginals are spread over 256 equal-count bins, so the coefficient
    is the (base-256) marginal entropies minus the joint entropy; identical
    inputs give 1 whenever 256 divides the sample count.
    """
    xa, ya = _check_shapes(x, y)
    xf, yf = xa.ravel(), ya.ravel()
    bx = _rank_bins(xf, yf)
    by = _rank_bins(yf, xf)
    joint = _joint_counts(bx, by) / xf.size
    h_x = _entropy(joint.sum(axis=1), 256.0)
    h_y = _entropy(joint.sum(axis=0), 256.0)
    h_xy = _entropy(joint, 256.0)
    return h_x + h_y - h_xy


def ncie_from_correlation(r):
    """Entropy summary of a nonlinear correlation matrix.

    1 + sum_k (lam_k / K) log_256 (lam_k / K) over the eigenvalues of the
    symmetric K x K matrix; zero (or slightly negative) eigenvalues
    contribute nothing.
    """
    mat = np.asarray(r, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InputError(f"correlation matrix must be square, got {mat.shape}")
    k = mat.shape[0]
    lam = np.clip(np.linalg.eigvalsh(mat), 0.0, None)
    frac = lam / k
    nz = frac[frac > 0]
    return float(1.0 + (nz * (np.log(nz) / np.log(256.0))).sum())


def ncie(images, fused):
    """Nonlinear correlation information entropy of the sources and the fusion."""
    variables = _check_shapes(*images, fused)
    k = len(variables)
    if k < 2:
        raise InputError("ncie needs at least one source plus the fused image")
    r = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            r[i, j] = r[j, i] = nonlinear_correlation(variables[i], variables[j])
    return ncie_from_correlation(r)


def psnr(a, b):
    """Peak signal-to-noise ratio in dB against the 255 peak; capped at 99 dB."""
    x, y = _check_shapes(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(255.0 * 255.0 / mse), PSNR_CAP_DB)


def evaluate_fusion(img1, img2, fused, ground_truth=None):
    """All three fusion metrics for one instance, plus PSNR when truth is given."""
    report = MetricsReport(
        q_g=q_g(img1, img2, fused),
        q_nmi=q_nmi(img1, img2, fused),
        ncie=ncie([img1, img2], fused),
    )
    if ground_truth is not None:
        report.psnr_vs_gt = psnr(fused, ground_truth)
    return report


CSV_HEADER = "name,q_g,q_nmi,ncie"


def format_table(rows):
    """Human-readable metric table: one row per named instance."""
    lines = [f"{'name':<20} {'q_g':>8} {'q_nmi':>8} {'ncie':>8}"]
    for name, report in rows:
        lines.append(
            f"{name:<20} {report.q_g:>8.4f} {report.q_nmi:>8.4f} {report.ncie:>8.4f}"
        )
    return "\n".join(lines)
