"""Fusion quality metrics plus pixelwise IoU.

All functions take HxW float arrays in [0,1] (plain numpy, no autodiff)
and use population statistics. Block metrics tile the image with
non-overlapping 8x8 blocks (trailing partial blocks are dropped) and
uniform weights.

Two of the paper-suite metrics ship in two variants:
  qabf        gradient-based edge-transfer measure (Xydeas), the primary
  qabf_block  blockwise luminance/structure form, the appendix reading
  scd         correlation of difference images (classical), the primary
  scd_block   blockwise correlation-vs-fused form
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .tensor import ShapeError

BLOCK = 8
PSNR_CAP = 100.0
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
NABF_C = 1e-6

# Xydeas sigmoid constants (strength / orientation preservation)
QABF_TG, QABF_KG, QABF_DG = 0.9994, -15.0, 0.5
QABF_TA, QABF_KA, QABF_DA = 0.9879, -22.0, 0.8

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError("metric inputs must be equal-shape HxW images")
    return a, b


def _blocks(img, k=BLOCK):
    h, w = img.shape
    bh, bw = h // k, w // k
    if bh == 0 or bw == 0:
        raise ShapeError(f"image smaller than the {k}x{k} block size")
    return (img[:bh * k, :bw * k]
            .reshape(bh, k, bw, k).transpose(0, 2, 1, 3).reshape(-1, k, k))


def _conv2_edge(img, kernel):
    """3x3 cross-correlation with edge-replication padding, so constant
    images have zero gradient response at the borders too."""
    p = np.pad(img, 1, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(p, (3, 3))
    return np.einsum("hwij,ij->hw", win, kernel)


def _conv2_edge_mean3(img):
    """3x3 mean filter with edge replication."""
    p = np.pad(img, 1, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(p, (3, 3))
    return win.mean(axis=(2, 3))


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_val=1.0) -> float:
    m = mse(a, b)
    if m == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val * max_val / m))


def _ssim_stats(x, y, c1, c2):
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    return ((2 * mx * my + c1) * (2 * cov + c2)
            / ((mx * mx + my * my + c1) * (vx + vy + c2)))


def ssim(x, y, c1=SSIM_C1, c2=SSIM_C2) -> float:
    """Single-window SSIM from global image statistics."""
    x, y = _check_pair(x, y)
    return float(_ssim_stats(x, y, c1, c2))


def ssim_block(x, y, c1=SSIM_C1, c2=SSIM_C2, k=BLOCK) -> float:
    """Mean of per-block SSIM over the non-overlapping block grid."""
    x, y = _check_pair(x, y)
    vals = [_ssim_stats(bx, by, c1, c2)
            for bx, by in zip(_blocks(x, k), _blocks(y, k))]
    return float(np.mean(vals))


def _grad_strength_angle(img):
    gx = _conv2_edge(img, _SOBEL_X)
    gy = _conv2_edge(img, _SOBEL_Y)
    g = np.sqrt(gx * gx + gy * gy)
    ang = np.where(gx != 0, np.arctan(np.divide(gy, gx, out=np.zeros_like(gy),
                                                where=gx != 0)),
                   np.where(gy != 0, np.sign(gy) * (np.pi / 2), 0.0))
    return g, ang


def _edge_preservation(g_src, a_src, g_f, a_f):
    hi = np.maximum(g_src, g_f)
    lo = np.minimum(g_src, g_f)
    ratio = np.divide(lo, hi, out=np.zeros_like(lo), where=hi > 0)
    ang = 1.0 - np.abs(a_src - a_f) / (np.pi / 2)
    qg = QABF_TG / (1.0 + np.exp(QABF_KG * (ratio - QABF_DG)))
    qa = QABF_TA / (1.0 + np.exp(QABF_KA * (ang - QABF_DA)))
    return qg * qa


def qabf(fused, ir, vis) -> float:
    """Gradient-based edge-transfer quality (Xydeas), saliency weighted."""
    fused, ir = _check_pair(fused, ir)
    fused, vis = _check_pair(fused, vis)
    gf, af = _grad_strength_angle(fused)
    ga, aa = _grad_strength_angle(ir)
    gb, ab = _grad_strength_angle(vis)
    qa = _edge_preservation(ga, aa, gf, af)
    qb = _edge_preservation(gb, ab, gf, af)
    denom = (ga + gb).sum()
    if denom == 0.0:
        return 0.0
    return float((ga * qa + gb * qb).sum() / denom)


def _q_factor(a, b, c1=SSIM_C1, c2=SSIM_C2):
    mu_a, mu_b = a.mean(), b.mean()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    return ((2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
            * (2 * cov + c2) / (a.var() + b.var() + c2))


def qabf_block(fused, ir, vis, k=BLOCK) -> float:
    """Blockwise luminance/structure form: per block, the mean of
    Q(fused, ir) and Q(fused, vis), uniformly weighted over blocks."""
    fused, ir = _check_pair(fused, ir)
    fused, vis = _check_pair(fused, vis)
    vals = [(_q_factor(bf, bi) + _q_factor(bf, bv)) / 2.0
            for bf, bi, bv in zip(_blocks(fused, k), _blocks(ir, k),
                                  _blocks(vis, k))]
    return float(np.mean(vals))


def nabf(fused, ir, vis, k=BLOCK) -> float:
    """Blockwise noise ratio: std of the high-frequency fused residual
    over the |covariance| of the source blocks (lower is better)."""
    fused, ir = _check_pair(fused, ir)
    fused, vis = _check_pair(fused, vis)
    resid = fused - _conv2_edge_mean3(fused)
    vals = []
    for br, bi, bv in zip(_blocks(resid, k), _blocks(ir, k), _blocks(vis, k)):
        sigma_n = br.std()
        cov = ((bi - bi.mean()) * (bv - bv.mean())).mean()
        vals.append(sigma_n / (abs(cov) + NABF_C))
    return float(np.mean(vals))


def _pearson(a, b) -> float:
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def scd(fused, ir, vis) -> float:
    """r(F - VIS, IR) + r(F - IR, VIS); degenerate correlations count 0."""
    fused, ir = _check_pair(fused, ir)
    fused, vis = _check_pair(fused, vis)
    return _pearson(fused - vis, ir) + _pearson(fused - ir, vis)


def scd_block(fused, ir, vis, k=BLOCK) -> float:
    """Blockwise |rho_a + rho_b - 2| with rho_x = corr(block_x, block_f)
    and the fused self-correlation taken as 1."""
    fused, ir = _check_pair(fused, ir)
    fused, vis = _check_pair(fused, vis)
    vals = [abs(_pearson(bi, bf) + _pearson(bv, bf) - 2.0)
            for bf, bi, bv in zip(_blocks(fused, k), _blocks(ir, k),
                                  _blocks(vis, k))]
    return float(np.mean(vals))


def iou_miou(pred_labels, gt_labels, num_classes):
    """Per-class IoU over a class-id map, plus the mean over classes that
    appear in the ground truth. Classes with an empty union are skipped."""
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ShapeError("label maps differ in shape")
    per_class = {}
    present = []
    for c in range(num_classes):
        p = pred == c
        g = gt == c
        union = np.logical_or(p, g).sum()
        if union == 0:
            continue
        iou = float(np.logical_and(p, g).sum() / union)
        per_class[c] = iou
        if g.any():
            present.append(iou)
    miou = float(np.mean(present)) if present else 0.0
    return per_class, miou


METRIC_COLUMNS = ("mse", "psnr", "qabf", "nabf", "ssim", "scd")


def metric_report(fused, ir, vis) -> dict:
    """All six primary metrics for one fused image vs its sources."""
    return {
        "mse": (mse(fused, ir) + mse(fused, vis)) / 2.0,
        "psnr": (psnr(fused, ir) + psnr(fused, vis)) / 2.0,
        "qabf": qabf(fused, ir, vis),
        "nabf": nabf(fused, ir, vis),
        "ssim": (ssim(fused, ir) + ssim(fused, vis)) / 2.0,
        "scd": scd(fused, ir, vis),
    }


def reports_to_csv(rows) -> str:
    """rows: iterable of (image_id, report dict) -> UTF-8 CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(("image_id",) + METRIC_COLUMNS)
    for image_id, rep in rows:
        writer.writerow([image_id] + [repr(rep[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def aggregate_json(rows) -> str:
    """Mean of each metric over the batch, as a JSON object."""
    rows = list(rows)
    agg = {"count": len(rows), "variant": {"qabf": "xydeas", "scd": "classical"}}
    for col in METRIC_COLUMNS:
        agg[col] = (float(np.mean([rep[col] for _, rep in rows]))
                    if rows else 0.0)
    return json.dumps(agg, indent=2)
