"""Training objectives: total = fusion (pixel + grad + int + percep)
plus segmentation (bce + dice), all with unit weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import LEAKY_SLOPE
from .nn import Conv2d, Module, checksum
from .tensor import ShapeError, Tensor

PERCEPTUAL_SEED = 31337
GRAD_EPS = 1e-12
BCE_CLIP = 1e-7

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


@dataclass
class LossBreakdown:
    pixel: float = 0.0
    grad: float = 0.0
    int: float = 0.0
    percep: float = 0.0
    bce: float = 0.0
    dice: float = 0.0

    @property
    def fusion_total(self):
        return self.pixel + self.grad + self.int + self.percep

    @property
    def seg_total(self):
        return self.bce + self.dice

    @property
    def total(self):
        return self.fusion_total + self.seg_total

    def as_dict(self):
        return {
            "pixel": self.pixel, "grad": self.grad, "int": self.int,
            "percep": self.percep, "bce": self.bce, "dice": self.dice,
            "fusion_total": self.fusion_total, "seg_total": self.seg_total,
            "total": self.total,
        }


def _check_image(*imgs):
    shape = imgs[0].shape
    for im in imgs:
        if im.ndim != 3 or im.shape[0] != 1 or im.shape != shape:
            raise ShapeError("loss inputs must be aligned 1xHxW images")


def _replicate_pad1(img: Tensor) -> Tensor:
    """Edge-replication pad of one pixel on each spatial side, built from
    slicing and concat so gradients flow. Keeps constant images constant,
    so their gradient magnitude is exactly the eps floor everywhere."""
    top = img[:, 0:1, :]
    bot = img[:, -1:, :]
    rows = T.concat([top, img, bot], axis=1)
    left = rows[:, :, 0:1]
    right = rows[:, :, -1:]
    return T.concat([left, rows, right], axis=2)


def sobel_magnitude(img: Tensor) -> Tensor:
    """sqrt(gx^2 + gy^2 + eps) with 3x3 Sobel filters over an
    edge-replicated border (a flat image has zero response everywhere)."""
    w = Tensor(np.stack([_SOBEL_X[None], _SOBEL_X.T[None]], axis=0))
    g = T.conv2d(_replicate_pad1(img), w, padding=0)
    gx, gy = g[0:1], g[1:2]
    return (gx * gx + gy * gy + GRAD_EPS).sqrt()


def pixel_loss(i_f: Tensor, i_ir: Tensor, i_vis_y: Tensor,
               i_seg: Tensor) -> Tensor:
    """L1 to max(sources) inside the segmented region, L1 to the source
    mean outside, each normalized by H*W."""
    _check_image(i_f, i_ir, i_vis_y)
    h, w = i_f.shape[1:]
    if i_seg.shape != (h, w):
        raise ShapeError("segmentation map must be HxW")
    seg = i_seg.reshape(1, h, w)
    target_obj = T.maximum(i_vis_y, i_ir)
    target_bg = (i_vis_y + i_ir) * 0.5
    n = 1.0 / (h * w)
    obj = (seg * (i_f - target_obj)).abs().sum() * n
    bg = ((1.0 - seg) * (i_f - target_bg)).abs().sum() * n
    return obj + bg


def grad_loss(i_f: Tensor, i_ir: Tensor, i_vis_y: Tensor) -> Tensor:
    _check_image(i_f, i_ir, i_vis_y)
    h, w = i_f.shape[1:]
    gm = T.maximum(sobel_magnitude(i_vis_y), sobel_magnitude(i_ir))
    return (sobel_magnitude(i_f) - gm).abs().sum() * (1.0 / (h * w))


def int_loss(i_f: Tensor, i_ir: Tensor, i_vis_y: Tensor) -> Tensor:
    _check_image(i_f, i_ir, i_vis_y)
    h, w = i_f.shape[1:]
    return (i_f - T.maximum(i_ir, i_vis_y)).abs().sum() * (1.0 / (h * w))


class FrozenPerceptualNet(Module):
    """Four seeded random conv stages (conv + leaky relu + x2 avg pool)
    standing in for a pretrained feature pyramid. Never trained."""

    def __init__(self, seed=PERCEPTUAL_SEED, channels=(4, 8, 16, 32)):
        rng = np.random.default_rng(seed)
        chans = (1,) + tuple(channels)
        self.stages = [Conv2d(a, b, 3, rng, trainable=False)
                       for a, b in zip(chans[:-1], chans[1:])]

    def features(self, img: Tensor):
        feats = []
        f = img
        for conv in self.stages:
            f = T.avg_pool2d(conv(f).leaky_relu(LEAKY_SLOPE), 2)
            feats.append(f)
        return feats

    def checksum(self):
        return checksum(self.named_params())


def perceptual_loss(i_f: Tensor, i_ir: Tensor, i_vis_y: Tensor,
                    net: FrozenPerceptualNet) -> Tensor:
    """Per-stage mean squared feature distance to each source, summed."""
    _check_image(i_f, i_ir, i_vis_y)
    ff = net.features(i_f)
    total = None
    for other in (i_ir, i_vis_y):
        for a, b in zip(ff, net.features(other)):
            d = a - b
            term = (d * d).sum() * (1.0 / a.size)
            total = term if total is None else total + term
    return total


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError("bce pred/target shapes differ")
    p = pred.clamp(BCE_CLIP, 1.0 - BCE_CLIP)
    ll = target * p.log() + (1.0 - target) * (1.0 - p).log()
    return -ll.sum() * (1.0 / pred.size)


def dice_loss(pred: Tensor, target: Tensor) -> Tensor:
    """1 - 2*sum(pred*target) / (sum(pred^2) + sum(target^2)); the squared-
    denominator form. Both masks empty counts as a perfect match."""
    if pred.shape != target.shape:
        raise ShapeError("dice pred/target shapes differ")
    denom = (pred * pred).sum() + (target * target).sum()
    if denom.item() == 0.0:
        return Tensor(0.0)
    return 1.0 - (pred * target).sum() * 2.0 / denom


def total_loss(i_f: Tensor, i_ir: Tensor, i_vis_y: Tensor, i_seg: Tensor,
               branch_masks, seg_target: Tensor,
               percep_net: FrozenPerceptualNet,
               include_seg: bool = True):
    """Assemble the full objective. branch_masks is the list of predicted
    masks supervised against the prompt ground truth (averaged over
    branches). Returns (scalar Tensor, LossBreakdown)."""
    l_pixel = pixel_loss(i_f, i_ir, i_vis_y, i_seg)
    l_grad = grad_loss(i_f, i_ir, i_vis_y)
    l_int = int_loss(i_f, i_ir, i_vis_y)
    l_percep = perceptual_loss(i_f, i_ir, i_vis_y, percep_net)
    total = l_pixel + l_grad + l_int + l_percep
    bd = LossBreakdown(pixel=l_pixel.item(), grad=l_grad.item(),
                       int=l_int.item(), percep=l_percep.item())
    if include_seg and branch_masks:
        scale = 1.0 / len(branch_masks)
        l_bce = None
        l_dice = None
        for m in branch_masks:
            b = bce_loss(m, seg_target)
            d = dice_loss(m, seg_target)
            l_bce = b if l_bce is None else l_bce + b
            l_dice = d if l_dice is None else l_dice + d
        l_bce = l_bce * scale
        l_dice = l_dice * scale
        total = total + l_bce + l_dice
        bd.bce = l_bce.item()
        bd.dice = l_dice.item()
    return total, bd
