"""Infrared/visible encoders, gradient residual dense blocks, and the
image decoder producing the reference and final fused images."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor

LEAKY_SLOPE = 0.2

# Fixed horizontal/vertical Sobel filters (never trained).
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass
class BackboneConfig:
    """Desk-scale defaults: 16 channels per modality, decoder 32->...->1.
    The full-scale variant uses 256 -> 128 -> 64 -> 32 -> 16 -> 1."""

    enc_channels: int = 16
    grdb_blocks: int = 1
    decoder_schedule: tuple = (32, 16, 8, 4, 2, 1)
    seed: int = 7

    def __post_init__(self):
        sched = self.decoder_schedule
        if sched[-1] != 1:
            raise ValueError("decoder schedule must end in 1")
        for a, b in zip(sched[:-2], sched[1:-1]):
            if b * 2 != a:
                raise ValueError("decoder schedule must halve until the last step")


def sobel_filters(channels: int) -> Tensor:
    """Depthwise Sobel as a fixed (2C, C, 3, 3) conv weight: per input
    channel one horizontal and one vertical response channel."""
    w = np.zeros((2 * channels, channels, 3, 3))
    for c in range(channels):
        w[2 * c, c] = SOBEL_X
        w[2 * c + 1, c] = SOBEL_Y
    return Tensor(w)


class GRDBlock(Module):
    """Dense conv chain plus a fixed Sobel gradient branch, residual add:
    out = x + conv_fuse(concat(dense_chain(x), sobel(x)))."""

    def __init__(self, channels, rng):
        growth = channels // 2
        self.dense1 = Conv2d(channels, growth, 3, rng)
        self.dense2 = Conv2d(channels + growth, growth, 3, rng)
        self.sobel_w = sobel_filters(channels)
        self.fuse = Conv2d(channels + 2 * growth + 2 * channels, channels, 1, rng)

    def __call__(self, x):
        d1 = self.dense1(x).leaky_relu(LEAKY_SLOPE)
        d2 = self.dense2(T.concat([x, d1], axis=0)).leaky_relu(LEAKY_SLOPE)
        grad = T.conv2d(x, self.sobel_w, padding=1)
        return x + self.fuse(T.concat([x, d1, d2, grad], axis=0))


class Encoder(Module):
    """Modality encoder: stem conv then GRDB blocks, stride 1 throughout."""

    def __init__(self, in_channels, config: BackboneConfig, rng):
        self.in_channels = in_channels
        self.stem = Conv2d(in_channels, config.enc_channels, 3, rng)
        self.blocks = [GRDBlock(config.enc_channels, rng)
                       for _ in range(config.grdb_blocks)]

    def __call__(self, image: Tensor) -> Tensor:
        if image.ndim != 3 or image.shape[0] != self.in_channels:
            raise ShapeError(
                f"encoder expects {self.in_channels}xHxW, got {image.shape}"
            )
        f = self.stem(image).leaky_relu(LEAKY_SLOPE)
        for block in self.blocks:
            f = block(f)
        return f


def reference_features(f_ir: Tensor, f_vis: Tensor) -> Tensor:
    """Channel concatenation, infrared first."""
    if f_ir.shape[1:] != f_vis.shape[1:]:
        raise ShapeError("reference_features spatial dims differ")
    return T.concat([f_ir, f_vis], axis=0)


class Decoder(Module):
    """ConvLeakyRelu chain following the halving channel schedule; the last
    layer uses tanh rescaled to (t+1)/2 so outputs land in [0,1]."""

    def __init__(self, config: BackboneConfig, rng):
        sched = config.decoder_schedule
        self.in_channels = sched[0]
        self.convs = [Conv2d(a, b, 3, rng) for a, b in zip(sched[:-1], sched[1:])]

    def __call__(self, f: Tensor) -> Tensor:
        if f.shape[0] != self.in_channels:
            raise ShapeError(
                f"decoder expects {self.in_channels} channels, got {f.shape[0]}"
            )
        for conv in self.convs[:-1]:
            f = conv(f).leaky_relu(LEAKY_SLOPE)
        return (self.convs[-1](f).tanh() + 1.0) * 0.5


def luminance(vis: Tensor) -> Tensor:
    """BT.601 luma of a 3xHxW visible image, as a 1xHxW map."""
    if vis.ndim != 3 or vis.shape[0] != 3:
        raise ShapeError("luminance expects 3xHxW")
    y = vis[0:1] * 0.299 + vis[1:2] * 0.587 + vis[2:3] * 0.114
    return y
