"""Frozen segmentation backend: a small deterministic stand-in for the
pretrained segmentation foundation model. Image encoder (strided convs,
/4 grid), prompt-conditioned mask decoder (two cross-attention rounds plus
a mask-token dot product), and the branch combination rule. All weights
are seeded and never trained; gradients still flow to the inputs."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import LEAKY_SLOPE
from .nn import AttentionLayer, Conv2d, Module, checksum
from .tensor import ShapeError, Tensor

BACKEND_SEED = 20240

# Logit gain after standardization of the mask-token dot products. The
# raw dot products can be arbitrarily small at init (everything upstream
# is near-zero-mean), which would pin the sigmoid at 0.5 and starve the
# mask supervision of gradient; standardizing the logits over the grid
# keeps the sigmoid responsive at every stage of training.
LOGIT_SCALE = 10.0
LOGIT_EPS = 1e-6


class SegmentationBackend(Module):
    def __init__(self, d_backend=32, seed=BACKEND_SEED):
        rng = np.random.default_rng(seed)
        self.d_backend = d_backend
        self.enc1 = Conv2d(1, d_backend // 4, 3, rng, stride=2, trainable=False)
        self.enc2 = Conv2d(d_backend // 4, d_backend // 2, 3, rng, stride=2,
                           trainable=False)
        self.enc3 = Conv2d(d_backend // 2, d_backend, 3, rng, trainable=False)
        self.rounds = [
            (AttentionLayer(d_backend, d_backend, rng, trainable=False),
             AttentionLayer(d_backend, d_backend, rng, trainable=False))
            for _ in range(2)
        ]

    def encode(self, i_ref: Tensor) -> Tensor:
        """1xHxW image -> d x H/4 x W/4 embedding grid."""
        if i_ref.ndim != 3 or i_ref.shape[0] != 1:
            raise ShapeError("backend encode expects a 1xHxW image")
        if i_ref.shape[1] % 4 or i_ref.shape[2] % 4:
            raise ShapeError("backend encode needs H, W divisible by 4")
        g = self.enc1(i_ref).leaky_relu(LEAKY_SLOPE)
        g = self.enc2(g).leaky_relu(LEAKY_SLOPE)
        return self.enc3(g).leaky_relu(LEAKY_SLOPE)

    def mask_decode(self, emb: Tensor, prompt_tokens: Tensor) -> Tensor:
        """Embedding grid + NxD prompt tokens -> HxW mask probabilities.

        Two rounds of token<->grid cross attention (residual), then the
        first token acts as the mask token: its dot product with each grid
        cell gives the logit, upsampled x4 and squashed by sigmoid."""
        if prompt_tokens.ndim != 2 or prompt_tokens.shape[1] != self.d_backend:
            raise ShapeError("prompt token dim must match the backend dim")
        d, gh, gw = emb.shape
        grid = T.flatten_spatial(emb)
        tokens = prompt_tokens
        for t2g, g2t in self.rounds:
            tokens = tokens + t2g(tokens, grid)
            grid = grid + g2t(grid, tokens)
        mask_token = tokens[0:1]  # (1, D)
        raw = (grid @ mask_token.t()) * (1.0 / np.sqrt(self.d_backend))
        centered = raw - raw.mean()
        var = (centered * centered).mean()
        logits = centered * ((var + LOGIT_EPS) ** -0.5) * LOGIT_SCALE
        logits = T.view_spatial(logits, gh, gw)
        logits = T.upsample_nearest2(T.upsample_nearest2(logits))
        return logits.sigmoid().reshape(gh * 4, gw * 4)

    def checksum(self) -> float:
        return checksum(self.named_params())


def combine_masks(m_ir: Tensor, m_vis: Tensor) -> Tensor:
    """Pixelwise max of the two branch masks."""
    if m_ir.shape != m_vis.shape:
        raise ShapeError("branch masks differ in shape")
    return T.maximum(m_ir, m_vis)
