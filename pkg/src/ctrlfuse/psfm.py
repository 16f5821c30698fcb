"""Prompt-semantic fusion: inject prompt tokens into modality features via
cross attention on a downsampled grid, gate by the predicted mask, and
compose the final fusion features under the intensity control alpha."""

from __future__ import annotations

from . import tensor as T
from .nn import AttentionLayer, Conv2d, Module
from .tensor import ShapeError, Tensor


class PromptSemanticFusion(Module):
    def __init__(self, channels, d_prompt, rng):
        self.channels = channels
        self.attn = AttentionLayer(channels, d_prompt, rng)

    def __call__(self, f: Tensor, prompt_tokens: Tensor, mask: Tensor) -> Tensor:
        """F_seq = Flatten(Down(f)); attend F_seq over the prompt tokens;
        view + upsample back; gate elementwise by the (soft) mask."""
        if f.ndim != 3 or f.shape[0] != self.channels:
            raise ShapeError(f"expected {self.channels}xHxW features")
        c, h, w = f.shape
        if mask.shape != (h, w):
            raise ShapeError("mask must match the feature spatial dims")
        down = T.downsample_avg2(f)
        seq = T.flatten_spatial(down)
        attended = self.attn(seq, prompt_tokens)
        up = T.upsample_nearest2(T.view_spatial(attended, h // 2, w // 2))
        gate = mask.reshape(1, h, w).broadcast_to((c, h, w))
        return up * gate


class FusionComposer(Module):
    """F_final = F_ref + alpha * (proj_ir(Fp_ir) + proj_vis(Fp_vis)).

    alpha is a pure inference control (training runs at alpha=1); at
    alpha=0 the output aliases F_ref bit-exactly."""

    def __init__(self, channels, ref_channels, rng):
        self.proj_ir = Conv2d(channels, ref_channels, 1, rng)
        self.proj_vis = Conv2d(channels, ref_channels, 1, rng)

    def __call__(self, f_ref: Tensor, fp_ir: Tensor | None,
                 fp_vis: Tensor | None, alpha: float = 1.0) -> Tensor:
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if alpha == 0.0 or (fp_ir is None and fp_vis is None):
            return f_ref
        delta = None
        if fp_ir is not None:
            delta = self.proj_ir(fp_ir)
        if fp_vis is not None:
            pv = self.proj_vis(fp_vis)
            delta = pv if delta is None else delta + pv
        if delta.shape != f_ref.shape:
            raise ShapeError("prompt delta does not match reference features")
        return f_ref + delta * alpha
