"""End-to-end CtrlFuse model: encoders -> reference fusion -> prompt
encoders -> frozen segmentation backend -> prompt-semantic fusion ->
final decode, with the ablation switches rewiring the graph."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .backbone import (BackboneConfig, Decoder, Encoder, luminance,
                       reference_features)
from .backend import SegmentationBackend, combine_masks
from .losses import FrozenPerceptualNet, total_loss
from .nn import Module, checksum
from .psfm import FusionComposer, PromptSemanticFusion
from .rpe import NUM_QUERIES, FrozenPromptProjection, ReferencePromptEncoder
from .tensor import ShapeError, Tensor


@dataclass
class AblationFlags:
    no_prompt: bool = False
    no_seg: bool = False
    no_vis: bool = False
    no_ir: bool = False
    exchange_sq: bool = False

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ("no_prompt", "no_seg", "no_vis", "no_ir", "exchange_sq")}

    @classmethod
    def from_names(cls, names):
        flags = cls()
        for name in names:
            if not hasattr(flags, name):
                raise ValueError(f"unknown ablation flag {name!r}")
            setattr(flags, name, True)
        return flags


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    d_backend: int = 32
    n_queries: int = NUM_QUERIES
    seed: int = 7
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def as_dict(self):
        return {
            "enc_channels": self.backbone.enc_channels,
            "grdb_blocks": self.backbone.grdb_blocks,
            "decoder_schedule": list(self.backbone.decoder_schedule),
            "d_backend": self.d_backend,
            "n_queries": self.n_queries,
            "seed": self.seed,
            "ablation": self.ablation.as_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        bb = BackboneConfig(
            enc_channels=d["enc_channels"], grdb_blocks=d["grdb_blocks"],
            decoder_schedule=tuple(d["decoder_schedule"]), seed=d["seed"],
        )
        return cls(backbone=bb, d_backend=d["d_backend"],
                   n_queries=d["n_queries"], seed=d["seed"],
                   ablation=AblationFlags(**d.get("ablation", {})))


@dataclass
class FusionOutputs:
    i_ref: Tensor
    i_fused: Tensor
    m_ir: Tensor | None
    m_vis: Tensor | None
    i_seg: Tensor | None
    f_ref: Tensor
    f_final: Tensor


class CtrlFuse(Module):
    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        cfg = self.config
        c = cfg.backbone.enc_channels
        rng = np.random.default_rng(cfg.seed)
        self.enc_ir = Encoder(1, cfg.backbone, rng)
        self.enc_vis = Encoder(3, cfg.backbone, rng)
        self.decoder = Decoder(cfg.backbone, rng)
        prompt_proj = FrozenPromptProjection(c, cfg.d_backend,
                                             np.random.default_rng(cfg.seed + 1))
        self.rpe_ir = ReferencePromptEncoder(c, prompt_proj, rng, cfg.n_queries)
        self.rpe_vis = ReferencePromptEncoder(c, prompt_proj, rng, cfg.n_queries)
        self.backend = SegmentationBackend(cfg.d_backend)
        self.psfm_ir = PromptSemanticFusion(c, cfg.d_backend, rng)
        self.psfm_vis = PromptSemanticFusion(c, cfg.d_backend, rng)
        self.composer = FusionComposer(c, 2 * c, rng)
        self.percep_net = FrozenPerceptualNet()

    # frozen components whose weights must never move during training
    def frozen_checksum(self) -> float:
        return (self.backend.checksum()
                + self.percep_net.checksum()
                + checksum(self.rpe_ir.prompt_projection.named_params()))

    def forward(self, ir: Tensor, vis: Tensor, prompt_mask: Tensor | None,
                alpha: float = 1.0) -> FusionOutputs:
        """Full pipeline for one image pair. A missing prompt mask means
        the prompt-free path: the reference fusion is the output."""
        if ir.ndim != 3 or ir.shape[0] != 1:
            raise ShapeError("ir image must be 1xHxW")
        if vis.ndim != 3 or vis.shape[0] != 3:
            raise ShapeError("vis image must be 3xHxW")
        if ir.shape[1:] != vis.shape[1:]:
            raise ShapeError("ir and vis images must share H, W")
        flags = self.config.ablation
        f_ir = self.enc_ir(ir)
        f_vis = self.enc_vis(vis)
        f_ref = reference_features(f_ir, f_vis)
        i_ref = self.decoder(f_ref)

        if flags.no_prompt or prompt_mask is None:
            return FusionOutputs(i_ref=i_ref, i_fused=i_ref, m_ir=None,
                                 m_vis=None, i_seg=None, f_ref=f_ref,
                                 f_final=f_ref)

        use_ir = not flags.no_ir
        use_vis = not flags.no_vis
        p_ir = self.rpe_ir(prompt_mask, f_ir, f_ref,
                           exchange_sq=flags.exchange_sq) if use_ir else None
        p_vis = self.rpe_vis(prompt_mask, f_vis, f_ref,
                             exchange_sq=flags.exchange_sq) if use_vis else None

        m_ir = m_vis = i_seg = None
        ones = None
        if flags.no_seg:
            # mask decoder removed: prompt features go ungated
            ones = Tensor(np.ones(ir.shape[1:]))
        else:
            emb = self.backend.encode(i_ref)
            if p_ir is not None:
                m_ir = self.backend.mask_decode(emb, p_ir)
            if p_vis is not None:
                m_vis = self.backend.mask_decode(emb, p_vis)
            if m_ir is not None and m_vis is not None:
                i_seg = combine_masks(m_ir, m_vis)
            else:
                i_seg = m_ir if m_ir is not None else m_vis

        fp_ir = fp_vis = None
        if p_ir is not None:
            fp_ir = self.psfm_ir(f_ir, p_ir, ones if flags.no_seg else m_ir)
        if p_vis is not None:
            fp_vis = self.psfm_vis(f_vis, p_vis, ones if flags.no_seg else m_vis)

        f_final = self.composer(f_ref, fp_ir, fp_vis, alpha=alpha)
        i_fused = self.decoder(f_final) if alpha != 0.0 else i_ref
        return FusionOutputs(i_ref=i_ref, i_fused=i_fused, m_ir=m_ir,
                             m_vis=m_vis, i_seg=i_seg, f_ref=f_ref,
                             f_final=f_final)

    __call__ = forward

    def loss(self, ir: Tensor, vis: Tensor, prompt_mask: Tensor,
             seg_target: Tensor):
        """Training objective for one sample (alpha fixed at 1)."""
        flags = self.config.ablation
        out = self.forward(ir, vis, prompt_mask, alpha=1.0)
        vis_y = luminance(vis)
        include_seg = not (flags.no_seg or flags.no_prompt)
        branch_masks = [m for m in (out.m_ir, out.m_vis) if m is not None]
        if out.i_seg is not None:
            i_seg = out.i_seg
        else:
            # no mask decoding in this configuration: supervise the pixel
            # loss split with the ground-truth prompt region instead
            i_seg = seg_target
        return total_loss(out.i_fused, ir, vis_y, i_seg, branch_masks,
                          seg_target, self.percep_net,
                          include_seg=include_seg)
