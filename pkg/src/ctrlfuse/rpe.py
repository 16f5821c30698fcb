"""Reference prompt encoder: mask-pooled target descriptor, support/query
construction, and the two cross/self-attention stages producing prompt
tokens, finished by the frozen projection into the backend token space."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import LEAKY_SLOPE
from .nn import AttentionLayer, Conv2d, Linear, Module
from .tensor import ShapeError, Tensor

NUM_QUERIES = 40  # tuned query-token count; fixed in the default config


def binarize_mask(mask: np.ndarray) -> np.ndarray:
    """Accepts [0,1] values, thresholds at 0.5 into {0,1}."""
    return (np.asarray(mask, dtype=np.float64) >= 0.5).astype(np.float64)


def target_pool(prompt_mask: Tensor, f_support: Tensor) -> Tensor:
    """Global average of the mask-gated support feature, one Cx1x1 vector."""
    if prompt_mask.ndim != 2 or prompt_mask.shape != f_support.shape[1:]:
        raise ShapeError("prompt mask must match feature spatial dims")
    gated = f_support * prompt_mask.reshape(1, *prompt_mask.shape).broadcast_to(
        f_support.shape
    )
    return T.avg_pool2d(gated, (f_support.shape[1], f_support.shape[2]))


class FrozenPromptProjection(Module):
    """Stand-in for the frozen backend prompt encoder: a seeded linear map
    from RPE channels into the backend token dim. Never trained."""

    def __init__(self, channels, d_backend, rng):
        self.proj = Linear(channels, d_backend, rng, trainable=False)

    def __call__(self, tokens):
        return self.proj(tokens)


class ReferencePromptEncoder(Module):
    def __init__(self, channels, prompt_projection, rng, n_queries=NUM_QUERIES):
        self.channels = channels
        self.queries = Tensor(rng.standard_normal((n_queries, channels)),
                              requires_grad=True)
        # F_ref carries both modalities (2C); reduce to C so support and
        # query branches are channel-symmetric (needed for exchange_sq).
        self.reduce_ref = Conv2d(2 * channels, channels, 1, rng)
        self.conv_supp = Conv2d(2 * channels, channels, 3, rng)
        self.conv_qry = Conv2d(2 * channels, channels, 3, rng)
        self.cross1 = AttentionLayer(channels, channels, rng)
        self.self1 = AttentionLayer(channels, channels, rng)
        self.cross2 = AttentionLayer(channels, channels, rng)
        self.self2 = AttentionLayer(channels, channels, rng)
        self.prompt_projection = prompt_projection

    def build_support_query(self, f_modality: Tensor, f_ref_reduced: Tensor,
                            f_t: Tensor):
        """Conv(Concat(F_modality, F_t)) and Conv(Concat(F_ref', F_t)),
        F_t broadcast over the spatial extent before concatenation."""
        if f_modality.shape[1:] != f_ref_reduced.shape[1:]:
            raise ShapeError("support/query spatial dims differ")
        spatial = f_modality.shape[1:]
        ft_map = f_t.broadcast_to((f_t.shape[0],) + spatial)
        f_supp = self.conv_supp(T.concat([f_modality, ft_map], axis=0))
        f_supp = f_supp.leaky_relu(LEAKY_SLOPE)
        f_qry = self.conv_qry(T.concat([f_ref_reduced, ft_map], axis=0))
        f_qry = f_qry.leaky_relu(LEAKY_SLOPE)
        return f_supp, f_qry

    def encode_prompt(self, f_supp: Tensor, f_qry: Tensor) -> Tensor:
        supp_seq = T.flatten_spatial(f_supp)
        qry_seq = T.flatten_spatial(f_qry)
        q1 = self.cross1(self.queries, supp_seq)
        q1 = self.self1(q1, q1)
        p = self.cross2(q1, qry_seq)
        p = self.self2(p, p)
        return self.prompt_projection(p)

    def __call__(self, prompt_mask: Tensor, f_modality: Tensor, f_ref: Tensor,
                 exchange_sq: bool = False) -> Tensor:
        """Full branch forward. exchange_sq swaps the support/query roles
        (reference features become the support)."""
        f_ref_reduced = self.reduce_ref(f_ref).leaky_relu(LEAKY_SLOPE)
        support = f_ref_reduced if exchange_sq else f_modality
        f_t = target_pool(prompt_mask, support)
        if exchange_sq:
            f_supp, f_qry = self.build_support_query(f_ref_reduced, f_modality, f_t)
        else:
            f_supp, f_qry = self.build_support_query(f_modality, f_ref_reduced, f_t)
        return self.encode_prompt(f_supp, f_qry)
