"""Geometry-refined encoder: box embedding, GSR attention, gated refinement, FF."""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .attention import add_norm, feed_forward, gate, key_mask, linear, multi_head
from .autodiff import Tensor
from .config import ModelConfig
from .regions import RegionBatch, RegionSet, validate_geometry


def embed_geometry(geometry_raw, W_geo: Tensor, b_geo: Tensor,
                   mask: Optional[np.ndarray] = None) -> Tensor:
    """X_G = relu(X_g W_geo + b_geo) for ``[N, 5]`` or ``[B, N, 5]`` geometry."""
    g = geometry_raw.data if isinstance(geometry_raw, Tensor) else np.asarray(geometry_raw, dtype=np.float64)
    rows = g.reshape(-1, 5)
    if mask is not None:
        rows = rows[np.asarray(mask, dtype=bool).reshape(-1)]
    validate_geometry(rows)
    X_g = geometry_raw if isinstance(geometry_raw, Tensor) else Tensor(g)
    return ad.relu(linear(X_g, W_geo, b_geo))


def gsr_attention(X_A: Tensor, X_G: Optional[Tensor], params: dict, prefix: str,
                  cfg: ModelConfig, mask: Optional[np.ndarray] = None,
                  weights_out: Optional[list] = None) -> Tensor:
    """Multi-head self-attention whose queries/keys also carry embedded geometry.

    ``mode_geometry`` "off" (or ``X_G`` None) gives plain self-attention.
    """
    mode = cfg.mode_geometry if X_G is not None else "off"
    return multi_head(X_A, X_A, params, prefix, cfg.h, names=("W_QA", "W_KA", "W_VA"),
                      q_geo=X_G, k_geo=X_G, mode=mode, mask=key_mask(mask),
                      weights_out=weights_out)


def glu_refine(attn_out: Tensor, X_A: Tensor, X_G: Optional[Tensor], params: dict,
               prefix: str) -> Tensor:
    # context is [X_A; X_G], so W_g is 2 d_m x d_m (X_A alone when geometry is off)
    context = X_A if X_G is None else ad.concat_last_dim(X_A, X_G)
    return gate(context, attn_out, params, prefix)


def encoder_layer(X_A: Tensor, X_G: Optional[Tensor], params: dict, prefix: str,
                  cfg: ModelConfig, mask: Optional[np.ndarray] = None,
                  rng: Optional[np.random.Generator] = None,
                  weights_out: Optional[list] = None) -> Tensor:
    a = gsr_attention(X_A, X_G, params, prefix, cfg, mask, weights_out)
    if cfg.glu_enc:
        a = glu_refine(a, X_A, X_G, params, f"{prefix}.glu")
    Z = add_norm(X_A, ad.dropout(a, cfg.dropout_attn, rng), params, f"{prefix}.ln1")
    ff = feed_forward(Z, params, f"{prefix}.ff")
    return add_norm(Z, ad.dropout(ff, cfg.dropout_attn, rng), params, f"{prefix}.ln2")


def encode(regions: Union[RegionSet, RegionBatch], params: dict, cfg: ModelConfig,
           rng: Optional[np.random.Generator] = None,
           weights_out: Optional[list] = None) -> Tensor:
    """Refined region features X^r: ``[N, d_m]`` for a RegionSet, ``[B, N, d_m]`` for a batch.

    Geometry is embedded once and shared by every layer.
    """
    if isinstance(regions, RegionSet):
        appearance, geometry, mask = regions.appearance, regions.geometry, None
    else:
        appearance, geometry, mask = regions.appearance, regions.geometry, regions.mask
    X = linear(Tensor(appearance), params["enc.in_proj.W"], params["enc.in_proj.b"])
    X_G = None
    if cfg.mode_geometry != "off":
        X_G = embed_geometry(geometry, params["enc.geo.W"], params["enc.geo.b"], mask)
    for layer in range(cfg.L_enc):
        X = encoder_layer(X, X_G, params, f"enc.layer{layer}", cfg, mask, rng, weights_out)
    return X
