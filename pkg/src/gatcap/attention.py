"""Multi-head attention and the shared sub-layer pieces (FF, add & norm)."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def linear(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = ad.matmul(x, W)
    return y if b is None else ad.add(y, b)


def multi_head(q_in: Tensor, kv_in: Tensor, params: dict, prefix: str, n_heads: int, *,
               names=("W_Q", "W_K", "W_V"), q_geo: Optional[Tensor] = None,
               k_geo: Optional[Tensor] = None, mode: str = "off",
               mask: Optional[np.ndarray] = None, weights_out: Optional[list] = None) -> Tensor:
    """Scaled dot-product attention repeated over ``n_heads``, concatenated and projected.

    With ``mode`` "concat" the geometry projections are appended to the
    per-head queries/keys and logits are scaled by sqrt(2 d_k); with "add"
    they are summed in and the scale stays sqrt(d_k). Values never see
    geometry. ``mask`` is broadcast against the ``[.., Nq, Nk]`` logits.
    """
    nq, nk, nv = names
    outs = []
    for k in range(n_heads):
        hp = f"{prefix}.head{k}"
        q = ad.matmul(q_in, params[f"{hp}.{nq}"])
        key = ad.matmul(kv_in, params[f"{hp}.{nk}"])
        v = ad.matmul(kv_in, params[f"{hp}.{nv}"])
        d_k = q.shape[-1]
        temp = math.sqrt(d_k)
        if mode == "concat":
            q = ad.concat_last_dim(q, ad.matmul(q_geo, params[f"{hp}.W_QG"]))
            key = ad.concat_last_dim(key, ad.matmul(k_geo, params[f"{hp}.W_KG"]))
            temp = math.sqrt(2 * d_k)
        elif mode == "add":
            q = ad.add(q, ad.matmul(q_geo, params[f"{hp}.W_QG"]))
            key = ad.add(key, ad.matmul(k_geo, params[f"{hp}.W_KG"]))
        logits = ad.scale(ad.matmul(q, ad.transpose_last(key)), 1.0 / temp)
        w = ad.softmax(logits, mask)
        if weights_out is not None:
            weights_out.append(w.data)
        outs.append(ad.matmul(w, v))
    cat = outs[0]
    for o in outs[1:]:
        cat = ad.concat_last_dim(cat, o)
    return ad.matmul(cat, params[f"{prefix}.W_O"])


def feed_forward(x: Tensor, params: dict, prefix: str) -> Tensor:
    hidden = ad.relu(linear(x, params[f"{prefix}.W_1"], params[f"{prefix}.b_1"]))
    return linear(hidden, params[f"{prefix}.W_2"], params[f"{prefix}.b_2"])


def add_norm(x: Tensor, sub: Tensor, params: dict, prefix: str) -> Tensor:
    return ad.layer_norm(ad.add(x, sub), params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def gate(context: Tensor, attended: Tensor, params: dict, prefix: str) -> Tensor:
    """Sigmoid gate from ``context`` applied to a linear map of ``attended``."""
    g = ad.sigmoid(linear(context, params[f"{prefix}.W_g"], params[f"{prefix}.b_g"]))
    return ad.hadamard(g, linear(attended, params[f"{prefix}.W_i"], params[f"{prefix}.b_i"]))


def key_mask(mask: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Region mask ``[B, N]`` (or ``[N]``) reshaped to broadcast over query rows."""
    if mask is None:
        return None
    return np.asarray(mask, dtype=bool)[..., None, :]


def causal_mask(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool))
