"""Position-aware decoder: position-LSTM, cross-attention stack, word distribution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .attention import add_norm, causal_mask, feed_forward, gate, key_mask, linear, multi_head
from .autodiff import Tensor
from .config import ModelConfig


@dataclass
class DecoderState:
    """LSTM memory for one or more sequences (rows of ``h``/``c``)."""

    h: Tensor
    c: Tensor
    t: int = 0
    prefix: tuple = field(default_factory=tuple)

    @classmethod
    def initial(cls, d_h: int, rows: Optional[int] = None) -> "DecoderState":
        shape = (d_h,) if rows is None else (rows, d_h)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: dict, prefix: str = "dec.lstm"):
    """One LSTM update; gates packed as (input, forget, candidate, output)."""
    d_h = h.shape[-1]
    z = ad.add(ad.add(ad.matmul(x, params[f"{prefix}.W_x"]), ad.matmul(h, params[f"{prefix}.W_h"])),
               params[f"{prefix}.b"])
    i = ad.sigmoid(ad.slice_last(z, 0, d_h))
    f = ad.sigmoid(ad.slice_last(z, d_h, 2 * d_h))
    g = ad.tanh(ad.slice_last(z, 2 * d_h, 3 * d_h))
    o = ad.sigmoid(ad.slice_last(z, 3 * d_h, 4 * d_h))
    c_new = ad.add(ad.hadamard(f, c), ad.hadamard(i, g))
    h_new = ad.hadamard(o, ad.tanh(c_new))
    return h_new, c_new


def lstm_step(x_t: Tensor, state: DecoderState, params: dict,
              token: Optional[int] = None) -> DecoderState:
    """Advance ``state`` by one step on input ``x_t = [w_t; v_bar]``."""
    single = x_t.ndim == 1
    x, h, c = x_t, state.h, state.c
    if single:
        x, h, c = ad.reshape(x, (1, -1)), ad.reshape(h, (1, -1)), ad.reshape(c, (1, -1))
    h, c = lstm_cell(x, h, c, params)
    if single:
        h, c = ad.reshape(h, (-1,)), ad.reshape(c, (-1,))
    prefix = state.prefix + ((token,) if token is not None else ())
    return DecoderState(h, c, state.t + 1, prefix)


def positional_encoding(T: int, d: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def decoder_layers(query: Tensor, X_r: Tensor, params: dict, cfg: ModelConfig,
                   region_mask: Optional[np.ndarray] = None,
                   rng: Optional[np.random.Generator] = None,
                   weights_out: Optional[list] = None) -> Tensor:
    """Run the decoder stack on query rows ``[.., T, d_m]`` against memory X^r.

    Layer 1 takes the supplied queries, later layers take the previous output;
    keys and values always come from X^r. The optional masked self-attention
    sub-layer is causal over the ``T`` axis.
    """
    x = query
    mem_mask = key_mask(region_mask)
    for layer in range(cfg.L_dec):
        p = f"dec.layer{layer}"
        if cfg.use_dec_self_attn:
            T = x.shape[-2]
            s = multi_head(x, x, params, f"{p}.self", cfg.h, mask=causal_mask(T))
            x = add_norm(x, ad.dropout(s, cfg.dropout_attn, rng), params, f"{p}.ln0")
        a = multi_head(x, X_r, params, f"{p}.cross", cfg.h, mask=mem_mask, weights_out=weights_out)
        if cfg.glu_dec:
            # decoder-side context: the layer's query input next to what it attended
            a = gate(ad.concat_last_dim(x, a), a, params, f"{p}.glu")
        x = add_norm(x, ad.dropout(a, cfg.dropout_attn, rng), params, f"{p}.ln1")
        ff = feed_forward(x, params, f"{p}.ff")
        x = add_norm(x, ad.dropout(ff, cfg.dropout_attn, rng), params, f"{p}.ln2")
    return x


def project_query(h_t: Tensor, params: dict) -> Tensor:
    return linear(h_t, params["dec.query_proj.W"], params["dec.query_proj.b"])


def decoder_step(h_t: Tensor, X_r: Tensor, params: dict, cfg: ModelConfig,
                 region_mask: Optional[np.ndarray] = None) -> Tensor:
    """F_t for a position encoding ``h_t`` (``[d_h]`` -> ``[d_m]``, ``[B, d_h]`` -> ``[B, d_m]``)."""
    batched = h_t.ndim == 2
    q = project_query(h_t if batched else ad.reshape(h_t, (1, -1)), params)
    if batched:
        q = ad.reshape(q, (q.shape[0], 1, -1))
    F = decoder_layers(q, X_r, params, cfg, region_mask)
    return ad.reshape(F, (F.shape[0], -1) if batched else (-1,))


def output_logits(F: Tensor, params: dict) -> Tensor:
    return ad.add(ad.matmul(F, ad.transpose_last(params["out.W_p"])), params["out.b_p"])


def word_distribution(F_t: Tensor, W_p: Tensor, b_p: Tensor) -> Tensor:
    """softmax(W_p F_t + b_p) for ``F_t`` of shape ``[d_m]`` or ``[.., d_m]``."""
    x = ad.reshape(F_t, (1, -1)) if F_t.ndim == 1 else F_t
    p = ad.softmax(ad.add(ad.matmul(x, ad.transpose_last(W_p)), b_p))
    return ad.reshape(p, (-1,)) if F_t.ndim == 1 else p


def sequence_logits(X_r: Tensor, region_mask: Optional[np.ndarray], inputs: np.ndarray,
                    params: dict, cfg: ModelConfig,
                    rng: Optional[np.random.Generator] = None) -> Tensor:
    """Teacher-forced logits ``[B, T, V]`` for input token ids ``[B, T]`` (BOS first).

    Row ``t`` only depends on ``inputs[:, :t+1]``.
    """
    inputs = np.asarray(inputs, dtype=np.int64)
    B, T = inputs.shape
    if cfg.mode_position == "lstm":
        v_bar = ad.mean_rows(X_r, region_mask)
        state = DecoderState.initial(cfg.d_h, rows=B)
        h, c = state.h, state.c
        hs = []
        for t in range(T):
            w_t = ad.embedding_lookup(params["dec.embed"], inputs[:, t])
            h, c = lstm_cell(ad.concat_last_dim(w_t, v_bar), h, c, params)
            hs.append(ad.dropout(h, cfg.dropout_lstm, rng))
        query = project_query(ad.stack_steps(hs), params)
    else:
        emb = ad.embedding_lookup(params["dec.embed"], inputs)
        query = ad.add(linear(emb, params["dec.in_proj.W"], params["dec.in_proj.b"]),
                       Tensor(positional_encoding(T, cfg.d_m)))
    F = decoder_layers(query, X_r, params, cfg, region_mask, rng)
    return output_logits(F, params)


class IncrementalDecoder:
    """Step-by-step decoding of ``K`` hypotheses against one image's X^r.

    Nothing is recorded on a tape. The LSTM state is carried forward; the
    query history is kept so a causal self-attention sub-layer (when present)
    sees exactly what teacher forcing would show it.
    """

    def __init__(self, params: dict, cfg: ModelConfig, X_r: np.ndarray,
                 region_mask: Optional[np.ndarray] = None):
        self.params, self.cfg = params, cfg
        self.X_r = np.asarray(X_r)[None] if np.ndim(X_r) == 2 else np.asarray(X_r)  # [1, N, d_m]
        self.mask = None if region_mask is None else np.asarray(region_mask, dtype=bool).reshape(1, -1)
        if cfg.mode_position == "lstm":
            self.v_bar = ad.mean_rows(Tensor(self.X_r), self.mask).data  # [1, d_m]

    def initial(self) -> dict:
        st = {"t": 0, "queries": np.zeros((1, 0, self.cfg.d_m))}
        if self.cfg.mode_position == "lstm":
            st["h"] = np.zeros((1, self.cfg.d_h))
            st["c"] = np.zeros((1, self.cfg.d_h))
        return st

    @staticmethod
    def select(state: dict, rows) -> dict:
        rows = np.asarray(rows, dtype=np.int64)
        return {k: (v if k == "t" else v[rows]) for k, v in state.items()}

    def step(self, state: dict, tokens) -> tuple:
        """Feed one token per row; returns (log-probabilities ``[K, V]``, next state)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        K = tokens.shape[0]
        p, cfg = self.params, self.cfg
        w = ad.embedding_lookup(p["dec.embed"], tokens)
        new = {"t": state["t"] + 1}
        if cfg.mode_position == "lstm":
            x = ad.concat_last_dim(w, Tensor(np.repeat(self.v_bar, K, 0)))
            h, c = lstm_cell(x, Tensor(state["h"]), Tensor(state["c"]), p)
            new["h"], new["c"] = h.data, c.data
            q = project_query(h, p).data
        else:
            pe = positional_encoding(state["t"] + 1, cfg.d_m)[-1]
            q = linear(w, p["dec.in_proj.W"], p["dec.in_proj.b"]).data + pe
        queries = np.concatenate([state["queries"], q[:, None, :]], axis=1)
        new["queries"] = queries
        rows = queries if cfg.use_dec_self_attn else queries[:, -1:, :]
        mask = None if self.mask is None else np.repeat(self.mask, K, 0)
        F = decoder_layers(Tensor(rows), Tensor(np.repeat(self.X_r, K, 0)), p, cfg, mask)
        logits = output_logits(F, p).data[:, -1, :]
        return ad.log_softmax(Tensor(logits)).data, new
