"""Named parameter collections for a GAT instance."""

from __future__ import annotations

from typing import Dict

import numpy as np

from .autodiff import Tensor
from .config import ModelConfig

Params = Dict[str, Tensor]

# init kinds: glorot weight, zero bias, unit gain, lstm gate bias (forget slice = 1)
_GLOROT, _ZERO, _ONE, _LSTM_BIAS = "glorot", "zero", "one", "lstm_bias"


def _attention_block(spec: dict, prefix: str, cfg: ModelConfig, names=("W_Q", "W_K", "W_V"),
                     geometry: bool = False) -> None:
    for k in range(cfg.h):
        for n in names:
            spec[f"{prefix}.head{k}.{n}"] = ((cfg.d_m, cfg.d_head), _GLOROT)
        if geometry:
            spec[f"{prefix}.head{k}.W_QG"] = ((cfg.d_m, cfg.d_head), _GLOROT)
            spec[f"{prefix}.head{k}.W_KG"] = ((cfg.d_m, cfg.d_head), _GLOROT)
    spec[f"{prefix}.W_O"] = ((cfg.h * cfg.d_head, cfg.d_m), _GLOROT)


def _sublayers(spec: dict, prefix: str, cfg: ModelConfig, glu: bool, glu_ctx: int) -> None:
    if glu:
        spec[f"{prefix}.glu.W_g"] = ((glu_ctx, cfg.d_m), _GLOROT)
        spec[f"{prefix}.glu.b_g"] = ((cfg.d_m,), _ZERO)
        spec[f"{prefix}.glu.W_i"] = ((cfg.d_m, cfg.d_m), _GLOROT)
        spec[f"{prefix}.glu.b_i"] = ((cfg.d_m,), _ZERO)
    spec[f"{prefix}.ff.W_1"] = ((cfg.d_m, cfg.d_ff), _GLOROT)
    spec[f"{prefix}.ff.b_1"] = ((cfg.d_ff,), _ZERO)
    spec[f"{prefix}.ff.W_2"] = ((cfg.d_ff, cfg.d_m), _GLOROT)
    spec[f"{prefix}.ff.b_2"] = ((cfg.d_m,), _ZERO)
    for ln in ("ln1", "ln2"):
        spec[f"{prefix}.{ln}.gain"] = ((cfg.d_m,), _ONE)
        spec[f"{prefix}.{ln}.bias"] = ((cfg.d_m,), _ZERO)


def param_spec(cfg: ModelConfig) -> dict:
    """Ordered map ``name -> (shape, init kind)`` for every parameter of ``cfg``."""
    spec: dict = {}
    geometry = cfg.mode_geometry != "off"
    spec["enc.in_proj.W"] = ((cfg.d, cfg.d_m), _GLOROT)
    spec["enc.in_proj.b"] = ((cfg.d_m,), _ZERO)
    if geometry:
        spec["enc.geo.W"] = ((5, cfg.d_m), _GLOROT)
        spec["enc.geo.b"] = ((cfg.d_m,), _ZERO)
    for layer in range(cfg.L_enc):
        p = f"enc.layer{layer}"
        _attention_block(spec, p, cfg, names=("W_QA", "W_KA", "W_VA"), geometry=geometry)
        _sublayers(spec, p, cfg, cfg.glu_enc, 2 * cfg.d_m if geometry else cfg.d_m)

    spec["dec.embed"] = ((cfg.V, cfg.d_w), _GLOROT)
    if cfg.mode_position == "lstm":
        spec["dec.lstm.W_x"] = ((cfg.d_w + cfg.d_m, 4 * cfg.d_h), _GLOROT)
        spec["dec.lstm.W_h"] = ((cfg.d_h, 4 * cfg.d_h), _GLOROT)
        spec["dec.lstm.b"] = ((4 * cfg.d_h,), _LSTM_BIAS)
        spec["dec.query_proj.W"] = ((cfg.d_h, cfg.d_m), _GLOROT)
        spec["dec.query_proj.b"] = ((cfg.d_m,), _ZERO)
    else:
        spec["dec.in_proj.W"] = ((cfg.d_w, cfg.d_m), _GLOROT)
        spec["dec.in_proj.b"] = ((cfg.d_m,), _ZERO)
    for layer in range(cfg.L_dec):
        p = f"dec.layer{layer}"
        if cfg.use_dec_self_attn:
            _attention_block(spec, f"{p}.self", cfg)
            spec[f"{p}.ln0.gain"] = ((cfg.d_m,), _ONE)
            spec[f"{p}.ln0.bias"] = ((cfg.d_m,), _ZERO)
        _attention_block(spec, f"{p}.cross", cfg)
        _sublayers(spec, p, cfg, cfg.glu_dec, 2 * cfg.d_m)

    spec["out.W_p"] = ((cfg.V, cfg.d_m), _GLOROT)
    spec["out.b_p"] = ((cfg.V,), _ZERO)
    return spec


def expected_shapes(cfg: ModelConfig) -> dict:
    return {name: shape for name, (shape, _) in param_spec(cfg).items()}


def init_params(cfg: ModelConfig, seed: int | None = None) -> Params:
    """Glorot-uniform weights, zero biases, unit layer-norm gains; deterministic in ``seed``."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params: Params = {}
    for name, (shape, kind) in param_spec(cfg).items():
        if kind == _GLOROT:
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=shape)
        elif kind == _ONE:
            data = np.ones(shape)
        elif kind == _LSTM_BIAS:
            data = np.zeros(shape)
            d_h = shape[0] // 4
            data[d_h: 2 * d_h] = 1.0  # gate order: input, forget, candidate, output
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def copy_params(params: Params) -> Params:
    return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}


def zero_params(cfg: ModelConfig) -> Params:
    """All zeros except layer-norm gains (a model that predicts the uniform distribution)."""
    out = {}
    for name, (shape, kind) in param_spec(cfg).items():
        out[name] = Tensor(np.ones(shape) if kind == _ONE else np.zeros(shape), requires_grad=True)
    return out


def n_parameters(params: Params) -> int:
    return sum(p.size for p in params.values())
