"""Finite-difference gradient suite: every op plus the assembled model on tiny shapes."""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .autodiff.gradcheck import GradcheckResult, check
from .config import ModelConfig
from .decoder import lstm_cell
from .encoder import encode, gsr_attention
from .model import forward_xent
from .params import init_params
from .regions import RegionSet, geometry_row

TINY = ModelConfig(d=4, d_m=4, d_h=3, d_w=3, h=2, L_enc=1, L_dec=1, d_ff=5, V=6, T_max=4)


def corrupt_backward(op: str, factor: float = 1.1) -> Callable[[Tape], None]:
    """Tape hook that scales the backward of every ``op`` node (negative-control fixture)."""

    def hook(tape: Tape) -> None:
        for node in tape.nodes:
            if node.op == op and node.backward is not None:
                inner = node.backward
                node.backward = lambda g, inner=inner: tuple(
                    None if x is None else x * factor for x in inner(g))

    return hook


def _param(rng, *shape, lo=None) -> Tensor:
    x = rng.standard_normal(shape)
    if lo is not None:
        # keep away from non-differentiable points
        x = np.where(np.abs(x) < lo, np.sign(x + 1e-12) * lo, x)
    return Tensor(x, requires_grad=True)


def _weighted(out: Tensor, R: np.ndarray) -> Tensor:
    return ad.sum_all(ad.hadamard(out, Tensor(R)))


def _boxes(rng, n: int) -> np.ndarray:
    rows = []
    for _ in range(n):
        x0, y0 = rng.uniform(0.05, 0.5, size=2)
        w, h = rng.uniform(0.1, 0.4, size=2)
        rows.append(geometry_row((x0, y0, x0 + w, y0 + h)))
    return np.stack(rows)


def op_cases(rng: np.random.Generator) -> list:
    """``(name, fn, inputs)`` triples covering each differentiable op."""
    cases = []

    def add_case(name, build, inputs, out_shape):
        R = rng.standard_normal(out_shape)
        cases.append((name, lambda: _weighted(build(), R), inputs))

    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    add_case("matmul", lambda: ad.matmul(a, b), [a, b], (3, 2))
    a3, b2 = _param(rng, 2, 3, 4), _param(rng, 4, 2)
    add_case("matmul_batched_shared", lambda: ad.matmul(a3, b2), [a3, b2], (2, 3, 2))
    a3b, b3 = _param(rng, 2, 3, 4), _param(rng, 2, 4, 3)
    add_case("matmul_batched", lambda: ad.matmul(a3b, b3), [a3b, b3], (2, 3, 3))
    t = _param(rng, 2, 3, 4)
    add_case("transpose_last", lambda: ad.transpose_last(t), [t], (2, 4, 3))
    x, bias = _param(rng, 2, 3, 4), _param(rng, 4)
    add_case("add", lambda: ad.add(x, bias), [x, bias], (2, 3, 4))
    y = _param(rng, 2, 3, 4)
    add_case("sub", lambda: ad.sub(x, y), [x, y], (2, 3, 4))
    add_case("hadamard", lambda: ad.hadamard(x, y), [x, y], (2, 3, 4))
    add_case("scale", lambda: ad.scale(x, 0.7), [x], (2, 3, 4))
    r = _param(rng, 3, 4, lo=0.05)
    add_case("relu", lambda: ad.relu(r), [r], (3, 4))
    s = _param(rng, 3, 4)
    add_case("sigmoid", lambda: ad.sigmoid(s), [s], (3, 4))
    add_case("tanh", lambda: ad.tanh(s), [s], (3, 4))
    add_case("softmax", lambda: ad.softmax(s), [s], (3, 4))
    mask = np.array([[True, False, True, True], [True, True, False, False], [False, True, True, True]])
    add_case("softmax_masked", lambda: ad.softmax(s, mask), [s], (3, 4))
    add_case("softmax_rows", lambda: ad.softmax_rows(s), [s], (3, 4))
    add_case("log_softmax", lambda: ad.log_softmax(s), [s], (3, 4))
    ln_x, gain, beta = _param(rng, 2, 3, 5), _param(rng, 5), _param(rng, 5)
    add_case("layer_norm", lambda: ad.layer_norm(ln_x, gain, beta), [ln_x, gain, beta], (2, 3, 5))
    c1, c2 = _param(rng, 2, 3), _param(rng, 2, 2)
    add_case("concat_last_dim", lambda: ad.concat_last_dim(c1, c2), [c1, c2], (2, 5))
    add_case("slice_last", lambda: ad.slice_last(x, 1, 3), [x], (2, 3, 2))
    rmask = np.array([[True, True, False], [True, False, False]])
    add_case("mean_rows", lambda: ad.mean_rows(x), [x], (2, 4))
    add_case("mean_rows_masked", lambda: ad.mean_rows(x, rmask), [x], (2, 4))
    table = _param(rng, 5, 3)
    ids = np.array([[0, 2, 2], [4, 1, 0]])
    add_case("embedding_lookup", lambda: ad.embedding_lookup(table, ids), [table], (2, 3, 3))
    add_case("reshape", lambda: ad.reshape(x, (6, 4)), [x], (6, 4))
    steps = [_param(rng, 2, 3) for _ in range(3)]
    add_case("stack_steps", lambda: ad.stack_steps(steps), steps, (2, 3, 3))
    add_case("sum_all", lambda: ad.sum_all(x), [x], ())
    logits = _param(rng, 2, 3, 5)
    targets = np.array([[1, 4, 0], [2, 2, 3]])
    weights = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
    cases.append(("cross_entropy", lambda: ad.cross_entropy(logits, targets, weights), [logits]))
    add_case("dropout", lambda: ad.dropout(x, 0.3, np.random.default_rng(5)), [x], (2, 3, 4))
    return cases


def model_cases(rng: np.random.Generator) -> list:
    """Encoder, LSTM and full-loss checks on tiny configurations."""
    cases = []
    seed = int(rng.integers(2 ** 31))
    regions = [RegionSet(rng.standard_normal((n, TINY.d)), _boxes(rng, n)) for n in (3, 2)]
    captions = [[4, 5, 4], [5, 3]]

    params = init_params(TINY, seed)
    X_A = _param(rng, 2, 3, TINY.d_m)
    X_G = _param(rng, 2, 3, TINY.d_m)
    kmask = np.array([[True, True, True], [True, True, False]])
    names = [k for k in params if k.startswith("enc.layer0.head") or k == "enc.layer0.W_O"]
    R = rng.standard_normal((2, 3, TINY.d_m))
    for mode in ("concat", "add"):
        cfg = replace(TINY, mode_geometry=mode)
        cases.append((f"gsr_attention[{mode}]",
                      lambda cfg=cfg: _weighted(gsr_attention(X_A, X_G, params, "enc.layer0", cfg, kmask), R),
                      [X_A, X_G] + [params[k] for k in names]))

    x_t, h0, c0 = _param(rng, 2, TINY.d_w + TINY.d_m), _param(rng, 2, TINY.d_h), _param(rng, 2, TINY.d_h)
    Rh = rng.standard_normal((2, TINY.d_h))
    lstm = [params["dec.lstm.W_x"], params["dec.lstm.W_h"], params["dec.lstm.b"]]
    cases.append(("lstm_cell", lambda: _weighted(ad.add(*lstm_cell(x_t, h0, c0, params)), Rh),
                  [x_t, h0, c0] + lstm))

    Re = rng.standard_normal((3, TINY.d_m))
    enc_params = {k: v for k, v in params.items() if k.startswith("enc.")}
    cases.append(("encode", lambda: _weighted(encode(regions[0], params, TINY), Re),
                  list(enc_params.values())))

    configs = {
        "full_gat": TINY,
        "base": replace(TINY, mode_geometry="off", mode_position="sinusoidal", glu_placement="none"),
        "add_glu_enc_dec": replace(TINY, mode_geometry="add", glu_placement="enc_dec"),
    }
    for name, cfg in configs.items():
        p = init_params(cfg, seed)
        batch = list(zip(regions, captions))
        cases.append((f"model_loss[{name}]", lambda p=p, cfg=cfg: forward_xent(batch, p, cfg), list(p.values())))
    return cases


def run_suite(seed: int = 0, corrupt_op: Optional[str] = None,
              only: Optional[str] = None) -> List[GradcheckResult]:
    """Run every case; ``corrupt_op`` perturbs that op's backward to exercise the failure path."""
    rng = np.random.default_rng(seed)
    hook = corrupt_backward(corrupt_op) if corrupt_op else None
    results = []
    for name, fn, inputs in op_cases(rng) + model_cases(rng):
        if only is not None and only not in name:
            continue
        results.append(check(name, fn, inputs, tape_hook=hook))
    return results
