"""Greedy and beam-search caption decoding."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .config import ModelConfig
from .decoder import IncrementalDecoder
from .encoder import encode
from .regions import RegionSet
from .scenes import BOS, EOS, PAD


def _decoder(regions: RegionSet, params: dict, cfg: ModelConfig) -> IncrementalDecoder:
    return IncrementalDecoder(params, cfg, encode(regions, params, cfg).data)


def _admissible(logp: np.ndarray) -> np.ndarray:
    # PAD and BOS are never emitted
    logp = logp.copy()
    logp[:, PAD] = -np.inf
    logp[:, BOS] = -np.inf
    return logp


def greedy_decode(regions: RegionSet, params: dict, cfg: ModelConfig) -> List[int]:
    """Argmax word each step (lowest id wins ties) until EOS or ``T_max`` words."""
    dec = _decoder(regions, params, cfg)
    state = dec.initial()
    last = BOS
    out: List[int] = []
    for _ in range(cfg.T_max):
        logp, state = dec.step(state, [last])
        tok = int(np.argmax(_admissible(logp)[0]))
        if tok == EOS:
            break
        out.append(tok)
        last = tok
    return out


def beam_search(regions: RegionSet, params: dict, cfg: ModelConfig, beam: int) -> list:
    """All finished hypotheses as ``(words, total log-prob, length)``.

    Length counts scored tokens: the words plus EOS when one was emitted.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    dec = _decoder(regions, params, cfg)
    state = dec.initial()
    active = [((), 0.0)]
    completed = []
    for _ in range(cfg.T_max):
        logp, state = dec.step(state, [h[-1] if h else BOS for h, _ in active])
        logp = _admissible(logp)
        cands = []
        for i, (words, score) in enumerate(active):
            for tok in np.flatnonzero(np.isfinite(logp[i])):
                lp = float(logp[i, tok])
                # ties on the rounded total fall back to the step log-prob, then token ids
                cands.append((-(score + lp), -lp, words + (int(tok),), i, score + lp))
        cands.sort(key=lambda c: (c[0], c[1], c[2]))
        keep_rows, nxt = [], []
        for _, _, seq, row, total in cands[:beam]:
            if seq[-1] == EOS:
                completed.append((seq[:-1], total, len(seq)))
            else:
                nxt.append((seq, total))
                keep_rows.append(row)
        if not nxt:
            break
        active = nxt
        state = IncrementalDecoder.select(state, keep_rows)
    else:
        completed.extend((words, score, len(words)) for words, score in active)
    return completed


def best_hypothesis(completed: Sequence[tuple]) -> list:
    """Highest length-normalised score; ties go to the lexicographically smallest sequence."""
    best = min(completed, key=lambda c: (-(c[1] / c[2]), c[0]))
    return list(best[0])


def beam_decode(regions: RegionSet, params: dict, cfg: ModelConfig, beam: int = 5) -> List[int]:
    return best_hypothesis(beam_search(regions, params, cfg, beam))


def decode(regions: RegionSet, params: dict, cfg: ModelConfig, beam: int = 1) -> List[int]:
    return greedy_decode(regions, params, cfg) if beam == 1 else beam_decode(regions, params, cfg, beam)
