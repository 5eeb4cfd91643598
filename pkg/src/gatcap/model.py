"""Full model assembly: batching, teacher-forced cross-entropy, scoring helpers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .decoder import sequence_logits
from .encoder import encode
from .regions import RegionBatch, RegionSet
from .scenes import BOS, EOS, PAD

Example = Tuple[RegionSet, Sequence[int]]


@dataclass
class TokenBatch:
    inputs: np.ndarray  # [B, T]: BOS, y_1 .. y_{n}
    targets: np.ndarray  # [B, T]: y_1 .. y_n, EOS, then PAD
    weights: np.ndarray  # [B, T]: 1 on real targets


def prepare_tokens(ids: Sequence[int], T_max: int) -> List[int]:
    """Caption word ids truncated to ``T_max`` words (EOS is added by the batcher)."""
    return [int(i) for i in ids if i not in (PAD, BOS, EOS)][:T_max]


def collate_tokens(seqs: Sequence[Sequence[int]], T_max: int) -> TokenBatch:
    seqs = [prepare_tokens(s, T_max) for s in seqs]
    T = max(len(s) for s in seqs) + 1
    B = len(seqs)
    inputs = np.full((B, T), PAD, dtype=np.int64)
    targets = np.full((B, T), PAD, dtype=np.int64)
    weights = np.zeros((B, T))
    for b, s in enumerate(seqs):
        n = len(s)
        inputs[b, 0] = BOS
        inputs[b, 1: n + 1] = s
        targets[b, :n] = s
        targets[b, n] = EOS
        weights[b, : n + 1] = 1.0
    return TokenBatch(inputs, targets, weights)


def batch_logits(regions: RegionBatch, tokens: TokenBatch, params: dict, cfg: ModelConfig,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    X_r = encode(regions, params, cfg, rng)
    return sequence_logits(X_r, regions.mask, tokens.inputs, params, cfg, rng)


def forward_batch(batch: Sequence[Example], params: dict, cfg: ModelConfig,
                  rng: Optional[np.random.Generator] = None):
    """Loss tensor plus (logits, token batch) for accuracy bookkeeping."""
    if not batch:
        raise ValueError("forward_xent needs a non-empty batch")
    regions = RegionBatch.collate([r for r, _ in batch])
    tokens = collate_tokens([s for _, s in batch], cfg.T_max)
    logits = batch_logits(regions, tokens, params, cfg, rng)
    loss = ad.cross_entropy(logits, tokens.targets, tokens.weights)
    return loss, logits, tokens


def forward_xent(batch: Sequence[Example], params: dict, cfg: ModelConfig,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    """Mean -log p(y_t | y_<t, image) over all non-PAD target positions of the batch."""
    return forward_batch(batch, params, cfg, rng)[0]


def token_accuracy(logits: Tensor, tokens: TokenBatch) -> Tuple[int, int]:
    """(correct, total) argmax predictions over non-PAD targets."""
    pred = logits.data.argmax(axis=-1)
    mask = tokens.weights > 0
    return int(((pred == tokens.targets) & mask).sum()), int(mask.sum())


def sequence_log_prob(regions: RegionSet, words: Sequence[int], params: dict, cfg: ModelConfig,
                      terminated: bool = True) -> float:
    """Total log-probability of ``words`` (plus EOS when ``terminated``) under teacher forcing."""
    words = list(words)
    tokens = collate_tokens([words], cfg.T_max)
    logits = batch_logits(RegionBatch.collate([regions]), tokens, params, cfg)
    logp = ad.log_softmax(logits).data[0]
    targets = words + ([EOS] if terminated else [])
    return float(sum(logp[t, y] for t, y in enumerate(targets)))
