"""Training, evaluation and ablation runs shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import metrics
from .config import ABLATION_VARIANTS, STRATEGY_VARIANTS, ModelConfig, TrainConfig, variant
from .model import Example
from .params import Params
from .scenes import CaptionPair, Vocabulary, spatial_accuracy
from .search import decode
from .training import TrainReport, train

log = logging.getLogger(__name__)


class VocabMismatch(ValueError):
    """Dataset tokens missing from a checkpoint's vocabulary."""


def build_vocab(pairs: Sequence[CaptionPair]) -> Vocabulary:
    return Vocabulary.build(r for p in pairs for r in p.references)


def check_vocab(pairs: Sequence[CaptionPair], vocab: Vocabulary) -> None:
    missing = sorted({t for p in pairs for r in p.references for t in r if t not in vocab})
    if missing:
        raise VocabMismatch(f"{len(missing)} dataset tokens unknown to the checkpoint vocabulary, e.g. {missing[:5]}")


def make_examples(pairs: Sequence[CaptionPair], vocab: Vocabulary, seed: int,
                  all_refs: bool = False) -> List[Example]:
    """One (regions, token ids) example per scene, picking a reference with ``seed``.

    With ``all_refs`` every reference becomes its own example.
    """
    if all_refs:
        return [(p.regions, vocab.encode(r)) for p in pairs for r in p.references]
    rng = np.random.default_rng([seed, 3])
    return [(p.regions, vocab.encode(p.references[int(rng.integers(len(p.references)))])) for p in pairs]


@dataclass
class EvalResult:
    captions: List[List[str]]
    scores: Dict[str, metrics.CorpusScore]
    spatial_accuracy: Optional[float]
    spatial_hits: Optional[List[float]] = None

    def to_dict(self) -> dict:
        out = {k: s.to_dict() for k, s in self.scores.items()}
        if self.spatial_accuracy is not None:
            out["spatial_accuracy"] = {"corpus": self.spatial_accuracy, "per_instance": self.spatial_hits}
        return out


def caption_all(pairs: Sequence[CaptionPair], params: Params, cfg: ModelConfig,
                vocab: Vocabulary, beam: int = 1) -> List[List[str]]:
    return [vocab.decode(decode(p.regions, params, cfg, beam)) for p in pairs]


def evaluate(pairs: Sequence[CaptionPair], params: Params, cfg: ModelConfig,
             vocab: Vocabulary, beam: int = 1) -> EvalResult:
    caps = caption_all(pairs, params, cfg, vocab, beam)
    scores = metrics.score_all(caps, [p.references for p in pairs])
    spatial, hits = None, None
    if all(p.relation is not None for p in pairs):
        spatial = spatial_accuracy(caps, pairs)
        hits = [spatial_accuracy([c], [p]) for c, p in zip(caps, pairs)]
    return EvalResult(caps, scores, spatial, hits)


def fit(pairs: Sequence[CaptionPair], vocab: Vocabulary, cfg: ModelConfig, tcfg: TrainConfig,
        on_epoch=None) -> tuple:
    examples = make_examples(pairs, vocab, tcfg.seed)
    return train(examples, cfg, tcfg, on_epoch=on_epoch)


# ---------------------------------------------------------------- ablation

MODULE_ROWS = list(ABLATION_VARIANTS)
STRATEGY_ROWS = list(STRATEGY_VARIANTS)


@dataclass
class RunResult:
    variant: str
    seed: int
    spatial_accuracy: float
    bleu4: float
    cider: float
    final_loss: float
    seconds: float


@dataclass
class AblationResult:
    runs: List[RunResult] = field(default_factory=list)

    def variants(self) -> List[str]:
        seen = []
        for r in self.runs:
            if r.variant not in seen:
                seen.append(r.variant)
        return seen

    def seeds(self) -> List[int]:
        return sorted({r.seed for r in self.runs})

    def values(self, variant_name: str, key: str = "spatial_accuracy") -> List[float]:
        return [getattr(r, key) for r in sorted(self.runs, key=lambda r: r.seed) if r.variant == variant_name]

    def mean(self, variant_name: str, key: str = "spatial_accuracy") -> float:
        return float(np.mean(self.values(variant_name, key)))

    def markdown(self) -> str:
        lines = ["| Model | spatial acc. | BLEU-4 | CIDEr | seeds |",
                 "|---|---|---|---|---|"]
        for v in self.variants():
            lines.append(f"| {v} | {100 * self.mean(v):.1f} | {100 * self.mean(v, 'bleu4'):.1f} "
                         f"| {100 * self.mean(v, 'cider'):.1f} | {len(self.values(v))} |")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"runs": [r.__dict__ for r in self.runs],
                "mean": {v: {k: self.mean(v, k) for k in ("spatial_accuracy", "bleu4", "cider")}
                         for v in self.variants()}}


def ordering_check(result: AblationResult, margin: float = 0.10) -> Dict[str, bool]:
    """Module ordering: Full beats Base by ``margin`` on the seed mean, and each
    single-module variant lies strictly between them on a majority of seeds."""
    base = result.values("Base")
    full = result.values("Full: GAT")
    need = len(base) // 2 + 1
    out = {"full_minus_base": result.mean("Full: GAT") - result.mean("Base") >= margin}
    for name in ("Base+GSR", "Base+position-LSTM"):
        mid = result.values(name)
        between = sum(b < m < f for b, m, f in zip(base, mid, full))
        out[name] = between >= need
    return out


def run_ablation(train_pairs: Sequence[CaptionPair], test_pairs: Sequence[CaptionPair],
                 base_cfg: ModelConfig, tcfg: TrainConfig, seeds: Sequence[int],
                 variants: Sequence[str] = tuple(MODULE_ROWS), beam: int = 1,
                 vocab: Optional[Vocabulary] = None, progress=None) -> AblationResult:
    """Train and evaluate each variant under each seed (seed drives init, shuffling and reference choice)."""
    vocab = vocab or build_vocab(list(train_pairs) + list(test_pairs))
    base_cfg = replace(base_cfg, d=train_pairs[0].regions.appearance.shape[1], V=len(vocab))
    refs = [p.references for p in test_pairs]
    result = AblationResult()
    for seed in seeds:
        examples = make_examples(train_pairs, vocab, seed)
        for name in variants:
            cfg = replace(variant(base_cfg, name), seed=seed)
            start = time.perf_counter()
            params, report = train(examples, cfg, replace(tcfg, seed=seed))
            caps = caption_all(test_pairs, params, cfg, vocab, beam)
            run = RunResult(name, seed, spatial_accuracy(caps, test_pairs),
                            metrics.bleu(caps, refs, 4).corpus, metrics.cider(caps, refs).corpus,
                            report.final_loss, time.perf_counter() - start)
            result.runs.append(run)
            log.info("%s seed %d: spatial %.3f (%.0fs)", name, seed, run.spatial_accuracy, run.seconds)
            if progress is not None:
                progress(run)
    return result


__all__ = [
    "VocabMismatch", "build_vocab", "check_vocab", "make_examples", "EvalResult", "evaluate",
    "caption_all", "fit", "MODULE_ROWS", "STRATEGY_ROWS", "RunResult", "AblationResult", "ordering_check",
    "run_ablation", "TrainReport",
]
