"""Cross-entropy training with Adam, step decay and gradient-norm clipping."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .autodiff import NonFiniteError, Tape, backward
from .config import ModelConfig, TrainConfig
from .model import Example, forward_batch, token_accuracy
from .params import Params, init_params

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss or parameters became non-finite."""

    def __init__(self, message: str, parameter: Optional[str] = None):
        super().__init__(message)
        self.parameter = parameter


@dataclass
class EpochStats:
    epoch: int
    loss: float
    token_accuracy: float
    seconds: float
    lr: float


@dataclass
class TrainReport:
    seed: int
    epochs: List[EpochStats] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].loss

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1].token_accuracy

    def to_dict(self) -> dict:
        return {"seed": self.seed, "epochs": [asdict(e) for e in self.epochs]}


class Adam:
    def __init__(self, params: Params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros(v.shape) for k, v in params.items()}
        self.v = {k: np.zeros(v.shape) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in sorted(self.params):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            self.params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * factor
    return total


def first_nonfinite(params: Params) -> Optional[str]:
    for name in sorted(params):
        if not np.isfinite(params[name].data).all():
            return name
    return None


def compute_gradients(batch: Sequence[Example], params: Params, cfg: ModelConfig,
                      rng: Optional[np.random.Generator] = None):
    """Loss value, per-parameter gradients and (correct, total) token counts for one batch."""
    with Tape() as tape:
        loss, logits, tokens = forward_batch(batch, params, cfg, rng)
    node_grads = backward(loss, tape)
    grads = {name: tape.grad_of(node_grads, p) for name, p in params.items()}
    return loss.item(), grads, token_accuracy(logits, tokens)


def _diverged(params: Params, where: str) -> TrainingDiverged:
    name = first_nonfinite(params)
    if name is not None:
        return TrainingDiverged(f"non-finite values in parameter '{name}' ({where})", name)
    return TrainingDiverged(f"non-finite loss ({where})")


def train(examples: Sequence[Example], cfg: ModelConfig, tcfg: TrainConfig,
          params: Optional[Params] = None,
          on_epoch: Optional[Callable[[EpochStats], None]] = None):
    """Fit ``params`` (fresh from ``cfg.seed`` unless given) on ``examples``.

    Shuffling draws from ``tcfg.seed``; identical inputs give bit-identical
    parameters. Returns ``(params, TrainReport)``.
    """
    if not examples:
        raise ValueError("training set is empty")
    params = init_params(cfg) if params is None else params
    opt = Adam(params, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    shuffle_rng = np.random.default_rng([tcfg.seed, 1])
    drop_rng = np.random.default_rng([tcfg.seed, 2]) if (cfg.dropout_attn or cfg.dropout_lstm) else None
    report = TrainReport(seed=tcfg.seed)
    n = len(examples)
    for epoch in range(1, tcfg.epochs + 1):
        start = time.perf_counter()
        lr = tcfg.lr_at(epoch)
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        weight_sum = 0
        correct = 0
        for lo in range(0, n, tcfg.batch_size):
            batch = [examples[i] for i in order[lo: lo + tcfg.batch_size]]
            try:
                # overflow surfaces as NonFiniteError below, not as numpy warnings
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads, (hit, total) = compute_gradients(batch, params, cfg, drop_rng)
            except NonFiniteError as exc:
                raise _diverged(params, f"epoch {epoch}, op '{exc.op}'") from exc
            if not np.isfinite(loss):
                raise _diverged(params, f"epoch {epoch}")
            clip_by_global_norm(grads, tcfg.clip_norm)
            opt.step(grads, lr)
            loss_sum += loss * total
            weight_sum += total
            correct += hit
        if first_nonfinite(params) is not None:
            raise _diverged(params, f"after epoch {epoch}")
        stats = EpochStats(epoch, loss_sum / weight_sum, correct / weight_sum,
                           time.perf_counter() - start, lr)
        report.epochs.append(stats)
        log.info("epoch %d loss %.4f acc %.4f (%.1fs)", epoch, stats.loss, stats.token_accuracy, stats.seconds)
        if on_epoch is not None:
            on_epoch(stats)
    return params, report
