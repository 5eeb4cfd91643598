"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward

FD_STEP = 1e-5
REL_TOL = 1e-4


@dataclass
class GradcheckResult:
    name: str
    max_rel_err: float
    worst_input: int
    worst_index: tuple
    analytic: float
    numeric: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def describe(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max rel err {self.max_rel_err:.3e} "
                f"at input {self.worst_input} index {self.worst_index} "
                f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e})")


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def tape_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor],
                   tape_hook: Optional[Callable[[Tape], None]] = None) -> list:
    """Tape gradients of ``fn()`` wrt ``inputs``; ``tape_hook`` may rewrite nodes before the sweep."""
    with Tape() as tape:
        loss = fn()
    if tape_hook is not None:
        tape_hook(tape)
    grads = backward(loss, tape)
    return [tape.grad_of(grads, t).copy() for t in inputs]


def numeric_gradient(fn: Callable[[], Tensor], t: Tensor, h: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar ``fn()`` wrt every element of ``t`` (mutated in place, restored)."""
    grad = np.zeros(t.shape)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check(name: str, fn: Callable[[], Tensor], inputs: Sequence[Tensor],
          h: float = FD_STEP, tol: float = REL_TOL,
          tape_hook: Optional[Callable[[Tape], None]] = None) -> GradcheckResult:
    """Compare tape and finite-difference gradients of ``fn`` wrt ``inputs``.

    ``inputs`` must be ``requires_grad`` tensors that ``fn`` reads on each call.
    """
    analytic = tape_gradients(fn, inputs, tape_hook)
    worst = GradcheckResult(name, 0.0, -1, (), 0.0, 0.0, tol)
    for k, (t, ga) in enumerate(zip(inputs, analytic)):
        gn = numeric_gradient(fn, t, h)
        err = relative_error(ga, gn)
        if err.size and err.max() >= worst.max_rel_err:
            idx = np.unravel_index(int(err.argmax()), err.shape)
            worst = GradcheckResult(name, float(err[idx]), k, tuple(int(i) for i in idx),
                                    float(ga[idx]), float(gn[idx]), tol)
    return worst
