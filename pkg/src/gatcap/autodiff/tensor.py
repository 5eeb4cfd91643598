"""Dense float64 tensors and the append-only gradient tape."""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

MAX_RANK = 3

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "gatcap_active_tape", default=None
)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


class TapeError(RuntimeError):
    """Misuse of the tape (non-scalar loss, loss not recorded, ...)."""


class Tensor:
    """A rank <= 3 array of 64-bit reals, optionally tracked by a tape.

    Parameters are created with ``requires_grad=True``; they join a tape as
    leaf nodes the first time an op consumes them while that tape is active.
    Intermediate results carry a reference to the tape and their node id.
    """

    __slots__ = ("data", "requires_grad", "_tape", "_node")

    def __init__(self, data, requires_grad: bool = False, *, _op: str = "tensor"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        if not np.isfinite(arr).all():
            raise NonFiniteError(_op)
        self.data = arr
        self.requires_grad = requires_grad
        self._tape: Optional[Tape] = None
        self._node: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # thin operator sugar; the functional ops in ``ops`` are the real API
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.hadamard(self, other)
        return ops.scale(self, float(other))

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    op: str
    inputs: tuple  # node ids (None for constants)
    backward: Optional[BackwardFn]
    shape: tuple


@dataclass
class Tape:
    """Append-only record of operations for one forward evaluation.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded when at least one operand is tracked.
    """

    nodes: list = field(default_factory=list)
    _leaf_ids: dict = field(default_factory=dict)
    _leaves: list = field(default_factory=list)
    _token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def node_id(self, t: Tensor) -> Optional[int]:
        """Node id of ``t`` on this tape, creating a leaf for parameters."""
        if t._tape is self:
            return t._node
        if not t.requires_grad:
            return None
        key = id(t)
        nid = self._leaf_ids.get(key)
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(Node("leaf", (), None, t.shape))
            self._leaf_ids[key] = nid
            self._leaves.append(t)  # keeps id(t) stable for the tape's lifetime
        return nid

    def leaf_id(self, t: Tensor) -> Optional[int]:
        return self._leaf_ids.get(id(t))

    def append(self, op: str, inputs: tuple, backward: BackwardFn, shape: tuple) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(op, inputs, backward, shape))
        return nid

    def grad_of(self, grads: dict, t: Tensor) -> np.ndarray:
        """Gradient array for ``t`` from a ``backward`` result (zeros if unreached)."""
        nid = t._node if t._tape is self else self.leaf_id(t)
        if nid is None or nid not in grads:
            return np.zeros(t.shape)
        return grads[nid].data


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def tracked(t: Tensor) -> bool:
    """Whether ``t`` would receive a gradient on the active tape."""
    tape = _ACTIVE_TAPE.get()
    return tape is not None and (t._tape is tape or t.requires_grad)


def record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap ``out_data`` as a tensor and append a node if any input is tracked."""
    out = Tensor(out_data, _op=op)
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return out
    ids = tuple(tape.node_id(t) for t in inputs)
    if all(i is None for i in ids):
        return out
    out._node = tape.append(op, ids, backward, out.shape)
    out._tape = tape
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None) -> dict:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns a map from node id to gradient tensor for every leaf (parameter)
    node the loss depends on, plus ``loss`` itself (gradient 1).
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or loss._tape
    if tape is None or loss._tape is not tape:
        raise TapeError("loss was not recorded on the given tape")
    acc: dict = {loss._node: np.ones(loss.shape)}
    for nid in range(loss._node, -1, -1):
        g = acc.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.backward is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if inp is None or gi is None:
                continue
            prev = acc.get(inp)
            acc[inp] = gi if prev is None else prev + gi
    nodes = tape.nodes
    return {nid: Tensor(g, _op="backward") for nid, g in acc.items()
            if nid == loss._node or nodes[nid].backward is None}
