"""
Dense float64 tensors and the reverse-mode tape.

Operations record themselves on the tape that is active in the current
context (``with Tape() as tape:``). Outside a tape nothing is recorded, which
is how inference runs. Tapes live in a ContextVar, so independent tapes on
separate threads never share state.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from src.errors import ContractError

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    """Row-major float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "frozen", "__weakref__")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name
        self.frozen = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}.")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Operator sugar; the functions live in ops.py.
    def __add__(self, other: "Tensor") -> "Tensor":
        from src.autodiff import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from src.autodiff import ops
        return ops.sub(self, other)

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        from src.autodiff import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from src.autodiff import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from src.autodiff import ops
        return ops.matmul(self, other)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Node:
    """One recorded operation: kind, inputs, output and its backward rule."""

    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: BackwardFn

    @property
    def input_ids(self) -> tuple[int | None, ...]:
        return tuple(t.node_id for t in self.inputs)


@dataclass
class Tape:
    """Creation-ordered list of nodes; creation order is a topological order."""

    nodes: list[Node] = field(default_factory=list)
    _token: contextvars.Token | None = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc: object) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def record(self, kind: str, inputs: tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn) -> None:
        output.node_id = len(self.nodes)
        self.nodes.append(Node(kind, inputs, output, backward_fn))

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def make_result(kind: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op's output and record it when any input needs a gradient."""
    tape = _ACTIVE_TAPE.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(kind, inputs, out, backward_fn)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64).reshape(t.data.shape)
    else:
        t.grad = t.grad + g.reshape(t.data.shape)


def backward(loss: Tensor, tape: Tape) -> None:
    """Reverse sweep from a scalar loss; gradients add across fan-out."""
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}.")
    if loss.node_id is None:
        if loss.requires_grad:
            # A leaf used directly as the loss.
            _accumulate(loss, np.ones_like(loss.data))
            return
        raise ContractError("Loss was not produced on this tape (no recorded node).")
    if loss.node_id >= len(tape.nodes) or tape.nodes[loss.node_id].output is not loss:
        raise ContractError("Loss was not produced on this tape.")

    pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node_id in range(loss.node_id, -1, -1):
        g = pending.pop(node_id, None)
        if g is None:
            continue
        node = tape.nodes[node_id]
        _accumulate(node.output, g)
        input_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp.node_id is not None and inp.node_id < node_id and tape.nodes[inp.node_id].output is inp:
                prev = pending.get(inp.node_id)
                pending[inp.node_id] = ig if prev is None else prev + ig
            else:
                _accumulate(inp, ig)
