"""Dense float64 tensors and the gradient tape.

Ops (see `udeer.diff_engine.ops`) record a backward closure onto the
innermost active tape whenever any input requires gradients.  Records are
appended in execution order, so walking them in reverse is a reverse
topological traversal; fan-out accumulates additively because every
consumer deposits into the same ``grad`` buffer before the producer's
record runs.

Tapes are tracked per thread: independent graphs may run on independent
threads, while one tape is strictly single-threaded.
"""

import threading

import numpy as np

_tls = threading.local()


def _stack():
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = []
        _tls.tapes = stack
    return stack


def active_tape():
    """The innermost tape on this thread, or None outside any `with Tape()`."""
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """Shaped float64 array, optionally carrying a gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class Tape:
    """Ordered record of op applications, replayed in reverse for gradients."""

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self, "tape stack corrupted"
        return False

    def record(self, out: Tensor, backward_fn) -> None:
        self._records.append((out, backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, root: Tensor, seed: np.ndarray | None = None) -> None:
        """Seed d(root)/d(root) (ones by default) and replay in reverse."""
        root.grad = np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=np.float64).copy()
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)
