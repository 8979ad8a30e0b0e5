"""Finite-difference gradient checking shared by unit and acceptance tests."""

import numpy as np

from udeer.diff_engine import Tape, Tensor

FD_STEP = 1e-5


def numeric_grad(f, x: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. the array x in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


def check_op_gradients(build, wrt: list[Tensor], seed_shape=None, rng=None) -> float:
    """Compare analytic and numeric grads of sum(W * build()) over `wrt`.

    `build` runs the op(s) and returns the output tensor; it must read the
    current `.data` of every tensor in `wrt`.  Returns the worst relative
    error across the checked tensors.
    """
    rng = rng or np.random.default_rng(0)
    with Tape() as tape:
        out = build()
        weights = rng.normal(size=out.data.shape)
        tape.backward(out, seed=weights)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in wrt]

    worst = 0.0
    for t, a in zip(wrt, analytic):
        n = numeric_grad(lambda: float((build().data * weights).sum()), t.data)
        worst = max(worst, rel_err(a, n))
    for t in wrt:
        t.grad = None
    return worst
