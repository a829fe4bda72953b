"""Dense float64 tensors with reverse-mode gradients and an Adam optimizer.

The graph is built eagerly: every operation computes its result immediately
and records a backward closure plus links to the inputs that require
gradients. ``backward`` walks the recorded graph once in reverse topological
order. Everything is double precision so gradients can be validated against
central finite differences at tight tolerances.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GradientError(RuntimeError):
    """Backward-pass misuse or a non-finite gradient."""


class Tensor:
    """A dense float64 array node in the computation graph.

    Leaf tensors are either parameters (``requires_grad=True``, gradient
    allocated as zeros) or constants. Non-leaf tensors are produced by the
    operations below and keep references to their inputs for the reverse
    sweep.
    """

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents",
                 "_backward_fn", "_backward_done")

    def __init__(self, values, *, requires_grad: bool = False,
                 name: str | None = None,
                 _parents: tuple["Tensor", ...] = (),
                 _backward_fn: Callable[[np.ndarray], None] | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        tag = self.name or ("param" if self.requires_grad and self.is_leaf()
                            else "node")
        return f"Tensor({tag}, shape={self.values.shape})"


def parameter(values, name: str) -> Tensor:
    """A trainable leaf tensor; its gradient starts as zeros."""
    t = Tensor(values, requires_grad=True, name=name)
    t.zero_grad()
    return t


def constant(values, name: str | None = None) -> Tensor:
    """A leaf tensor excluded from gradient computation."""
    return Tensor(values, name=name)


def _accumulate(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    """Add a gradient contribution.

    ``own=True`` hands the array over: the caller guarantees no other node
    will read it, so the first contribution can be bound without a copy.
    Each backward closure may donate a given array at most once.
    """
    if t.grad is None:
        t.grad = g if own else g.copy()
    else:
        t.grad += g


def _make(values: np.ndarray, parents: Sequence[Tensor],
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    needs = tuple(p for p in parents if p.requires_grad)
    if not needs:
        return Tensor(values)
    return Tensor(values, requires_grad=True, _parents=needs,
                  _backward_fn=backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports (m,k)@(k,n), (k,)@(k,n) and (m,k)@(k,).

    Backward: dL/da = g @ b^T and dL/db = a^T @ g (with the 1-D cases
    handled through outer products).
    """
    av, bv = a.values, b.values
    inner_a = av.shape[-1] if av.ndim else None
    inner_b = bv.shape[0] if bv.ndim else None
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2 \
            or inner_a != inner_b:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    out = av @ bv

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            if av.ndim == 1 and bv.ndim == 2:      # (k,)@(k,n) -> (n,)
                _accumulate(a, bv @ g, own=True)
            elif av.ndim == 2 and bv.ndim == 1:    # (m,k)@(k,) -> (m,)
                _accumulate(a, np.outer(g, bv), own=True)
            else:                                  # (m,k)@(k,n)
                _accumulate(a, g @ bv.T, own=True)
        if b.requires_grad:
            if av.ndim == 1 and bv.ndim == 2:
                _accumulate(b, np.outer(av, g), own=True)
            else:
                _accumulate(b, av.T @ g, own=True)

    return _make(out, (a, b), backward_fn)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"{op}: operand shapes {a.values.shape} and "
                         f"{b.values.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two equal-shape tensors."""
    _check_same_shape("add", a, b)
    out = a.values + b.values

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g, own=True)
        if b.requires_grad:
            _accumulate(b, g)

    return _make(out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference of two equal-shape tensors."""
    _check_same_shape("sub", a, b)
    out = a.values - b.values

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g, own=True)
        if b.requires_grad:
            _accumulate(b, -g, own=True)

    return _make(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of two equal-shape tensors."""
    _check_same_shape("mul", a, b)
    out = a.values * b.values

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * b.values, own=True)
        if b.requires_grad:
            _accumulate(b, g * a.values, own=True)

    return _make(out, (a, b), backward_fn)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-n bias vector to every row of x ((B,n) or (n,)).

    Backward sums the incoming gradient over the batch axis for the bias.
    """
    xv, bv = x.values, bias.values
    if bv.ndim != 1 or xv.shape[-1] != bv.shape[0] or xv.ndim not in (1, 2):
        raise ShapeError(f"add_bias: shapes {xv.shape} and {bv.shape} "
                         "do not align")
    out = xv + bv

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            _accumulate(x, g, own=True)
        if bias.requires_grad:
            # the 2-D reduction is a fresh array; the 1-D passthrough may
            # already be bound to x above and must be copied
            _accumulate(bias, g if g.ndim == 1 else g.sum(axis=0),
                        own=g.ndim != 1)

    return _make(out, (x, bias), backward_fn)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); gradient passes where the input is strictly positive."""
    out = np.maximum(x.values, 0.0)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * (x.values > 0.0), own=True)

    return _make(out, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.values))

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * (out * (1.0 - out)), own=True)

    return _make(out, (x,), backward_fn)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * (1.0 - out * out), own=True)

    return _make(out, (x,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree.

    Zero-length operands are legal and contribute nothing. Backward slices
    the incoming gradient back to each input.
    """
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ndim = tensors[0].values.ndim
    for t in tensors[1:]:
        if t.values.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch {tensors[0].values.shape}"
                             f" vs {t.values.shape}")
        for d in range(ndim):
            if d != (axis % ndim) and t.values.shape[d] != tensors[0].values.shape[d]:
                raise ShapeError(f"concat: shapes {tensors[0].values.shape} "
                                 f"and {t.values.shape} differ off-axis")
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis % ndim] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g: np.ndarray) -> None:
        sl = [slice(None)] * ndim
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl[axis % ndim] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)], own=True)

    return _make(out, tuple(tensors), backward_fn)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-D tensor, as a view.

    Backward adds the gradient into the matching column block.
    """
    if x.values.ndim != 2 or not 0 <= start < stop <= x.values.shape[1]:
        raise ShapeError(f"slice_cols: [{start}, {stop}) invalid for shape "
                         f"{x.values.shape}")
    out = x.values[:, start:stop]

    def backward_fn(g: np.ndarray) -> None:
        if x.grad is None:
            x.grad = np.zeros_like(x.values)
        x.grad[:, start:stop] += g

    return _make(out, (x,), backward_fn)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) of a 2-D tensor, as a view."""
    if x.values.ndim != 2 or not 0 <= start < stop <= x.values.shape[0]:
        raise ShapeError(f"slice_rows: [{start}, {stop}) invalid for shape "
                         f"{x.values.shape}")
    out = x.values[start:stop]

    def backward_fn(g: np.ndarray) -> None:
        if x.grad is None:
            x.grad = np.zeros_like(x.values)
        x.grad[start:stop] += g

    return _make(out, (x,), backward_fn)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; repeated indices are allowed.

    Backward scatter-adds the gradient back onto the source rows.
    """
    idx = np.asarray(indices, dtype=np.intp)
    if x.values.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"gather_rows: need 2-D source and 1-D indices, got "
                         f"{x.values.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.values.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for "
                         f"{x.values.shape[0]} rows")
    out = x.values[idx]

    def backward_fn(g: np.ndarray) -> None:
        acc = np.zeros_like(x.values)
        np.add.at(acc, idx, g)
        _accumulate(x, acc, own=True)

    return _make(out, (x,), backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.values.reshape(shape)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.values.shape), own=True)

    return _make(out, (x,), backward_fn)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar node."""
    out = x.values.sum()

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, np.full_like(x.values, float(g)), own=True)

    return _make(np.float64(out), (x,), backward_fn)


def softmax_nll(logits: Tensor, labels) -> tuple[np.ndarray, Tensor]:
    """Row-wise softmax plus mean negative log-likelihood.

    ``logits`` is (B,C), ``labels`` an int vector in [0,C). Rows are
    max-shifted before exponentiation and the per-row log-probability is
    computed directly, so extreme logits neither overflow nor produce
    log(0). Returns the (detached) probability matrix and the scalar loss.
    """
    lv = logits.values
    if lv.ndim != 2:
        raise ShapeError(f"softmax_nll: logits must be 2-D, got {lv.shape}")
    lab = np.asarray(labels, dtype=np.intp)
    n, n_classes = lv.shape
    if lab.shape != (n,):
        raise ShapeError(f"softmax_nll: labels shape {lab.shape} does not "
                         f"match batch size {n}")
    if lab.size and (lab.min() < 0 or lab.max() >= n_classes):
        raise ValueError(f"softmax_nll: label out of range [0, {n_classes})")

    shifted = lv - lv.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    norms = exps.sum(axis=1, keepdims=True)
    probs = exps / norms
    log_probs = shifted - np.log(norms)
    loss_val = -log_probs[np.arange(n), lab].mean()

    def backward_fn(g: np.ndarray) -> None:
        d = probs.copy()
        d[np.arange(n), lab] -= 1.0
        _accumulate(logits, d * (float(g) / n), own=True)

    loss = _make(np.float64(loss_val), (logits,), backward_fn)
    return probs, loss


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss to every reachable parameter.

    Each node is visited exactly once in reverse topological order.
    Intermediate gradients are released as soon as they have been consumed;
    leaf gradients accumulate. Calling this twice on the same loss node is
    an error (gradients are not silently re-accumulated).
    """
    if loss.values.ndim != 0:
        raise GradientError(f"backward: loss must be scalar, got shape "
                            f"{loss.values.shape}")
    if loss._backward_done:
        raise GradientError("backward: already called on this node; "
                            "rebuild the graph or reset gradients explicitly")
    if not loss.requires_grad:
        loss._backward_done = True
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.values)
    for node in reversed(topo):
        if node._backward_fn is None:
            continue
        if node.grad is None:
            continue
        node._backward_fn(node.grad)
        node.grad = None
    loss._backward_done = True


def zero_gradients(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()


class AdamState:
    """First/second moment accumulators and step counter for Adam."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.values) for p in params]
        self.second_moment = [np.zeros_like(p.values) for p in params]


def adam_step(params: Sequence[Tensor], state: AdamState,
              learning_rate: float | None = None) -> None:
    """One bias-corrected Adam update in place, reading ``p.grad``.

    Aborts on any non-finite gradient, naming the offending tensor.
    """
    if len(params) != len(state.first_moment):
        raise GradientError("adam_step: parameter count does not match state")
    lr = state.learning_rate if learning_rate is None else learning_rate
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            g = np.zeros_like(p.values)
        if g.shape != p.values.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} does not "
                             f"match parameter {p.name!r} {p.values.shape}")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"adam_step: non-finite gradient in tensor "
                                f"{p.name!r}")
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.values -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
