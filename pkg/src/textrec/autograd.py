"""Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a row-major float array (float32 by default) plus an
optional gradient buffer.  Operations executed while a `Graph` is active
are recorded on a tape; `backward` replays the tape in exact reverse
execution order, accumulating gradients into every tensor that requires
them.  Accumulation (`+=`) is what makes weight sharing work: a parameter
used several times receives the sum of its per-use gradients.

Kernels accept either a single sample or a leading batch dimension:
`conv2d`/`maxpool2` take [C,H,W] or [B,C,H,W], `affine`/`softmax` take
[D] or [B,D].  Convolution is im2col plus one GEMM per direction, which
is where essentially all training time goes.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, ShapeError

__all__ = [
    "Tensor", "Graph", "backward", "grad_check", "clip_gradients",
    "zero_grads", "set_finite_checks",
    "conv2d", "maxpool2", "affine", "relu", "tanh", "softmax", "hadamard",
    "dropout", "add", "concat", "flatten_features", "reshape", "sum_",
    "scale", "broadcast_rows", "cross_entropy",
]

_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Verify every op output is finite (slow; meant for tests)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = enabled


class Tensor:
    """Dense n-dimensional array with an optional same-shape gradient.

    `data` is always C-contiguous.  The constructor casts to float32
    unless another float dtype is requested explicitly (float64 is used
    by the finite-difference oracle only).
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float32 if dtype is None else dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal fast path: trust the array, keep its dtype.
        t = cls.__new__(cls)
        t.data = array
        t.grad = None
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class _Node:
    __slots__ = ("op", "out", "inputs", "backward_fn")

    def __init__(self, op, out, inputs, backward_fn):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_STACK = threading.local()


def _graph_stack() -> list:
    stack = getattr(_STACK, "graphs", None)
    if stack is None:
        stack = []
        _STACK.graphs = stack
    return stack


def _active_graph() -> Optional["Graph"]:
    stack = _graph_stack()
    return stack[-1] if stack else None


class Graph:
    """Ordered record of executed ops.

    Used as a context manager; ops run while the graph is active append
    their nodes.  Graphs are single-writer: one graph per forward pass,
    never shared between threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _graph_stack().pop()
        assert popped is self

    def op_counts(self) -> dict[str, int]:
        """Number of recorded nodes per op name (handy for structure tests)."""
        counts: dict[str, int] = {}
        for node in self.nodes:
            counts[node.op] = counts.get(node.op, 0) + 1
        return counts


def _result(op: str, array: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if _FINITE_CHECKS and not np.isfinite(array).all():
        raise NumericalError(f"non-finite values in output of {op}")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(array, requires)
    graph = _active_graph()
    if graph is not None and requires:
        graph.nodes.append(_Node(op, out, tuple(inputs), backward_fn))
    return out


def backward(graph: Graph, loss: Tensor) -> None:
    """Propagate d(loss)/d(tensor) through the graph.

    `loss` must be a scalar produced under `graph`.  Gradients accumulate:
    tensors used multiple times (weight sharing, recursion, unrolled time
    steps) end up with the sum over all uses.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        grad_out = node.out.grad
        if grad_out is None:
            continue  # not on any path to the loss
        for tensor, grad in zip(node.inputs, node.backward_fn(grad_out)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
            tensor.grad += grad


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def clip_gradients(params: Iterable[Tensor], limit: float = 10.0, mode: str = "element") -> None:
    """Clamp gradients in place.

    "element" (default) clamps every gradient element to [-limit, limit].
    "norm" rescales all gradients jointly so their global L2 norm is at
    most `limit`.
    """
    tensors = [p for p in params if p.grad is not None]
    if mode == "element":
        for p in tensors:
            np.clip(p.grad, -limit, limit, out=p.grad)
    elif mode == "norm":
        total = 0.0
        for p in tensors:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
        norm = float(np.sqrt(total))
        if norm > limit:
            factor = limit / norm
            for p in tensors:
                p.grad *= factor
    else:
        raise ValueError(f"unknown clip mode {mode!r}")


# ---------------------------------------------------------------------------
# convolution


def _im2col3(padded: np.ndarray) -> np.ndarray:
    # padded: [B, C, H+2, W+2] -> [B*H*W, C*9] patch matrix
    b, c, hp, wp = padded.shape
    win = sliding_window_view(padded, (3, 3), axis=(2, 3))  # [B,C,H,W,3,3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * (hp - 2) * (wp - 2), c * 9)


def _conv_gemm(xb: np.ndarray, w: np.ndarray, bias: Optional[np.ndarray]):
    b, c, h, wd = xb.shape
    cols = _im2col3(np.pad(xb, ((0, 0), (0, 0), (1, 1), (1, 1))))
    out = cols @ w.reshape(w.shape[0], -1).T
    if bias is not None:
        out += bias
    return out.reshape(b, h, wd, w.shape[0]).transpose(0, 3, 1, 2), cols


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1 (spatial extent preserved).

    x: [C_in,H,W] or [B,C_in,H,W]; weight: [C_out,C_in,3,3];
    bias: [C_out] or None.  Returns [C_out,H,W] / [B,C_out,H,W].
    """
    if weight.data.ndim != 4 or weight.data.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d weight must be [C_out,C_in,3,3], got {weight.data.shape}")
    batched = x.data.ndim == 4
    if not batched and x.data.ndim != 3:
        raise ShapeError(f"conv2d input must be [C,H,W] or [B,C,H,W], got {x.data.shape}")
    xb = x.data if batched else x.data[None]
    c_out, c_in = weight.data.shape[:2]
    if xb.shape[1] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {xb.shape[1]}, weight expects {c_in}")
    if xb.shape[2] < 1 or xb.shape[3] < 1:
        raise ShapeError(f"conv2d input spatial extent too small: {x.data.shape}")
    bias_arr = None
    if bias is not None:
        if bias.data.shape != (c_out,):
            raise ShapeError(f"conv2d bias must be [{c_out}], got {bias.data.shape}")
        bias_arr = bias.data

    out_b, cols = _conv_gemm(xb, weight.data, bias_arr)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    needs_dx = x.requires_grad

    def backward_fn(g):
        gb = g if batched else g[None]
        gmat = gb.transpose(0, 2, 3, 1).reshape(-1, c_out)
        dw = (gmat.T @ cols).reshape(weight.data.shape)
        dx = None
        if needs_dx:
            # grad wrt input is another same-padding conv with the kernel
            # transposed across channels and flipped spatially
            w_back = np.ascontiguousarray(weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            dxb, _ = _conv_gemm(gb, w_back, None)
            dx = dxb if batched else dxb[0]
        if bias is None:
            return dx, dw
        return dx, dw, gmat.sum(axis=0)

    return _result("conv2d", out_b if batched else out_b[0], inputs, backward_fn)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; odd trailing row/column dropped.

    Gradient routes to the argmax element of each window; on ties the
    first element in row-major window order wins.
    """
    batched = x.data.ndim == 4
    if not batched and x.data.ndim != 3:
        raise ShapeError(f"maxpool2 input must be [C,H,W] or [B,C,H,W], got {x.data.shape}")
    xb = x.data if batched else x.data[None]
    b, c, h, w = xb.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2 needs spatial extent >= 2x2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = (xb[:, :, : h2 * 2, : w2 * 2]
           .reshape(b, c, h2, 2, w2, 2)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(b, c, h2, w2, 4))
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gb = g if batched else g[None]
        dwin = np.zeros((b, c, h2, w2, 4), dtype=xb.dtype)
        np.put_along_axis(dwin, idx[..., None], gb[..., None], axis=-1)
        dx = np.zeros((b, c, h, w), dtype=xb.dtype)
        dx[:, :, : h2 * 2, : w2 * 2] = (dwin.reshape(b, c, h2, w2, 2, 2)
                                        .transpose(0, 1, 2, 4, 3, 5)
                                        .reshape(b, c, h2 * 2, w2 * 2))
        return (dx if batched else dx[0],)

    return _result("maxpool2", out if batched else out[0], (x,), backward_fn)


# ---------------------------------------------------------------------------
# dense / elementwise


def affine(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """y = W x (+ b).  x: [D_in] or [B,D_in]; weight: [D_out,D_in]."""
    if weight.data.ndim != 2:
        raise ShapeError(f"affine weight must be 2-D, got {weight.data.shape}")
    if x.data.ndim not in (1, 2) or x.data.shape[-1] != weight.data.shape[1]:
        raise ShapeError(
            f"affine shape mismatch: input {x.data.shape}, weight {weight.data.shape}")
    d_out = weight.data.shape[0]
    if bias is not None and bias.data.shape != (d_out,):
        raise ShapeError(f"affine bias must be [{d_out}], got {bias.data.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    batched = x.data.ndim == 2
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        dx = g @ weight.data
        if batched:
            dw = g.T @ x.data
            db = g.sum(axis=0)
        else:
            dw = np.outer(g, x.data)
            db = g
        if bias is None:
            return dx, dw
        return dx, dw, db

    return _result("affine", out, inputs, backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.data.dtype.type(0))

    def backward_fn(g):
        return (np.where(mask, g, g.dtype.type(0)),)

    return _result("relu", out, (x,), backward_fn)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward_fn(g):
        return (g * (1.0 - out * out),)

    return _result("tanh", out, (x,), backward_fn)


def softmax(x: Tensor) -> Tensor:
    """Normalized exponentials over the last axis of a 1-D or 2-D input.

    Outputs are positive and sum to 1 per slice; invariant to adding a
    constant to all inputs of a slice.
    """
    if x.data.ndim not in (1, 2):
        raise ShapeError(f"softmax input must be 1-D or 2-D, got {x.data.shape}")
    if x.data.shape[-1] == 0:
        raise ShapeError("softmax over an empty slice")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _result("softmax", out, (x,), backward_fn)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise product of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = a.data * b.data

    def backward_fn(g):
        return g * b.data, g * a.data

    return _result("hadamard", out, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def backward_fn(g):
        return g, g

    return _result("add", out, (a, b), backward_fn)


def dropout(x: Tensor, keep: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: in train mode each element survives with
    probability `keep` and survivors are scaled by 1/keep, so eval mode
    is the identity (bit for bit: the input tensor is returned as is).
    """
    if not 0.0 < keep <= 1.0:
        raise ValueError(f"dropout keep probability must be in (0, 1], got {keep}")
    if not train or keep == 1.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    scaled_mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype)
    scaled_mask /= x.data.dtype.type(keep)
    out = x.data * scaled_mask

    def backward_fn(g):
        return (g * scaled_mask,)

    return _result("dropout", out, (x,), backward_fn)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D or 2-D tensors along their last axis."""
    if not parts:
        raise ShapeError("concat of no tensors")
    ndim = parts[0].data.ndim
    if ndim not in (1, 2) or any(p.data.ndim != ndim for p in parts):
        raise ShapeError("concat parts must all be 1-D or all 2-D")
    if ndim == 2 and len({p.data.shape[0] for p in parts}) != 1:
        raise ShapeError("concat parts disagree on leading dimension")
    out = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def backward_fn(g):
        grads = []
        offset = 0
        for w in widths:
            grads.append(np.ascontiguousarray(g[..., offset:offset + w]))
            offset += w
        return grads

    return _result("concat", out, tuple(parts), backward_fn)


def flatten_features(x: Tensor) -> Tensor:
    """Row-major flatten of everything but a leading batch axis:
    [C,H,W] -> [C*H*W], [B,C,H,W] -> [B, C*H*W]."""
    shape = x.data.shape
    out = x.data.reshape(shape[0], -1) if x.data.ndim == 4 else x.data.reshape(-1)

    def backward_fn(g):
        return (g.reshape(shape),)

    return _result("flatten", out, (x,), backward_fn)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    """Row-major reshape (element count preserved)."""
    old = x.data.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc

    def backward_fn(g):
        return (g.reshape(old),)

    return _result("reshape", out, (x,), backward_fn)


def sum_(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = x.data.sum(dtype=x.data.dtype)
    shape = x.data.shape

    def backward_fn(g):
        return (np.broadcast_to(g, shape),)

    return _result("sum", np.asarray(out), (x,), backward_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.data.dtype.type(factor)
    out = x.data * f

    def backward_fn(g):
        return (g * f,)

    return _result("scale", out, (x,), backward_fn)


def broadcast_rows(x: Tensor, n: int) -> Tensor:
    """Repeat a 1-D vector as n rows: [D] -> [n, D].  The gradient sums
    over rows, so a learned initial state shared by a batch accumulates
    every row's contribution."""
    if x.data.ndim != 1:
        raise ShapeError(f"broadcast_rows expects a vector, got {x.data.shape}")
    out = np.broadcast_to(x.data, (n, x.data.shape[0]))

    def backward_fn(g):
        return (g.sum(axis=0),)

    return _result("broadcast_rows", out, (x,), backward_fn)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted sum of per-slice cross-entropies, computed stably.

    logits: [K] or [B,K]; targets: int index or length-B index array;
    weights: optional length-B floats (masking / averaging), default 1.
    Returns a scalar tensor.
    """
    batched = logits.data.ndim == 2
    if not batched and logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy logits must be 1-D or 2-D, got {logits.data.shape}")
    lg = logits.data if batched else logits.data[None]
    idx = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if idx.shape != (lg.shape[0],):
        raise ShapeError(f"cross_entropy targets shape {idx.shape} does not match batch {lg.shape[0]}")
    if np.any(idx < 0) or np.any(idx >= lg.shape[1]):
        raise ShapeError("cross_entropy target index out of range")
    w = np.ones(lg.shape[0], dtype=lg.dtype) if weights is None \
        else np.asarray(weights, dtype=lg.dtype)
    if w.shape != (lg.shape[0],):
        raise ShapeError(f"cross_entropy weights shape {w.shape} does not match batch {lg.shape[0]}")

    m = lg.max(axis=-1, keepdims=True)
    e = np.exp(lg - m)
    z = e.sum(axis=-1, keepdims=True)
    log_probs = (lg - m) - np.log(z)
    rows = np.arange(lg.shape[0])
    loss = -(w * log_probs[rows, idx]).sum(dtype=lg.dtype)
    probs = e / z

    def backward_fn(g):
        d = probs.copy()
        d[rows, idx] -= 1.0
        d *= (g * w)[:, None]
        return (d if batched else d[0],)

    return _result("cross_entropy", np.asarray(loss), (logits,), backward_fn)


# ---------------------------------------------------------------------------
# gradient oracle


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps `x` to a scalar tensor and must be deterministic (run dropout
    in eval mode).  The difference quotient is formed in float64; for full
    float64 accuracy build the model under test in float64 as well.
    Error per element: |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    was_required = x.requires_grad
    x.requires_grad = True
    x.grad = None  # a stale gradient would be accumulated into
    try:
        with Graph() as graph:
            out = f(x)
        backward(graph, out)
        if x.grad is None:
            raise ValueError("grad_check: f(x) does not depend on x")
        analytic = x.grad.astype(np.float64).reshape(-1).copy()
        x.grad = None

        flat = x.data.reshape(-1)
        numeric = np.empty(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f(x).data)
            flat[i] = orig - eps
            f_minus = float(f(x).data)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * eps)
    finally:
        x.requires_grad = was_required
        x.grad = None

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
