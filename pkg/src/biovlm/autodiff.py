"""Reverse-mode automatic differentiation over dense float64 tensors.

The tape provides exactly the operations the training objective needs:
matrix products, row softmax, cosine similarity, L2 normalization, Shannon
entropy, elementwise arithmetic, reductions, and row concatenation/slicing.
Storage is row-major float64 with no broadcasting beyond scalar-tensor;
non-finite values anywhere are a hard error.

A graph may be differentiated once. Gradients accumulate additively across
fan-out during that single backward pass; a second ``backward`` touching any
already-consumed node raises :class:`GraphError`.
"""

from __future__ import annotations

from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .errors import DomainError, GraphError, NumericalError, ShapeError

__all__ = [
    "OpKind", "TapeNode", "Tensor", "add", "backward", "concat_rows",
    "constant", "cosine_similarity", "detach", "entropy_rows", "exp",
    "l2_normalize", "log", "log_floored", "matmul", "mean", "mean_axis",
    "mul", "neg", "parameter", "reshape", "scale", "slice_rows", "softmax",
    "sub", "sum_", "sum_axis", "take_per_row", "tanh", "tensor", "transpose",
]

LOG_FLOOR = K.LOG_FLOOR


class OpKind(Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    NEG = "neg"
    SCALE = "scale"
    LOG = "log"
    LOG_FLOORED = "log_floored"
    EXP = "exp"
    TANH = "tanh"
    MATMUL = "matmul"
    TRANSPOSE = "transpose"
    RESHAPE = "reshape"
    CONCAT_ROWS = "concat_rows"
    SLICE_ROWS = "slice_rows"
    SUM = "sum"
    MEAN = "mean"
    SUM_AXIS = "sum_axis"
    MEAN_AXIS = "mean_axis"
    SOFTMAX = "softmax"
    L2_NORMALIZE = "l2_normalize"
    COSINE = "cosine"
    ENTROPY_ROWS = "entropy_rows"
    TAKE_PER_ROW = "take_per_row"


class TapeNode:
    """One recorded operation: kind, input tensors, and saved forward values."""

    __slots__ = ("op_kind", "parents", "saved", "consumed")

    def __init__(self, op_kind: OpKind, parents: tuple["Tensor", ...], saved: tuple):
        self.op_kind = op_kind
        self.parents = parents
        self.saved = saved
        self.consumed = False


class Tensor:
    """Dense float64 array, optionally participating in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False,
                 node: TapeNode | None = None, _checked: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if not _checked and not np.all(np.isfinite(arr)):
            raise NumericalError("tensor contains non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node = node

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    # -- gradient bookkeeping ----------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, _checked=True)

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------

def _result(data: np.ndarray, op: OpKind, parents: tuple[Tensor, ...],
            saved: tuple = ()) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite result in {op.value}")
    needs = any(p.requires_grad for p in parents)
    node = TapeNode(op, parents, saved) if needs else None
    return Tensor(data, requires_grad=needs, node=node, _checked=True)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.size == 1 or b.size == 1:  # scalar-tensor broadcast is the one exception
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(np.sum(grad)).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "add")
    return _result(a.data + b.data, OpKind.ADD, (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "sub")
    return _result(a.data - b.data, OpKind.SUB, (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "mul")
    return _result(a.data * b.data, OpKind.MUL, (a, b), saved=(a.data, b.data))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, OpKind.NEG, (a,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, OpKind.SCALE, (a,), saved=(c,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive input")
    return _result(np.log(a.data), OpKind.LOG, (a,), saved=(a.data,))


def log_floored(a: Tensor, eps: float = LOG_FLOOR) -> Tensor:
    out = K.log_floored(a.data, eps)
    return _result(out, OpKind.LOG_FLOORED, (a,), saved=(a.data, eps))


def exp(a: Tensor) -> Tensor:
    out = K.exp_forward(a.data)
    return _result(out, OpKind.EXP, (a,), saved=(out,))


def tanh(a: Tensor) -> Tensor:
    out = K.tanh_forward(a.data)
    return _result(out, OpKind.TANH, (a,), saved=(out,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul requires 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} x {b.shape} disagree")
    out = K.matmul(a.data, b.data)
    return _result(out, OpKind.MATMUL, (a, b), saved=(a.data, b.data))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose requires a 2-D tensor")
    return _result(np.ascontiguousarray(a.data.T), OpKind.TRANSPOSE, (a,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return _result(a.data.reshape(shape).copy(), OpKind.RESHAPE, (a,),
                   saved=(a.shape,))


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack tensors along axis 0; 1-D inputs are treated as single rows."""
    if not tensors:
        raise ShapeError("concat_rows of empty sequence")
    mats = [t.data if t.data.ndim == 2 else t.data.reshape(1, -1) for t in tensors]
    cols = mats[0].shape[1]
    for m in mats:
        if m.shape[1] != cols:
            raise ShapeError("concat_rows: column counts differ")
    out = np.concatenate(mats, axis=0)
    row_counts = tuple(m.shape[0] for m in mats)
    return _result(out, OpKind.CONCAT_ROWS, tuple(tensors), saved=(row_counts,))


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("slice_rows requires a 2-D tensor")
    if not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for {a.shape}")
    out = a.data[start:stop].copy()
    return _result(out, OpKind.SLICE_ROWS, (a,), saved=(start, stop, a.shape))


def sum_(a: Tensor) -> Tensor:
    return _result(np.asarray(np.sum(a.data)), OpKind.SUM, (a,), saved=(a.shape,))


def mean(a: Tensor) -> Tensor:
    return _result(np.asarray(np.mean(a.data)), OpKind.MEAN, (a,), saved=(a.shape,))


def _mid_view(a: np.ndarray, axis: int) -> np.ndarray:
    """Reshape so the reduced axis is the middle of a 3-D view."""
    outer = int(np.prod(a.shape[:axis], dtype=np.int64))
    inner = int(np.prod(a.shape[axis + 1:], dtype=np.int64))
    return a.reshape(outer, a.shape[axis], inner)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    axis = _norm_axis(a, axis)
    out_shape = a.shape[:axis] + a.shape[axis + 1:]
    out = K.sum_mid(_mid_view(a.data, axis)).reshape(out_shape)
    return _result(out, OpKind.SUM_AXIS, (a,), saved=(axis, a.shape))


def mean_axis(a: Tensor, axis: int) -> Tensor:
    axis = _norm_axis(a, axis)
    out_shape = a.shape[:axis] + a.shape[axis + 1:]
    out = K.mean_mid(_mid_view(a.data, axis)).reshape(out_shape)
    return _result(out, OpKind.MEAN_AXIS, (a,), saved=(axis, a.shape))


def _norm_axis(a: Tensor, axis: int) -> int:
    if axis < 0:
        axis += a.data.ndim
    if not 0 <= axis < a.data.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    return axis


def softmax(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    if a.data.ndim == 0:
        raise ShapeError("softmax requires at least one axis")
    rows = a.data.reshape(-1, a.shape[-1])
    out = K.softmax_rows(rows).reshape(a.shape)
    return _result(out, OpKind.SOFTMAX, (a,), saved=(out,))


def l2_normalize(a: Tensor) -> Tensor:
    """Scale the last axis to unit Euclidean norm (rows of a 2-D tensor)."""
    if a.data.ndim == 0:
        raise ShapeError("l2_normalize requires at least one axis")
    rows = a.data.reshape(-1, a.shape[-1])
    norms = np.sqrt((rows * rows).sum(axis=1))
    if np.any(norms < 1e-300):
        raise DomainError("l2_normalize of a zero-norm vector")
    out, norms = K.l2norm_rows(rows)
    return _result(out.reshape(a.shape), OpKind.L2_NORMALIZE, (a,),
                   saved=(rows, norms))


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """cos(u, v) for 1-D vectors; errors on zero-norm input."""
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise ShapeError("cosine_similarity requires 1-D vectors")
    if u.shape != v.shape:
        raise ShapeError(f"cosine_similarity: shapes {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu < 1e-300 or nv < 1e-300:
        raise DomainError("cosine_similarity of a zero-norm vector")
    cos = float(u.data @ v.data) / (nu * nv)
    return _result(np.asarray(cos, dtype=np.float64), OpKind.COSINE, (u, v),
                   saved=(u.data, v.data, nu, nv, cos))


def entropy_rows(a: Tensor) -> Tensor:
    """Shannon entropy (natural log) over the last axis; 0*log(0) = 0."""
    if a.data.ndim == 0:
        raise ShapeError("entropy_rows requires at least one axis")
    rows = a.data.reshape(-1, a.shape[-1])
    out = K.entropy_rows(rows).reshape(a.shape[:-1])
    return _result(out, OpKind.ENTROPY_ROWS, (a,), saved=(rows,))


def take_per_row(a: Tensor, idx) -> Tensor:
    """out[r] = a[r, idx[r]] for a 2-D tensor and integer index vector."""
    if a.data.ndim != 2:
        raise ShapeError("take_per_row requires a 2-D tensor")
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise ShapeError("take_per_row: index vector must match row count")
    if np.any(idx < 0) or np.any(idx >= a.shape[1]):
        raise IndexError("take_per_row: index out of range")
    out = K.take_per_row(a.data, idx)
    return _result(out, OpKind.TAKE_PER_ROW, (a,), saved=(idx, a.shape))


def detach(a: Tensor) -> Tensor:
    return a.detach()


# ---------------------------------------------------------------------------
# Backward rules
# ---------------------------------------------------------------------------

def _bwd_add(node: TapeNode, g: np.ndarray):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bwd_sub(node: TapeNode, g: np.ndarray):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _bwd_mul(node: TapeNode, g: np.ndarray):
    ad, bd = node.saved
    a, b = node.parents
    return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)


def _bwd_neg(node: TapeNode, g: np.ndarray):
    return (-g,)


def _bwd_scale(node: TapeNode, g: np.ndarray):
    (c,) = node.saved
    return (g * c,)


def _bwd_log(node: TapeNode, g: np.ndarray):
    (x,) = node.saved
    return (g / x,)


def _bwd_log_floored(node: TapeNode, g: np.ndarray):
    x, eps = node.saved
    return (K.log_floored_backward(x, eps, g),)


def _bwd_exp(node: TapeNode, g: np.ndarray):
    (y,) = node.saved
    return (g * y,)


def _bwd_tanh(node: TapeNode, g: np.ndarray):
    (y,) = node.saved
    return (K.tanh_backward(y, g),)


def _bwd_matmul(node: TapeNode, g: np.ndarray):
    a, b = node.saved
    ga = K.matmul(np.ascontiguousarray(g), np.ascontiguousarray(b.T))
    gb = K.matmul(np.ascontiguousarray(a.T), np.ascontiguousarray(g))
    return ga, gb


def _bwd_transpose(node: TapeNode, g: np.ndarray):
    return (np.ascontiguousarray(g.T),)


def _bwd_reshape(node: TapeNode, g: np.ndarray):
    (orig_shape,) = node.saved
    return (g.reshape(orig_shape),)


def _bwd_concat_rows(node: TapeNode, g: np.ndarray):
    (row_counts,) = node.saved
    grads = []
    offset = 0
    for parent, rows in zip(node.parents, row_counts):
        chunk = g[offset:offset + rows]
        grads.append(chunk.reshape(parent.shape))
        offset += rows
    return tuple(grads)


def _bwd_slice_rows(node: TapeNode, g: np.ndarray):
    start, stop, shape = node.saved
    out = np.zeros(shape, dtype=np.float64)
    out[start:stop] = g
    return (out,)


def _bwd_sum(node: TapeNode, g: np.ndarray):
    (shape,) = node.saved
    return (np.full(shape, float(g)),)


def _bwd_mean(node: TapeNode, g: np.ndarray):
    (shape,) = node.saved
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    return (np.full(shape, float(g) / n),)


def _bwd_sum_axis(node: TapeNode, g: np.ndarray):
    axis, shape = node.saved
    return (np.ascontiguousarray(np.repeat(np.expand_dims(g, axis), shape[axis],
                                           axis=axis)),)


def _bwd_mean_axis(node: TapeNode, g: np.ndarray):
    axis, shape = node.saved
    rep = np.repeat(np.expand_dims(g, axis), shape[axis], axis=axis)
    return (np.ascontiguousarray(rep / shape[axis]),)


def _bwd_softmax(node: TapeNode, g: np.ndarray):
    (y,) = node.saved
    cols = y.shape[-1]
    gx = K.softmax_rows_backward(y.reshape(-1, cols),
                                 np.ascontiguousarray(g.reshape(-1, cols)))
    return (gx.reshape(y.shape),)


def _bwd_l2_normalize(node: TapeNode, g: np.ndarray):
    rows, norms = node.saved
    cols = rows.shape[-1]
    gx = K.l2norm_rows_backward(rows, norms,
                                np.ascontiguousarray(g.reshape(-1, cols)))
    return (gx.reshape(node.parents[0].shape),)


def _bwd_cosine(node: TapeNode, g: np.ndarray):
    u, v, nu, nv, cos = node.saved
    gf = float(g)
    gu = gf * (v / (nu * nv) - cos * u / (nu * nu))
    gv = gf * (u / (nu * nv) - cos * v / (nv * nv))
    return gu, gv


def _bwd_entropy_rows(node: TapeNode, g: np.ndarray):
    (rows,) = node.saved
    gh = np.ascontiguousarray(g.reshape(-1), dtype=np.float64)
    gp = K.entropy_rows_backward(rows, gh)
    return (gp.reshape(node.parents[0].shape),)


def _bwd_take_per_row(node: TapeNode, g: np.ndarray):
    idx, shape = node.saved
    return (K.take_per_row_backward(shape[0], shape[1], idx,
                                    np.ascontiguousarray(g)),)


_BACKWARD_RULES: dict[OpKind, Callable] = {
    OpKind.ADD: _bwd_add,
    OpKind.SUB: _bwd_sub,
    OpKind.MUL: _bwd_mul,
    OpKind.NEG: _bwd_neg,
    OpKind.SCALE: _bwd_scale,
    OpKind.LOG: _bwd_log,
    OpKind.LOG_FLOORED: _bwd_log_floored,
    OpKind.EXP: _bwd_exp,
    OpKind.TANH: _bwd_tanh,
    OpKind.MATMUL: _bwd_matmul,
    OpKind.TRANSPOSE: _bwd_transpose,
    OpKind.RESHAPE: _bwd_reshape,
    OpKind.CONCAT_ROWS: _bwd_concat_rows,
    OpKind.SLICE_ROWS: _bwd_slice_rows,
    OpKind.SUM: _bwd_sum,
    OpKind.MEAN: _bwd_mean,
    OpKind.SUM_AXIS: _bwd_sum_axis,
    OpKind.MEAN_AXIS: _bwd_mean_axis,
    OpKind.SOFTMAX: _bwd_softmax,
    OpKind.L2_NORMALIZE: _bwd_l2_normalize,
    OpKind.COSINE: _bwd_cosine,
    OpKind.ENTROPY_ROWS: _bwd_entropy_rows,
    OpKind.TAKE_PER_ROW: _bwd_take_per_row,
}


def _topo_order(root: Tensor) -> list[Tensor]:
    """Tensors with tape nodes, in topological order (parents before children)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if t.node is None:
            continue
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            if p.node is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar root.

    Populates ``grad`` on every tensor with ``requires_grad`` that
    participated in the graph, accumulating additively across fan-out.
    Consumes the graph: a second sweep over any shared node raises.
    """
    if root.size != 1:
        raise ShapeError("backward requires a scalar root")
    if root.node is None:
        if not root.requires_grad:
            raise GraphError("backward on a constant with no graph")
        root.grad = np.ones_like(root.data)
        return

    order = _topo_order(root)
    for t in order:
        if t.node.consumed:
            raise GraphError("backward called twice on the same graph; "
                             "rebuild the graph or reset gradients first")

    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for t in reversed(order):
        node = t.node
        node.consumed = True
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
        parent_grads = _BACKWARD_RULES[node.op_kind](node, g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NumericalError(f"non-finite gradient in {node.op_kind.value}")
            if parent.node is None:
                # leaf: accumulate straight into .grad
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                acc = pending.get(id(parent))
                pending[id(parent)] = pg if acc is None else acc + pg
