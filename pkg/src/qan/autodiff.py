"""Reverse-mode differentiable matrix core.

Everything the trainer differentiates goes through :class:`Matrix`, a 2-D
float64 value that doubles as a node in a dynamically built computation
graph.  Each operation records its parents and a closure that propagates
the output gradient back to them; :func:`backward` runs the closures in
reverse topological order.  There is no batching of graphs: one graph per
forward pass, confined to one thread.  Matrix data is treated as immutable
once produced by an op (only the optimizer mutates parameter data).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, Sequence

import numpy as np
from scipy.special import expit as stable_sigmoid

from .errors import ConfigError, ShapeError

Mode = Literal["train", "eval"]

# Additive fill for positions excluded from a softmax normalization.  Large
# enough that exp(fill - row_max) underflows to 0, small enough to stay finite.
MASK_FILL = -1e30


class Matrix:
    """A 2-D float64 value and node in the computation graph.

    ``grad`` has the same shape as ``data`` and reads as zero until a
    backward pass (or a caller) touches it; it is materialized lazily so
    forward-only evaluation allocates nothing extra.  Repeated backward
    passes accumulate, so parameters must be zeroed between optimizer
    steps (see :func:`zero_gradients`).
    """

    __slots__ = ("data", "_grad", "op", "parents", "_vjp")

    def __init__(self, data, *, op: str = "input", parents: tuple = (),
                 vjp: Callable[[np.ndarray], None] | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"Matrix must be 2-D, got shape {arr.shape}")
        self.data = arr
        self._grad = None
        self.op = op
        self.parents = parents
        self._vjp = vjp

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = value

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols}, op={self.op!r})"

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    # Convenience operators; all defer to the module-level ops.
    def __matmul__(self, other: "Matrix") -> "Matrix":
        return matmul(self, other)

    def __add__(self, other: "Matrix") -> "Matrix":
        return add(self, other)

    def __sub__(self, other: "Matrix") -> "Matrix":
        return sub(self, other)

    def __mul__(self, other: "Matrix") -> "Matrix":
        return mul(self, other)


def _node(data: np.ndarray, op: str, parents: tuple,
          vjp: Callable[[np.ndarray], None]) -> Matrix:
    return Matrix(data, op=op, parents=parents, vjp=vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # Reverse a row-vector broadcast: (1, c) operand inside an (r, c) op.
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[1] == shape[1]:
        return g.sum(axis=0, keepdims=True)
    raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


def _check_same_or_row(a: Matrix, b: Matrix, op: str) -> None:
    ok = a.shape == b.shape or (
        a.cols == b.cols and 1 in (a.rows, b.rows))
    if not ok:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product (r x k) @ (k x c) -> (r x c)."""
    if a.cols != b.rows:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape} x {b.shape}")

    def vjp(g: np.ndarray) -> None:
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    return _node(a.data @ b.data, "matmul", (a, b), vjp)


def add(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise sum; a (1 x c) operand broadcasts over rows."""
    _check_same_or_row(a, b, "add")

    def vjp(g: np.ndarray) -> None:
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    return _node(a.data + b.data, "add", (a, b), vjp)


def sub(a: Matrix, b: Matrix) -> Matrix:
    _check_same_or_row(a, b, "sub")

    def vjp(g: np.ndarray) -> None:
        a.grad += _unbroadcast(g, a.shape)
        b.grad -= _unbroadcast(g, b.shape)

    return _node(a.data - b.data, "sub", (a, b), vjp)


def mul(a: Matrix, b: Matrix) -> Matrix:
    """Hadamard product; a (1 x c) operand broadcasts over rows."""
    _check_same_or_row(a, b, "mul")

    def vjp(g: np.ndarray) -> None:
        a.grad += _unbroadcast(g * b.data, a.shape)
        b.grad += _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, "mul", (a, b), vjp)


def scale(a: Matrix, c: float) -> Matrix:
    def vjp(g: np.ndarray) -> None:
        a.grad += c * g

    return _node(a.data * c, "scale", (a,), vjp)


def add_scalar(a: Matrix, c: float) -> Matrix:
    def vjp(g: np.ndarray) -> None:
        a.grad += g

    return _node(a.data + c, "add_scalar", (a,), vjp)


def neg(a: Matrix) -> Matrix:
    return scale(a, -1.0)


def transpose(a: Matrix) -> Matrix:
    def vjp(g: np.ndarray) -> None:
        a.grad += g.T

    return _node(a.data.T, "transpose", (a,), vjp)


def sigmoid(a: Matrix) -> Matrix:
    out = stable_sigmoid(a.data)

    def vjp(g: np.ndarray) -> None:
        a.grad += g * out * (1.0 - out)

    return _node(out, "sigmoid", (a,), vjp)


def tanh(a: Matrix) -> Matrix:
    out = np.tanh(a.data)

    def vjp(g: np.ndarray) -> None:
        a.grad += g * (1.0 - out * out)

    return _node(out, "tanh", (a,), vjp)


def log(a: Matrix) -> Matrix:
    def vjp(g: np.ndarray) -> None:
        a.grad += g / a.data

    return _node(np.log(a.data), "log", (a,), vjp)


def clamp_min(a: Matrix, floor: float) -> Matrix:
    out = np.maximum(a.data, floor)
    passthrough = a.data > floor

    def vjp(g: np.ndarray) -> None:
        a.grad += g * passthrough

    return _node(out, "clamp_min", (a,), vjp)


def softmax_rows(a: Matrix) -> Matrix:
    """Row-wise softmax, stabilized by per-row max subtraction."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g: np.ndarray) -> None:
        inner = (g * out).sum(axis=1, keepdims=True)
        a.grad += out * (g - inner)

    return _node(out, "softmax_rows", (a,), vjp)


def sum_all(a: Matrix) -> Matrix:
    def vjp(g: np.ndarray) -> None:
        a.grad += g[0, 0]

    return _node(np.array([[a.data.sum()]]), "sum_all", (a,), vjp)


def row(a: Matrix, i: int) -> Matrix:
    """Extract row i as a (1 x cols) node."""
    def vjp(g: np.ndarray) -> None:
        a.grad[i] += g[0]

    return _node(a.data[i:i + 1], "row", (a,), vjp)


def cell(a: Matrix, i: int, j: int) -> Matrix:
    def vjp(g: np.ndarray) -> None:
        a.grad[i, j] += g[0, 0]

    return _node(a.data[i:i + 1, j:j + 1], "cell", (a,), vjp)


def tile_rows(a: Matrix, n: int) -> Matrix:
    """Repeat a (1 x c) row vector into an (n x c) matrix."""
    if a.rows != 1:
        raise ShapeError(f"tile_rows expects a row vector, got {a.shape}")

    def vjp(g: np.ndarray) -> None:
        a.grad += g.sum(axis=0, keepdims=True)

    return _node(np.repeat(a.data, n, axis=0), "tile_rows", (a,), vjp)


def _offsets(sizes: list[int]) -> list[int]:
    out = [0]
    for size in sizes:
        out.append(out[-1] + size)
    return out


def concat_cols(parts: Sequence[Matrix]) -> Matrix:
    """Concatenate along columns; all parts must share the row count."""
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat_cols: no parts")
    r = parts[0].data.shape[0]
    if any(p.data.shape[0] != r for p in parts):
        raise ShapeError(
            f"concat_cols: row counts differ: {[p.shape for p in parts]}")
    offsets = _offsets([p.data.shape[1] for p in parts])

    def vjp(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets, offsets[1:]):
            p.grad += g[:, lo:hi]

    data = np.concatenate([p.data for p in parts], axis=1)
    return _node(data, "concat_cols", parts, vjp)


def concat_rows(parts: Sequence[Matrix]) -> Matrix:
    """Stack along rows; all parts must share the column count."""
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat_rows: no parts")
    c = parts[0].data.shape[1]
    if any(p.data.shape[1] != c for p in parts):
        raise ShapeError(
            f"concat_rows: column counts differ: {[p.shape for p in parts]}")
    offsets = _offsets([p.data.shape[0] for p in parts])

    def vjp(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets, offsets[1:]):
            p.grad += g[lo:hi]

    data = np.concatenate([p.data for p in parts], axis=0)
    return _node(data, "concat_rows", parts, vjp)


def embedding_rows(table: Matrix, ids: Sequence[int]) -> Matrix:
    """Gather table rows by id into an (L x d) node, with scatter-add backward."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.rows):
        raise ShapeError(
            f"embedding_rows: id out of range for table with {table.rows} rows")

    def vjp(g: np.ndarray) -> None:
        np.add.at(table.grad, idx, g)

    return _node(table.data[idx], "embedding_rows", (table,), vjp)


def mask_rows(a: Matrix, mask: np.ndarray) -> Matrix:
    """Zero out rows where mask is False (mask is a constant, not a node)."""
    m = np.asarray(mask, dtype=bool).reshape(-1, 1)
    if m.shape[0] != a.rows:
        raise ShapeError(f"mask_rows: mask length {m.shape[0]} != rows {a.rows}")

    def vjp(g: np.ndarray) -> None:
        a.grad += g * m

    return _node(a.data * m, "mask_rows", (a,), vjp)


def add_constant(a: Matrix, const: np.ndarray) -> Matrix:
    """Add a non-differentiable constant array (e.g. an attention mask)."""
    c = np.asarray(const, dtype=np.float64)
    if c.shape != a.shape:
        raise ShapeError(f"add_constant: {c.shape} != {a.shape}")

    def vjp(g: np.ndarray) -> None:
        a.grad += g

    return _node(a.data + c, "add_constant", (a,), vjp)


def max_over_rows(a: Matrix, mask: np.ndarray | None = None) -> Matrix:
    """Column-wise max over unmasked rows -> (1 x cols).

    Gradient routes to the first row attaining each column maximum.
    """
    keep = _row_mask(a, mask, "max_over_rows")
    sub_data = a.data[keep]
    arg = sub_data.argmax(axis=0)
    out = sub_data[arg, np.arange(a.cols)]
    kept_indices = np.flatnonzero(keep)
    winners = kept_indices[arg]

    def vjp(g: np.ndarray) -> None:
        np.add.at(a.grad, (winners, np.arange(a.cols)), g[0])

    return _node(out.reshape(1, -1), "max_over_rows", (a,), vjp)


def mean_over_rows(a: Matrix, mask: np.ndarray | None = None) -> Matrix:
    """Column-wise mean over unmasked rows -> (1 x cols)."""
    keep = _row_mask(a, mask, "mean_over_rows")
    k = int(keep.sum())
    out = a.data[keep].mean(axis=0, keepdims=True)

    def vjp(g: np.ndarray) -> None:
        a.grad[keep] += g / k

    return _node(out, "mean_over_rows", (a,), vjp)


def _row_mask(a: Matrix, mask: np.ndarray | None, op: str) -> np.ndarray:
    from .errors import EmptyInputError

    if mask is None:
        keep = np.ones(a.rows, dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != (a.rows,):
            raise ShapeError(f"{op}: mask length {keep.shape} != rows {a.rows}")
    if a.rows == 0 or not keep.any():
        raise EmptyInputError(f"{op}: every row is masked")
    return keep


def dropout(a: Matrix, rate: float, mode: Mode,
            rng: np.random.Generator) -> Matrix:
    """Inverted dropout: train mode scales survivors by 1/(1-rate).

    Eval mode (and rate 0) returns the input node unchanged, so no
    rescaling is ever needed at evaluation time.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def vjp(g: np.ndarray) -> None:
        a.grad += g * keep

    return _node(a.data * keep, "dropout", (a,), vjp)


def topological_order(root: Matrix) -> list[Matrix]:
    """Parents-before-children ordering of the graph below ``root``.

    Iterative so GRU chains over long sequences cannot overflow the
    Python recursion limit.
    """
    order: list[Matrix] = []
    seen: set[int] = set()
    stack: list[tuple[Matrix, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Matrix) -> None:
    """Accumulate d(loss)/d(node) into every node's ``grad``.

    The loss must be a 1x1 scalar node.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be 1x1, got {loss.shape}")
    order = topological_order(loss)
    loss.grad += 1.0
    for node in reversed(order):
        if node._vjp is not None:
            node._vjp(node.grad)


def zero_gradients(params: Iterable[Matrix]) -> None:
    for p in params:
        p._grad = None


@dataclass
class AdamState:
    """Adam moments plus the shared step counter and coefficients.

    ``weight_decay`` is the L2 coefficient added to the raw gradient as
    ``g + weight_decay * w`` before the moment updates.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Matrix],
              grads: dict[str, np.ndarray] | None,
              state: AdamState) -> dict[str, Matrix]:
    """One bias-corrected Adam update, in place on ``params``.

    ``grads`` defaults to each parameter's accumulated ``grad``.
    """
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad if grads is None else np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(
                f"adam_step: gradient {g.shape} != parameter {p.shape} for {name!r}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def finite_difference_gradients(loss_fn: Callable[[], float],
                                params: dict[str, Matrix],
                                h: float = 1e-4) -> dict[str, np.ndarray]:
    """Central-difference gradients of ``loss_fn`` w.r.t. every parameter entry.

    Independent of the graph machinery above; used as the oracle in
    gradient-correctness tests.
    """
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        out[name] = g
    return out


def gradient_close(analytic: np.ndarray, numeric: np.ndarray,
                   rel_tol: float = 1e-4, abs_tol: float = 1e-6) -> bool:
    """Relative comparison with an absolute floor near zero."""
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    return bool(np.all((err <= abs_tol) | (err <= rel_tol * denom)))
