"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable operation records its inputs and a backward closure on
the value it produces; calling :meth:`Tensor.backward` on a scalar result
replays the recorded sequence in reverse topological order and accumulates
``d(result)/d(leaf)`` into each leaf's ``grad`` slot.  The whole stack is
float64: the gradient contract (analytic backward within 1e-4 relative of
central finite differences) is not reachable in float32.

Learnable state is a leaf tensor created through :func:`init` with a name;
intermediates are unnamed and their gradient buffers are allocated lazily
during the backward pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NonFinite, ShapeMismatch

Array = np.ndarray


def _as_array(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array with an attached gradient slot.

    ``requires_grad`` leaves are the unit of learnable state (parameters);
    everything else is an intermediate produced by an operation.
    """

    __slots__ = ("data", "grad", "name", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Array | None = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every upstream tensor."""
        if self.data.size != 1:
            raise ShapeMismatch(
                f"backward() needs a scalar, got shape {self.data.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(values) -> Tensor:
    """Wrap raw values as a non-learnable tensor."""
    return values if isinstance(values, Tensor) else Tensor(values)


def _result(data: Array, parents: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = backward
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` along the axes numpy broadcast over."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Array, b: Array, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- arithmetic ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a.data, b.data, "add")
    out_data = a.data + b.data

    def backward():
        a._accumulate(_unbroadcast(out.grad, a.data.shape))
        b._accumulate(_unbroadcast(out.grad, b.data.shape))

    out = _result(out_data, (a, b), backward)
    return out


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a.data, b.data, "sub")
    out_data = a.data - b.data

    def backward():
        a._accumulate(_unbroadcast(out.grad, a.data.shape))
        b._accumulate(_unbroadcast(-out.grad, b.data.shape))

    out = _result(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    """Hadamard (element-wise, broadcasting) product."""
    a, b = constant(a), constant(b)
    _check_broadcast(a.data, b.data, "mul")
    out_data = a.data * b.data

    def backward():
        a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    out = _result(out_data, (a, b), backward)
    return out


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a.data, b.data, "div")
    out_data = a.data / b.data

    def backward():
        a._accumulate(_unbroadcast(out.grad / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-out.grad * out_data / b.data, b.data.shape))

    out = _result(out_data, (a, b), backward)
    return out


def neg(a) -> Tensor:
    a = constant(a)

    def backward():
        a._accumulate(-out.grad)

    out = _result(-a.data, (a,), backward)
    return out


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim > 0 else 0):
        raise ShapeMismatch(f"matmul: inner dims differ, {ad.shape} @ {bd.shape}")
    out_data = ad @ bd

    def backward():
        g = out.grad
        if ad.ndim == 2 and bd.ndim == 2:
            a._accumulate(g @ bd.T)
            b._accumulate(ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 1:
            a._accumulate(np.outer(g, bd))
            b._accumulate(ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            a._accumulate(g @ bd.T)
            b._accumulate(np.outer(ad, g))
        else:  # vector dot product
            a._accumulate(g * bd)
            b._accumulate(g * ad)

    out = _result(out_data, (a, b), backward)
    return out


# -- element-wise nonlinearities ----------------------------------------


def relu(a) -> Tensor:
    a = constant(a)
    out_data = np.maximum(a.data, 0.0)

    def backward():
        a._accumulate(out.grad * (a.data > 0.0))

    out = _result(out_data, (a,), backward)
    return out


def sigmoid(a) -> Tensor:
    a = constant(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0.0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward():
        a._accumulate(out.grad * out_data * (1.0 - out_data))

    out = _result(out_data, (a,), backward)
    return out


def log(a) -> Tensor:
    a = constant(a)
    out_data = np.log(a.data)

    def backward():
        a._accumulate(out.grad / a.data)

    out = _result(out_data, (a,), backward)
    return out


def exp(a) -> Tensor:
    a = constant(a)
    out_data = np.exp(a.data)

    def backward():
        a._accumulate(out.grad * out_data)

    out = _result(out_data, (a,), backward)
    return out


def sqrt(a) -> Tensor:
    a = constant(a)
    out_data = np.sqrt(a.data)

    def backward():
        a._accumulate(out.grad * 0.5 / out_data)

    out = _result(out_data, (a,), backward)
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes inside [lo, hi] inclusive."""
    a = constant(a)
    out_data = np.clip(a.data, lo, hi)

    def backward():
        inside = (a.data >= lo) & (a.data <= hi)
        a._accumulate(out.grad * inside)

    out = _result(out_data, (a,), backward)
    return out


def huber_unit(a) -> Tensor:
    """Element-wise 0.5*x^2 for |x| < 1, |x| - 0.5 otherwise (C1 at |x|=1)."""
    a = constant(a)
    x = a.data
    absx = np.abs(x)
    quad = absx < 1.0
    out_data = np.where(quad, 0.5 * x * x, absx - 0.5)

    def backward():
        a._accumulate(out.grad * np.where(quad, x, np.sign(x)))

    out = _result(out_data, (a,), backward)
    return out


# -- reductions ----------------------------------------------------------


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    out = _result(out_data, (a,), backward)
    return out


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape) / n)

    out = _result(out_data, (a,), backward)
    return out


def tmax(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties route the gradient to the first maximal entry."""
    a = constant(a)
    out_data = a.data.max(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if axis is None:
            mask = np.zeros_like(a.data)
            mask[np.unravel_index(np.argmax(a.data), a.data.shape)] = 1.0
            a._accumulate(mask * g)
            return
        idx = np.argmax(a.data, axis=axis)
        scatter = np.zeros_like(a.data)
        grid = np.indices(idx.shape)
        index = list(grid)
        index.insert(axis, idx)
        gv = g if keepdims else np.expand_dims(g, axis)
        scatter[tuple(index)] = np.squeeze(gv, axis=axis)
        a._accumulate(scatter)

    out = _result(out_data, (a,), backward)
    return out


# -- structure ------------------------------------------------------------


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    items = [constant(p) for p in parts]
    if not items:
        raise ShapeMismatch("concat: empty input")
    out_data = np.concatenate([p.data for p in items], axis=axis)
    sizes = [p.data.shape[axis] for p in items]

    def backward():
        offset = 0
        for p, size in zip(items, sizes):
            sl = [slice(None)] * out_data.ndim
            sl[axis] = slice(offset, offset + size)
            p._accumulate(out.grad[tuple(sl)])
            offset += size

    out = _result(out_data, items, backward)
    return out


def gather(a, index) -> Tensor:
    """Select rows of a matrix, or entries of a vector, by integer index."""
    a = constant(a)
    idx = np.asarray(index, dtype=np.intp)
    out_data = a.data[idx]

    def backward():
        g = np.zeros_like(a.data)
        np.add.at(g, idx, out.grad)
        a._accumulate(g)

    out = _result(out_data, (a,), backward)
    return out


def gather_col(a, col: int) -> Tensor:
    """One column of a matrix as an (n, 1) tensor."""
    a = constant(a)
    out_data = a.data[:, col : col + 1]

    def backward():
        g = np.zeros_like(a.data)
        g[:, col : col + 1] = out.grad
        a._accumulate(g)

    out = _result(out_data, (a,), backward)
    return out


def transpose(a) -> Tensor:
    a = constant(a)

    def backward():
        a._accumulate(out.grad.T)

    out = _result(a.data.T, (a,), backward)
    return out


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = constant(a)
    out_data = a.data.reshape(shape)

    def backward():
        a._accumulate(out.grad.reshape(a.data.shape))

    out = _result(out_data, (a,), backward)
    return out


def spmm(matrix: sp.spmatrix, a) -> Tensor:
    """Sparse constant matrix times dense tensor; the matrix is not learnable."""
    a = constant(a)
    csr = matrix.tocsr()
    if csr.shape[1] != a.data.shape[0]:
        raise ShapeMismatch(f"spmm: {csr.shape} @ {a.data.shape}")
    out_data = np.asarray(csr @ a.data)
    csr_t = csr.T.tocsr()

    def backward():
        a._accumulate(np.asarray(csr_t @ out.grad))

    out = _result(out_data, (a,), backward)
    return out


# -- fixed-size segment reductions (stacked graphs of equal node count) ---


def segment_sum(a, n_segments: int) -> Tensor:
    a = constant(a)
    rows, dim = a.data.shape
    if rows % n_segments:
        raise ShapeMismatch(f"segment_sum: {rows} rows not divisible by {n_segments}")
    per = rows // n_segments
    out_data = a.data.reshape(n_segments, per, dim).sum(axis=1)

    def backward():
        a._accumulate(np.repeat(out.grad, per, axis=0))

    out = _result(out_data, (a,), backward)
    return out


def segment_mean(a, n_segments: int, sort_values: bool = False) -> Tensor:
    """Per-segment mean.  ``sort_values`` sums entries in ascending order per
    feature so the result is bit-identical under within-segment permutation."""
    a = constant(a)
    rows, dim = a.data.shape
    if rows % n_segments:
        raise ShapeMismatch(f"segment_mean: {rows} rows not divisible by {n_segments}")
    per = rows // n_segments
    blocks = a.data.reshape(n_segments, per, dim)
    if sort_values:
        # contiguity fixes the pairwise-summation order, so equal multisets
        # of values reduce to bit-identical sums
        ordered = np.ascontiguousarray(np.sort(blocks, axis=1))
        out_data = ordered.sum(axis=1) / per
    else:
        out_data = blocks.mean(axis=1)

    def backward():
        a._accumulate(np.repeat(out.grad, per, axis=0) / per)

    out = _result(out_data, (a,), backward)
    return out


def segment_max(a, n_segments: int) -> Tensor:
    a = constant(a)
    rows, dim = a.data.shape
    if rows % n_segments:
        raise ShapeMismatch(f"segment_max: {rows} rows not divisible by {n_segments}")
    per = rows // n_segments
    blocks = a.data.reshape(n_segments, per, dim)
    out_data = blocks.max(axis=1)

    def backward():
        idx = np.argmax(blocks, axis=1)  # first max within each segment
        g = np.zeros_like(blocks)
        s_idx, d_idx = np.indices(idx.shape)
        g[s_idx, idx, d_idx] = out.grad
        a._accumulate(g.reshape(rows, dim))

    out = _result(out_data, (a,), backward)
    return out


def expand_rows(a, repeats: int) -> Tensor:
    """Repeat each row ``repeats`` times (inverse adjoint of segment_sum)."""
    a = constant(a)
    out_data = np.repeat(a.data, repeats, axis=0)

    def backward():
        rows, dim = out.grad.shape
        a._accumulate(out.grad.reshape(rows // repeats, repeats, dim).sum(axis=1))

    out = _result(out_data, (a,), backward)
    return out


def tile_rows(a, reps: int) -> Tensor:
    """Stack ``reps`` copies of a matrix vertically."""
    a = constant(a)
    rows, dim = a.data.shape
    out_data = np.tile(a.data, (reps, 1))

    def backward():
        a._accumulate(out.grad.reshape(reps, rows, dim).sum(axis=0))

    out = _result(out_data, (a,), backward)
    return out


def norm2(a) -> Tensor:
    """Euclidean norm of a vector as a scalar tensor."""
    return sqrt(tsum(mul(a, a)))


# -- initialization -------------------------------------------------------


@dataclass(frozen=True)
class InitScheme:
    """Deterministic parameter initialization recipe.

    kind: 'uniform-fan-avg' draws U(-a, a) with a = sqrt(6 / (fan_in + fan_out));
    'zeros' and 'constant' fill uniformly.
    """

    kind: str = "uniform-fan-avg"
    seed: int = 0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform-fan-avg", "zeros", "constant"):
            raise ValueError(f"unknown init kind: {self.kind!r}")


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 1:
        return shape[0], 1
    return shape[1], shape[0]


def init(shape: tuple[int, ...] | int, scheme: InitScheme, name: str = "") -> Tensor:
    """Create a learnable tensor (1-D or 2-D) from an initialization scheme."""
    if isinstance(shape, int):
        shape = (shape,)
    if len(shape) not in (1, 2):
        raise ShapeMismatch(f"init: parameters must be 1-D or 2-D, got {shape}")
    if scheme.kind == "zeros":
        data = np.zeros(shape)
    elif scheme.kind == "constant":
        data = np.full(shape, float(scheme.value))
    else:
        fan_in, fan_out = _fans(shape)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        rng = np.random.default_rng(scheme.seed)
        data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=True, name=name)


def parameter(data, name: str = "") -> Tensor:
    """Wrap explicit values as a learnable tensor."""
    return Tensor(data, requires_grad=True, name=name)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# -- finite-difference verification ---------------------------------------


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds its computation from the live ``params`` on every call and
    returns a scalar tensor.  The relative error of each parameter entry is
    |analytic - numeric| / max(1e-8, |numeric|); entries where the two agree
    within 1e-8 absolute count as exact, since near-zero gradients cannot be
    resolved below the rounding noise of the two objective evaluations.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    zero_grads(params)
    base = f()
    if not np.all(np.isfinite(base.data)):
        raise NonFinite("objective is not finite at the evaluation point")
    base.backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NonFinite("objective is not finite near the evaluation point")
            numeric = (up - down) / (2.0 * eps)
            diff = abs(ana_flat[i] - numeric)
            if diff <= 1e-8:
                continue
            rel = diff / max(1e-8, abs(numeric))
            if rel > worst:
                worst = rel
    return worst


# -- checkpoint format -----------------------------------------------------


def save_checkpoint(params: dict[str, Tensor], path: str | Path) -> None:
    """Write parameters as JSON ``name -> {shape, values}`` (row-major).

    Python's repr-based float serialization round-trips float64 exactly.
    """
    payload = {
        name: {"shape": list(t.data.shape), "values": t.data.reshape(-1).tolist()}
        for name, t in params.items()
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> dict[str, Tensor]:
    payload = json.loads(Path(path).read_text())
    out: dict[str, Tensor] = {}
    for name, record in payload.items():
        data = np.asarray(record["values"], dtype=np.float64).reshape(record["shape"])
        out[name] = Tensor(data, requires_grad=True, name=name)
    return out


def load_checkpoint_into(params: dict[str, Tensor], path: str | Path) -> None:
    """Copy stored values into an existing parameter set (shapes must match)."""
    stored = load_checkpoint(path)
    missing = set(params) ^ set(stored)
    if missing:
        raise KeyError(f"checkpoint parameter names differ: {sorted(missing)}")
    for name, p in params.items():
        src = stored[name].data
        if src.shape != p.data.shape:
            raise ShapeMismatch(
                f"checkpoint {name}: stored {src.shape} vs model {p.data.shape}"
            )
        p.data[...] = src
