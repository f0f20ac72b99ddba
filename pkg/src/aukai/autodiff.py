"""Dense float64 tensors and a tape-based reverse-mode differentiator.

Every trainable module computes its losses through `Tape` ops so that
gradients come out of a single backward pass that can be cross-checked
against central finite differences. Rank is limited to 2 and there is no
implicit broadcasting; batched work goes through the explicit row-wise
ops. Tapes are single-use and single-threaded.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the operation."""


class NonFiniteError(ValueError):
    """NaN or infinity crossed a validation boundary."""


class ContractError(RuntimeError):
    """An operation was called outside its contract."""


class Tensor:
    """Immutable rank <= 2 float64 array, validated finite at construction."""

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} tensors are unsupported (max 2)")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor values must be finite")
        arr.setflags(write=False)
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def tolist(self):
        return self.data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


def _as_array(value) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"rank {arr.ndim} values are unsupported (max 2)")
    return arr


# A pullback maps the node's output adjoint to one parent's adjoint
# contribution. Pullbacks capture forward-time values by closure.
_Pull = tuple[int, Callable[[np.ndarray], np.ndarray]]


class Var:
    """Handle to a tape node; the value is computed eagerly at record time."""

    __slots__ = ("tape", "id", "val")

    def __init__(self, tape: "Tape", node_id: int, val: np.ndarray) -> None:
        self.tape = tape
        self.id = node_id
        self.val = val

    @property
    def shape(self) -> tuple[int, ...]:
        return self.val.shape

    def item(self) -> float:
        if self.val.size != 1:
            raise ContractError("item() requires a scalar node")
        return float(self.val)

    # light operator sugar; everything delegates to the owning tape
    def __add__(self, other):
        if isinstance(other, Var):
            return self.tape.add(self, other)
        return self.tape.add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return self.tape.sub(self, other)
        return self.tape.add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Var):
            return self.tape.mul(self, other)
        return self.tape.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.neg(self)

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.val.shape})"


class Tape:
    """Append-only record of operations; node ids are in topological order."""

    def __init__(self) -> None:
        self._pulls: list[tuple[_Pull, ...]] = []
        self._ops: list[str] = []
        self._leaves: dict[str, tuple[int, tuple[int, ...]]] = {}

    def __len__(self) -> int:
        return len(self._ops)

    def _node(self, op: str, val: np.ndarray, pulls: tuple[_Pull, ...]) -> Var:
        self._ops.append(op)
        self._pulls.append(pulls)
        return Var(self, len(self._ops) - 1, val)

    # ------------------------------------------------------------------ roots

    def leaf(self, name: str, value) -> Var:
        """Register a named differentiable input (a parameter)."""
        if name in self._leaves:
            raise ContractError(f"duplicate leaf name {name!r}")
        arr = _as_array(value)
        v = self._node("leaf", arr, ())
        self._leaves[name] = (v.id, arr.shape)
        return v

    def const(self, value) -> Var:
        """Record a constant; no gradient flows into it."""
        return self._node("const", _as_array(value), ())

    def detach(self, a: Var) -> Var:
        """Copy of `a` through which no gradient flows."""
        return self._node("const", a.val, ())

    # ------------------------------------------------------- elementwise pairs

    def _check_same_shape(self, a: Var, b: Var, op: str) -> None:
        if a.val.shape != b.val.shape:
            raise ShapeError(f"{op}: shapes {a.val.shape} and {b.val.shape} differ")

    def add(self, a: Var, b: Var) -> Var:
        self._check_same_shape(a, b, "add")
        return self._node("add", a.val + b.val, ((a.id, lambda g: g), (b.id, lambda g: g)))

    def sub(self, a: Var, b: Var) -> Var:
        self._check_same_shape(a, b, "sub")
        return self._node("sub", a.val - b.val, ((a.id, lambda g: g), (b.id, lambda g: -g)))

    def mul(self, a: Var, b: Var) -> Var:
        self._check_same_shape(a, b, "mul")
        av, bv = a.val, b.val
        return self._node(
            "mul", av * bv, ((a.id, lambda g: g * bv), (b.id, lambda g: g * av))
        )

    def scale(self, a: Var, c: float) -> Var:
        c = float(c)
        return self._node("scale", a.val * c, ((a.id, lambda g: g * c),))

    def add_scalar(self, a: Var, c: float) -> Var:
        return self._node("add_scalar", a.val + float(c), ((a.id, lambda g: g),))

    def neg(self, a: Var) -> Var:
        return self._node("neg", -a.val, ((a.id, lambda g: -g),))

    # ------------------------------------------------------------ linear maps

    def matvec(self, w: Var, x: Var) -> Var:
        if w.val.ndim != 2 or x.val.ndim != 1:
            raise ShapeError("matvec expects a matrix and a vector")
        if w.val.shape[1] != x.val.shape[0]:
            raise ShapeError(
                f"matvec: inner dims {w.val.shape[1]} and {x.val.shape[0]} differ"
            )
        wv, xv = w.val, x.val
        return self._node(
            "matvec",
            wv @ xv,
            ((w.id, lambda g: np.outer(g, xv)), (x.id, lambda g: wv.T @ g)),
        )

    def affine(self, w: Var, x: Var, b: Var) -> Var:
        """w @ x + b for a single vector."""
        if b.val.ndim != 1:
            raise ShapeError("affine expects a vector bias")
        return self.add(self.matvec(w, x), b)

    def matmul_rt(self, x: Var, w: Var) -> Var:
        """Row batch through a weight matrix: x (n,i) @ w (o,i)^T -> (n,o)."""
        if x.val.ndim != 2 or w.val.ndim != 2:
            raise ShapeError("matmul_rt expects two matrices")
        if x.val.shape[1] != w.val.shape[1]:
            raise ShapeError(
                f"matmul_rt: inner dims {x.val.shape[1]} and {w.val.shape[1]} differ"
            )
        xv, wv = x.val, w.val
        return self._node(
            "matmul_rt",
            xv @ wv.T,
            ((x.id, lambda g: g @ wv), (w.id, lambda g: g.T @ xv)),
        )

    def add_rows(self, x: Var, b: Var) -> Var:
        """Add a vector to every row of a matrix."""
        if x.val.ndim != 2 or b.val.ndim != 1 or x.val.shape[1] != b.val.shape[0]:
            raise ShapeError(f"add_rows: shapes {x.val.shape} and {b.val.shape}")
        return self._node(
            "add_rows",
            x.val + b.val[None, :],
            ((x.id, lambda g: g), (b.id, lambda g: g.sum(axis=0))),
        )

    def affine_rows(self, x: Var, w: Var, b: Var) -> Var:
        """x @ w^T + b applied row-wise."""
        return self.add_rows(self.matmul_rt(x, w), b)

    # ------------------------------------------------------------- activations

    def tanh(self, a: Var) -> Var:
        y = np.tanh(a.val)
        return self._node("tanh", y, ((a.id, lambda g: g * (1.0 - y * y)),))

    def sigmoid(self, a: Var) -> Var:
        y = 1.0 / (1.0 + np.exp(-a.val))
        return self._node("sigmoid", y, ((a.id, lambda g: g * y * (1.0 - y)),))

    def relu(self, a: Var) -> Var:
        y = np.maximum(a.val, 0.0)
        mask = a.val > 0.0
        return self._node("relu", y, ((a.id, lambda g: g * mask),))

    def exp(self, a: Var) -> Var:
        y = np.exp(a.val)
        return self._node("exp", y, ((a.id, lambda g: g * y),))

    def log(self, a: Var) -> Var:
        if np.any(a.val <= 0.0):
            raise ContractError("log requires strictly positive input")
        av = a.val
        return self._node("log", np.log(av), ((a.id, lambda g: g / av),))

    def softmax(self, a: Var) -> Var:
        """Normalized exponentials along the last axis."""
        if a.val.size == 0:
            raise ShapeError("softmax requires non-empty input")
        z = a.val - a.val.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)

        def pull(g, y=y):
            return y * (g - (g * y).sum(axis=-1, keepdims=True))

        return self._node("softmax", y, ((a.id, pull),))

    def log_softmax(self, a: Var) -> Var:
        if a.val.size == 0:
            raise ShapeError("log_softmax requires non-empty input")
        z = a.val - a.val.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
        y = z - lse
        p = np.exp(y)

        def pull(g, p=p):
            return g - p * g.sum(axis=-1, keepdims=True)

        return self._node("log_softmax", y, ((a.id, pull),))

    # --------------------------------------------------------------- reductions

    def sum(self, a: Var) -> Var:
        shape = a.val.shape
        return self._node(
            "sum", np.asarray(a.val.sum()), ((a.id, lambda g: np.full(shape, float(g))),)
        )

    def sum_sq(self, a: Var) -> Var:
        av = a.val
        return self._node(
            "sum_sq", np.asarray(np.sum(av * av)), ((a.id, lambda g: 2.0 * float(g) * av),)
        )

    def weighted_sumsq(self, x: Var, weights) -> Var:
        """sum_k w_k * sum_j x[k,j]^2 for a row batch with constant weights."""
        w = np.asarray(weights, dtype=np.float64)
        if x.val.ndim != 2 or w.ndim != 1 or w.shape[0] != x.val.shape[0]:
            raise ShapeError(f"weighted_sumsq: shapes {x.val.shape} and {w.shape}")
        xv = x.val
        val = np.asarray(np.sum((xv * xv).sum(axis=1) * w))
        return self._node(
            "weighted_sumsq", val, ((x.id, lambda g: 2.0 * float(g) * xv * w[:, None]),)
        )

    def dot(self, a: Var, b: Var) -> Var:
        if a.val.ndim != 1 or b.val.ndim != 1 or a.val.shape != b.val.shape:
            raise ShapeError(f"dot: shapes {a.val.shape} and {b.val.shape}")
        av, bv = a.val, b.val
        return self._node(
            "dot",
            np.asarray(av @ bv),
            ((a.id, lambda g: float(g) * bv), (b.id, lambda g: float(g) * av)),
        )

    # ------------------------------------------------------- structure shuffling

    def concat(self, parts: list[Var]) -> Var:
        if not parts:
            raise ShapeError("concat requires at least one part")
        for p in parts:
            if p.val.ndim != 1:
                raise ShapeError("concat works on vectors")
        sizes = [p.val.shape[0] for p in parts]
        offsets = np.cumsum([0] + sizes)
        val = np.concatenate([p.val for p in parts])
        pulls = tuple(
            (p.id, (lambda g, s=offsets[i], e=offsets[i + 1]: g[s:e]))
            for i, p in enumerate(parts)
        )
        return self._node("concat", val, pulls)

    def hstack(self, parts: list[Var]) -> Var:
        if not parts:
            raise ShapeError("hstack requires at least one part")
        rows = parts[0].val.shape[0]
        for p in parts:
            if p.val.ndim != 2 or p.val.shape[0] != rows:
                raise ShapeError("hstack parts must be matrices with equal row counts")
        widths = [p.val.shape[1] for p in parts]
        offsets = np.cumsum([0] + widths)
        val = np.hstack([p.val for p in parts])
        pulls = tuple(
            (p.id, (lambda g, s=offsets[i], e=offsets[i + 1]: g[:, s:e]))
            for i, p in enumerate(parts)
        )
        return self._node("hstack", val, pulls)

    def pick(self, v: Var, index: int) -> Var:
        if v.val.ndim != 1:
            raise ShapeError("pick works on vectors")
        n = v.val.shape[0]
        if not 0 <= index < n:
            raise ShapeError(f"pick: index {index} out of range for length {n}")

        def pull(g, n=n, i=index):
            out = np.zeros(n)
            out[i] = float(g)
            return out

        return self._node("pick", np.asarray(v.val[index]), ((v.id, pull),))

    def pick_rows(self, x: Var, indices) -> Var:
        """out[k] = x[k, indices[k]]."""
        idx = np.asarray(indices, dtype=np.intp)
        if x.val.ndim != 2 or idx.ndim != 1 or idx.shape[0] != x.val.shape[0]:
            raise ShapeError(f"pick_rows: shapes {x.val.shape} and {idx.shape}")
        if np.any(idx < 0) or np.any(idx >= x.val.shape[1]):
            raise ShapeError("pick_rows: index out of range")
        shape = x.val.shape
        rows = np.arange(shape[0])

        def pull(g, shape=shape, rows=rows, idx=idx):
            out = np.zeros(shape)
            out[rows, idx] = g
            return out

        return self._node("pick_rows", x.val[rows, idx], ((x.id, pull),))

    def slice_vec(self, v: Var, start: int, stop: int) -> Var:
        if v.val.ndim != 1:
            raise ShapeError("slice_vec works on vectors")
        n = v.val.shape[0]
        if not (0 <= start <= stop <= n):
            raise ShapeError(f"slice_vec: [{start}:{stop}] out of range for length {n}")

        def pull(g, n=n, s=start, e=stop):
            out = np.zeros(n)
            out[s:e] = g
            return out

        return self._node("slice_vec", v.val[start:stop], ((v.id, pull),))

    def slice_cols(self, x: Var, start: int, stop: int) -> Var:
        if x.val.ndim != 2:
            raise ShapeError("slice_cols works on matrices")
        n = x.val.shape[1]
        if not (0 <= start <= stop <= n):
            raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for width {n}")
        shape = x.val.shape

        def pull(g, shape=shape, s=start, e=stop):
            out = np.zeros(shape)
            out[:, s:e] = g
            return out

        return self._node("slice_cols", x.val[:, start:stop], ((x.id, pull),))

    # ----------------------------------------------------------------- clamping

    def clip(self, a: Var, lo: float, hi: float) -> Var:
        if not lo < hi:
            raise ContractError("clip requires lo < hi")
        y = np.clip(a.val, lo, hi)
        mask = (a.val > lo) & (a.val < hi)
        return self._node("clip", y, ((a.id, lambda g: g * mask),))

    def min_scalar(self, a: Var, c: float) -> Var:
        """Elementwise min with a constant; gradient passes where a < c."""
        c = float(c)
        y = np.minimum(a.val, c)
        mask = a.val < c
        return self._node("min_scalar", y, ((a.id, lambda g: g * mask),))

    # ----------------------------------------------------------------- backward

    def backward(self, loss: Var) -> dict[str, Tensor]:
        """Adjoints of `loss` for every registered leaf (zeros if untouched)."""
        if loss.tape is not self:
            raise ContractError("loss belongs to a different tape")
        if loss.val.size != 1:
            raise ContractError("backward requires a scalar loss")
        adj: list[np.ndarray | None] = [None] * len(self._ops)
        adj[loss.id] = np.ones_like(loss.val)
        pulls = self._pulls
        for nid in range(loss.id, -1, -1):
            g = adj[nid]
            if g is None:
                continue
            for parent_id, pull in pulls[nid]:
                contrib = pull(g)
                prev = adj[parent_id]
                adj[parent_id] = contrib if prev is None else prev + contrib
        grads: dict[str, Tensor] = {}
        for name, (nid, shape) in self._leaves.items():
            g = adj[nid]
            grads[name] = Tensor(np.zeros(shape) if g is None else g)
        return grads


def finite_diff_check(
    build: Callable[["Tape", dict[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Max relative deviation between backward() and central differences.

    `build(tape, leaves)` must construct a scalar loss from the named
    leaves using tape ops only. The finite-difference route re-evaluates
    the same construction at shifted parameter values, so it shares no
    gradient code with backward().
    """
    if eps <= 0.0:
        raise ContractError("finite_diff_check requires eps > 0")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    tape = Tape()
    leaves = {k: tape.leaf(k, v) for k, v in base.items()}
    grads = tape.backward(build(tape, leaves))

    def value_at(arrs: dict[str, np.ndarray]) -> float:
        t = Tape()
        lv = {k: t.leaf(k, v) for k, v in arrs.items()}
        out = build(t, lv)
        if out.val.size != 1:
            raise ContractError("build must return a scalar")
        return float(out.val)

    worst = 0.0
    for name, arr in base.items():
        g = grads[name].data
        for idx in np.ndindex(arr.shape):
            shifted = dict(base)
            plus = arr.copy()
            plus[idx] += eps
            shifted[name] = plus
            f_plus = value_at(shifted)
            minus = arr.copy()
            minus[idx] -= eps
            shifted[name] = minus
            f_minus = value_at(shifted)
            fd = (f_plus - f_minus) / (2.0 * eps)
            ad = float(g[idx])
            err = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
            if err > worst:
                worst = err
    return worst
