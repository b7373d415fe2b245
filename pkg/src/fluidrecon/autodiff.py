"""Reverse-mode tape with forward-mode tangents layered on top.

The engine differentiates scalar losses with respect to model parameters.
Node values are float64 numpy arrays so that a batch of independent
evaluation points can share one tape node per scalar quantity; the
differentiation semantics stay per-point scalar, and reductions (``asum`` /
``amean``) fold a batch into the scalar loss.

Forward-mode lives in :class:`Dual`: a primal node bundled with tangent
nodes, one per requested input direction.  Because tangents are ordinary
tape nodes, a loss built from them remains differentiable with respect to
parameters (forward-over-reverse), which is what the transport and
momentum residuals need.

A Tape is single-writer.  Independent tapes may be built and run
concurrently; accumulating gradients from several tapes into one shared
ParamStore must be synchronized by the caller.
"""

from __future__ import annotations

import numpy as np


class GraphError(RuntimeError):
    """Structural misuse of a tape (foreign node, bad wiring)."""


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Flat float64 parameter vector plus an aligned gradient vector.

    Slots are registered by name with a shape; ``index_of`` maps
    (name, multi-index) to the flat position, a bijection onto
    [0, len).  Registration is closed the first time the flat arrays
    are materialized.
    """

    def __init__(self):
        self._slots: dict[str, tuple[int, tuple[int, ...]]] = {}
        self._size = 0
        self._values: np.ndarray | None = None
        self._grad: np.ndarray | None = None

    def register(self, name: str, shape: tuple[int, ...]) -> None:
        if self._values is not None:
            raise GraphError("ParamStore is finalized; cannot register %r" % name)
        if name in self._slots:
            raise GraphError("duplicate parameter slot %r" % name)
        self._slots[name] = (self._size, tuple(shape))
        self._size += int(np.prod(shape))

    def _ensure(self) -> None:
        if self._values is None:
            self._values = np.zeros(self._size, dtype=np.float64)
            self._grad = np.zeros(self._size, dtype=np.float64)

    @property
    def size(self) -> int:
        return self._size

    @property
    def values(self) -> np.ndarray:
        self._ensure()
        return self._values

    @property
    def grad(self) -> np.ndarray:
        self._ensure()
        return self._grad

    def slot(self, name: str) -> tuple[int, tuple[int, ...]]:
        return self._slots[name]

    def names(self) -> list[str]:
        return list(self._slots)

    def view(self, name: str) -> np.ndarray:
        """Writable view of one slot, shaped."""
        off, shape = self._slots[name]
        return self.values[off:off + int(np.prod(shape))].reshape(shape)

    def index_of(self, name: str, *idx: int) -> int:
        off, shape = self._slots[name]
        return off + int(np.ravel_multi_index(idx, shape)) if idx else off

    def zero_grad(self) -> None:
        self.grad[:] = 0.0


# ---------------------------------------------------------------------------
# tape and nodes


class Node:
    """One primitive operation (or leaf) on a tape.

    Users normally obtain nodes from :meth:`Tape.const` /
    :meth:`Tape.param` and combine them with operators or the module
    functions below.
    """

    __slots__ = ("tape", "idx", "op", "a", "b", "val", "aux")
    __array_ufunc__ = None  # keep numpy from absorbing Node operands

    def __init__(self, tape, idx, op, a, b, val, aux=None):
        self.tape = tape
        self.idx = idx
        self.op = op
        self.a = a
        self.b = b
        self.val = val
        self.aux = aux

    @property
    def shape(self):
        return self.val.shape

    # arithmetic sugar; scalars and ndarrays are promoted to const nodes
    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __neg__(self):
        return self.tape._push("neg", self, None, -self.val)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ValueError("power exponent must be a constant scalar")
        return self.tape._push("pow", self, None, self.val ** float(p), aux=float(p))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_value(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tape:
    """Append-only operation record; indices are topologically ordered."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _append(self, op, a, b, val, aux=None) -> Node:
        node = Node(self, len(self.nodes), op, a, b, val, aux)
        self.nodes.append(node)
        return node

    def _push(self, op, a, b, val, aux=None) -> Node:
        if a is not None and a.tape is not self:
            raise GraphError("operand from a different tape")
        if b is not None and b.tape is not self:
            raise GraphError("operand from a different tape")
        return self._append(op, a, b, val, aux)

    def const(self, value) -> Node:
        return self._append("const", None, None, _as_value(value))

    def param(self, store: ParamStore, name: str) -> Node:
        """Leaf node viewing one ParamStore slot (zero-copy)."""
        off, shape = store.slot(name)
        val = store.values[off:off + int(np.prod(shape))].reshape(shape)
        return self._append("param", None, None, val, aux=(store, off))

    def wrap(self, x) -> Node:
        return x if isinstance(x, Node) else self.const(x)

    # ------------------------------------------------------------------
    def backward(self, root: Node, accumulate: bool = True) -> None:
        """Propagate d(root)/d(node) adjoints; add parameter adjoints
        into each involved ParamStore's ``grad``.

        ``root`` must be a scalar node of this tape.  Adjoints are local
        to the call, so the tape can be reused for another root.
        """
        if not isinstance(root, Node) or root.tape is not self:
            raise GraphError("root is not a node of this tape")
        if root.val.size != 1:
            raise GraphError("backward root must be scalar")
        if not accumulate:
            seen = set()
            for node in self.nodes:
                if node.op == "param" and id(node.aux[0]) not in seen:
                    seen.add(id(node.aux[0]))
                    node.aux[0].zero_grad()

        adj: list[np.ndarray | None] = [None] * (root.idx + 1)
        adj[root.idx] = np.ones_like(root.val)

        def acc(node: Node, g: np.ndarray) -> None:
            g = _unbroadcast(g, node.val.shape)
            if adj[node.idx] is None:
                adj[node.idx] = g
            else:
                adj[node.idx] = adj[node.idx] + g

        for i in range(root.idx, -1, -1):
            g = adj[i]
            if g is None:
                continue
            node = self.nodes[i]
            op, a, b = node.op, node.a, node.b
            if op == "const" or op == "detach":
                if op == "detach":
                    pass  # gradient intentionally blocked
                continue
            if op == "param":
                store, off = node.aux
                store.grad[off:off + g.size] += g.ravel()
            elif op == "add":
                acc(a, g)
                acc(b, g)
            elif op == "sub":
                acc(a, g)
                acc(b, -g)
            elif op == "mul":
                acc(a, g * b.val)
                acc(b, g * a.val)
            elif op == "div":
                acc(a, g / b.val)
                acc(b, -g * node.val / b.val)
            elif op == "neg":
                acc(a, -g)
            elif op == "recip":
                acc(a, -g * node.val * node.val)
            elif op == "pow":
                p = node.aux
                acc(a, g * p * a.val ** (p - 1.0))
            elif op == "sin":
                acc(a, g * np.cos(a.val))
            elif op == "cos":
                acc(a, -g * np.sin(a.val))
            elif op == "exp":
                acc(a, g * node.val)
            elif op == "log":
                acc(a, g / a.val)
            elif op == "sqrt":
                acc(a, g * 0.5 / node.val)
            elif op == "logistic":
                acc(a, g * node.val * (1.0 - node.val))
            elif op == "softplus":
                acc(a, g / (1.0 + np.exp(-a.val)))
            elif op == "clamp":
                lo, hi = node.aux
                # subgradient 0 outside, 1 inside; boundary counts as inside
                acc(a, g * ((a.val >= lo) & (a.val <= hi)))
            elif op == "min":
                take_a = a.val <= b.val  # ties route to the first operand
                acc(a, g * take_a)
                acc(b, g * ~take_a)
            elif op == "max":
                take_a = a.val >= b.val
                acc(a, g * take_a)
                acc(b, g * ~take_a)
            elif op == "sum":
                axis, in_shape = node.aux
                acc(a, _spread(g, axis, in_shape))
            elif op == "mean":
                axis, in_shape, count = node.aux
                acc(a, _spread(g / count, axis, in_shape))
            elif op == "cumsum_ex":
                axis = node.aux
                tail = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
                acc(a, tail - g)
            elif op == "matmul":
                acc(a, g @ b.val.T)
                acc(b, a.val.T @ g)
            elif op == "affine":
                x, w, bias = node.b
                gs = g * node.aux if node.aux != 1.0 else g
                acc(x, gs @ w.val.T)
                acc(w, x.val.T @ gs)
                if bias is not None:
                    acc(bias, gs.sum(axis=0))
            elif op == "concat":
                axis = node.aux
                offs = 0
                for part in node.b:
                    w = part.val.shape[axis]
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(offs, offs + w)
                    acc(part, g[tuple(sl)])
                    offs += w
            elif op == "cols":
                j0, j1 = node.aux
                ga = np.zeros_like(a.val)
                ga[..., j0:j1] = g
                acc(a, ga)
            elif op == "reshape":
                acc(a, g.reshape(a.val.shape))
            elif op == "scatter_rows":
                rows_idx = node.aux
                acc(a, g[rows_idx])
            else:  # pragma: no cover
                raise GraphError("no backward rule for op %r" % op)

    def grad_of(self, root: Node, store: ParamStore) -> np.ndarray:
        """Convenience: exact d(root)/d(params) for a single store."""
        store.zero_grad()
        self.backward(root)
        return store.grad.copy()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _spread(g: np.ndarray, axis, in_shape) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, in_shape)
    return np.broadcast_to(np.expand_dims(g, axis), in_shape)


def _binary(op: str, x, y) -> Node:
    if isinstance(x, Dual) or isinstance(y, Dual):
        return NotImplemented
    if isinstance(x, Node):
        tape, a, b = x.tape, x, x.tape.wrap(y)
    else:
        tape, a, b = y.tape, y.tape.wrap(x), y
    if op == "add":
        val = a.val + b.val
    elif op == "sub":
        val = a.val - b.val
    elif op == "mul":
        val = a.val * b.val
    else:
        val = a.val / b.val
    return tape._push(op, a, b, val)


# ---------------------------------------------------------------------------
# generic math: each function accepts a Node, a Dual, or a plain ndarray and
# returns the same flavor, so field models are written once and run in
# inference, training, and tangent-carrying modes.


def _unary(op: str, x, f, aux=None):
    if isinstance(x, Node):
        return x.tape._push(op, x, None, f(x.val), aux=aux)
    return f(_as_value(x))


def sin(x):
    if isinstance(x, Dual):
        c = cos(x.p)
        return Dual(sin(x.p), tuple(None if t is None else c * t for t in x.t))
    return _unary("sin", x, np.sin)


def cos(x):
    if isinstance(x, Dual):
        s = -sin(x.p)
        return Dual(cos(x.p), tuple(None if t is None else s * t for t in x.t))
    return _unary("cos", x, np.cos)


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.p)
        return Dual(e, tuple(None if t is None else e * t for t in x.t))
    return _unary("exp", x, np.exp)


def log(x):
    if isinstance(x, Dual):
        return Dual(log(x.p), tuple(None if t is None else t / x.p for t in x.t))
    return _unary("log", x, np.log)


def sqrt(x):
    if isinstance(x, Dual):
        r = sqrt(x.p)
        return Dual(r, tuple(None if t is None else t * 0.5 / r for t in x.t))
    return _unary("sqrt", x, np.sqrt)


def reciprocal(x):
    if isinstance(x, Dual):
        r = reciprocal(x.p)
        return Dual(r, tuple(None if t is None else -(r * r) * t for t in x.t))
    return _unary("recip", x, lambda v: 1.0 / v)


def logistic(x):
    """Numerically-stable 1 / (1 + exp(-x))."""
    if isinstance(x, Dual):
        s = logistic(x.p)
        d = s * (1.0 - s)
        return Dual(s, tuple(None if t is None else d * t for t in x.t))

    def f(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    return _unary("logistic", x, lambda v: f(np.atleast_1d(v)).reshape(v.shape))


def softplus(x):
    """log(1 + exp(x)) via logaddexp; derivative is the logistic."""
    if isinstance(x, Dual):
        d = logistic(x.p)
        return Dual(softplus(x.p), tuple(None if t is None else d * t for t in x.t))
    return _unary("softplus", x, lambda v: np.logaddexp(0.0, v))


def clamp(x, lo: float, hi: float):
    """Clip to [lo, hi]; subgradient 1 inside and on the boundary, 0 outside."""
    if isinstance(x, Dual):
        mask = (value_of(x.p) >= lo) & (value_of(x.p) <= hi)
        return Dual(clamp(x.p, lo, hi),
                    tuple(None if t is None else t * mask for t in x.t))
    return _unary("clamp", x, lambda v: np.clip(v, lo, hi), aux=(float(lo), float(hi)))


def minimum(x, y):
    if isinstance(x, Node) or isinstance(y, Node):
        a = x if isinstance(x, Node) else y.tape.wrap(x)
        b = y if isinstance(y, Node) else x.tape.wrap(y)
        return a.tape._push("min", a, b, np.minimum(a.val, b.val))
    return np.minimum(x, y)


def maximum(x, y):
    if isinstance(x, Node) or isinstance(y, Node):
        a = x if isinstance(x, Node) else y.tape.wrap(x)
        b = y if isinstance(y, Node) else x.tape.wrap(y)
        return a.tape._push("max", a, b, np.maximum(a.val, b.val))
    return np.maximum(x, y)


def detach(x):
    """Identity in value, zero in gradient (stop-gradient)."""
    if isinstance(x, Dual):
        return Dual(detach(x.p), tuple(None if t is None else detach(t) for t in x.t))
    if isinstance(x, Node):
        return x.tape._push("detach", x, None, x.val)
    return x


def asum(x, axis=None):
    if isinstance(x, Node):
        return x.tape._push("sum", x, None, _as_value(np.sum(x.val, axis=axis)),
                            aux=(axis, x.val.shape))
    return np.sum(x, axis=axis)


def amean(x, axis=None):
    if isinstance(x, Node):
        count = x.val.size if axis is None else x.val.shape[axis]
        return x.tape._push("mean", x, None, _as_value(np.mean(x.val, axis=axis)),
                            aux=(axis, x.val.shape, float(count)))
    return np.mean(x, axis=axis)


def cumsum_exclusive(x, axis=-1):
    """y_k = sum_{i<k} x_i along ``axis`` (first entry 0)."""
    if isinstance(x, Node):
        return x.tape._push("cumsum_ex", x, None, _cumsum_ex(x.val, axis), aux=axis)
    return _cumsum_ex(_as_value(x), axis)


def _cumsum_ex(v: np.ndarray, axis: int) -> np.ndarray:
    out = np.cumsum(v, axis=axis)
    out = np.roll(out, 1, axis=axis)
    sl = [slice(None)] * v.ndim
    sl[axis] = 0
    out[tuple(sl)] = 0.0
    return out


def matmul(x, y):
    if isinstance(x, Dual) or isinstance(y, Dual):
        xd = x if isinstance(x, Dual) else Dual(x)
        yd = y if isinstance(y, Dual) else Dual(y)
        k = max(len(xd.t), len(yd.t))
        xt = xd.t + (None,) * (k - len(xd.t))
        yt = yd.t + (None,) * (k - len(yd.t))
        ts = []
        for tx, ty in zip(xt, yt):
            parts = []
            if tx is not None:
                parts.append(matmul(tx, yd.p))
            if ty is not None:
                parts.append(matmul(xd.p, ty))
            ts.append(None if not parts else (parts[0] if len(parts) == 1 else parts[0] + parts[1]))
        return Dual(matmul(xd.p, yd.p), tuple(ts))
    if isinstance(x, Node) or isinstance(y, Node):
        a = x if isinstance(x, Node) else y.tape.wrap(x)
        b = y if isinstance(y, Node) else x.tape.wrap(y)
        return a.tape._push("matmul", a, b, a.val @ b.val)
    return _as_value(x) @ _as_value(y)


def affine(x, w, bias=None, scale: float = 1.0):
    """Fused (x @ w + bias) * scale; one tape node for the whole layer."""
    if isinstance(x, Dual):
        p = affine(x.p, w, bias, scale)
        ts = tuple(None if t is None else affine(t, w, None, scale) for t in x.t)
        return Dual(p, ts)
    if isinstance(x, Node) or isinstance(w, Node):
        tape = x.tape if isinstance(x, Node) else w.tape
        xn = tape.wrap(x)
        wn = tape.wrap(w)
        bn = None if bias is None else tape.wrap(bias)
        if any(p is not None and p.tape is not tape for p in (xn, wn, bn)):
            raise GraphError("affine mixes tapes")
        val = xn.val @ wn.val
        if bn is not None:
            val = val + bn.val
        if scale != 1.0:
            val = val * scale
        return tape._append("affine", None, [xn, wn, bn], val, aux=float(scale))
    out = _as_value(x) @ _as_value(w)
    if bias is not None:
        out = out + bias
    return out * scale if scale != 1.0 else out


def concat(parts, axis=-1):
    nodes = [p for p in parts if isinstance(p, Node)]
    if not nodes:
        return np.concatenate([_as_value(p) for p in parts], axis=axis)
    tape = nodes[0].tape
    if any(p.tape is not tape for p in nodes):
        raise GraphError("concat mixes tapes")
    wrapped = [tape.wrap(p) for p in parts]
    val = np.concatenate([p.val for p in wrapped], axis=axis)
    return tape._append("concat", None, wrapped, val,
                        aux=axis if axis >= 0 else val.ndim + axis)


def cols(x, j0: int, j1: int):
    """Slice columns [j0, j1) along the last axis."""
    if isinstance(x, Dual):
        return Dual(cols(x.p, j0, j1),
                    tuple(None if t is None else cols(t, j0, j1) for t in x.t))
    if isinstance(x, Node):
        return x.tape._push("cols", x, None, x.val[..., j0:j1], aux=(j0, j1))
    return _as_value(x)[..., j0:j1]


def reshape(x, shape):
    if isinstance(x, Dual):
        return Dual(reshape(x.p, shape),
                    tuple(None if t is None else reshape(t, shape) for t in x.t))
    if isinstance(x, Node):
        return x.tape._push("reshape", x, None, x.val.reshape(shape))
    return _as_value(x).reshape(shape)


def scatter_rows(base: np.ndarray, rows, idx: np.ndarray):
    """Constant ``base`` with ``base[idx] = rows``; gradient flows to rows only."""
    if isinstance(rows, Node):
        val = np.array(base, dtype=np.float64)
        val[idx] = rows.val
        return rows.tape._push("scatter_rows", rows, None, val, aux=np.asarray(idx))
    out = np.array(base, dtype=np.float64)
    out[idx] = rows
    return out


def value_of(x) -> np.ndarray:
    """Underlying ndarray of a Node / Dual primal / plain array."""
    if isinstance(x, Dual):
        x = x.p
    return x.val if isinstance(x, Node) else _as_value(x)


# ---------------------------------------------------------------------------
# forward-mode bundles


class Dual:
    """Primal with one tangent node per tracked input direction.

    A ``None`` tangent entry denotes the structurally-zero tangent of a
    constant; it evaluates to zero and drops out of arithmetic.  The
    spec's single-direction DualValue is the k=1 case.
    """

    __slots__ = ("p", "t")
    __array_ufunc__ = None

    def __init__(self, primal, tangents=()):
        self.p = primal
        self.t = tuple(tangents)

    def tangent(self, i: int = 0):
        """Tangent node for direction ``i``; constants yield a zero node."""
        t = self.t[i] if i < len(self.t) else None
        if t is not None:
            return t
        if isinstance(self.p, Node):
            return self.p.tape.const(np.zeros_like(self.p.val))
        return np.zeros_like(_as_value(self.p))

    @staticmethod
    def _coerce(x, k: int) -> "Dual":
        if isinstance(x, Dual):
            return x
        return Dual(x, (None,) * k)

    def _zip(self, other):
        o = Dual._coerce(other, len(self.t))
        s = Dual._coerce(self, len(o.t))
        k = max(len(s.t), len(o.t))
        st = s.t + (None,) * (k - len(s.t))
        ot = o.t + (None,) * (k - len(o.t))
        return s, o, st, ot

    def __add__(self, other):
        s, o, st, ot = self._zip(other)
        return Dual(s.p + o.p, tuple(_tadd(a, b) for a, b in zip(st, ot)))

    __radd__ = __add__

    def __sub__(self, other):
        s, o, st, ot = self._zip(other)
        return Dual(s.p - o.p, tuple(_tadd(a, None if b is None else -b) for a, b in zip(st, ot)))

    def __rsub__(self, other):
        s, o, st, ot = self._zip(other)
        return Dual(o.p - s.p, tuple(_tadd(b, None if a is None else -a) for a, b in zip(st, ot)))

    def __mul__(self, other):
        s, o, st, ot = self._zip(other)
        ts = tuple(_tadd(None if a is None else a * o.p,
                         None if b is None else s.p * b) for a, b in zip(st, ot))
        return Dual(s.p * o.p, ts)

    __rmul__ = __mul__

    def __truediv__(self, other):
        s, o, st, ot = self._zip(other)
        inv = reciprocal(o.p)
        q = s.p * inv
        ts = tuple(_tadd(None if a is None else a * inv,
                         None if b is None else -(q * inv) * b) for a, b in zip(st, ot))
        return Dual(q, ts)

    def __neg__(self):
        return Dual(-self.p, tuple(None if t is None else -t for t in self.t))

    def __matmul__(self, other):
        return matmul(self, other)


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def seed_point_batch(tape: Tape, points: np.ndarray, direction: np.ndarray) -> Dual:
    """Wrap a (B, d) point batch as a Dual tracking one unit direction.

    The tangent of column j is the constant direction component j
    broadcast over the batch.
    """
    direction = np.asarray(direction, dtype=np.float64)
    n = float(np.linalg.norm(direction))
    if n == 0.0:
        raise ValueError("direction must have nonzero length")
    direction = direction / n if abs(n - 1.0) > 1e-12 else direction
    p = tape.wrap(np.asarray(points, dtype=np.float64))
    t = tape.const(np.broadcast_to(direction, p.val.shape).copy())
    return Dual(p, (t,))


def seed_axes(tape: Tape, points: np.ndarray, axes) -> Dual:
    """Dual tracking several canonical axes at once (one tangent each)."""
    p = tape.wrap(np.asarray(points, dtype=np.float64))
    d = p.val.shape[-1]
    ts = []
    for ax in axes:
        e = np.zeros(d)
        e[ax] = 1.0
        ts.append(tape.const(np.broadcast_to(e, p.val.shape).copy()))
    return Dual(p, tuple(ts))


def input_derivative(f, x: np.ndarray, direction: np.ndarray, tape: Tape | None = None):
    """Evaluate ``f`` at ``x`` carrying the directional derivative along
    ``direction``.

    ``f`` maps a Dual point batch to Dual outputs (or a structure of
    them).  Raises ValueError on a zero-length direction.
    """
    tape = tape or Tape()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return f(seed_point_batch(tape, x, direction))
