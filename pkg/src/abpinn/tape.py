"""Reverse-mode automatic differentiation over recorded array computations.

A ``Tape`` records every primitive operation of a forward pass as a ``Node``
in creation order, which is already a topological order of the computation
graph.  ``Tape.backward`` then sweeps the node list exactly once in reverse,
accumulating adjoints in a fixed order, and writes the resulting gradients
into the ``grads`` buffer of every ``ParamGroup`` that participated in the
pass.  Values on a node may be scalars or numpy arrays of any shape, so a
whole collocation batch is differentiated through a single graph; this keeps
reductions in a deterministic summation order and runs are reproducible
bit-for-bit.

All arithmetic is float64.  The primitive set is deliberately small:
add/sub/neg/mul/div, integer pow, tanh, exp, sin, cos, abs, sqrt, matmul,
column stacking, last-axis sum, global mean, and the lower-triangular matrix
builder used by window transforms.
"""

from __future__ import annotations

import numpy as np


class ContractError(ValueError):
    """A caller violated an operation's stated precondition."""


class CapabilityError(ValueError):
    """The request is outside what this library supports."""


class ParamGroup:
    """Named flat parameter vector paired with a gradient buffer of equal length."""

    __slots__ = ("name", "values", "grads", "shape")

    def __init__(self, name, values, shape=None):
        self.name = name
        self.values = np.array(values, dtype=np.float64).ravel()
        self.grads = np.zeros_like(self.values)
        self.shape = tuple(shape) if shape is not None else (self.values.size,)
        if int(np.prod(self.shape)) != self.values.size:
            raise ContractError(
                f"group {name!r}: shape {self.shape} does not match {self.values.size} values"
            )

    @property
    def array(self):
        """Shaped view of the parameter values (writes propagate)."""
        return self.values.reshape(self.shape)

    @property
    def grad_array(self):
        return self.grads.reshape(self.shape)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"ParamGroup({self.name!r}, n={self.values.size})"


class Node:
    """One recorded primitive operation (or leaf) on a tape."""

    __slots__ = ("tape", "op", "value", "parents", "ctx", "needs_grad", "grad", "cache")

    def __init__(self, tape, op, value, parents, ctx, needs_grad):
        self.tape = tape
        self.op = op
        self.value = value
        self.parents = parents
        self.ctx = ctx
        self.needs_grad = needs_grad
        self.grad = None
        self.cache = None

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node({self.op}, shape={np.shape(self.value)})"


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if np.shape(g) == tuple(shape):
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Append-only record of a forward pass, replayable and reverse-differentiable."""

    def __init__(self):
        self.nodes = []
        self._param_nodes = {}

    # -- construction -------------------------------------------------

    def _record(self, op, value, parents, ctx=None):
        needs = any(p.needs_grad for p in parents)
        node = Node(self, op, value, parents, ctx, needs)
        self.nodes.append(node)
        return node

    def const(self, value):
        node = Node(self, "const", value, (), None, False)
        self.nodes.append(node)
        return node

    def param(self, group):
        """Leaf node viewing ``group.values``; memoized per tape."""
        node = self._param_nodes.get(id(group))
        if node is None:
            node = Node(self, "param", group.array, (), group, True)
            self.nodes.append(node)
            self._param_nodes[id(group)] = node
        return node

    @property
    def groups(self):
        return [n.ctx for n in self._param_nodes.values()]

    # -- reverse sweep ------------------------------------------------

    def backward(self, loss):
        """Accumulate d(loss)/d(param) into every registered ParamGroup.

        Gradient buffers are zeroed first.  ``loss`` must be a scalar node
        recorded on this tape.
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ContractError("backward target must be a node of this tape")
        if np.size(loss.value) != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {np.shape(loss.value)}"
            )
        for group in self.groups:
            group.grads[:] = 0.0
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(np.asarray(loss.value, dtype=np.float64))
        for node in reversed(self.nodes):
            if node.grad is None or node.op in ("const", "param"):
                continue
            _BACKWARD[node.op](node, node.grad)
        for node in self._param_nodes.values():
            if node.grad is not None:
                node.ctx.grads += _unbroadcast(node.grad, node.ctx.shape).ravel()

    # -- replay -------------------------------------------------------

    def replay_matches(self):
        """Recompute every non-leaf node from its parents; True if bit-identical."""
        for node in self.nodes:
            if node.op in ("const", "param"):
                continue
            redone = _FORWARD[node.op]([p.value for p in node.parents], node.ctx)
            if not np.array_equal(np.asarray(redone), np.asarray(node.value)):
                return False
        return True

    def __len__(self):
        return len(self.nodes)


def _acc(parent, g):
    if not parent.needs_grad:
        return
    if parent.grad is None:
        parent.grad = g
    else:
        parent.grad = parent.grad + g


def _acc_shaped(parent, g):
    if parent.needs_grad:
        _acc(parent, _unbroadcast(g, np.shape(parent.value)))


# -- op helpers: fall through to numpy when no operand is tracked -------

def _as_node(tape, x):
    return x if isinstance(x, Node) else tape.const(x)


def _tape_of(a, b=None):
    ta = a.tape if isinstance(a, Node) else None
    tb = b.tape if isinstance(b, Node) else None
    if ta is not None and tb is not None and ta is not tb:
        raise ContractError("operands recorded on different tapes")
    return ta or tb


def add(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.add(a, b)
    a, b = _as_node(t, a), _as_node(t, b)
    return t._record("add", np.add(a.value, b.value), (a, b))


def sub(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.subtract(a, b)
    a, b = _as_node(t, a), _as_node(t, b)
    return t._record("sub", np.subtract(a.value, b.value), (a, b))


def neg(a):
    if not isinstance(a, Node):
        return np.negative(a)
    return a.tape._record("neg", np.negative(a.value), (a,))


def mul(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.multiply(a, b)
    a, b = _as_node(t, a), _as_node(t, b)
    return t._record("mul", np.multiply(a.value, b.value), (a, b))


def div(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.divide(a, b)
    a, b = _as_node(t, a), _as_node(t, b)
    return t._record("div", np.divide(a.value, b.value), (a, b))


def powi(a, n):
    if not isinstance(n, (int, np.integer)):
        raise CapabilityError(f"pow exponent must be an integer, got {n!r}")
    n = int(n)
    if not isinstance(a, Node):
        return np.power(a, n)
    return a.tape._record("powi", np.power(a.value, n), (a,), n)


def tanh(a):
    if not isinstance(a, Node):
        return np.tanh(a)
    return a.tape._record("tanh", np.tanh(a.value), (a,))


def exp(a):
    if not isinstance(a, Node):
        return np.exp(a)
    return a.tape._record("exp", np.exp(a.value), (a,))


def sin(a):
    if not isinstance(a, Node):
        return np.sin(a)
    return a.tape._record("sin", np.sin(a.value), (a,))


def cos(a):
    if not isinstance(a, Node):
        return np.cos(a)
    return a.tape._record("cos", np.cos(a.value), (a,))


def absval(a):
    if not isinstance(a, Node):
        return np.abs(a)
    return a.tape._record("abs", np.abs(a.value), (a,))


def sqrt(a):
    if not isinstance(a, Node):
        return np.sqrt(a)
    return a.tape._record("sqrt", np.sqrt(a.value), (a,))


def matmul(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.matmul(a, b)
    a, b = _as_node(t, a), _as_node(t, b)
    return t._record("matmul", np.matmul(a.value, b.value), (a, b))


def colstack(cols):
    """Stack 1-D (or scalar-broadcast) columns into a (..., k) array."""
    t = None
    for c in cols:
        if isinstance(c, Node):
            if t is not None and c.tape is not t:
                raise ContractError("operands recorded on different tapes")
            t = c.tape
    if t is None:
        return np.stack(cols, axis=-1)
    nodes = tuple(_as_node(t, c) for c in cols)
    return t._record("colstack", np.stack([n.value for n in nodes], axis=-1), nodes)


def sum_last(a):
    """Sum over the last axis."""
    if not isinstance(a, Node):
        return np.sum(a, axis=-1)
    return a.tape._record("sumlast", np.sum(a.value, axis=-1), (a,))


def mean_all(a):
    if not isinstance(a, Node):
        return float(np.mean(a))
    return a.tape._record("meanall", np.mean(a.value), (a,))


def tril_matrix(flat, dim):
    """Build a (dim, dim) lower-triangular matrix from its packed row-major
    entries, taking the absolute value of the diagonal."""
    rows, cols = np.tril_indices(dim)
    diag_mask = rows == cols

    def build(v):
        m = np.zeros((dim, dim))
        m[rows, cols] = v
        m[np.arange(dim), np.arange(dim)] = np.abs(np.diag(m))
        return m

    if not isinstance(flat, Node):
        return build(np.asarray(flat))
    return flat.tape._record(
        "tril", build(flat.value), (flat,), (dim, rows, cols, diag_mask)
    )


def value_of(x):
    """Numeric payload of a tracked or plain value."""
    return x.value if isinstance(x, Node) else x


# -- backward rules ------------------------------------------------------

def _bwd_add(node, g):
    a, b = node.parents
    _acc_shaped(a, g)
    _acc_shaped(b, g)


def _bwd_sub(node, g):
    a, b = node.parents
    _acc_shaped(a, g)
    _acc_shaped(b, -g)


def _bwd_neg(node, g):
    _acc(node.parents[0], -g)


def _bwd_mul(node, g):
    a, b = node.parents
    if a.needs_grad:
        _acc_shaped(a, g * b.value)
    if b.needs_grad:
        _acc_shaped(b, g * a.value)


def _bwd_div(node, g):
    a, b = node.parents
    if a.needs_grad:
        _acc_shaped(a, g / b.value)
    if b.needs_grad:
        _acc_shaped(b, -g * node.value / b.value)


def _bwd_powi(node, g):
    (a,) = node.parents
    n = node.ctx
    _acc(a, g * (n * np.power(a.value, n - 1)))


def _bwd_tanh(node, g):
    _acc(node.parents[0], g * (1.0 - node.value * node.value))


def _bwd_exp(node, g):
    _acc(node.parents[0], g * node.value)


def _bwd_sin(node, g):
    _acc(node.parents[0], g * np.cos(node.parents[0].value))


def _bwd_cos(node, g):
    _acc(node.parents[0], -g * np.sin(node.parents[0].value))


def _bwd_abs(node, g):
    _acc(node.parents[0], g * np.sign(node.parents[0].value))


def _bwd_sqrt(node, g):
    _acc(node.parents[0], g * (0.5 / node.value))


def _bwd_matmul(node, g):
    a, b = node.parents
    av, bv = a.value, b.value
    g = np.asarray(g)
    if a.needs_grad:
        _acc(a, g @ np.swapaxes(bv, -1, -2) if np.ndim(bv) > 1 else np.outer(g, bv))
    if b.needs_grad:
        if np.ndim(av) == 1:
            _acc(b, np.outer(av, g))
        else:
            _acc(b, np.swapaxes(av, -1, -2) @ g)


def _bwd_colstack(node, g):
    for i, p in enumerate(node.parents):
        if p.needs_grad:
            _acc_shaped(p, g[..., i])


def _bwd_sumlast(node, g):
    (a,) = node.parents
    _acc(a, np.broadcast_to(np.expand_dims(g, -1), np.shape(a.value)))


def _bwd_meanall(node, g):
    (a,) = node.parents
    size = np.size(a.value)
    _acc(a, np.broadcast_to(np.asarray(g) / size, np.shape(a.value)))


def _bwd_tril(node, g):
    (flat,) = node.parents
    _, rows, cols, diag_mask = node.ctx
    grad = np.asarray(g)[rows, cols].copy()
    # |.| on the diagonal: route the sign of the raw entry back through.
    grad[diag_mask] *= np.sign(flat.value[diag_mask])
    _acc(flat, grad)


_BACKWARD = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "neg": _bwd_neg,
    "mul": _bwd_mul,
    "div": _bwd_div,
    "powi": _bwd_powi,
    "tanh": _bwd_tanh,
    "exp": _bwd_exp,
    "sin": _bwd_sin,
    "cos": _bwd_cos,
    "abs": _bwd_abs,
    "sqrt": _bwd_sqrt,
    "matmul": _bwd_matmul,
    "colstack": _bwd_colstack,
    "sumlast": _bwd_sumlast,
    "meanall": _bwd_meanall,
    "tril": _bwd_tril,
}

_FORWARD = {
    "add": lambda v, ctx: np.add(v[0], v[1]),
    "sub": lambda v, ctx: np.subtract(v[0], v[1]),
    "neg": lambda v, ctx: np.negative(v[0]),
    "mul": lambda v, ctx: np.multiply(v[0], v[1]),
    "div": lambda v, ctx: np.divide(v[0], v[1]),
    "powi": lambda v, ctx: np.power(v[0], ctx),
    "tanh": lambda v, ctx: np.tanh(v[0]),
    "exp": lambda v, ctx: np.exp(v[0]),
    "sin": lambda v, ctx: np.sin(v[0]),
    "cos": lambda v, ctx: np.cos(v[0]),
    "abs": lambda v, ctx: np.abs(v[0]),
    "sqrt": lambda v, ctx: np.sqrt(v[0]),
    "matmul": lambda v, ctx: np.matmul(v[0], v[1]),
    "colstack": lambda v, ctx: np.stack(v, axis=-1),
    "sumlast": lambda v, ctx: np.sum(v[0], axis=-1),
    "meanall": lambda v, ctx: np.mean(v[0]),
    "tril": lambda v, ctx: _tril_fwd(v[0], ctx),
}


def _tril_fwd(flat, ctx):
    dim, rows, cols, _ = ctx
    m = np.zeros((dim, dim))
    m[rows, cols] = flat
    m[np.arange(dim), np.arange(dim)] = np.abs(np.diag(m))
    return m


def backward(loss_node):
    """Run the reverse sweep from ``loss_node`` (a scalar recorded on a tape)."""
    if not isinstance(loss_node, Node):
        raise ContractError("backward requires a recorded node")
    loss_node.tape.backward(loss_node)


def register_op(name, forward_fn, backward_fn):
    """Plug a fused primitive into the dispatch tables.

    ``forward_fn(parent_values, ctx)`` recomputes the value (replay);
    ``backward_fn(node, grad)`` accumulates into the parents via ``acc``.
    """
    if name in _BACKWARD:
        raise ContractError(f"op {name!r} already registered")
    _FORWARD[name] = forward_fn
    _BACKWARD[name] = backward_fn


# re-exported accumulation helpers for fused ops
acc = _acc
acc_shaped = _acc_shaped
