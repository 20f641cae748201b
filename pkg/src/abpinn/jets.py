"""Truncated Taylor (jet) propagation of input derivatives up to third order.

A ``Jet`` carries a value together with directional derivatives ``d1..d3``
along one or more seeded input coordinates.  Derivatives along distinct
coordinates never mix (no residual in this library needs mixed partials), so
a single forward pass can propagate several directions at once while sharing
the value computation.  Slots may hold floats, numpy arrays, or tape nodes;
when a slot is a node the whole jet computation lands on that tape, and a
reverse sweep then yields exact parameter gradients of any scalar built from
jet slots — derivative-of-derivative paths included.

Slot convention: ``d_k`` is the k-th derivative (not the Taylor coefficient),
so ``f(x)=x**3`` at ``x=2`` gives ``Jet(8, 12, 12, 6)``.  ``None`` marks a
structurally zero slot and is skipped during propagation.
"""

from __future__ import annotations

import numpy as np

from . import tape as ops
from .tape import CapabilityError, ContractError

MAX_ORDER = 3


def _is_one(c):
    return isinstance(c, (int, float)) and c == 1.0


def _is_zeroc(c):
    return isinstance(c, (int, float)) and c == 0.0


def _mul(a, b):
    """None-aware product; None means exact zero."""
    if a is None or b is None:
        return None
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    if _is_zeroc(a) or _is_zeroc(b):
        return None
    return ops.mul(a, b)


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return ops.add(a, b)


def _sub(a, b):
    if b is None:
        return a
    if a is None:
        return ops.neg(b)
    return ops.sub(a, b)


def _scale(c, k):
    """Multiply by a plain float constant."""
    if c is None:
        return None
    return ops.mul(c, k)


class Jet:
    """Value plus directional derivatives along seeded input coordinates.

    ``dirs`` maps a direction id (an input coordinate index) to a tuple of
    derivative slots ``(d1, ..., d_order)``.  Mixing jets seeded along
    different directions produces a jet carrying both; the scalar accessors
    ``d1/d2/d3`` require a single direction.
    """

    __slots__ = ("value", "dirs")

    def __init__(self, value, dirs=()):
        self.value = value
        self.dirs = dict(dirs)

    # -- constructors ---------------------------------------------------

    @classmethod
    def constant(cls, value):
        return cls(value)

    @classmethod
    def seed(cls, value, direction=0, order=MAX_ORDER):
        """Jet of the coordinate itself: d1 = 1 along ``direction``."""
        if order > MAX_ORDER:
            raise CapabilityError(f"jet order {order} > {MAX_ORDER}")
        if order < 0:
            raise ContractError("jet order must be >= 0")
        if order == 0:
            return cls(value)
        return cls(value, {direction: (1.0,) + (None,) * (order - 1)})

    @classmethod
    def univariate(cls, value, d1=None, d2=None, d3=None, direction=0):
        coeffs = [d1, d2, d3]
        while coeffs and coeffs[-1] is None:
            coeffs.pop()
        if not coeffs:
            return cls(value)
        return cls(value, {direction: tuple(coeffs)})

    # -- accessors --------------------------------------------------------

    def _single(self):
        if len(self.dirs) != 1:
            raise ContractError(
                f"scalar slot access needs a single-direction jet, have {sorted(self.dirs)}"
            )
        return next(iter(self.dirs.values()))

    @property
    def order(self):
        if not self.dirs:
            return 0
        return max(len(c) for c in self.dirs.values())

    def _slot(self, k):
        coeffs = self._single() if self.dirs else ()
        if k > len(coeffs):
            raise CapabilityError(f"slot d{k} absent: jet order is {len(coeffs)}")
        c = coeffs[k - 1]
        return 0.0 if c is None else c

    @property
    def d1(self):
        return self._slot(1)

    @property
    def d2(self):
        return self._slot(2)

    @property
    def d3(self):
        return self._slot(3)

    def deriv(self, direction, k):
        """k-th derivative slot along ``direction`` (0.0 if structurally zero).

        A direction the jet does not carry at all is structurally constant,
        so its slots are exact zeros.
        """
        coeffs = self.dirs.get(direction)
        if coeffs is None:
            return 0.0
        if k > len(coeffs):
            raise CapabilityError(
                f"direction {direction} carries order {len(coeffs)}, asked d{k}"
            )
        c = coeffs[k - 1]
        return 0.0 if c is None else c

    def __repr__(self):
        spec = {d: len(c) for d, c in self.dirs.items()}
        return f"Jet(order={spec or 0})"

    # -- direction bookkeeping -------------------------------------------

    def _coeffs(self, direction, order):
        c = self.dirs.get(direction)
        if c is None:
            return (None,) * order
        if len(c) != order:
            raise ContractError(
                f"jet order mismatch along direction {direction}: {len(c)} vs {order}"
            )
        return c

    @staticmethod
    def _merged_dirs(a, b):
        out = {}
        for d in sorted(set(a.dirs) | set(b.dirs)):
            oa, ob = a.dirs.get(d), b.dirs.get(d)
            if oa is not None and ob is not None and len(oa) != len(ob):
                raise ContractError(
                    f"jet order mismatch along direction {d}: {len(oa)} vs {len(ob)}"
                )
            out[d] = len(oa if oa is not None else ob)
        return out

    # -- arithmetic ---------------------------------------------------------

    @staticmethod
    def _wrap(other):
        if isinstance(other, Jet):
            return other
        return Jet.constant(other)

    def __add__(self, other):
        o = Jet._wrap(other)
        dirs = {}
        for d, order in Jet._merged_dirs(self, o).items():
            a, b = self._coeffs(d, order), o._coeffs(d, order)
            dirs[d] = tuple(_add(a[k], b[k]) for k in range(order))
        return Jet(ops.add(self.value, o.value), dirs)

    __radd__ = __add__

    def __sub__(self, other):
        o = Jet._wrap(other)
        dirs = {}
        for d, order in Jet._merged_dirs(self, o).items():
            a, b = self._coeffs(d, order), o._coeffs(d, order)
            dirs[d] = tuple(_sub(a[k], b[k]) for k in range(order))
        return Jet(ops.sub(self.value, o.value), dirs)

    def __rsub__(self, other):
        return Jet._wrap(other).__sub__(self)

    def __neg__(self):
        dirs = {
            d: tuple(None if c is None else ops.neg(c) for c in cs)
            for d, cs in self.dirs.items()
        }
        return Jet(ops.neg(self.value), dirs)

    def __mul__(self, other):
        o = Jet._wrap(other)
        va, vb = self.value, o.value
        dirs = {}
        for d, order in Jet._merged_dirs(self, o).items():
            a, b = self._coeffs(d, order), o._coeffs(d, order)
            out = [_add(_mul(a[0], vb), _mul(va, b[0]))]
            if order >= 2:
                out.append(
                    _add(
                        _add(_mul(a[1], vb), _scale(_mul(a[0], b[0]), 2.0)),
                        _mul(va, b[1]),
                    )
                )
            if order >= 3:
                out.append(
                    _add(
                        _add(_mul(a[2], vb), _scale(_mul(a[1], b[0]), 3.0)),
                        _add(_scale(_mul(a[0], b[1]), 3.0), _mul(va, b[2])),
                    )
                )
            dirs[d] = tuple(out)
        return Jet(ops.mul(va, vb), dirs)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Jet._wrap(other)
        va, vb = self.value, o.value
        z0 = ops.div(va, vb)
        dirs = {}
        for d, order in Jet._merged_dirs(self, o).items():
            a, b = self._coeffs(d, order), o._coeffs(d, order)
            z1 = _div0(_sub(a[0], _mul(z0, b[0])), vb)
            out = [z1]
            if order >= 2:
                z2 = _div0(
                    _sub(a[1], _add(_mul(z0, b[1]), _scale(_mul(z1, b[0]), 2.0))),
                    vb,
                )
                out.append(z2)
            if order >= 3:
                z3 = _div0(
                    _sub(
                        a[2],
                        _add(
                            _mul(z0, b[2]),
                            _add(
                                _scale(_mul(z1, b[1]), 3.0),
                                _scale(_mul(z2, b[0]), 3.0),
                            ),
                        ),
                    ),
                    vb,
                )
                out.append(z3)
            dirs[d] = tuple(out)
        return Jet(z0, dirs)

    def __rtruediv__(self, other):
        return Jet._wrap(other).__truediv__(self)

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise CapabilityError(f"jet pow needs an integer exponent, got {n!r}")
        n = int(n)
        if n < 0:
            return Jet.constant(1.0) / self.__pow__(-n)
        if n == 0:
            return Jet.constant(np.ones_like(np.asarray(ops.value_of(self.value))))
        result = None
        base = self
        while n:
            if n & 1:
                result = base if result is None else result * base
            n >>= 1
            if n:
                base = base * base
        return result

    # -- analytic primitives ------------------------------------------------

    def _compose(self, y0, f1, f2=None, f3=None):
        """Faa di Bruno through a scalar function with derivatives f1..f3 at value."""
        dirs = {}
        for d, cs in self.dirs.items():
            order = len(cs)
            x1 = cs[0]
            x2 = cs[1] if order >= 2 else None
            x3 = cs[2] if order >= 3 else None
            out = [_mul(f1, x1)]
            if order >= 2:
                x1sq = _mul(x1, x1)
                out.append(_add(_mul(f2, x1sq), _mul(f1, x2)))
            if order >= 3:
                x1cu = _mul(x1sq, x1)
                out.append(
                    _add(
                        _mul(f3, x1cu),
                        _add(_scale(_mul(_mul(f2, x1), x2), 3.0), _mul(f1, x3)),
                    )
                )
            dirs[d] = tuple(out)
        return Jet(y0, dirs)

    def tanh(self):
        y0 = ops.tanh(self.value)
        hi = self.order
        f1 = ops.sub(1.0, ops.mul(y0, y0))
        f2 = f3 = None
        if hi >= 2:
            f2 = ops.mul(-2.0, ops.mul(y0, f1))
        if hi >= 3:
            f3 = ops.mul(-2.0, ops.mul(f1, ops.sub(1.0, ops.mul(3.0, ops.mul(y0, y0)))))
        return self._compose(y0, f1, f2, f3)

    def exp(self):
        y0 = ops.exp(self.value)
        return self._compose(y0, y0, y0 if self.order >= 2 else None,
                             y0 if self.order >= 3 else None)

    def sin(self):
        s = ops.sin(self.value)
        hi = self.order
        c = ops.cos(self.value) if hi >= 1 else None
        return self._compose(
            s, c, ops.neg(s) if hi >= 2 else None, ops.neg(c) if hi >= 3 else None
        )

    def cos(self):
        c = ops.cos(self.value)
        hi = self.order
        s = ops.sin(self.value) if hi >= 1 else None
        return self._compose(
            c, ops.neg(s) if hi >= 1 else None, ops.neg(c) if hi >= 2 else None,
            s if hi >= 3 else None
        )

    def sqrt(self):
        y0 = ops.sqrt(self.value)
        dirs = {}
        for d, cs in self.dirs.items():
            order = len(cs)
            inv2y = ops.div(0.5, y0)
            y1 = _mul(cs[0], inv2y)
            out = [y1]
            if order >= 2:
                y2 = _mul(_sub(cs[1], _scale(_mul(y1, y1), 2.0)), inv2y)
                out.append(y2)
            if order >= 3:
                y3 = _mul(_sub(cs[2], _scale(_mul(y1, y2), 6.0)), inv2y)
                out.append(y3)
            dirs[d] = tuple(out)
        return Jet(y0, dirs)

    def abs(self):
        """|x| with derivative sign(x), sign(0) := 0; the sign is a constant."""
        s = np.sign(np.asarray(ops.value_of(self.value), dtype=float))
        y0 = ops.absval(self.value)
        dirs = {
            d: tuple(_mul(s, c) for c in cs) for d, cs in self.dirs.items()
        }
        return Jet(y0, dirs)

    def matmul(self, w):
        """Jet of shape (..., k) times a constant-in-x matrix (tracked or plain)."""
        dirs = {
            d: tuple(None if c is None else ops.matmul(c, w) for c in cs)
            for d, cs in self.dirs.items()
        }
        return Jet(ops.matmul(self.value, w), dirs)

    def sum_last(self):
        dirs = {
            d: tuple(None if c is None else ops.sum_last(c) for c in cs)
            for d, cs in self.dirs.items()
        }
        return Jet(ops.sum_last(self.value), dirs)


def stack(jets):
    """Stack scalar-shaped jets into one jet of shape (..., k)."""
    jets = list(jets)
    value = ops.colstack([j.value for j in jets])
    all_dirs = {}
    for j in jets:
        for d, cs in j.dirs.items():
            prev = all_dirs.get(d)
            if prev is not None and prev != len(cs):
                raise ContractError(f"jet order mismatch along direction {d}")
            all_dirs[d] = len(cs)
    dirs = {}
    for d in sorted(all_dirs):
        order = all_dirs[d]
        slots = []
        for k in range(order):
            cols = []
            for j in jets:
                cs = j.dirs.get(d)
                c = cs[k] if cs is not None else None
                shape = np.shape(ops.value_of(j.value))
                if c is None:
                    c = np.zeros(shape)
                elif isinstance(c, (int, float)):
                    c = np.full(shape, float(c))
                cols.append(c)
            slots.append(ops.colstack(cols))
        dirs[d] = tuple(slots)
    return Jet(value, dirs)


def eval_with_input_derivatives(field, point, direction=0, order=MAX_ORDER):
    """Evaluate ``field`` at ``point`` with exact derivatives along one coordinate.

    ``field`` maps a list of coordinate jets to a scalar jet and may use only
    the supported primitives.  Returns a jet carrying value and d1..d_order
    along coordinate ``direction``.
    """
    if order > MAX_ORDER:
        raise CapabilityError(f"input-derivative order {order} > {MAX_ORDER}")
    if order < 0:
        raise ContractError("order must be >= 0")
    point = np.atleast_1d(np.asarray(point, dtype=float))
    dim = point.shape[-1]
    if not 0 <= direction < dim:
        raise ContractError(f"direction {direction} outside point of dim {dim}")
    coords = []
    for i in range(dim):
        x = point[..., i] if point.ndim > 1 else point[i]
        if i == direction and order >= 1:
            coords.append(Jet.seed(x, direction=i, order=order))
        else:
            coords.append(Jet.constant(x))
    out = field(coords)
    if order >= 1 and direction not in out.dirs:
        out = Jet(out.value, {direction: (None,) * order})
    return out


def eval_mixed_second(field, point, dir_a, dir_b):
    """Pure second derivative along a repeated direction.

    Mixed partials (dir_a != dir_b) are deliberately unsupported: every
    residual operator in this library decomposes into pure directional
    derivatives.
    """
    if dir_a != dir_b:
        raise CapabilityError("mixed partial derivatives are not supported")
    return eval_with_input_derivatives(field, point, dir_a, order=2).d2


def _div0(a, b):
    if a is None:
        return None
    return ops.div(a, b)
