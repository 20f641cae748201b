"""Adaptive window functions: reference bumps, affine transforms, envelopes.

Each subdomain is the effective support of a radial bump evaluated in
transformed coordinates ``r = L^T (x - mu)``, where ``mu`` and the packed
lower-triangular factor ``L`` are trainable.  The diagonal of ``L`` is made
positive by taking its absolute value at read time, and ``mu`` is projected
back into the computational domain after every optimizer step.

Four reference window shapes are available.  All peak at ~1 at the origin
and decay to 1/2 at radius sqrt(2 ln 2): a Gaussian, a quartic-exponent
bump, a product of two shifted sigmoids, and a sigmoid of squared radius.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from . import tape as ops
from .jets import Jet
from .tape import ContractError, ParamGroup

HALF_RADIUS = math.sqrt(2.0 * math.log(2.0))


class ReferenceWindow(enum.Enum):
    GAUSS = "gauss"
    QUARTIC = "quartic"
    SIGMOID_PRODUCT = "sigmoid_product"
    SIGMOID_RADIAL = "sigmoid_radial"


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def reference_value(kind: ReferenceWindow, t):
    """Reference window at radius (or 1-D coordinate) ``t``."""
    t = np.asarray(t, dtype=float)
    if kind is ReferenceWindow.GAUSS:
        return np.exp(-(t**2) / 2.0)
    if kind is ReferenceWindow.QUARTIC:
        return np.exp(-(t**4) / (4.0 * math.log(2.0)))
    if kind is ReferenceWindow.SIGMOID_PRODUCT:
        return _sigmoid(10.0 * (HALF_RADIUS + t)) * _sigmoid(10.0 * (HALF_RADIUS - t))
    if kind is ReferenceWindow.SIGMOID_RADIAL:
        return _sigmoid(10.0 * (2.0 * math.log(2.0) - t**2))
    raise ContractError(f"unknown window kind {kind!r}")


def tri_size(dim: int) -> int:
    return dim * (dim + 1) // 2


class WindowParams:
    """Center ``mu`` and packed lower-triangular factor ``L`` of one subdomain."""

    def __init__(self, mu: ParamGroup, L: ParamGroup):
        self.mu = mu
        self.L = L
        d = len(mu)
        if len(L) != tri_size(d):
            raise ContractError(
                f"L needs {tri_size(d)} packed entries for dim {d}, got {len(L)}"
            )
        self.dim = d

    @classmethod
    def create(cls, mu, L_init, name="win"):
        """Build from a center vector and a scalar / diagonal / full L factor."""
        mu = np.asarray(mu, dtype=float).ravel()
        d = mu.size
        L_init = np.asarray(L_init, dtype=float)
        flat = np.zeros(tri_size(d))
        rows, cols = np.tril_indices(d)
        if L_init.ndim == 0:
            diag = np.full(d, float(L_init))
            flat[rows == cols] = diag
        elif L_init.ndim == 1:
            if L_init.size != d:
                raise ContractError(f"diagonal L needs {d} entries, got {L_init.size}")
            flat[rows == cols] = L_init
        else:
            if L_init.shape != (d, d):
                raise ContractError(f"L matrix must be ({d},{d}), got {L_init.shape}")
            flat = L_init[rows, cols]
        return cls(
            ParamGroup(f"{name}.mu", mu, (d,)),
            ParamGroup(f"{name}.L", flat, (tri_size(d),)),
        )

    def matrix(self):
        """Effective L: lower-triangular, |.| applied to the diagonal."""
        return ops.tril_matrix(self.L.array, self.dim)

    def copy_values(self):
        return self.mu.values.copy(), self.L.values.copy()


class WindowSet:
    """Ordered collection of adaptive windows sharing one reference shape."""

    def __init__(self, reference: ReferenceWindow, items=()):
        self.reference = reference
        self.items = list(items)

    def __len__(self):
        return len(self.items)


def transform(params: WindowParams, x):
    """Map coordinates to the window frame: ``L^T (x - mu)`` for rows of ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.dim:
        raise ContractError(f"point dim {x.shape[-1]} != window dim {params.dim}")
    return (x - params.mu.array) @ params.matrix()


def window_value(params: WindowParams, kind: ReferenceWindow, x):
    """Window at ``x``: reference shape of the transformed radius, in (0, ~1]."""
    r = transform(params, x)
    q = np.sum(r * r, axis=-1)
    if kind is ReferenceWindow.GAUSS:
        return np.exp(-q / 2.0)
    if kind is ReferenceWindow.QUARTIC:
        return np.exp(-(q**2) / (4.0 * math.log(2.0)))
    if kind is ReferenceWindow.SIGMOID_PRODUCT:
        return reference_value(kind, np.sqrt(q))
    if kind is ReferenceWindow.SIGMOID_RADIAL:
        return _sigmoid(10.0 * (2.0 * math.log(2.0) - q))
    raise ContractError(f"unknown window kind {kind!r}")


def envelope(window_set: WindowSet, x):
    """Pointwise max over all windows; identically 0 for an empty set."""
    x = np.asarray(x, dtype=float)
    if not window_set.items:
        return np.zeros(x.shape[:-1])
    vals = [window_value(p, window_set.reference, x) for p in window_set.items]
    return np.max(np.stack(vals, axis=0), axis=0)


def window_jet(params: WindowParams, kind: ReferenceWindow, x_jet: Jet, tape=None):
    """Differentiable (window, transformed-coords) pair at a jet of points.

    ``x_jet`` has shape (..., dim).  When ``tape`` is given, mu and L enter
    as tracked parameters so gradients flow to them.
    """
    if tape is not None:
        mu = tape.param(params.mu)
        L = ops.tril_matrix(tape.param(params.L), params.dim)
    else:
        mu = params.mu.array
        L = params.matrix()
    r = (x_jet - Jet.constant(mu)).matmul(L)
    q = (r * r).sum_last()
    if kind is ReferenceWindow.GAUSS:
        phi = (q * (-0.5)).exp()
    elif kind is ReferenceWindow.QUARTIC:
        phi = (q * q * (-1.0 / (4.0 * math.log(2.0)))).exp()
    elif kind is ReferenceWindow.SIGMOID_PRODUCT:
        t = q.sqrt()
        lo = _sigmoid_jet((t + HALF_RADIUS) * 10.0)
        hi = _sigmoid_jet((Jet.constant(HALF_RADIUS) - t) * 10.0)
        phi = lo * hi
    elif kind is ReferenceWindow.SIGMOID_RADIAL:
        phi = _sigmoid_jet((Jet.constant(2.0 * math.log(2.0)) - q) * 10.0)
    else:
        raise ContractError(f"unknown window kind {kind!r}")
    return phi, r


def _sigmoid_jet(z: Jet) -> Jet:
    return Jet.constant(1.0) / ((-z).exp() + 1.0)


class DomainConstraint:
    """Projection keeping a window center inside the (embedded) domain.

    ``intervals`` lists (index, lo, hi) clamps; ``circles`` lists (i, j)
    coordinate pairs renormalized onto the unit circle (Fourier-embedded
    periodic coordinates).
    """

    def __init__(self, intervals=(), circles=()):
        self.intervals = tuple(intervals)
        self.circles = tuple(circles)

    def project(self, mu: np.ndarray):
        for idx, lo, hi in self.intervals:
            mu[idx] = min(max(mu[idx], lo), hi)
        for i, j in self.circles:
            norm = math.hypot(mu[i], mu[j])
            if norm < 1e-300:
                mu[i], mu[j] = 1.0, 0.0
            else:
                mu[i] /= norm
                mu[j] /= norm


def project_constraints(params: WindowParams, constraint: DomainConstraint):
    """Clamp / renormalize ``mu`` in place; ``L`` is left untouched."""
    constraint.project(params.mu.array)
    return params
