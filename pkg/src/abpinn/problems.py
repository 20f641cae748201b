"""Benchmark PDE definitions: residual operators, forcings, references.

Each problem bundles its domain box, named parameters, the derivative
orders its residual needs, the constraining operator and embedding the
ansatz should use, and a reference solution (closed form where available,
otherwise a precomputed pseudo-spectral grid with bilinear lookup).

Residuals are the signed operator mismatch D[u](x) - f(x); the training
loss squares them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import tape as ops
from .ansatz import Constraint
from .jets import Jet
from .tape import ContractError


class ReferenceUnavailable(RuntimeError):
    """A spectral reference grid is required but has not been computed/loaded."""


@dataclass(frozen=True)
class Box:
    lows: tuple
    highs: tuple
    names: tuple

    def __post_init__(self):
        if not len(self.lows) == len(self.highs) == len(self.names):
            raise ContractError("box arrays must have equal length")
        if any(lo >= hi for lo, hi in zip(self.lows, self.highs)):
            raise ContractError("box bounds must satisfy lo < hi")

    @property
    def dim(self):
        return len(self.lows)

    def contains_interior(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.lows)
        hi = np.asarray(self.highs)
        return np.all((p > lo) & (p < hi), axis=1)

    def grid(self, counts):
        """Uniform rectilinear grid over the closed box, flattened to (N, dim)."""
        counts = [counts] * self.dim if np.isscalar(counts) else list(counts)
        axes = [
            np.linspace(lo, hi, int(n))
            for lo, hi, n in zip(self.lows, self.highs, counts)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1), axes


class ProblemName(enum.Enum):
    CHIRP = "chirp"
    SINE_WAVE = "sine"
    ADVECTION = "advection"
    HELMHOLTZ = "helmholtz"
    FORCED_POISSON = "poisson"
    ALLEN_CAHN = "allen_cahn"
    KDV = "kdv"


# 3x3 grid of forcing centers; the paper-style layout, overridable per config.
POISSON_DEFAULT_CENTERS = tuple(
    (x, y) for x in (-0.5, 0.0, 0.5) for y in (-0.5, 0.0, 0.5)
)


@dataclass
class ProblemSpec:
    name: ProblemName
    domain: Box
    params: dict
    derivative_request: tuple
    constraint: Constraint
    periodic_dims: tuple = ()
    reference_grid: object = field(default=None, repr=False)

    @property
    def is_spectral(self):
        return self.name in (ProblemName.ALLEN_CAHN, ProblemName.KDV)


def make_problem(name, domain=None, **overrides) -> ProblemSpec:
    """Build a benchmark problem with its default parameters.

    ``overrides`` replace individual named parameters; ``domain`` replaces
    the default box (used by the chirp variant on (-1, 1)).
    """
    name = ProblemName(name) if not isinstance(name, ProblemName) else name
    if name in (ProblemName.CHIRP, ProblemName.SINE_WAVE):
        params = {"omega": 10.0, "power": 10} if name is ProblemName.CHIRP else {
            "omega": 20.0,
            "power": 1,
        }
        box = domain or Box((0.0,), (1.0,), ("x",))
        spec = ProblemSpec(name, box, params, ((0, 1),), Constraint.CHIRP_RIGHT)
    elif name is ProblemName.ADVECTION:
        params = {"c": 10.0}
        box = domain or Box((0.0, -1.0), (1.0, 1.0), ("t", "x"))
        spec = ProblemSpec(
            name, box, params, ((0, 1), (1, 1)), Constraint.ADVECTION_IC, (1,)
        )
    elif name is ProblemName.HELMHOLTZ:
        params = {"k": 2.0, "a": 1.0, "b": 7.0}
        box = domain or Box((-1.0, -1.0), (1.0, 1.0), ("x", "y"))
        spec = ProblemSpec(
            name, box, params, ((0, 2), (1, 2)), Constraint.HELMHOLTZ_BOX
        )
    elif name is ProblemName.FORCED_POISSON:
        params = {"sigma": 0.025, "centers": POISSON_DEFAULT_CENTERS}
        box = domain or Box((-1.0, -1.0), (1.0, 1.0), ("x", "y"))
        spec = ProblemSpec(
            name, box, params, ((0, 2), (1, 2)), Constraint.POISSON_BOX
        )
    elif name is ProblemName.ALLEN_CAHN:
        params = {"diffusion": 1e-4, "reaction": 5.0}
        box = domain or Box((0.0, -1.0), (1.0, 1.0), ("t", "x"))
        spec = ProblemSpec(
            name, box, params, ((0, 1), (1, 2)), Constraint.ALLEN_CAHN_IC, (1,)
        )
    elif name is ProblemName.KDV:
        params = {"eta": 1.0, "mu_disp": 0.022}
        box = domain or Box((0.0, -1.0), (1.0, 1.0), ("t", "x"))
        spec = ProblemSpec(
            name, box, params, ((0, 1), (1, 3)), Constraint.KDV_IC, (1,)
        )
    else:  # pragma: no cover
        raise ContractError(f"unknown problem {name!r}")
    unknown = set(overrides) - set(spec.params)
    if unknown:
        raise ContractError(f"unknown parameters for {name.value}: {sorted(unknown)}")
    spec.params.update(overrides)
    return spec


# -- forcing terms ------------------------------------------------------


def rhs(problem: ProblemSpec, points):
    """Forcing f(x) of the problem's operator equation."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    prm = problem.params
    if problem.name in (ProblemName.CHIRP, ProblemName.SINE_WAVE):
        w, k = prm["omega"], prm["power"]
        x = p[:, 0]
        return 2.0 * math.pi * w * k * np.cos(2.0 * math.pi * w * x**k) * x ** (k - 1)
    if problem.name is ProblemName.ADVECTION:
        return np.zeros(p.shape[0])
    if problem.name is ProblemName.HELMHOLTZ:
        k, a, b = prm["k"], prm["a"], prm["b"]
        x, y = p[:, 0], p[:, 1]
        coef = k**2 - (a * math.pi) ** 2 - (b * math.pi) ** 2
        return coef * np.sin(a * math.pi * x) * np.sin(b * math.pi * y)
    if problem.name is ProblemName.FORCED_POISSON:
        sigma = prm["sigma"]
        x, y = p[:, 0], p[:, 1]
        total = np.zeros_like(x)
        for cx, cy in prm["centers"]:
            rho2 = (x - cx) ** 2 + (y - cy) ** 2
            total += (rho2 - 2.0 * sigma**2) / sigma**4 * np.exp(-rho2 / (2.0 * sigma**2))
        return total
    if problem.name in (ProblemName.ALLEN_CAHN, ProblemName.KDV):
        return np.zeros(p.shape[0])
    raise ContractError(f"unknown problem {problem.name!r}")


# -- residual operators ---------------------------------------------------


def residual_of_jet(problem: ProblemSpec, jet: Jet, points):
    """Signed residual D[u] - f from a field jet carrying the problem's
    derivative request.  Works on plain arrays and on tape nodes alike."""
    prm = problem.params
    if problem.name in (ProblemName.CHIRP, ProblemName.SINE_WAVE):
        return ops.sub(jet.deriv(0, 1), rhs(problem, points))
    if problem.name is ProblemName.ADVECTION:
        return ops.add(jet.deriv(0, 1), ops.mul(prm["c"], jet.deriv(1, 1)))
    if problem.name is ProblemName.HELMHOLTZ:
        lap = ops.add(jet.deriv(0, 2), jet.deriv(1, 2))
        return ops.sub(
            ops.add(lap, ops.mul(prm["k"] ** 2, jet.value)), rhs(problem, points)
        )
    if problem.name is ProblemName.FORCED_POISSON:
        lap = ops.add(jet.deriv(0, 2), jet.deriv(1, 2))
        return ops.sub(lap, rhs(problem, points))
    if problem.name is ProblemName.ALLEN_CAHN:
        u = jet.value
        cubic = ops.mul(ops.mul(u, u), u)
        reaction = ops.mul(prm["reaction"], ops.sub(cubic, u))
        return ops.add(
            ops.sub(jet.deriv(0, 1), ops.mul(prm["diffusion"], jet.deriv(1, 2))),
            reaction,
        )
    if problem.name is ProblemName.KDV:
        u = jet.value
        transport = ops.mul(prm["eta"], ops.mul(u, jet.deriv(1, 1)))
        dispersion = ops.mul(prm["mu_disp"] ** 2, jet.deriv(1, 3))
        return ops.add(ops.add(jet.deriv(0, 1), transport), dispersion)
    raise ContractError(f"unknown problem {problem.name!r}")


def residual(problem: ProblemSpec, field_fn, points):
    """Signed residual of a differentiable field at interior points.

    ``field_fn(points, request)`` must return a jet carrying the requested
    directional derivatives (an ``AbPinnModel.field_jets`` bound method or
    an analytic field from :func:`analytic_field_fn`).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(problem.domain.contains_interior(pts)):
        raise ContractError("residual points must lie in the open domain box")
    jet = field_fn(pts, problem.derivative_request)
    return residual_of_jet(problem, jet, pts)


def analytic_field_fn(problem: ProblemSpec):
    """The closed-form solution as a differentiable field (oracle for tests)."""
    prm = problem.params

    def build(points, request):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        orders = dict(request)
        coords = [
            Jet.seed(pts[:, i], direction=i, order=orders[i])
            if orders.get(i)
            else Jet.constant(pts[:, i])
            for i in range(pts.shape[1])
        ]
        if problem.name in (ProblemName.CHIRP, ProblemName.SINE_WAVE):
            (x,) = coords
            return (x ** int(prm["power"]) * (2.0 * math.pi * prm["omega"])).sin()
        if problem.name is ProblemName.ADVECTION:
            t, x = coords
            return ((x - t * prm["c"]) * math.pi).sin()
        if problem.name is ProblemName.HELMHOLTZ:
            x, y = coords
            return (x * (prm["a"] * math.pi)).sin() * (y * (prm["b"] * math.pi)).sin()
        if problem.name is ProblemName.FORCED_POISSON:
            x, y = coords
            total = None
            inv = -1.0 / (2.0 * prm["sigma"] ** 2)
            for cx, cy in prm["centers"]:
                dx, dy = x - cx, y - cy
                g = ((dx * dx + dy * dy) * inv).exp()
                total = g if total is None else total + g
            return total
        raise ReferenceUnavailable(
            f"{problem.name.value} has no closed-form solution; use the spectral grid"
        )

    return build


def reference_solution(problem: ProblemSpec, points):
    """Reference u at points: analytic closed form, or bilinear grid lookup."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    prm = problem.params
    if problem.name in (ProblemName.CHIRP, ProblemName.SINE_WAVE):
        x = p[:, 0]
        return np.sin(2.0 * math.pi * prm["omega"] * x ** prm["power"])
    if problem.name is ProblemName.ADVECTION:
        t, x = p[:, 0], p[:, 1]
        return np.sin(math.pi * (x - prm["c"] * t))
    if problem.name is ProblemName.HELMHOLTZ:
        x, y = p[:, 0], p[:, 1]
        return np.sin(prm["a"] * math.pi * x) * np.sin(prm["b"] * math.pi * y)
    if problem.name is ProblemName.FORCED_POISSON:
        x, y = p[:, 0], p[:, 1]
        total = np.zeros_like(x)
        for cx, cy in prm["centers"]:
            rho2 = (x - cx) ** 2 + (y - cy) ** 2
            total += np.exp(-rho2 / (2.0 * prm["sigma"] ** 2))
        return total
    if problem.is_spectral:
        if problem.reference_grid is None:
            raise ReferenceUnavailable(
                f"no reference grid attached to {problem.name.value}; "
                "generate or load one first"
            )
        return problem.reference_grid.interpolate(p[:, 0], p[:, 1])
    raise ContractError(f"unknown problem {problem.name!r}")
