"""Pseudo-spectral reference solver for the periodic Allen-Cahn and KdV
initial-value problems on x in [-1, 1).

Fourier collocation in space with exact dealiasing (zero-padded transforms)
and fourth-order exponential time differencing (ETDRK4) in time, with the
phi-coefficients evaluated by contour integrals so the k = 0 mode needs no
special casing.  Validated by grid/step refinement and by conservation of
the KdV mean, not by authority.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .problems import ProblemName
from .tape import ContractError


class SolverDiverged(RuntimeError):
    """The time stepper produced non-finite values."""


@dataclass(frozen=True)
class SpectralConfig:
    problem: ProblemName
    n_modes: int = 512
    dt: float = 1e-4
    t_final: float = 1.0
    save_times: int = 101

    def __post_init__(self):
        if self.n_modes < 128 or self.n_modes & (self.n_modes - 1):
            raise ContractError("n_modes must be a power of two >= 128")
        if self.dt <= 0 or self.t_final <= 0 or self.save_times < 2:
            raise ContractError("need dt > 0, t_final > 0, save_times >= 2")


def default_config(problem) -> SpectralConfig:
    problem = ProblemName(problem) if not isinstance(problem, ProblemName) else problem
    if problem is ProblemName.ALLEN_CAHN:
        return SpectralConfig(problem, n_modes=512, dt=1e-4)
    if problem is ProblemName.KDV:
        return SpectralConfig(problem, n_modes=512, dt=1e-5)
    raise ContractError(f"no spectral solver for {problem!r}")


@dataclass
class ReferenceGrid:
    """Dense space-time reference values on a rectilinear (times x xs) grid."""

    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.xs = np.asarray(self.xs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.times.size, self.xs.size):
            raise ContractError("values must be shaped (times, xs)")

    def interpolate(self, t, x):
        """Bilinear lookup; x wraps periodically across [-1, 1), t is clamped."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        nt, nx = self.times.size, self.xs.size
        dt_ = self.times[1] - self.times[0]
        dx = self.xs[1] - self.xs[0]
        period = nx * dx

        ft = np.clip((t - self.times[0]) / dt_, 0.0, nt - 1.0)
        it = np.minimum(ft.astype(int), nt - 2)
        wt = ft - it

        fx = (x - self.xs[0]) / dx
        ix = np.floor(fx).astype(int)
        wx = fx - ix
        i0 = np.mod(ix, nx)
        i1 = np.mod(ix + 1, nx)

        v00 = self.values[it, i0]
        v01 = self.values[it, i1]
        v10 = self.values[it + 1, i0]
        v11 = self.values[it + 1, i1]
        lo = v00 * (1 - wx) + v01 * wx
        hi = v10 * (1 - wx) + v11 * wx
        return lo * (1 - wt) + hi * wt


def initial_condition(problem: ProblemName, xs):
    if problem is ProblemName.ALLEN_CAHN:
        return xs**2 * np.cos(math.pi * xs)
    if problem is ProblemName.KDV:
        return np.cos(math.pi * xs)
    raise ContractError(f"no initial condition for {problem!r}")


def _etdrk4_coefficients(linear, dt, n_contour=32):
    """phi-function coefficients via mean over a contour around each dt*L.

    The full unit circle is used (not the real-symmetric half circle) so the
    coefficients are exact for complex spectra like the KdV dispersion.
    """
    lam = dt * linear.astype(complex)
    roots = np.exp(2j * math.pi * (np.arange(n_contour) + 0.5) / n_contour)
    lr = lam[:, None] + roots[None, :]
    elr = np.exp(lr)
    q = dt * ((np.exp(lr / 2.0) - 1.0) / lr).mean(axis=1)
    f1 = dt * ((-4.0 - lr + elr * (4.0 - 3.0 * lr + lr**2)) / lr**3).mean(axis=1)
    f2 = dt * ((2.0 + lr + elr * (lr - 2.0)) / lr**3).mean(axis=1)
    f3 = dt * ((-4.0 - 3.0 * lr - lr**2 + elr * (4.0 - lr)) / lr**3).mean(axis=1)
    return np.exp(lam), np.exp(lam / 2.0), q, f1, f2, f3


def solve(config: SpectralConfig, u0=None) -> ReferenceGrid:
    """Integrate the configured PDE and return snapshots at uniform times.

    ``u0`` overrides the built-in initial condition (an array on the solver
    grid), which the conservation/fixed-point tests use.
    """
    n = config.n_modes
    xs = -1.0 + 2.0 * np.arange(n) / n
    u = initial_condition(config.problem, xs) if u0 is None else np.asarray(u0, float)
    if u.shape != (n,):
        raise ContractError(f"u0 must have shape ({n},)")

    # wavenumbers for period-2 domain; Nyquist zeroed for odd derivatives
    k = math.pi * np.arange(n // 2 + 1)
    kd = k.copy()
    kd[-1] = 0.0

    prm = config.problem
    if prm is ProblemName.ALLEN_CAHN:
        linear = -1e-4 * k**2 + 5.0
    elif prm is ProblemName.KDV:
        mu2 = 0.022**2
        linear = 1j * mu2 * kd**3
    else:
        raise ContractError(f"no spectral solver for {prm!r}")

    pad = 2 * n  # exact for quadratic and cubic nonlinearities

    def to_fine(v):
        return np.fft.irfft(v, n=pad) * 2.0

    def truncate(w_hat):
        out = w_hat[: n // 2 + 1] / 2.0
        out[-1] = 0.0  # keep the state Nyquist-free (padded transforms are
        return out  # then exact band-limited interpolation)

    if prm is ProblemName.ALLEN_CAHN:

        def nonlinear(v):
            w = to_fine(v)
            return -5.0 * truncate(np.fft.rfft(w**3))

    else:

        def nonlinear(v):
            w = to_fine(v)
            return -0.5 * 1j * kd * truncate(np.fft.rfft(w**2))

    e_full, e_half, q, f1, f2, f3 = _etdrk4_coefficients(linear, config.dt)

    n_steps = int(round(config.t_final / config.dt))
    save_every = n_steps // (config.save_times - 1)
    if save_every * (config.save_times - 1) != n_steps:
        raise ContractError(
            f"step count {n_steps} not divisible into {config.save_times - 1} intervals"
        )

    v = np.fft.rfft(u)
    v[-1] = 0.0
    times = np.linspace(0.0, config.t_final, config.save_times)
    values = np.empty((config.save_times, n))
    values[0] = u
    row = 1
    for step in range(1, n_steps + 1):
        nv = nonlinear(v)
        a = e_half * v + q * nv
        na = nonlinear(a)
        b = e_half * v + q * na
        nb = nonlinear(b)
        c = e_half * a + q * (2.0 * nb - nv)
        nc = nonlinear(c)
        v = e_full * v + f1 * nv + 2.0 * f2 * (na + nb) + f3 * nc
        if step % save_every == 0:
            u_now = np.fft.irfft(v, n=n)
            if not np.all(np.isfinite(u_now)):
                raise SolverDiverged(
                    f"{prm.value} solve diverged at step {step} "
                    f"(t={step * config.dt:g}, dt={config.dt:g}, n={n})"
                )
            values[row] = u_now
            row += 1
    return ReferenceGrid(times, xs, values)


def kdv_mass(grid: ReferenceGrid, time_index: int) -> float:
    """Mean of u over the periodic domain at one snapshot (a KdV invariant)."""
    return float(np.mean(grid.values[time_index]))


# -- CSV interchange -----------------------------------------------------


def save_grid(grid: ReferenceGrid, path):
    """Write the `t,x,u` row-major CSV consumed by the problems module."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x", "u"])
        for i, t in enumerate(grid.times):
            for j, x in enumerate(grid.xs):
                writer.writerow(
                    [f"{t:.17g}", f"{x:.17g}", f"{grid.values[i, j]:.17g}"]
                )


def load_grid(path) -> ReferenceGrid:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t", "x", "u"]:
            raise ContractError(f"bad reference header {header!r} in {path}")
        rows = [(float(a), float(b), float(c)) for a, b, c in reader]
    data = np.asarray(rows)
    times = np.unique(data[:, 0])
    xs = np.unique(data[:, 1])
    if data.shape[0] != times.size * xs.size:
        raise ContractError(f"{path} is not a dense rectilinear grid")
    values = data[:, 2].reshape(times.size, xs.size)
    return ReferenceGrid(times, xs, values)
