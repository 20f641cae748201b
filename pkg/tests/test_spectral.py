"""Spectral reference solver: fixed points, conservation, refinement, CSV io."""

import math

import numpy as np
import pytest

from abpinn.problems import ProblemName
from abpinn.spectral import (
    ReferenceGrid,
    SpectralConfig,
    default_config,
    initial_condition,
    kdv_mass,
    load_grid,
    save_grid,
    solve,
)
from abpinn.tape import ContractError


def small(problem, **kw):
    base = dict(n_modes=128, dt=1e-3, t_final=0.1, save_times=11)
    base.update(kw)
    return SpectralConfig(problem, **base)


def test_zero_initial_condition_stays_zero():
    for problem in (ProblemName.ALLEN_CAHN, ProblemName.KDV):
        grid = solve(small(problem), u0=np.zeros(128))
        assert np.abs(grid.values).max() == 0.0


def test_allen_cahn_equilibrium_one():
    grid = solve(small(ProblemName.ALLEN_CAHN), u0=np.ones(128))
    assert np.abs(grid.values - 1.0).max() < 1e-12


def test_initial_condition_fidelity():
    for problem in (ProblemName.ALLEN_CAHN, ProblemName.KDV):
        cfg = small(problem)
        grid = solve(cfg)
        xs = grid.xs
        np.testing.assert_allclose(
            grid.values[0], initial_condition(problem, xs), atol=1e-12
        )


def test_spectral_periodicity_of_representation():
    # the trigonometric interpolant through the final KdV state takes the
    # same value at x = -1 and x = +1
    grid = solve(small(ProblemName.KDV, dt=1e-4, t_final=0.05, save_times=6))
    v = np.fft.rfft(grid.values[-1])
    n = grid.xs.size
    ks = np.arange(n // 2 + 1)
    left = np.real(v[0] + 2 * np.sum(v[1:-1] * np.exp(1j * math.pi * ks[1:-1] * 0)) + v[-1]) / n
    # evaluate interpolant at x=-1 and x=+1 (phases differ by full periods)
    at = lambda x: np.real(
        v[0] + 2 * np.sum(v[1:-1] * np.exp(1j * math.pi * ks[1:-1] * (x + 1.0)))
        + v[-1] * np.cos(math.pi * ks[-1] * (x + 1.0))
    ) / n
    assert at(-1.0) == pytest.approx(at(1.0), abs=1e-10)


def test_kdv_mass_cosine_is_zero():
    cfg = small(ProblemName.KDV, dt=1e-4)
    grid = solve(cfg)
    assert abs(kdv_mass(grid, 0)) < 1e-14


def test_kdv_constant_preserved():
    cfg = small(ProblemName.KDV, dt=1e-4)
    grid = solve(cfg, u0=np.full(128, 0.3))
    for i in range(grid.times.size):
        assert kdv_mass(grid, i) == pytest.approx(0.3, abs=1e-12)


@pytest.mark.slow
def test_kdv_mass_drift_over_unit_time():
    grid = solve(SpectralConfig(ProblemName.KDV, n_modes=256, dt=2e-5))
    masses = [kdv_mass(grid, i) for i in range(grid.times.size)]
    drift = max(abs(m - masses[0]) for m in masses)
    assert drift / np.abs(grid.values).max() < 1e-8


@pytest.mark.slow
def test_refinement_convergence_kdv():
    a = solve(SpectralConfig(ProblemName.KDV, n_modes=256, dt=4e-5, t_final=0.5,
                             save_times=26))
    b = solve(SpectralConfig(ProblemName.KDV, n_modes=512, dt=2e-5, t_final=0.5,
                             save_times=26))
    diff = np.linalg.norm(a.values - b.values[:, ::2]) / np.linalg.norm(b.values)
    assert diff < 1e-6


@pytest.mark.slow
def test_refinement_convergence_allen_cahn():
    # the derivative kink of the initial condition at the periodic wrap and
    # the late sharp interfaces set the truncation floor; refinement must
    # shrink the difference by well over the 4x of a low-order scheme
    a = solve(SpectralConfig(ProblemName.ALLEN_CAHN, n_modes=256, dt=2e-4))
    b = solve(SpectralConfig(ProblemName.ALLEN_CAHN, n_modes=512, dt=1e-4))
    c = solve(SpectralConfig(ProblemName.ALLEN_CAHN, n_modes=1024, dt=5e-5))
    coarse = np.linalg.norm(a.values - b.values[:, ::2]) / np.linalg.norm(b.values)
    fine = np.linalg.norm(b.values - c.values[:, ::2]) / np.linalg.norm(c.values)
    assert fine < coarse / 4.0


def test_divergence_detection():
    cfg = SpectralConfig(ProblemName.KDV, n_modes=128, dt=0.05, t_final=1.0,
                         save_times=21)
    from abpinn.spectral import SolverDiverged

    with pytest.raises(SolverDiverged):
        solve(cfg, u0=50.0 * np.cos(math.pi * (-1.0 + 2.0 * np.arange(128) / 128)))


def test_config_validation():
    with pytest.raises(ContractError):
        SpectralConfig(ProblemName.KDV, n_modes=100)
    with pytest.raises(ContractError):
        SpectralConfig(ProblemName.KDV, n_modes=256, dt=-1.0)
    with pytest.raises(ContractError):
        # step count not divisible into save intervals
        solve(SpectralConfig(ProblemName.KDV, n_modes=128, dt=3e-3, t_final=0.1,
                             save_times=11))


def test_grid_csv_round_trip(tmp_path):
    grid = solve(small(ProblemName.ALLEN_CAHN))
    path = tmp_path / "ref.csv"
    save_grid(grid, path)
    back = load_grid(path)
    np.testing.assert_array_equal(back.times, grid.times)
    np.testing.assert_array_equal(back.xs, grid.xs)
    np.testing.assert_array_equal(back.values, grid.values)
    header = open(path).readline().strip()
    assert header == "t,x,u"


def test_interpolation_bilinear_and_periodic_wrap():
    xs = -1.0 + 2.0 * np.arange(8) / 8
    times = np.array([0.0, 1.0])
    values = np.stack([np.cos(math.pi * xs), 2 * np.cos(math.pi * xs)])
    grid = ReferenceGrid(times, xs, values)
    # midpoint in time and space between nodes
    got = grid.interpolate(np.array([0.5]), np.array([xs[1] / 2 + xs[2] / 2]))
    want = 1.5 * (np.cos(math.pi * xs[1]) + np.cos(math.pi * xs[2])) / 2
    assert got[0] == pytest.approx(want)
    # wrap: x just past the last node interpolates toward x = -1's value
    got_wrap = grid.interpolate(np.array([0.0]), np.array([0.99]))
    frac = (0.99 - xs[-1]) / (xs[1] - xs[0])
    want_wrap = (1 - frac) * np.cos(math.pi * xs[-1]) + frac * np.cos(-math.pi)
    assert got_wrap[0] == pytest.approx(want_wrap)


def test_default_configs():
    ac = default_config(ProblemName.ALLEN_CAHN)
    kdv = default_config(ProblemName.KDV)
    assert (ac.n_modes, ac.dt) == (512, 1e-4)
    assert (kdv.n_modes, kdv.dt) == (512, 1e-5)
    assert ac.save_times == kdv.save_times == 101
