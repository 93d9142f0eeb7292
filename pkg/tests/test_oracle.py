import math
import warnings

import numpy as np
import pytest

from twomomenta.channels import build_channels, emergent_velocity
from twomomenta.oracle import (
    BoundaryWarning,
    GridWavefunction,
    bohm_velocity_from_grid,
    evolve_modes,
    gaussian_on_grid,
    grid,
    harmonic_potential,
    split_operator_evolve,
)
from twomomenta.wavefield import (
    GaussianSlitMode,
    UnitsConstants,
    WavefieldState,
    evaluate_mode,
    superpose,
)


def free_gaussian(n=2048, half=20.0, sigma=1.0, k0=0.0):
    x = grid(-half, half, n)
    return GridWavefunction(-half, half, gaussian_on_grid(x, 0.0, sigma, k0))


def coherent(x, t, a=1.0):
    # displaced ground state of V = x**2/2 (hbar = m = omega = 1)
    return (math.pi ** -0.25 * np.exp(-(x - a * math.cos(t)) ** 2 / 2 - 1j * a * x * math.sin(t)
                                      + 0.25j * a * a * math.sin(2 * t) - 0.5j * t))


def test_free_gaussian_l2_error(units):
    g0 = free_gaussian()
    g = split_operator_evolve(g0, None, 1e-3, 1000, units)
    exact = evaluate_mode(GaussianSlitMode(0.0, 1.0), g.x, 1.0, units).psi
    err = math.sqrt(np.sum(np.abs(g.values - exact) ** 2) * g.dx)
    assert err < 1e-8
    assert not g.boundary_flag


def test_norm_drift(units):
    g0 = free_gaussian(k0=1.5)
    g = split_operator_evolve(g0, harmonic_potential(0.3, units), 1e-3, 1000, units)
    assert abs(g.norm() - g0.norm()) < 1e-12


def test_harmonic_ground_state_stationary(units):
    x = grid(-16, 16, 1024)
    g0 = GridWavefunction(-16, 16, math.pi ** -0.25 * np.exp(-x**2 / 2) + 0j)
    steps = 2000
    g = split_operator_evolve(g0, harmonic_potential(1.0, units), 2 * math.pi / steps, steps, units)
    assert np.max(np.abs(np.abs(g.values) - np.abs(g0.values))) < 1e-8


def test_strang_second_order_in_dt(units):
    x = grid(-16, 16, 1024)
    g0 = GridWavefunction(-16, 16, coherent(x, 0.0))
    errs = []
    for dt in (0.02, 0.01, 0.005):
        g = split_operator_evolve(g0, harmonic_potential(1.0, units), dt, round(1.0 / dt), units)
        errs.append(math.sqrt(np.sum(np.abs(g.values - coherent(x, 1.0)) ** 2) * g.dx))
    assert errs[0] / errs[1] >= 3.9 and errs[1] / errs[2] >= 3.9, errs


def test_plane_wave_velocity():
    u = UnitsConstants(hbar=1.3, mass=0.7)
    n, L = 256, 2 * math.pi * 4
    x = grid(0, L, n)
    k = 3 * 2 * math.pi / L
    g = GridWavefunction(0, L, np.exp(1j * k * x))
    for method in ("spectral", "fd4"):
        v = bohm_velocity_from_grid(g, u, method)
        np.testing.assert_allclose(v, u.hbar * k / u.mass, rtol=1e-3 if method == "fd4" else 1e-12)
    with pytest.raises(ValueError):
        bohm_velocity_from_grid(g, u, "euler")


@pytest.mark.parametrize("method,tol", [("spectral", 1e-6), ("fd4", 1e-6)])
def test_free_gaussian_velocity(units, method, tol):
    m = GaussianSlitMode(0.5, 1.0, 0.6, 0.3)
    g = evolve_modes([m], -20, 20, 4096, 1.0, 1.0, units)
    v = bohm_velocity_from_grid(g, units, method)
    ref = superpose(WavefieldState((m,)), g.x, 1.0, units).v
    P = g.density()
    mask = P > 1e-6 * P.max()
    assert np.max(np.abs(v[mask] - ref[mask])) < tol * np.max(np.abs(ref[mask]))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_end_to_end_against_channels(units, n):
    centers = np.linspace(-3, 3, n) if n > 1 else [0.2]
    state = WavefieldState(tuple(GaussianSlitMode(c, 0.5, 0.2 * i, 0.4 * i)
                                 for i, c in enumerate(centers)))
    g = evolve_modes(state.modes, -40, 40, 2048, 1.5, 0.5, units)
    vg = bohm_velocity_from_grid(g, units)
    vc = emergent_velocity(build_channels(state, g.x, 1.5, units))
    P = g.density()
    order = np.argsort(P)[::-1]
    mass = np.cumsum(P[order]) / P.sum()
    region = np.zeros(P.size, bool)
    region[order[: np.searchsorted(mass, 0.99) + 1]] = True
    region &= np.isfinite(vc) & np.isfinite(vg)
    assert np.max(np.abs(vc[region] - vg[region])) < 1e-6 * np.max(np.abs(vg[region]))


def test_modes_born_later_are_evolved_from_birth(units):
    late = GaussianSlitMode(1.0, 0.5, birth_time=0.8)
    g = evolve_modes([GaussianSlitMode(-1.0, 0.5), late], -30, 30, 1024, 2.0, 0.1, units)
    state = WavefieldState((GaussianSlitMode(-1.0, 0.5), late))
    np.testing.assert_allclose(g.values, superpose(state, g.x, 2.0, units).psi, atol=1e-10)
    with pytest.raises(ValueError):
        evolve_modes([late], -30, 30, 1024, 0.5, 0.1, units)


def test_boundary_warning(units):
    g0 = free_gaussian(n=256, half=5.0, sigma=1.0)
    with pytest.warns(BoundaryWarning):
        g = split_operator_evolve(g0, None, 0.1, 30, units)
    assert g.boundary_flag
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        split_operator_evolve(free_gaussian(), None, 0.1, 5, units)


def test_grid_size_must_be_power_of_two():
    with pytest.raises(ValueError):
        GridWavefunction(-1, 1, np.zeros(100, complex))
    with pytest.raises(ValueError):
        GridWavefunction(1, 1, np.zeros(64, complex))
