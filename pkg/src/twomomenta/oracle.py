"""Independent grid solver used to cross-check the analytic fields.

Strang-split spectral propagation on a periodic grid, plus Bohmian velocity
extraction by spectral (or 4th-order finite-difference) differentiation.
Nothing here reuses the closed-form derivatives of the wavefield module.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .wavefield import NODE_EPS, GaussianSlitMode, UnitsConstants


class BoundaryWarning(UserWarning):
    """Wavefunction support reached the edge of the periodic box."""


@dataclass(frozen=True)
class GridWavefunction:
    x_min: float
    x_max: float
    values: np.ndarray
    time: float = 0.0
    boundary_flag: bool = False

    def __post_init__(self):
        n = len(self.values)
        if n < 2 or n & (n - 1):
            raise ValueError(f"grid size must be a power of two, got {n}")
        if not self.x_max > self.x_min:
            raise ValueError("empty domain")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.dx)

    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2


def grid(x_min: float, x_max: float, n: int) -> np.ndarray:
    return x_min + (x_max - x_min) / n * np.arange(n)


def gaussian_on_grid(x, center, sigma, k0=0.0, phase=0.0) -> np.ndarray:
    """Normalized Gaussian at its birth instant."""
    x = np.asarray(x, dtype=float)
    return ((2 * np.pi * sigma**2) ** -0.25
            * np.exp(-((x - center) ** 2) / (4 * sigma**2) + 1j * (k0 * (x - center) + phase)))


def _touches_boundary(psi: np.ndarray, tol: float = 1e-10) -> bool:
    p = np.abs(psi) ** 2
    edge = max(2, len(p) // 64)
    return bool(max(p[:edge].max(), p[-edge:].max()) > tol * p.max())


def split_operator_evolve(
    psi0: GridWavefunction,
    V: np.ndarray | Callable | None,
    dt: float,
    steps: int,
    units: UnitsConstants = UnitsConstants(),
) -> GridWavefunction:
    """Evolve ``psi0`` by ``steps`` Strang steps: half V, full kinetic, half V."""
    x = psi0.x
    if V is None:
        Vx = np.zeros_like(x)
    elif callable(V):
        Vx = np.asarray(V(x), dtype=float)
    else:
        Vx = np.asarray(V, dtype=float)
    half_v = np.exp(-0.5j * dt * Vx / units.hbar)
    kin = np.exp(-0.5j * dt * units.hbar * psi0.k**2 / units.mass)
    psi = np.array(psi0.values, dtype=complex)
    for _ in range(steps):
        psi = half_v * np.fft.ifft(kin * np.fft.fft(half_v * psi))
    flag = psi0.boundary_flag or _touches_boundary(psi)
    if flag and not psi0.boundary_flag:
        warnings.warn("wavefunction support reached the grid boundary", BoundaryWarning)
    return GridWavefunction(psi0.x_min, psi0.x_max, psi, psi0.time + steps * dt, flag)


def spectral_derivative(values: np.ndarray, dx: float) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(len(values), d=dx)
    return np.fft.ifft(1j * k * np.fft.fft(values))


def fd4_derivative(values: np.ndarray, dx: float) -> np.ndarray:
    """Periodic fourth-order central difference."""
    f = values
    return (np.roll(f, 2) - 8 * np.roll(f, 1) + 8 * np.roll(f, -1) - np.roll(f, -2)) / (12 * dx)


def bohm_velocity_from_grid(psi: GridWavefunction, units: UnitsConstants = UnitsConstants(),
                            method: str = "spectral") -> np.ndarray:
    """``(hbar/m) Im(dPsi/Psi)`` on the grid; NaN at nodes."""
    if method == "spectral":
        d = spectral_derivative(psi.values, psi.dx)
    elif method == "fd4":
        d = fd4_derivative(psi.values, psi.dx)
    else:
        raise ValueError(f"unknown differentiation method {method!r}")
    p = psi.density()
    node = ~(p > NODE_EPS * p.max())
    safe = np.where(node, 1.0, psi.values)
    return np.where(node, np.nan, units.hbar / units.mass * np.imag(d / safe))


def evolve_modes(
    modes: Sequence[GaussianSlitMode],
    x_min: float,
    x_max: float,
    n: int,
    t: float,
    dt: float,
    units: UnitsConstants = UnitsConstants(),
    V=None,
) -> GridWavefunction:
    """Grid superposition of slit modes, each evolved from its own birth time.

    The Schroedinger equation is linear, so modes born at different times (or
    later removed) are propagated separately and summed at ``t``.
    """
    x = grid(x_min, x_max, n)
    total = np.zeros(n, complex)
    flag = False
    for mode in modes:
        span = t - mode.birth_time
        if span < 0:
            raise ValueError("mode not yet born")
        k0 = units.mass * mode.v0 / units.hbar
        g = GridWavefunction(x_min, x_max,
                             gaussian_on_grid(x, mode.center, mode.sigma0, k0, mode.phase_offset),
                             mode.birth_time)
        steps = max(1, math.ceil(span / dt - 1e-9)) if span > 0 else 0
        if steps:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", BoundaryWarning)
                g = split_operator_evolve(g, V, span / steps, steps, units)
        total += g.values
        flag = flag or g.boundary_flag
    if flag:
        warnings.warn("wavefunction support reached the grid boundary", BoundaryWarning)
    return GridWavefunction(x_min, x_max, total, t, flag)


def harmonic_potential(omega: float = 1.0, units: UnitsConstants = UnitsConstants()):
    return lambda x: 0.5 * units.mass * omega**2 * np.asarray(x) ** 2
