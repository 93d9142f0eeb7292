"""Quantum-potential identities, heat field and equation residuals.

All forms of the quantum potential here use the osmotic velocity
``u = -(hbar/2m) grad P / P = -(hbar/m) grad R / R``.  With that ``u`` the
osmotic and heat-flow forms carry an overall sign relative to the commonly
quoted ``m u**2/2 - (hbar/2) div u``; the expressions below are the ones that
equal ``-(hbar**2/2m) lap R / R`` identically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channels import build_channels, emergent_velocity, total_current, total_intensity
from .oracle import BoundaryWarning, bohm_velocity_from_grid, evolve_modes
from .wavefield import NODE_EPS, UnitsConstants, WavefieldState

FieldFn = Callable[[np.ndarray, float], tuple]


class DomainError(ValueError):
    """Input outside the domain where a diagnostic is defined."""


@dataclass(frozen=True)
class VelocityDecomposition:
    v_forward: np.ndarray
    u_osmotic: np.ndarray
    delta_p: np.ndarray


def decompose_velocity(R, gradR, gradS, units: UnitsConstants) -> VelocityDecomposition:
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise DomainError("osmotic velocity needs R > 0")
    u = -units.hbar / units.mass * np.asarray(gradR) / R
    return VelocityDecomposition(np.asarray(gradS) / units.mass, u, units.mass * u)


def osmotic_from_density(P, gradP, units: UnitsConstants) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if np.any(P <= 0):
        raise DomainError("osmotic velocity needs P > 0")
    return -units.hbar / (2 * units.mass) * np.asarray(gradP) / P


def action_fluctuation(P_t, P_0, units: UnitsConstants) -> np.ndarray:
    """delta S(t) - delta S(0) recovered from the density ratio."""
    return -0.5 * units.hbar * np.log(np.asarray(P_t) / np.asarray(P_0))


def quantum_potential_grad_form(P, gradP, lapP, units: UnitsConstants) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if np.any(P <= 0):
        raise DomainError("quantum potential needs P > 0")
    f = np.asarray(gradP) / P
    return units.hbar**2 / (4 * units.mass) * (0.5 * f * f - np.asarray(lapP) / P)


def quantum_potential_R_form(R, lapR, units: UnitsConstants) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise DomainError("quantum potential needs R > 0")
    return -units.hbar**2 / (2 * units.mass) * np.asarray(lapR) / R


def quantum_potential_u_form(u, divu, units: UnitsConstants) -> np.ndarray:
    """``U = (hbar/2) div u - m u**2 / 2``."""
    u = np.asarray(u, dtype=float)
    return 0.5 * units.hbar * np.asarray(divu) - 0.5 * units.mass * u * u


@dataclass(frozen=True)
class HeatField:
    """Exchanged heat ``deltaQ = -hbar*omega*ln(P_t/P_0)`` sampled on ``x``.

    ``reference`` is ``P_0``; a scalar means a spatially uniform reference,
    for which ``grad deltaQ = 2 omega m u`` holds exactly.
    """

    x: np.ndarray
    deltaQ: np.ndarray
    omega: float
    reference: np.ndarray | float

    @property
    def uniform_reference(self) -> bool:
        ref = np.asarray(self.reference)
        return ref.ndim == 0 or bool(np.all(ref == ref.flat[0]))

    def gradient(self) -> np.ndarray:
        return fd_first(self.deltaQ, self.x)

    def laplacian(self) -> np.ndarray:
        return fd_second(self.deltaQ, self.x)


def heat_field(x, P_t, P_0=1.0, omega: float | None = None,
               units: UnitsConstants = UnitsConstants()) -> HeatField:
    P_t = np.asarray(P_t, dtype=float)
    P_0 = np.asarray(P_0, dtype=float)
    if np.any(P_t <= 0) or np.any(P_0 <= 0):
        raise DomainError("heat field needs strictly positive densities")
    omega = units.omega if omega is None else omega
    if not omega > 0:
        raise DomainError("omega must be positive")
    dQ = -units.hbar * omega * np.log(P_t / P_0)
    return HeatField(np.asarray(x, dtype=float), dQ, omega,
                     float(P_0) if P_0.ndim == 0 else P_0)


def quantum_potential_heat_terms(gradQ, lapQ, omega: float,
                                 units: UnitsConstants) -> np.ndarray:
    """``U = (hbar**2/4m) [lap Q/(hbar w) - (grad Q/(hbar w))**2 / 2]``."""
    g = np.asarray(gradQ) / (units.hbar * omega)
    lap = np.asarray(lapQ) / (units.hbar * omega)
    return units.hbar**2 / (4 * units.mass) * (lap - 0.5 * g * g)


def quantum_potential_heat_form(heat: HeatField, units: UnitsConstants) -> np.ndarray:
    """Quantum potential from the heat field, derivatives by finite differences."""
    if not heat.uniform_reference:
        raise DomainError("heat form needs a spatially uniform reference density")
    return quantum_potential_heat_terms(heat.gradient(), heat.laplacian(),
                                        heat.omega, units)


def fd_first(f, x) -> np.ndarray:
    """Fourth-order central first derivative on a uniform grid (2nd order at edges)."""
    f = np.asarray(f, dtype=float)
    h = x[1] - x[0]
    d = np.gradient(f, h, edge_order=2)
    d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    return d


def fd_second(f, x) -> np.ndarray:
    """Fourth-order central second derivative on a uniform grid."""
    f = np.asarray(f, dtype=float)
    h = x[1] - x[0]
    d = np.empty_like(f)
    d[1:-1] = (f[:-2] - 2 * f[1:-1] + f[2:]) / h**2
    d[0], d[-1] = d[1], d[-2]
    d[2:-2] = (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * h * h)
    return d


def field_fn(state: WavefieldState, units: UnitsConstants) -> FieldFn:
    return lambda x, t: state.derivatives(x, t, units)


def hj_residual(field: FieldFn, x, t: float, dt: float, units: UnitsConstants,
                V=None) -> np.ndarray:
    """Residual of the modified Hamilton-Jacobi equation at time ``t``.

    ``field(x, t)`` returns ``(Psi, dPsi, d2Psi)``.  ``dS/dt`` is a central
    difference over ``t +- dt`` (taken from the phase of the ratio, so no
    unwrapping is needed); spatial terms use the supplied derivatives.  Node
    points are returned as NaN.
    """
    x = np.asarray(x, dtype=float)
    psi, dpsi, d2psi = field(x, t)
    psi_p, _, _ = field(x, t + dt)
    psi_m, _, _ = field(x, t - dt)
    P = np.abs(psi) ** 2
    node = ~(P > NODE_EPS * np.max(P))
    safe = np.where(node, 1.0, psi)
    g = dpsi / safe
    lapR_over_R = np.real(d2psi / safe) + np.imag(g) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        S_t = units.hbar * np.angle(psi_p * np.conj(psi_m)) / (2 * dt)
    gradS = units.hbar * np.imag(g)
    U = -units.hbar**2 / (2 * units.mass) * lapR_over_R
    Vx = 0.0 if V is None else (V(x, t) if callable(V) else np.asarray(V))
    res = S_t + gradS**2 / (2 * units.mass) + Vx + U
    return np.where(node, np.nan, res)


def continuity_residual(state: WavefieldState, x, t: float, dt: float,
                        units: UnitsConstants) -> np.ndarray:
    """``dP/dt + d(P v_tot)/dx`` with P and J from the channel machinery.

    Both derivatives are second-order central differences (``x`` uniform).
    """
    x = np.asarray(x, dtype=float)
    P_p = total_intensity(build_channels(state, x, t + dt, units))
    P_m = total_intensity(build_channels(state, x, t - dt, units))
    J = total_current(build_channels(state, x, t, units))
    return (P_p - P_m) / (2 * dt) + np.gradient(J, x[1] - x[0], edge_order=2)


def probability_mask(P, mass: float = 0.99, node_eps: float = NODE_EPS) -> np.ndarray:
    """Smallest set of grid points carrying ``mass`` of the total, nodes excluded."""
    P = np.asarray(P, dtype=float)
    order = np.argsort(P, axis=None, kind="stable")[::-1]
    cum = np.cumsum(P.flat[order])
    k = int(np.searchsorted(cum, mass * cum[-1])) + 1
    mask = np.zeros(P.size, bool)
    mask[order[:k]] = True
    mask = mask.reshape(P.shape)
    return mask & (P > node_eps * np.max(P))


def residual_norm(residual, P, mass: float = 0.99) -> float:
    """Max |residual| over the high-probability region."""
    m = probability_mask(P, mass) & np.isfinite(residual)
    return float(np.max(np.abs(np.asarray(residual)[m])))


def convergence_order(errors, ratio: float = 2.0) -> np.ndarray:
    errors = np.asarray(errors, dtype=float)
    return np.log(errors[:-1] / errors[1:]) / np.log(ratio)


def quantum_potential_report(state: WavefieldState, x, t: float,
                             units: UnitsConstants) -> dict:
    """All quantum-potential forms of the superposed field on a grid."""
    x = np.asarray(x, dtype=float)
    psi, dpsi, d2psi = state.derivatives(x, t, units)
    P = np.abs(psi) ** 2
    keep = P > NODE_EPS * np.max(P)
    g = dpsi[keep] / psi[keep]
    R = np.sqrt(P[keep])
    a, b = np.real(g), np.imag(g)
    lapR = R * (np.real(d2psi[keep] / psi[keep]) + b * b)
    gradP = 2 * P[keep] * a
    lapP = 2 * (R * lapR + (R * a) ** 2)
    u = -units.hbar / units.mass * a
    # d/dx of a = Re(psi'/psi) is Re(psi''/psi) - Re(g**2)
    divu = -units.hbar / units.mass * (np.real(d2psi[keep] / psi[keep]) - np.real(g * g))
    return {
        "x": x[keep],
        "P": P[keep],
        "U_grad": quantum_potential_grad_form(P[keep], gradP, lapP, units),
        "U_R": quantum_potential_R_form(R, lapR, units),
        "U_u": quantum_potential_u_form(u, divu, units),
        "u": u,
    }


def oracle_grid_size(state: WavefieldState, t: float, units: UnitsConstants,
                     pad: float = 12.0) -> tuple[float, float, int]:
    """Periodic box and power-of-two size that hold and resolve every mode up to ``t``."""
    modes = state.modes_at(t)
    if not modes:
        raise DomainError("no open slit")
    lo = min(m.mean_position(t) - pad * m.width(t, units) for m in modes)
    hi = max(m.mean_position(t) + pad * m.width(t, units) for m in modes)
    kmax = max(abs(units.mass * m.v0 / units.hbar) + 6.0 / m.sigma0 for m in modes)
    n = 2 ** max(8, math.ceil(math.log2((hi - lo) * kmax / math.pi)))
    return float(lo), float(hi), n


def oracle_velocity_deviation(state: WavefieldState, t: float, units: UnitsConstants,
                              level: float = 1e-6) -> dict:
    """Channel velocity against the grid solver's ``(hbar/m) Im(dPsi/Psi)``.

    Compared where the grid density exceeds ``level`` times its maximum;
    ``relative`` is the largest deviation over the largest grid speed.
    """
    lo, hi, n = oracle_grid_size(state, t, units)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        g = evolve_modes(state.modes_at(t), lo, hi, n, t, max(t, 1e-12), units)
    v_grid = bohm_velocity_from_grid(g, units)
    v_chan = emergent_velocity(build_channels(state, g.x, t, units))
    P = g.density()
    mask = (P > level * P.max()) & np.isfinite(v_grid) & np.isfinite(v_chan)
    dev = float(np.max(np.abs(v_chan[mask] - v_grid[mask])))
    scale = float(np.max(np.abs(v_grid[mask])))
    return {"time": float(t), "points": int(n), "x_min": lo, "x_max": hi,
            "compared": int(mask.sum()), "max_abs": dev,
            "relative": dev / scale if scale > 0 else dev,
            "boundary_flag": bool(g.boundary_flag)}
