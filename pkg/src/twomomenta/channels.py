"""Relational-intensity channels and the emergent velocity.

Each slit contributes three velocity channels: a forward channel carrying
``v = grad S / m`` and a pair of osmotic channels carrying ``+u`` and ``-u``
with ``u = -(hbar/m) grad R / R``.  A channel is a phase unit vector
``w_hat`` (stored as the complex number ``exp(i*angle)``), an amplitude and a
velocity.  The relational intensity of a channel is its amplitude times the
projection of its unit vector onto the total amplitude vector
``W = sum_i w_hat_i * amplitude_i``.

Osmotic pairs sit at ``angle = S/hbar +- pi/2`` with half the slit amplitude,
the ``+u`` channel at ``+pi/2``.  With that assignment the total current of
the channels reproduces the quantum-mechanical current exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .wavefield import NODE_EPS, UnitsConstants, WavefieldState

FORWARD, OSMOTIC_PLUS, OSMOTIC_MINUS = "forward", "osmotic_plus", "osmotic_minus"
KINDS = (FORWARD, OSMOTIC_PLUS, OSMOTIC_MINUS)

# phi in the double-slit closed form is read as (S2 - S1)/hbar
PHASE_CONVENTION = "phi = (S2 - S1)/hbar"


@dataclass(frozen=True)
class Channel:
    slit_index: int
    kind: str
    amplitude: np.ndarray
    angle: np.ndarray
    velocity: np.ndarray
    indeterminate: np.ndarray

    @property
    def unit_vector(self) -> np.ndarray:
        return np.stack([np.cos(self.angle), np.sin(self.angle)])


@dataclass(frozen=True)
class ChannelSystem:
    """3n channels sampled at one set of points.

    Arrays have shape ``(3n, *points)`` and are ordered slit by slit as
    ``forward, osmotic_plus, osmotic_minus``.
    """

    amplitude: np.ndarray
    unit: np.ndarray
    velocity: np.ndarray
    indeterminate: np.ndarray
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if self.amplitude.shape[0] % 3:
            raise ValueError("a channel system holds three channels per slit")
        # osmotic pairs are summed first so that they cancel exactly
        terms = (self.amplitude * self.unit).reshape((-1, 3) + self.amplitude.shape[1:])
        W = np.zeros(self.amplitude.shape[1:], complex)
        for f, p, m in terms:
            W = W + (f + (p + m))
        object.__setattr__(self, "vector_sum", W)

    @property
    def n_slits(self) -> int:
        return self.amplitude.shape[0] // 3

    def __len__(self) -> int:
        return self.amplitude.shape[0]

    @property
    def vector_sum_xy(self) -> np.ndarray:
        return np.stack([self.vector_sum.real, self.vector_sum.imag])

    @property
    def angle(self) -> np.ndarray:
        return np.angle(self.unit)

    def channel(self, i: int) -> Channel:
        if not 0 <= i < len(self):
            raise IndexError(f"channel index {i} out of range for {len(self)} channels")
        return Channel(
            slit_index=i // 3,
            kind=KINDS[i % 3],
            amplitude=self.amplitude[i],
            angle=np.angle(self.unit[i]),
            velocity=self.velocity[i],
            indeterminate=self.indeterminate[i],
        )

    @property
    def channels(self) -> list[Channel]:
        return [self.channel(i) for i in range(len(self))]

    def forward(self) -> "ChannelSystem":
        """Copy with every osmotic channel switched off (amplitude zero)."""
        amp = self.amplitude.copy()
        amp[1::3] = 0.0
        amp[2::3] = 0.0
        return ChannelSystem(amp, self.unit, self.velocity, self.indeterminate,
                             self.hbar, self.mass)

    def scaled(self, factor: float) -> "ChannelSystem":
        return ChannelSystem(self.amplitude * factor, self.unit, self.velocity,
                             self.indeterminate, self.hbar, self.mass)


def channels_from_fields(R, S, gradR, gradS, units: UnitsConstants) -> ChannelSystem:
    """Build channels from per-slit arrays of shape ``(n, *points)``."""
    R = np.asarray(R, dtype=float)
    S = np.asarray(S, dtype=float)
    gradR = np.asarray(gradR, dtype=float)
    gradS = np.asarray(gradS, dtype=float)
    indeterminate = ~(R > 0)
    safe_R = np.where(indeterminate, 1.0, R)
    amp = np.where(indeterminate, 0.0, R)
    e = np.where(indeterminate, 1.0 + 0j, np.exp(1j * S / units.hbar))
    v = gradS / units.mass
    u = np.where(indeterminate, 0.0, -units.hbar / units.mass * gradR / safe_R)
    return _assemble(amp, e, v, u, indeterminate, units)


def _assemble(amp, e, v, u, indeterminate, units):
    n = amp.shape[0]
    shape = (3 * n,) + amp.shape[1:]
    amplitude = np.empty(shape)
    unit = np.empty(shape, complex)
    velocity = np.empty(shape)
    indet = np.empty(shape, bool)
    amplitude[0::3], amplitude[1::3], amplitude[2::3] = amp, 0.5 * amp, 0.5 * amp
    unit[0::3], unit[1::3], unit[2::3] = e, 1j * e, -1j * e
    velocity[0::3], velocity[1::3], velocity[2::3] = v, u, -u
    for k in range(3):
        indet[k::3] = indeterminate
    return ChannelSystem(amplitude, unit, velocity, indet, units.hbar, units.mass)


def build_channels(state: WavefieldState, x, t, units: UnitsConstants) -> ChannelSystem:
    """Three channels per active slit at points ``x`` and time ``t``."""
    x = np.asarray(x, dtype=float)
    samples = state.samples(x, t, units)
    if not samples:
        return channels_from_fields(
            np.zeros((0,) + x.shape), np.zeros((0,) + x.shape),
            np.zeros((0,) + x.shape), np.zeros((0,) + x.shape), units)
    # phase unit vector from arg(psi); a plain psi/R overflows for subnormal R
    R = np.stack([s.R for s in samples])
    psi = np.stack([s.psi for s in samples])
    gradR = np.stack([s.gradR for s in samples])
    gradS = np.stack([s.gradS for s in samples])
    indeterminate = ~(R > 0)
    safe_R = np.where(indeterminate, 1.0, R)
    e = np.where(indeterminate, 1.0 + 0j, np.exp(1j * np.angle(psi)))
    amp = np.where(indeterminate, 0.0, R)
    v = gradS / units.mass
    u = np.where(indeterminate, 0.0, -units.hbar / units.mass * gradR / safe_R)
    return _assemble(amp, e, v, u, indeterminate, units)


def _projections(sys: ChannelSystem) -> np.ndarray:
    # w_hat_i . W for every channel
    return np.real(np.conj(sys.unit) * sys.vector_sum)


def relational_intensities(sys: ChannelSystem) -> np.ndarray:
    """``P(w_i)`` for all channels, shape ``(3n, *points)``; individually signed."""
    return sys.amplitude * _projections(sys)


def relational_intensity(i: int, sys: ChannelSystem) -> np.ndarray:
    c = sys.channel(i)
    return c.amplitude * np.real(np.conj(sys.unit[i]) * sys.vector_sum)


def _slitwise_sum(values: np.ndarray) -> np.ndarray:
    grouped = values.reshape((-1, 3) + values.shape[1:])
    total = np.zeros(values.shape[1:])
    for f, p, m in grouped:
        total = total + (f + (p + m))
    return total


def total_intensity(sys: ChannelSystem) -> np.ndarray:
    return _slitwise_sum(relational_intensities(sys))


def total_current(sys: ChannelSystem) -> np.ndarray:
    return _slitwise_sum(sys.velocity * relational_intensities(sys))


def node_threshold(sys: ChannelSystem) -> np.ndarray:
    """Density below which ``J/P`` is treated as undefined.

    Relative to ``(sum_i R_i)**2``, the fully constructive density of the
    local amplitudes.
    """
    scale = np.sum(sys.amplitude[0::3], axis=0)
    return NODE_EPS * scale * scale


def emergent_velocity(sys: ChannelSystem) -> np.ndarray:
    """``v_tot = J_tot / P_tot``; NaN marks points at (or numerically at) a node."""
    P = total_intensity(sys)
    J = total_current(sys)
    undefined = ~(P > node_threshold(sys))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(undefined, np.nan, J / np.where(undefined, 1.0, P))


def double_slit_closed_form(R1, R2, v1, v2, u1, u2, phi):
    """Two-slit emergent velocity in closed form.

    ``phi`` is the phase difference ``(S2 - S1)/hbar``; with this reading the
    result coincides with :func:`emergent_velocity`.  NaN at nodes.
    """
    R1, R2, phi = np.asarray(R1, float), np.asarray(R2, float), np.asarray(phi, float)
    c, s = np.cos(phi), np.sin(phi)
    num = (R1 * R1 * v1 + R2 * R2 * v2 + R1 * R2 * (v1 + v2) * c
           + R1 * R2 * (u1 - u2) * s)
    den = R1 * R1 + R2 * R2 + 2 * R1 * R2 * c
    undefined = ~(den > NODE_EPS * (R1 + R2) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(undefined, np.nan, num / np.where(undefined, 1.0, den))


def nslit_intensity(Rs, phis) -> np.ndarray:
    """Total intensity of n slits with amplitudes ``Rs`` and phases ``phis``.

    Pairwise form ``sum_i (R_i**2 + sum_{i'>i} 2 R_i R_i' cos(phi_i - phi_i'))``.
    """
    Rs = np.asarray(Rs, dtype=float)
    phis = np.asarray(phis, dtype=float)
    if Rs.shape != phis.shape:
        raise ValueError(f"amplitudes {Rs.shape} and phases {phis.shape} differ in shape")
    P = np.zeros(Rs.shape[1:])
    for i in range(len(Rs)):
        P = P + Rs[i] ** 2
        for j in range(i + 1, len(Rs)):
            P = P + 2 * Rs[i] * Rs[j] * np.cos(phis[i] - phis[j])
    return P


def emergent_velocity_nparticle(
    systems: Sequence[ChannelSystem], masses: Sequence[float] | None = None
) -> list[np.ndarray]:
    """Per-particle flux-line velocities for a product of single-particle fields.

    For ``Psi = prod_j Psi_j(x_j)``, ``Im(grad_j Psi / Psi)`` only involves
    particle j's own factor, so each particle follows the emergent velocity of
    its own channel system.  ``masses`` overrides the mass each system was
    built with (channel velocities scale as ``1/m``).
    """
    if masses is not None and len(masses) != len(systems):
        raise ValueError("one mass per particle is required")
    out = []
    for j, sys in enumerate(systems):
        v = emergent_velocity(sys)
        if masses is not None:
            if not masses[j] > 0:
                raise ValueError(f"mass of particle {j} must be positive")
            v = v * (sys.mass / masses[j])
        out.append(v)
    return out


def aggregate_velocity_nparticle(systems: Sequence[ChannelSystem]) -> np.ndarray:
    """Ratio of summed currents to summed intensities over all particles.

    A single number per point; kept as a diagnostic next to the per-particle
    flux lines, which are what trajectories follow.
    """
    J = sum(total_current(s) for s in systems)
    P = sum(total_intensity(s) for s in systems)
    return J / P
