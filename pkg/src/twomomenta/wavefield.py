"""Analytic Gaussian slit modes and their superposition.

Every slit emits a free, normalized Gaussian wavepacket.  A mode is evaluated
in log form, ``psi = exp(L)``, so that amplitude, action and all spatial
derivatives follow in closed form from ``L``, ``dL/dx`` and ``d2L/dx2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

# relative cut below which a ratio such as J/P is not trusted
NODE_EPS = 1e-12

RebirthPolicy = Literal["fresh_width", "evolved_from_t0"]
REBIRTH_POLICIES = ("fresh_width", "evolved_from_t0")


class ModeNotBornError(ValueError):
    """A mode was queried before its birth time."""


class SwitchingError(ValueError):
    """An event schedule that cannot be applied (e.g. closing a missing slit)."""


@dataclass(frozen=True)
class UnitsConstants:
    """hbar, mass and the bath frequency; ``kT`` is tied to ``hbar*omega``."""

    hbar: float = 1.0
    mass: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        for name in ("hbar", "mass", "omega"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @property
    def kT(self) -> float:
        return self.hbar * self.omega


@dataclass(frozen=True)
class GaussianSlitMode:
    center: float
    sigma0: float
    v0: float = 0.0
    phase_offset: float = 0.0
    birth_time: float = 0.0

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0!r}")

    def complex_width(self, t, units: UnitsConstants):
        tau = np.asarray(t, dtype=float) - self.birth_time
        return self.sigma0 * (1 + 1j * units.hbar * tau / (2 * units.mass * self.sigma0**2))

    def width(self, t, units: UnitsConstants):
        """Real width sigma_t = |s_t|."""
        tau = np.asarray(t, dtype=float) - self.birth_time
        a = units.hbar * tau / (2 * units.mass * self.sigma0**2)
        return self.sigma0 * np.sqrt(1 + a * a)

    def mean_position(self, t):
        return self.center + self.v0 * (np.asarray(t, dtype=float) - self.birth_time)


@dataclass(frozen=True)
class FieldSample:
    psi: np.ndarray
    R: np.ndarray
    S: np.ndarray
    gradR: np.ndarray
    gradS: np.ndarray
    lapR: np.ndarray


def _log_mode(mode: GaussianSlitMode, x, t, units: UnitsConstants):
    """Return ``(L, dL/dx, d2L/dx2)`` with ``psi = exp(L)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < mode.birth_time):
        raise ModeNotBornError(
            f"mode not yet born: t={float(np.min(t))} < birth_time={mode.birth_time}"
        )
    x = np.asarray(x, dtype=float)
    tau = t - mode.birth_time
    s_t = mode.complex_width(t, units)
    xi = x - mode.center - mode.v0 * tau
    k0 = units.mass * mode.v0 / units.hbar
    L = (
        -0.25 * np.log(2 * np.pi)
        - 0.5 * np.log(s_t)
        - xi * xi / (4 * mode.sigma0 * s_t)
        + 1j * (k0 * (xi + 0.5 * mode.v0 * tau) + mode.phase_offset)
    )
    dL = -xi / (2 * mode.sigma0 * s_t) + 1j * k0
    d2L = np.broadcast_to(-1 / (2 * mode.sigma0 * s_t), np.shape(L)).astype(complex)
    return L, dL, d2L


def evaluate_mode(mode: GaussianSlitMode, x, t, units: UnitsConstants) -> FieldSample:
    """Closed-form amplitude, action and derivatives of one slit mode.

    ``S`` is ``hbar * Im(L)`` and is therefore continuous in ``x`` and ``t``
    (no wrapping); ``S / hbar`` agrees with ``arg(psi)`` modulo 2 pi.
    """
    L, dL, d2L = _log_mode(mode, x, t, units)
    R = np.exp(L.real)
    a = dL.real
    return FieldSample(
        psi=np.exp(L),
        R=R,
        S=units.hbar * L.imag,
        gradR=R * a,
        gradS=units.hbar * dL.imag,
        lapR=R * (a * a + d2L.real),
    )


@dataclass(frozen=True)
class SwitchingEvent:
    """A change of boundary conditions at a given time.

    ``action`` is ``"open"`` (adds ``mode``) or ``"close"`` (removes the
    active mode at position ``index``).  Under ``fresh_width`` an opened mode
    is born at the event time; under ``evolved_from_t0`` it behaves as if it
    had been evolving since the start of the state's time domain.
    """

    time: float
    action: Literal["open", "close"]
    mode: GaussianSlitMode | None = None
    index: int | None = None
    rebirth: RebirthPolicy = "fresh_width"

    def __post_init__(self):
        if self.action not in ("open", "close"):
            raise SwitchingError(f"unknown event action {self.action!r}")
        if self.action == "open" and self.mode is None:
            raise SwitchingError("open event needs a mode")
        if self.action == "close" and self.index is None:
            raise SwitchingError("close event needs an index")
        if self.rebirth not in REBIRTH_POLICIES:
            raise SwitchingError(f"unknown rebirth policy {self.rebirth!r}")


@dataclass(frozen=True)
class Superposition:
    psi: np.ndarray
    dpsi: np.ndarray
    d2psi: np.ndarray
    P: np.ndarray
    J: np.ndarray
    v: np.ndarray
    undefined: np.ndarray


@dataclass(frozen=True)
class WavefieldState:
    """Ordered slit modes plus a time-ordered event schedule.

    A query at time ``t`` sees the modes produced by every event with
    ``event.time <= t``.
    """

    modes: tuple[GaussianSlitMode, ...]
    events: tuple[SwitchingEvent, ...] = ()
    t_start: float = 0.0
    t_end: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        events = tuple(sorted(self.events, key=lambda e: e.time))
        object.__setattr__(self, "events", events)
        # replay once so that a bad schedule fails at construction
        self._modes_after(len(events))

    def _modes_after(self, n_events: int) -> tuple[GaussianSlitMode, ...]:
        active = list(self.modes)
        for event in self.events[:n_events]:
            if event.action == "open":
                birth = event.time if event.rebirth == "fresh_width" else self.t_start
                active.append(replace(event.mode, birth_time=birth))
            else:
                if not 0 <= event.index < len(active):
                    raise SwitchingError(
                        f"cannot close slit {event.index} at t={event.time}: "
                        f"{len(active)} slit(s) open"
                    )
                del active[event.index]
        return tuple(active)

    def modes_at(self, t: float) -> tuple[GaussianSlitMode, ...]:
        n = sum(1 for e in self.events if e.time <= t)
        return self._modes_after(n)

    def at(self, t: float) -> "WavefieldState":
        """Static state holding the modes active at ``t`` (no events)."""
        return WavefieldState(self.modes_at(t), (), self.t_start, self.t_end)

    def samples(self, x, t, units: UnitsConstants) -> list[FieldSample]:
        return [evaluate_mode(m, x, t, units) for m in self.modes_at(t)]

    def derivatives(self, x, t, units: UnitsConstants):
        """``(Psi, dPsi/dx, d2Psi/dx2)`` of the superposed field."""
        x = np.asarray(x, dtype=float)
        psi = np.zeros(x.shape, complex)
        dpsi = np.zeros(x.shape, complex)
        d2psi = np.zeros(x.shape, complex)
        for mode in self.modes_at(t):
            L, dL, d2L = _log_mode(mode, x, t, units)
            p = np.exp(L)
            psi += p
            dpsi += p * dL
            d2psi += p * (d2L + dL * dL)
        return psi, dpsi, d2psi

    def density(self, x, t, units: UnitsConstants):
        psi, _, _ = self.derivatives(x, t, units)
        return np.abs(psi) ** 2


def superpose(state: WavefieldState, x, t, units: UnitsConstants) -> Superposition:
    """Quantum superposition ``Psi = sum psi_a`` with density, current and velocity.

    ``v`` is NaN where ``P`` falls below ``NODE_EPS * (sum |psi_a|)**2``, the
    largest density the local amplitudes could produce.
    """
    x = np.asarray(x, dtype=float)
    psi, dpsi, d2psi = state.derivatives(x, t, units)
    scale = np.zeros(x.shape)
    for s in state.samples(x, t, units):
        scale = scale + s.R
    P = np.abs(psi) ** 2
    J = units.hbar / units.mass * np.imag(np.conj(psi) * dpsi)
    undefined = ~(P > NODE_EPS * scale * scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(undefined, np.nan, J / np.where(undefined, 1.0, P))
    return Superposition(psi, dpsi, d2psi, P, J, v, undefined)


def symmetric_double_slit(
    separation: float, sigma0: float, v0: float = 0.0, phase: float = 0.0
) -> WavefieldState:
    """Mirror-image pair of slits at ``+-separation/2`` with velocities ``+-v0``."""
    half = 0.5 * separation
    return WavefieldState(
        (
            GaussianSlitMode(-half, sigma0, v0, phase),
            GaussianSlitMode(half, sigma0, -v0, phase),
        )
    )
