"""Trajectories through the emergent velocity field.

Positions are integrated with classical RK4 at a fixed step.  A step is
split into substeps when ``|v| * dt`` exceeds a fraction of the local
length scale (the narrowest mode width or the interference fringe spacing,
whichever is smaller).  Switching events split the step schedule at their
exact times, and each step uses the mode set active at its start.

Ensembles are integrated in fixed-size chunks.  Chunk boundaries do not
depend on the number of worker threads, so results are bit-identical for
any degree of parallelism.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

from . import _kernels
from .wavefield import (
    NODE_EPS,
    SwitchingError,
    SwitchingEvent,
    UnitsConstants,
    WavefieldState,
)

CHUNK_SIZE = 8192
TABLE_POINTS = 2**16 + 1


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class IntegratorSettings:
    dt: float = 1e-3
    substep_fraction: float = 0.1
    max_substeps: int = 64
    node_retry_factor: int = 8

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt!r}")
        if not self.substep_fraction > 0:
            raise ConfigurationError("substep_fraction must be positive")
        if self.max_substeps < 1 or self.node_retry_factor < 1:
            raise ConfigurationError("substep limits must be >= 1")


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    initial_position: float
    scheme: str = "rk4"
    dt: float = 0.0
    max_substeps_used: int = 1
    undefined: bool = False


@dataclass(frozen=True)
class ScreenHistogram:
    edges: np.ndarray
    counts: np.ndarray
    total: int
    screen_time: float

    @classmethod
    def from_positions(cls, positions, edges, screen_time: float) -> "ScreenHistogram":
        positions = np.asarray(positions, dtype=float)
        positions = positions[np.isfinite(positions)]
        counts, _ = np.histogram(positions, bins=edges)
        return cls(np.asarray(edges, float), counts, int(counts.sum()), screen_time)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def width(self) -> float:
        return float(self.edges[1] - self.edges[0])


@dataclass(frozen=True)
class MomentumKick:
    """Transverse momentum of every trajectory just before and after one event."""

    event_index: int
    event_time: float
    t_before: float
    t_after: float
    p_before: np.ndarray
    p_after: np.ndarray

    @property
    def delta_p(self) -> np.ndarray:
        return self.p_after - self.p_before

    def summary(self) -> dict:
        d = self.delta_p
        d = d[np.isfinite(d)]
        n = d.size
        mean = float(np.mean(d)) if n else float("nan")
        std = float(np.std(d, ddof=1)) if n > 1 else float("nan")
        se = std / math.sqrt(n) if n > 1 else float("nan")
        a = np.abs(d)
        mean_abs = float(np.mean(a)) if n else float("nan")
        se_abs = float(np.std(a, ddof=1)) / math.sqrt(n) if n > 1 else float("nan")
        return {
            "event_index": self.event_index,
            "event_time": self.event_time,
            "t_before": self.t_before,
            "t_after": self.t_after,
            "count": n,
            "mean_p_before": float(np.nanmean(self.p_before)) if n else float("nan"),
            "mean_p_after": float(np.nanmean(self.p_after)) if n else float("nan"),
            "mean_delta_p": mean,
            "std_delta_p": std,
            "stderr_delta_p": se,
            "z_mean_delta_p": mean / se if se > 0 else float("nan"),
            "mean_abs_delta_p": mean_abs,
            "stderr_abs_delta_p": se_abs,
            "z_mean_abs_delta_p": mean_abs / se_abs if se_abs > 0 else float("nan"),
        }


def apply_switching_event(state: WavefieldState, event: SwitchingEvent) -> WavefieldState:
    """New state with ``event`` added to the schedule."""
    if not state.t_start < event.time:
        raise ConfigurationError(
            f"event at t={event.time} is not after the start of the window ({state.t_start})")
    try:
        return WavefieldState(state.modes, state.events + (event,), state.t_start, state.t_end)
    except SwitchingError as exc:
        raise ConfigurationError(str(exc)) from exc


# --- stepping ----------------------------------------------------------------

def _modes(states, t):
    return [_kernels.mode_table(s.modes_at(t)) for s in states]


def field_velocity(state: WavefieldState, x, t: float, units: UnitsConstants) -> np.ndarray:
    """Emergent velocity at ``(x, t)`` through the compiled channel kernel."""
    x = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)))
    out = np.empty_like(x)
    _kernels.velocities(x, float(t), _kernels.mode_table(state.modes_at(t)),
                        units.hbar, units.mass, NODE_EPS, out)
    return out


def _schedule(t0, t1, dt, extra=()):
    """Sorted step boundaries: uniform grid, window end, event-related times."""
    n = int(math.floor((t1 - t0) / dt + 1e-9))
    times = [t0 + i * dt for i in range(n + 1)]
    times.append(t1)
    times.extend(extra)
    tol = 1e-9 * dt
    merged = []
    for t in sorted(set(times)):
        if t < t0 - tol or t > t1 + tol:
            continue
        if merged and t - merged[-1] <= tol:
            continue
        merged.append(t)
    if abs(merged[-1] - t1) <= tol:
        merged[-1] = t1
    return merged


def _event_times(states, t0, t1, dt):
    """Applied events in ``(t0, t1]`` with their before/after sampling times."""
    seen = sorted({e.time for s in states for e in s.events if t0 < e.time <= t1})
    return [(te, max(t0, te - dt), min(t1, te + dt)) for te in seen]


def _integrate_chunk(states, X0, times, settings, units, record_idx, captures):
    """Integrate one chunk along ``times``; returns records, flags, momenta."""
    X = np.array(X0, dtype=float)
    N, n = X.shape
    flagged = np.zeros(n, bool)
    recorded = {}
    captured = {}
    want = set(captures)
    max_sub = 1
    v0 = np.empty(n)
    ks = np.empty(n, np.int64)
    if 0 in record_idx:
        recorded[0] = X.copy()
    for i in range(len(times) - 1):
        a, b = times[i], times[i + 1]
        tables = _modes(states, a)
        V = np.empty((N, n))
        for j in range(N):
            xn = np.empty(n)
            _kernels.advance(X[j], a, b - a, tables[j], units.hbar, units.mass, NODE_EPS,
                             settings.substep_fraction, settings.max_substeps,
                             settings.node_retry_factor, xn, v0, ks)
            V[j] = v0
            X[j] = xn
            max_sub = max(max_sub, int(ks.max()))
        bad = ~np.all(np.isfinite(X), axis=0)
        X[:, bad] = np.nan
        flagged |= bad
        if a in want:
            captured[a] = units.mass * V
        if i + 1 in record_idx:
            recorded[i + 1] = X.copy()
    end = times[-1]
    if end in want and end not in captured:
        tables = _modes(states, end)
        V = np.empty((N, n))
        for j in range(N):
            _kernels.velocities(X[j], end, tables[j], units.hbar, units.mass, NODE_EPS, V[j])
        captured[end] = units.mass * V
    return recorded, flagged, captured, max_sub


def integrate_trajectory(x0: float, t0: float, t1: float, state: WavefieldState,
                         settings: IntegratorSettings = IntegratorSettings(),
                         units: UnitsConstants = UnitsConstants()) -> Trajectory:
    """Single streamline of the emergent velocity field from ``(x0, t0)`` to ``t1``."""
    if not t1 > t0:
        raise ConfigurationError("t1 must exceed t0")
    if not np.isfinite(x0):
        raise ConfigurationError("x0 must be finite")
    extra = [t for ev in _event_times([state], t0, t1, settings.dt) for t in ev]
    times = _schedule(t0, t1, settings.dt, extra)
    rec, flagged, _, max_sub = _integrate_chunk(
        [state], np.array([[float(x0)]]), times, settings, units,
        set(range(len(times))), ())
    xs = np.array([rec[i][0, 0] for i in range(len(times))])
    t = np.array(times)
    if flagged[0]:
        keep = np.isfinite(xs)
        t, xs = t[keep], xs[keep]
    return Trajectory(t, xs, float(x0), "rk4", settings.dt, max_sub, bool(flagged[0]))


@dataclass
class EnsembleResult:
    times: np.ndarray
    record_times: np.ndarray
    x0: np.ndarray               # (N, n)
    positions: np.ndarray        # (T_rec, N, n)
    flagged: np.ndarray          # (n,)
    max_substeps_used: int
    kicks: list = field(default_factory=list)   # per particle: list of MomentumKick

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    def trajectory(self, i: int, particle: int = 0) -> Trajectory:
        x = self.positions[:, particle, i]
        keep = np.isfinite(x)
        return Trajectory(self.record_times[keep], x[keep], float(self.x0[particle, i]),
                          undefined=bool(self.flagged[i]))


def integrate_ensemble(x0, t0: float, t1: float, states: Sequence[WavefieldState],
                       settings: IntegratorSettings, units: UnitsConstants,
                       record_every: int = 1, threads: int = 1) -> EnsembleResult:
    """Integrate many configurations; ``x0`` has shape ``(N, n)`` or ``(n,)``.

    ``states`` holds one field per particle (a product state).  Positions are
    recorded every ``record_every`` uniform steps and at ``t1``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if x0.shape[0] != len(states):
        raise ConfigurationError("x0 needs one row per particle")
    if not t1 > t0:
        raise ConfigurationError("t1 must exceed t0")
    events = _event_times(states, t0, t1, settings.dt)
    extra = [t for ev in events for t in ev]
    times = _schedule(t0, t1, settings.dt, extra)
    uniform = {t0 + i * settings.dt for i in range(0, len(times) + 1, max(1, record_every))}
    record_idx = {i for i, t in enumerate(times) if t in uniform}
    record_idx.add(len(times) - 1)
    record_idx = sorted(record_idx)
    captures = sorted({t for ev in events for t in ev[1:]})
    n = x0.shape[1]
    chunks = [(s, min(n, s + CHUNK_SIZE)) for s in range(0, n, CHUNK_SIZE)]

    def work(bounds):
        s, e = bounds
        return _integrate_chunk(states, x0[:, s:e].copy(), times, settings, units,
                                set(record_idx), captures)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    positions = np.empty((len(record_idx), x0.shape[0], n))
    flagged = np.zeros(n, bool)
    captured = {t: np.empty((x0.shape[0], n)) for t in captures}
    max_sub = 1
    for (s, e), (rec, flg, cap, msub) in zip(chunks, results):
        for r, i in enumerate(record_idx):
            positions[r, :, s:e] = rec[i]
        flagged[s:e] = flg
        for t in captures:
            captured[t][:, s:e] = cap[t]
        max_sub = max(max_sub, msub)

    kicks = [[] for _ in states]
    for k, (te, tb, ta) in enumerate(events):
        for j in range(len(states)):
            kicks[j].append(MomentumKick(k, te, tb, ta, captured[tb][j], captured[ta][j]))
    return EnsembleResult(np.array(times), np.array([times[i] for i in record_idx]),
                          x0, positions, flagged, max_sub, kicks)


# --- initial ensemble -------------------------------------------------------

def _support(state: WavefieldState, t: float, units: UnitsConstants, pad: float = 12.0):
    modes = state.modes_at(t)
    if not modes:
        raise ConfigurationError("no open slit: the field is identically zero")
    lo = min(float(m.mean_position(t) - pad * m.width(t, units)) for m in modes)
    hi = max(float(m.mean_position(t) + pad * m.width(t, units)) for m in modes)
    return lo, hi


def density_table(state: WavefieldState, t: float, units: UnitsConstants,
                  points: int = TABLE_POINTS):
    """``(x, cdf)`` of the normalized density on the field's support."""
    lo, hi = _support(state, t, units)
    x = np.linspace(lo, hi, points)
    P = state.density(x, t, units)
    cells = 0.5 * (P[1:] + P[:-1]) * np.diff(x)
    cdf = np.concatenate([[0.0], np.cumsum(cells)])
    if not (np.isfinite(cdf[-1]) and cdf[-1] > 0):
        raise ConfigurationError("field is not normalizable at the initial time")
    return x, cdf / cdf[-1]


def uniform_stream(seed: int, n: int, stream: int = 0) -> np.ndarray:
    """The first ``n`` uniforms of the counter-based stream ``(seed, stream)``.

    Draw ``i`` is always the ``i``-th output, whatever ``n`` is.
    """
    key = np.random.SeedSequence([int(seed), int(stream)]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).random(n)


def sample_initial_positions(state: WavefieldState, t0: float, n: int, seed: int,
                             units: UnitsConstants = UnitsConstants(),
                             stream: int = 0) -> np.ndarray:
    """``n`` draws from ``|Psi(x, t0)|**2`` by inverse CDF on a numeric table."""
    if n < 1:
        raise ConfigurationError("need at least one draw")
    x, cdf = density_table(state, t0, units)
    u = uniform_stream(seed, n, stream)
    # drop flat tail cells so the inverse is single-valued
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(u, cdf[keep], x[keep])


def analytic_cdf(state: WavefieldState, t: float, units: UnitsConstants,
                 points: int = TABLE_POINTS):
    """Callable CDF of ``|Psi(t)|**2`` (quadrature on a fine table)."""
    x, cdf = density_table(state, t, units, points)
    return lambda q: np.interp(q, x, cdf, left=0.0, right=1.0)


def ks_distance(samples, cdf) -> float:
    """Kolmogorov-Smirnov statistic of ``samples`` against ``cdf``."""
    s = np.sort(np.asarray(samples, dtype=float))
    s = s[np.isfinite(s)]
    n = s.size
    F = cdf(s)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def screen_edges(state: WavefieldState, t: float, units: UnitsConstants,
                 width: float, final=None, pad: float = 6.0) -> np.ndarray:
    """Bins of fixed ``width`` centred on the field support.

    The support is widened symmetrically until it covers every finite value
    in ``final``, so mirror-symmetric fields get mirror-symmetric edges.
    """
    if not width > 0:
        raise ConfigurationError("bin width must be positive")
    lo, hi = _support(state, t, units, pad)
    if final is not None:
        f = np.asarray(final, dtype=float)
        f = f[np.isfinite(f)]
        if f.size:
            lo, hi = min(lo, float(f.min())), max(hi, float(f.max()))
    mid = 0.5 * (lo + hi)
    half = math.ceil(0.5 * (hi - lo) / width * (1 + 1e-12)) + 1
    return mid + width * np.arange(-half, half + 1)


def expected_counts(state: WavefieldState, t: float, edges, total: int,
                    units: UnitsConstants) -> np.ndarray:
    """``total`` times the probability of each bin under ``|Psi(t)|**2``."""
    cdf = analytic_cdf(state, t, units)
    return total * np.diff(cdf(np.asarray(edges, dtype=float)))


def fringe_minima(values, expected, significance: float = 8.0) -> np.ndarray:
    """Indices of interference minima of ``values``.

    A minimum counts if its depth below the lower neighbouring maximum
    exceeds ``significance`` Poisson standard deviations of that difference
    under ``expected``; tail ripples too shallow to resolve are ignored.
    """
    values = np.asarray(values, dtype=float)
    E = np.asarray(expected, dtype=float)
    idx, props = find_peaks(-values, prominence=0.0)
    left, right = props["left_bases"], props["right_bases"]
    shoulder = np.where(values[left] < values[right], left, right)
    noise = np.sqrt(E[idx] + E[shoulder] + 1.0)
    return idx[props["prominences"] >= significance * noise]


def compare_minima(counts, expected, strong: float = 8.0, weak: float = 3.0,
                   tolerance: int = 1) -> dict:
    """Match histogram minima to the minima of the expected counts.

    Every strong expected minimum needs a histogram minimum (weak or
    stronger) within ``tolerance`` bins, and every strong histogram minimum
    needs an expected minimum (weak or stronger) within ``tolerance`` bins.
    """
    ref = fringe_minima(expected, expected, strong)
    ref_weak = fringe_minima(expected, expected, weak)
    found = fringe_minima(counts, expected, strong)
    found_weak = fringe_minima(counts, expected, weak)

    def offsets(a, b):
        return [int(np.min(np.abs(b - i))) if b.size else None for i in a]

    o_ref = offsets(ref, found_weak)
    o_found = offsets(found, ref_weak)
    hit = lambda o: o is not None and o <= tolerance
    return {
        "reference": ref.tolist(),
        "found": found.tolist(),
        "reference_count": int(ref.size),
        "found_count": int(found.size),
        "reference_matched": int(sum(map(hit, o_ref))),
        "found_matched": int(sum(map(hit, o_found))),
        "max_offset_bins": max((o for o in o_ref + o_found if o is not None), default=None),
        "ok": bool(all(map(hit, o_ref)) and all(map(hit, o_found))),
    }


def run_ensemble(config, threads: int = 1) -> dict:
    """Integrate the configured ensemble and bin it on the screen.

    Returns ``{"result", "histograms", "kicks", "states"}``; one histogram
    (and one kick list) per particle.
    """
    states = config.states()
    units = config.units
    t0, t1 = config.time.t0, config.time.t_screen
    n = config.ensemble.count
    if n < 1:
        raise ConfigurationError("ensemble.count must be >= 1 to run an ensemble")
    x0 = np.stack([
        sample_initial_positions(s, t0, n, config.ensemble.seed, units, stream=j)
        for j, s in enumerate(states)
    ])
    result = integrate_ensemble(x0, t0, t1, states, config.integrator, units,
                                record_every=config.output.record_every, threads=threads)
    hists = []
    for j, s in enumerate(states):
        final = result.final[j]
        edges = screen_edges(s, t1, units, config.histogram.bin_width, final)
        hists.append(ScreenHistogram.from_positions(final[~result.flagged], edges, t1))
    return {"result": result, "histograms": hists, "kicks": result.kicks, "states": states}
