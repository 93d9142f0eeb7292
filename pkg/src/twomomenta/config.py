"""Experiment configuration: TOML grammar, validation and presets.

A configuration is a TOML document with these sections (all optional except
``slits`` and ``time.t_screen``; omitted keys take the defaults shown)::

    preset = "fig3"              # start from a preset, then apply overrides
    name = "my-run"
    description = ""
    assumptions = []             # free-text notes echoed into the manifest

    [units]
    hbar = 1.0
    mass = 1.0
    omega = 1.0

    [[slits]]                    # one table per slit
    center = -5.0
    sigma0 = 0.25
    v0 = 0.0
    phase_offset = 0.0
    particle = 0                 # which particle's field the slit belongs to

    [time]
    t0 = 0.0
    t_screen = 5.0

    [integrator]
    dt = 0.005
    substep_fraction = 0.1
    max_substeps = 64
    node_retry_factor = 8

    [ensemble]
    count = 1000
    seed = 0

    [[events]]
    time = 1.0
    action = "open"              # or "close"
    rebirth = "fresh_width"      # or "evolved_from_t0"
    particle = 0
    index = 0                    # close only: position among the open slits
    slit = { center = 1.0, sigma0 = 0.5 }   # open only

    [histogram]
    bin_width = 0.25

    [grid]                       # field dumps; x range defaults to the support
    points = 512
    times = 11
    # x_min = -20.0
    # x_max = 20.0

    [output]
    # directory = "runs/x"
    artifacts = ["trajectories", "histogram", "diagnostics", "momentum"]
    trajectory_count = 200
    record_every = 10

Arrays of tables in a preset are replaced, not merged, by an override.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields, replace
from typing import Any

import tomli
import tomli_w

from .dynamics import IntegratorSettings
from .wavefield import (
    REBIRTH_POLICIES,
    GaussianSlitMode,
    SwitchingEvent,
    UnitsConstants,
    WavefieldState,
)

ARTIFACTS = ("trajectories", "histogram", "field", "diagnostics", "momentum")
DEFAULT_ARTIFACTS = ("trajectories", "histogram", "diagnostics", "momentum")


class ConfigError(ValueError):
    """Every validation problem found in one configuration.

    ``errors`` is a list of ``(key_path, message)`` pairs.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(f"{p}: {m}" if p else m for p, m in self.errors))


@dataclass(frozen=True)
class SlitConfig:
    center: float
    sigma0: float
    v0: float = 0.0
    phase_offset: float = 0.0
    particle: int = 0

    def mode(self, birth_time: float = 0.0) -> GaussianSlitMode:
        return GaussianSlitMode(self.center, self.sigma0, self.v0, self.phase_offset, birth_time)


@dataclass(frozen=True)
class TimeWindow:
    t_screen: float
    t0: float = 0.0


@dataclass(frozen=True)
class EnsembleSettings:
    count: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class EventConfig:
    time: float
    action: str
    rebirth: str = "fresh_width"
    particle: int = 0
    index: int | None = None
    slit: SlitConfig | None = None


@dataclass(frozen=True)
class HistogramSettings:
    bin_width: float = 0.25


@dataclass(frozen=True)
class GridSettings:
    points: int = 512
    times: int = 11
    x_min: float | None = None
    x_max: float | None = None


@dataclass(frozen=True)
class OutputSettings:
    directory: str | None = None
    artifacts: tuple[str, ...] = DEFAULT_ARTIFACTS
    trajectory_count: int = 200
    record_every: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    slits: tuple[SlitConfig, ...]
    time: TimeWindow
    name: str = "custom"
    description: str = ""
    assumptions: tuple[str, ...] = ()
    units: UnitsConstants = UnitsConstants()
    integrator: IntegratorSettings = IntegratorSettings(dt=0.005)
    ensemble: EnsembleSettings = EnsembleSettings()
    events: tuple[EventConfig, ...] = ()
    histogram: HistogramSettings = HistogramSettings()
    grid: GridSettings = GridSettings()
    output: OutputSettings = OutputSettings()

    @property
    def n_particles(self) -> int:
        return 1 + max(s.particle for s in self.slits)

    def states(self) -> list[WavefieldState]:
        """One wavefield per particle; events attach to their particle's field."""
        t0 = self.time.t0
        out = []
        for j in range(self.n_particles):
            modes = tuple(s.mode(t0) for s in self.slits if s.particle == j)
            events = tuple(
                SwitchingEvent(e.time, e.action,
                               e.slit.mode(e.time) if e.slit is not None else None,
                               e.index, e.rebirth)
                for e in self.events if e.particle == j)
            out.append(WavefieldState(modes, events, t0))
        return out

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, ensemble=EnsembleSettings(self.ensemble.count, int(seed)))


# --- validation --------------------------------------------------------------

class _Checker:
    def __init__(self):
        self.errors: list[tuple[str, str]] = []

    def fail(self, path, msg):
        self.errors.append((path, msg))

    def table(self, data, path, allowed):
        if not isinstance(data, dict):
            self.fail(path, "expected a table")
            return {}
        for key in data:
            if key not in allowed:
                self.fail(_join(path, key), "unknown key")
        return data

    def number(self, data, path, key, default=None, positive=False, nonneg=False,
               required=False):
        p = _join(path, key)
        if key not in data:
            if required:
                self.fail(p, "missing required key")
            return default
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(p, f"expected a number, got {v!r}")
            return default
        v = float(v)
        if v != v or v in (float("inf"), float("-inf")):
            self.fail(p, "must be finite")
        elif positive and not v > 0:
            self.fail(p, f"must be > 0, got {v!r}")
        elif nonneg and v < 0:
            self.fail(p, f"must be >= 0, got {v!r}")
        return v

    def integer(self, data, path, key, default=None, minimum=None, required=False):
        p = _join(path, key)
        if key not in data:
            if required:
                self.fail(p, "missing required key")
            return default
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(p, f"expected an integer, got {v!r}")
            return default
        if minimum is not None and v < minimum:
            self.fail(p, f"must be >= {minimum}, got {v}")
        return v

    def string(self, data, path, key, default=None, choices=None):
        p = _join(path, key)
        if key not in data:
            return default
        v = data[key]
        if not isinstance(v, str):
            self.fail(p, f"expected a string, got {v!r}")
            return default
        if choices is not None and v not in choices:
            self.fail(p, f"must be one of {', '.join(choices)}; got {v!r}")
        return v


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


_TOP = {"preset", "name", "description", "assumptions", "units", "slits", "time",
        "integrator", "ensemble", "events", "histogram", "grid", "output"}


def _slit(c: _Checker, data, path) -> SlitConfig | None:
    data = c.table(data, path, {"center", "sigma0", "v0", "phase_offset", "particle"})
    center = c.number(data, path, "center", required=True)
    sigma0 = c.number(data, path, "sigma0", positive=True, required=True)
    v0 = c.number(data, path, "v0", 0.0)
    phase = c.number(data, path, "phase_offset", 0.0)
    particle = c.integer(data, path, "particle", 0, minimum=0)
    if center is None or sigma0 is None:
        return None
    return SlitConfig(center, sigma0, v0, phase, particle)


def _build(raw: dict) -> ExperimentConfig:
    c = _Checker()
    raw = c.table(raw, "", _TOP)

    name = c.string(raw, "", "name", "custom")
    description = c.string(raw, "", "description", "")
    assumptions = raw.get("assumptions", [])
    if not (isinstance(assumptions, list) and all(isinstance(a, str) for a in assumptions)):
        c.fail("assumptions", "expected a list of strings")
        assumptions = []

    u = c.table(raw.get("units", {}), "units", {"hbar", "mass", "omega"})
    units = [c.number(u, "units", k, 1.0, positive=True) for k in ("hbar", "mass", "omega")]

    slits = []
    raw_slits = raw.get("slits")
    if raw_slits is None:
        c.fail("slits", "missing required key")
    elif not isinstance(raw_slits, list) or not raw_slits:
        c.fail("slits", "expected a non-empty array of tables")
    else:
        for i, s in enumerate(raw_slits):
            slit = _slit(c, s, f"slits[{i}]")
            if slit is not None:
                slits.append(slit)
    if slits:
        present = {s.particle for s in slits}
        for j in range(max(present) + 1):
            if j not in present:
                c.fail("slits", f"particle {j} has no slit")

    t = c.table(raw.get("time", {}), "time", {"t0", "t_screen"})
    t0 = c.number(t, "time", "t0", 0.0)
    t_screen = c.number(t, "time", "t_screen", required=True)
    if t0 is not None and t_screen is not None and not t_screen > t0:
        c.fail("time.t_screen", f"must exceed time.t0 ({t0}), got {t_screen}")

    g = c.table(raw.get("integrator", {}), "integrator",
                {"dt", "substep_fraction", "max_substeps", "node_retry_factor"})
    integrator = dict(
        dt=c.number(g, "integrator", "dt", 0.005, positive=True),
        substep_fraction=c.number(g, "integrator", "substep_fraction", 0.1, positive=True),
        max_substeps=c.integer(g, "integrator", "max_substeps", 64, minimum=1),
        node_retry_factor=c.integer(g, "integrator", "node_retry_factor", 8, minimum=1),
    )

    e = c.table(raw.get("ensemble", {}), "ensemble", {"count", "seed"})
    ensemble = EnsembleSettings(c.integer(e, "ensemble", "count", 1000, minimum=0),
                                c.integer(e, "ensemble", "seed", 0, minimum=0))

    events = []
    raw_events = raw.get("events", [])
    if not isinstance(raw_events, list):
        c.fail("events", "expected an array of tables")
        raw_events = []
    for i, ev in enumerate(raw_events):
        p = f"events[{i}]"
        ev = c.table(ev, p, {"time", "action", "rebirth", "particle", "index", "slit"})
        time = c.number(ev, p, "time", required=True)
        action = c.string(ev, p, "action", None, choices=("open", "close"))
        if action is None and "action" not in ev:
            c.fail(_join(p, "action"), "missing required key")
        rebirth = c.string(ev, p, "rebirth", "fresh_width", choices=REBIRTH_POLICIES)
        particle = c.integer(ev, p, "particle", 0, minimum=0)
        index = c.integer(ev, p, "index", None, minimum=0)
        slit = _slit(c, ev["slit"], _join(p, "slit")) if "slit" in ev else None
        if action == "open" and "slit" not in ev:
            c.fail(_join(p, "slit"), "open event needs a slit")
        if action == "close" and index is None and "index" not in ev:
            c.fail(_join(p, "index"), "close event needs an index")
        if action == "open" and "index" in ev:
            c.fail(_join(p, "index"), "only close events take an index")
        if action == "close" and "slit" in ev:
            c.fail(_join(p, "slit"), "only open events take a slit")
        if slit is not None and "particle" in ev.get("slit", {}):
            c.fail(_join(p, "slit.particle"), "set the particle on the event instead")
        if time is not None and t0 is not None and not time > t0:
            c.fail(_join(p, "time"), f"must be after time.t0 ({t0})")
        if slits and particle is not None and particle >= 1 + max(s.particle for s in slits):
            c.fail(_join(p, "particle"), "refers to a particle without slits")
        if time is not None and action is not None:
            events.append(EventConfig(time, action, rebirth or "fresh_width", particle or 0,
                                      index, slit))

    h = c.table(raw.get("histogram", {}), "histogram", {"bin_width"})
    histogram = HistogramSettings(c.number(h, "histogram", "bin_width", 0.25, positive=True))

    gr = c.table(raw.get("grid", {}), "grid", {"points", "times", "x_min", "x_max"})
    grid = GridSettings(c.integer(gr, "grid", "points", 512, minimum=2),
                        c.integer(gr, "grid", "times", 11, minimum=1),
                        c.number(gr, "grid", "x_min", None),
                        c.number(gr, "grid", "x_max", None))
    if (grid.x_min is None) != (grid.x_max is None):
        c.fail("grid", "give both x_min and x_max or neither")
    elif grid.x_min is not None and not grid.x_max > grid.x_min:
        c.fail("grid.x_max", "must exceed grid.x_min")

    o = c.table(raw.get("output", {}), "output",
                {"directory", "artifacts", "trajectory_count", "record_every"})
    directory = c.string(o, "output", "directory", None)
    artifacts = o.get("artifacts", list(DEFAULT_ARTIFACTS))
    if not (isinstance(artifacts, list) and all(isinstance(a, str) for a in artifacts)):
        c.fail("output.artifacts", "expected a list of strings")
        artifacts = list(DEFAULT_ARTIFACTS)
    for a in artifacts:
        if a not in ARTIFACTS:
            c.fail("output.artifacts", f"unknown artifact {a!r}; choose from {', '.join(ARTIFACTS)}")
    output = OutputSettings(
        directory,
        tuple(a for a in ARTIFACTS if a in artifacts),
        c.integer(o, "output", "trajectory_count", 200, minimum=0),
        c.integer(o, "output", "record_every", 10, minimum=1),
    )

    if c.errors:
        raise ConfigError(c.errors)
    config = ExperimentConfig(
        slits=tuple(slits), time=TimeWindow(t_screen, t0), name=name,
        description=description, assumptions=tuple(assumptions), units=UnitsConstants(*units),
        integrator=IntegratorSettings(**integrator), ensemble=ensemble,
        events=tuple(events), histogram=histogram, grid=grid, output=output)
    try:
        config.states()
    except ValueError as exc:
        raise ConfigError([("events", str(exc))]) from exc
    return config


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Validated configuration from TOML text; raises :class:`ConfigError`."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([("", f"malformed TOML: {exc}")]) from exc
    if "preset" in raw:
        name = raw.pop("preset")
        if name not in PRESETS:
            raise ConfigError([("preset", f"unknown preset {name!r}; "
                                          f"choose from {', '.join(PRESETS)}")])
        raw = _merge(PRESETS[name][1], raw)
    return _build(raw)


def load_preset(name: str) -> ExperimentConfig:
    return parse_config(f'preset = "{name}"\n')


# --- serialization -------------------------------------------------------------

def _slit_dict(s: SlitConfig, particle: bool = True) -> dict:
    d = {"center": s.center, "sigma0": s.sigma0, "v0": s.v0, "phase_offset": s.phase_offset}
    if particle:
        d["particle"] = s.particle
    return d


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain-data form with every default spelled out (``None`` keys omitted)."""
    events = []
    for e in config.events:
        d = {"time": e.time, "action": e.action, "rebirth": e.rebirth, "particle": e.particle}
        if e.index is not None:
            d["index"] = e.index
        if e.slit is not None:
            d["slit"] = _slit_dict(e.slit, particle=False)
        events.append(d)
    out = {
        "name": config.name,
        "description": config.description,
        "assumptions": list(config.assumptions),
        "units": {"hbar": config.units.hbar, "mass": config.units.mass,
                  "omega": config.units.omega},
        "slits": [_slit_dict(s) for s in config.slits],
        "time": {"t0": config.time.t0, "t_screen": config.time.t_screen},
        "integrator": {f.name: getattr(config.integrator, f.name)
                       for f in fields(config.integrator)},
        "ensemble": {"count": config.ensemble.count, "seed": config.ensemble.seed},
        "events": events,
        "histogram": {"bin_width": config.histogram.bin_width},
        "grid": {k: v for k, v in (("points", config.grid.points), ("times", config.grid.times),
                                   ("x_min", config.grid.x_min), ("x_max", config.grid.x_max))
                 if v is not None},
        "output": {k: v for k, v in (
            ("directory", config.output.directory),
            ("artifacts", list(config.output.artifacts)),
            ("trajectory_count", config.output.trajectory_count),
            ("record_every", config.output.record_every)) if v is not None},
    }
    if not events:
        del out["events"]
    return out


def serialize(config: ExperimentConfig) -> str:
    """TOML text that parses back to an equal configuration."""
    return tomli_w.dumps(config_to_dict(config))


# --- presets -------------------------------------------------------------------

_SEP = "slit centres at +-5 and screen at t=5 are chosen to show several fringes"

PRESETS: dict[str, tuple[str, dict[str, Any]]] = {
    "fig3": (
        "two Gaussian slits at rest, large dispersion: fringe-following trajectories",
        {
            "name": "fig3",
            "description": "two Gaussian slits, v0 = 0 for both, large dispersion",
            "assumptions": [_SEP, "sigma0 = 0.25 gives large dispersion over the window"],
            "slits": [{"center": -5.0, "sigma0": 0.25, "v0": 0.0},
                      {"center": 5.0, "sigma0": 0.25, "v0": 0.0}],
            "time": {"t0": 0.0, "t_screen": 5.0},
            "integrator": {"dt": 0.005},
            "ensemble": {"count": 100000, "seed": 3},
            "histogram": {"bin_width": 0.25},
            "grid": {"points": 1024, "times": 51},
            "output": {"trajectory_count": 200, "record_every": 20},
        },
    ),
    "fig2": (
        "two Gaussian slits with opposite velocities, small dispersion: converging beams",
        {
            "name": "fig2",
            "description": "two Gaussian slits, v_1 = -v_2 (converging), small dispersion",
            "assumptions": [_SEP, "sigma0 = 2 gives small dispersion over the window",
                            "|v0| = 1 so the beams meet on the axis at the screen time"],
            "slits": [{"center": -5.0, "sigma0": 2.0, "v0": 1.0},
                      {"center": 5.0, "sigma0": 2.0, "v0": -1.0}],
            "time": {"t0": 0.0, "t_screen": 5.0},
            "integrator": {"dt": 0.005},
            "ensemble": {"count": 100000, "seed": 3},
            "histogram": {"bin_width": 0.25},
            "grid": {"points": 1024, "times": 51},
            "output": {"trajectory_count": 200, "record_every": 20},
        },
    ),
    "single-slit": (
        "one Gaussian slit: spreading streamlines, no interference",
        {
            "name": "single-slit",
            "description": "one Gaussian slit at the origin",
            "assumptions": ["sigma0 = 0.5 and t_screen = 3 are illustrative"],
            "slits": [{"center": 0.0, "sigma0": 0.5}],
            "time": {"t0": 0.0, "t_screen": 3.0},
            "ensemble": {"count": 10000, "seed": 1},
            "histogram": {"bin_width": 0.2},
        },
    ),
    "triple-slit": (
        "three equal Gaussian slits: n-slit interference",
        {
            "name": "triple-slit",
            "description": "three Gaussian slits at -4, 0, 4",
            "assumptions": ["slit spacing 4 and sigma0 = 0.3 are illustrative"],
            "slits": [{"center": -4.0, "sigma0": 0.3}, {"center": 0.0, "sigma0": 0.3},
                      {"center": 4.0, "sigma0": 0.3}],
            "time": {"t0": 0.0, "t_screen": 4.0},
            "ensemble": {"count": 20000, "seed": 4},
            "histogram": {"bin_width": 0.2},
        },
    ),
    "switching": (
        "second slit opened mid-flight: momentum kick on particles from the first",
        {
            "name": "switching",
            "description": "slit at -1 open from t0; slit at +1 opened at t = 1",
            "assumptions": ["slit positions, widths and the switching time are illustrative",
                            "the opened slit emits a fresh Gaussian at the event time"],
            "slits": [{"center": -1.0, "sigma0": 0.5}],
            "events": [{"time": 1.0, "action": "open", "rebirth": "fresh_width",
                        "slit": {"center": 1.0, "sigma0": 0.5}}],
            "time": {"t0": 0.0, "t_screen": 3.0},
            "ensemble": {"count": 100000, "seed": 5},
            "histogram": {"bin_width": 0.2},
            "output": {"record_every": 20},
        },
    ),
    "two-particle": (
        "two distinguishable particles, each through its own double slit (product state)",
        {
            "name": "two-particle",
            "description": "product of two double-slit fields; per-particle flux lines",
            "assumptions": ["a product state: each particle follows its own field"],
            "slits": [{"center": -3.0, "sigma0": 0.4, "particle": 0},
                      {"center": 3.0, "sigma0": 0.4, "particle": 0},
                      {"center": -2.0, "sigma0": 0.3, "particle": 1},
                      {"center": 2.0, "sigma0": 0.3, "phase_offset": 1.0, "particle": 1}],
            "time": {"t0": 0.0, "t_screen": 3.0},
            "ensemble": {"count": 10000, "seed": 6},
            "histogram": {"bin_width": 0.2},
        },
    ),
}


def list_presets() -> list[tuple[str, str]]:
    return [(name, desc) for name, (desc, _) in PRESETS.items()]
