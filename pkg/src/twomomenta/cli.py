"""Scenario runner: presets, artifact bundles and the command-line entry point.

Every data artifact is plain text written by this module alone (floats as
``%.17g``), so identical configurations give byte-identical files whatever
the number of worker threads.  ``manifest.json`` lists each artifact with its
SHA-256; only its ``timing`` block varies between identical runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .channels import PHASE_CONVENTION, build_channels, emergent_velocity, total_intensity
from .config import (
    ConfigError,
    ExperimentConfig,
    config_to_dict,
    list_presets,
    load_preset,
    parse_config,
)
from .diagnostics import oracle_velocity_deviation
from .dynamics import (
    ConfigurationError,
    analytic_cdf,
    compare_minima,
    expected_counts,
    ks_distance,
    run_ensemble,
)
from .wavefield import NODE_EPS, superpose

OUT_DIR_ENV = "TWOMOMENTA_OUT_DIR"
ORACLE_THRESHOLD = 1e-6

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class RunError(RuntimeError):
    """Failure after the configuration was accepted (I/O, oracle guard)."""


@dataclass
class RunManifest:
    config: dict
    seed: int
    artifacts: dict
    design: dict
    assumptions: list
    oracle_check: list | None = None
    timing: dict = field(default_factory=dict)
    tool: str = "twomomenta"
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "version": self.version,
            "seed": self.seed,
            "config": self.config,
            "assumptions": self.assumptions,
            "design": self.design,
            "oracle_check": self.oracle_check,
            "artifacts": self.artifacts,
            "timing": self.timing,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _f(x) -> str:
    return "%.17g" % x


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _suffix(j: int, n: int) -> str:
    return f"_p{j}" if n > 1 else ""


def design_flags(config: ExperimentConfig) -> dict:
    return {
        "phase_convention": PHASE_CONVENTION,
        "osmotic_channels": "half amplitude at S/hbar +- pi/2, +u on +pi/2",
        "node_threshold": f"P_tot <= {NODE_EPS:g} * (sum_i R_i)**2",
        "integrator": "rk4 fixed step",
        "substep_policy": {
            "dt": config.integrator.dt,
            "substep_fraction": config.integrator.substep_fraction,
            "max_substeps": config.integrator.max_substeps,
            "node_retry_factor": config.integrator.node_retry_factor,
        },
        "rebirth_policies": sorted({e.rebirth for e in config.events}),
        "momentum_sampling": "m * v_tot at event_time -+ dt",
        "initial_sampling": "inverse CDF on a trapezoid table, Philox stream per particle",
    }


def _trajectory_rows(result, j, count):
    x0 = result.x0[j]
    n = x0.size
    k = min(count, n)
    if k == 0:
        return []
    order = np.argsort(x0, kind="stable")
    pick = order[np.unique(np.linspace(0, n - 1, k).round().astype(int))]
    rows = []
    for tid in sorted(pick.tolist()):
        xs = result.positions[:, j, tid]
        for t, x in zip(result.record_times, xs):
            if np.isfinite(x):
                rows.append((str(tid), _f(t), _f(x)))
    return rows


def _field_rows(config, state, units):
    g = config.grid
    t0, t1 = config.time.t0, config.time.t_screen
    if g.x_min is not None:
        lo, hi = g.x_min, g.x_max
    else:
        modes = state.modes_at(t1)
        lo = min(float(m.mean_position(t1) - 6 * m.width(t1, units)) for m in modes)
        hi = max(float(m.mean_position(t1) + 6 * m.width(t1, units)) for m in modes)
    x = np.linspace(lo, hi, g.points)
    rows = []
    for t in np.linspace(t0, t1, g.times):
        P = total_intensity(build_channels(state, x, float(t), units))
        rows.extend((_f(t), _f(xi), _f(p)) for xi, p in zip(x, P))
    return rows


def _particle_diagnostics(config, state, result, hist, j):
    units = config.units
    t1 = config.time.t_screen
    final = result.final[j][~result.flagged]
    out = {
        "particle": j,
        "flagged": int(result.flagged.sum()),
        "max_substeps_used": int(result.max_substeps_used),
        "screen_time": t1,
        "histogram_total": int(hist.total),
        "bin_width": hist.width,
    }
    if final.size:
        out["ks_distance"] = ks_distance(final, analytic_cdf(state, t1, units))
        expected = expected_counts(state, t1, hist.edges, hist.total, units)
        m = compare_minima(hist.counts, expected)
        out["minima"] = {
            **{k: v for k, v in m.items() if k not in ("reference", "found")},
            "reference_positions": [float(hist.centers[i]) for i in m["reference"]],
            "found_positions": [float(hist.centers[i]) for i in m["found"]],
        }
    # side of the slit-centre midpoint: flux lines of symmetric fields never cross it
    centers = [m.center for m in state.modes_at(config.time.t0)]
    mid = 0.5 * (min(centers) + max(centers))
    side0 = np.sign(result.x0[j] - mid)
    pos = result.positions[:, j, :]
    crossed = np.any(np.sign(pos - mid) * side0 < 0, axis=0)
    out["midline"] = mid
    out["midline_crossings"] = int(crossed.sum())
    with np.errstate(invalid="ignore"):
        spread = np.nanmean(np.abs(pos - mid), axis=1)
    out["mean_abs_offset"] = [[float(t), float(s)] for t, s in zip(result.record_times, spread)]
    # field identities on the screen grid
    x = np.linspace(hist.edges[0], hist.edges[-1], 1024)
    sup = superpose(state, x, t1, units)
    sys_ = build_channels(state, x, t1, units)
    P = total_intensity(sys_)
    v = emergent_velocity(sys_)
    ok = sup.P > NODE_EPS * sup.P.max()
    both = ok & np.isfinite(v) & np.isfinite(sup.v)
    out["intensity_identity_max_rel"] = float(np.max(np.abs(P - sup.P)) / sup.P.max())
    out["guidance_max_rel"] = float(np.max(np.abs(v[both] - sup.v[both]))
                                    / max(np.max(np.abs(sup.v[both])), 1e-300))
    return out


def run_scenario(config: ExperimentConfig, out_dir, threads: int = 1,
                 check_oracle: bool = False, emit_fields: bool = False) -> RunManifest:
    """Run ``config`` and write its artifact bundle into ``out_dir``."""
    started = time.time()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise RunError(f"output directory {out} is not writable: {exc}") from exc

    states = config.states()
    units = config.units
    n_p = len(states)
    artifacts = set(config.output.artifacts)
    if emit_fields:
        artifacts.add("field")

    oracle = None
    if check_oracle:
        oracle = []
        for j, s in enumerate(states):
            times = sorted({config.time.t_screen} | {e.time for e in s.events
                                                     if e.time < config.time.t_screen})
            for t in times:
                r = oracle_velocity_deviation(s, t, units)
                r["particle"] = j
                oracle.append(r)
        worst = max(r["relative"] for r in oracle)
        if not worst <= ORACLE_THRESHOLD:
            raise RunError(f"channel and grid-oracle velocities disagree: "
                           f"relative deviation {worst:.3g} > {ORACLE_THRESHOLD:g}")

    files: dict[str, str] = {}
    t_run = time.time()
    if config.ensemble.count > 0:
        try:
            run = run_ensemble(config, threads=threads)
        except ConfigurationError as exc:
            raise ConfigError([("", str(exc))]) from exc
        result = run["result"]
        diag = []
        for j, (s, hist) in enumerate(zip(states, run["histograms"])):
            sfx = _suffix(j, n_p)
            if "trajectories" in artifacts:
                files[f"trajectories{sfx}.csv"] = _csv(
                    ("trajectory_id", "t", "x"),
                    _trajectory_rows(result, j, config.output.trajectory_count))
            if "histogram" in artifacts:
                files[f"histogram{sfx}.csv"] = _csv(
                    ("bin_lo", "bin_hi", "count"),
                    [(_f(a), _f(b), str(int(c)))
                     for a, b, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts)])
            diag.append(_particle_diagnostics(config, s, result, hist, j))
        if "diagnostics" in artifacts:
            files["diagnostics.json"] = _json({"particles": diag})
        if "momentum" in artifacts:
            events = []
            for j, kicks in enumerate(run["kicks"]):
                for k in kicks:
                    events.append({"particle": j, **k.summary()})
            files["momentum.json"] = _json({"events": events})
    t_ens = time.time() - t_run

    if "field" in artifacts:
        for j, s in enumerate(states):
            files[f"field{_suffix(j, n_p)}.csv"] = _csv(("t", "x", "P_tot"),
                                                        _field_rows(config, s, units))

    # single writer: everything is rendered above, then written in name order
    checksums = {}
    try:
        for name in sorted(files):
            data = files[name].encode()
            (out / name).write_bytes(data)
            checksums[name] = {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
        manifest = RunManifest(
            config=config_to_dict(config),
            seed=config.ensemble.seed,
            artifacts=checksums,
            design=design_flags(config),
            assumptions=list(config.assumptions),
            oracle_check=oracle,
            timing={"started_unix": started, "ensemble_seconds": t_ens,
                    "total_seconds": time.time() - started, "threads": threads},
        )
        (out / "manifest.json").write_text(manifest.to_json())
    except OSError as exc:
        raise RunError(f"could not write artifacts to {out}: {exc}") from exc
    return manifest


def _load(args) -> ExperimentConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError([("", f"cannot read {args.config}: {exc}")]) from exc
        if args.preset:
            text = f'preset = "{args.preset}"\n' + text
        config = parse_config(text)
    elif args.preset:
        config = load_preset(args.preset)
    else:
        raise ConfigError([("", "give --config PATH or --preset NAME")])
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="twomomenta",
        description="Run emergent-velocity trajectory scenarios and write data artifacts.")
    p.add_argument("--config", metavar="PATH", help="TOML experiment configuration")
    p.add_argument("--preset", metavar="NAME",
                   help="named preset (base for --config overrides when both are given)")
    p.add_argument("--out-dir", metavar="PATH",
                   help=f"output directory (default: config, then ${OUT_DIR_ENV}, then runs/<name>)")
    p.add_argument("--seed", type=int, help="override ensemble.seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--check-oracle", action="store_true",
                   help=f"abort if channel and grid velocities differ by more than {ORACLE_THRESHOLD:g}")
    p.add_argument("--emit-fields", action="store_true", help="also write the (t, x, P_tot) grid")
    p.add_argument("--list-presets", action="store_true", help="list presets and exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.list_presets:
        for name, desc in list_presets():
            print(f"{name:14s} {desc}")
        return EXIT_OK
    try:
        if args.threads < 1:
            raise ConfigError([("--threads", "must be >= 1")])
        if args.seed is not None and args.seed < 0:
            raise ConfigError([("--seed", "must be >= 0")])
        config = _load(args)
        out_dir = (args.out_dir or config.output.directory or os.environ.get(OUT_DIR_ENV)
                   or os.path.join("runs", config.name))
        manifest = run_scenario(config, out_dir, threads=args.threads,
                                check_oracle=args.check_oracle, emit_fields=args.emit_fields)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(manifest.artifacts)} artifacts and manifest.json to {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
