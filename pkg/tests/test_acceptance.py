"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records ``(passed, detail)`` in ``RESULTS``; ``conftest.py`` prints
one line per criterion at the end of the session.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from twomomenta.channels import (
    build_channels,
    channels_from_fields,
    double_slit_closed_form,
    emergent_velocity,
    relational_intensities,
    total_intensity,
)
from twomomenta.cli import run_scenario
from twomomenta.config import load_preset, parse_config
from twomomenta.diagnostics import (
    continuity_residual,
    convergence_order,
    field_fn,
    heat_field,
    hj_residual,
    probability_mask,
    quantum_potential_heat_form,
    quantum_potential_report,
    residual_norm,
)
from twomomenta.dynamics import (
    IntegratorSettings,
    integrate_ensemble,
    integrate_trajectory,
    sample_initial_positions,
)
from twomomenta.oracle import (
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
    symmetric_double_slit,
)

RESULTS: dict[int, tuple[bool, str]] = {}
UNITS = UnitsConstants()
THREADS = max(1, min(8, os.cpu_count() or 1))


def record(n: int, checks: dict[str, tuple[bool, str]]):
    ok = all(c for c, _ in checks.values())
    detail = "; ".join(f"{k} {v}" for k, (_, v) in checks.items())
    RESULTS[n] = (ok, detail)
    failed = [k for k, (c, _) in checks.items() if not c]
    assert ok, f"criterion {n} failed: {failed}: {detail}"


def slit_state(n: int, rng) -> WavefieldState:
    centers = np.linspace(-2.5 * (n - 1), 2.5 * (n - 1), n) if n > 1 else [0.3]
    return WavefieldState(tuple(
        GaussianSlitMode(float(c), float(rng.uniform(0.3, 0.8)), float(rng.uniform(-1, 1)),
                         float(rng.uniform(0, 2 * math.pi)))
        for c in centers))


def data_files(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_criterion_1_guidance_equivalence():
    rng = np.random.default_rng(2024)
    checks = {}
    for n in (1, 2, 3, 5):
        state = slit_state(n, rng)
        x = np.linspace(-3 * n - 6, 3 * n + 6, 1024)
        worst = 0.0
        for t in (0.0, 0.7, 2.0):
            psi, dpsi, _ = state.derivatives(x, t, UNITS)
            P = np.abs(psi) ** 2
            keep = P > 1e-12 * P.max()
            v_bohm = UNITS.hbar / UNITS.mass * np.imag(dpsi[keep] / psi[keep])
            v = emergent_velocity(build_channels(state, x, t, UNITS))[keep]
            assert np.all(np.isfinite(v))
            floor = 1e-6 * np.max(np.abs(v_bohm))
            worst = max(worst, float(np.max(np.abs(v - v_bohm) / np.maximum(np.abs(v_bohm), floor))))
        checks[f"n={n}"] = (worst < 1e-9, f"{worst:.2e}")
    record(1, checks)


def test_criterion_2_closed_form_consistency():
    rng = np.random.default_rng(7)
    N = 1_000_000
    R = rng.uniform(0.01, 2.0, (2, N))
    S = rng.uniform(-20, 20, (2, N))
    v = rng.uniform(-5, 5, (2, N))
    u = rng.uniform(-5, 5, (2, N))
    sys_ = channels_from_fields(R, S, -u * R, v, UNITS)
    a = emergent_velocity(sys_)
    b = double_slit_closed_form(R[0], R[1], v[0], v[1], u[0], u[1], S[1] - S[0])
    same_nodes = bool(np.array_equal(np.isnan(a), np.isnan(b)))
    ok = np.isfinite(a)
    # relative to the local velocity scale: |v_tot| or the fastest channel
    scale = np.maximum(np.abs(b[ok]), np.max(np.abs(np.concatenate([v, u]))[:, ok], axis=0))
    rel = float(np.max(np.abs(a[ok] - b[ok]) / scale))
    record(2, {"samples": (True, str(N)), "nodes agree": (same_nodes, str(same_nodes)),
               "max rel": (rel < 1e-10, f"{rel:.2e}")})


def test_criterion_3_intensity_identity():
    rng = np.random.default_rng(3)
    worst = osmotic = 0.0
    for n in (1, 2, 3, 5):
        state = slit_state(n, rng)
        x = np.linspace(-3 * n - 6, 3 * n + 6, 2001)
        sys_ = build_channels(state, x, 1.1, UNITS)
        Pi = relational_intensities(sys_)
        psi2 = np.abs(superpose(state, x, 1.1, UNITS).psi) ** 2
        vec2 = np.abs(sys_.vector_sum) ** 2
        scale = psi2.max()
        worst = max(worst, float(np.max(np.abs(Pi.sum(axis=0) - psi2)) / scale),
                    float(np.max(np.abs(vec2 - psi2)) / scale))
        # per slit: plus and minus osmotic projections cancel
        osmotic = max(osmotic, float(np.max(np.abs(Pi[1::3] + Pi[2::3]))))
    record(3, {"sum P(w_i) vs |Psi|^2": (worst < 1e-12, f"{worst:.2e}"),
               "osmotic net": (osmotic == 0.0, f"{osmotic:.1e}")})


def test_criterion_4_quantum_potential_identities():
    x = np.linspace(-8, 8, 4001)
    states = (WavefieldState((GaussianSlitMode(0.2, 0.7, 0.3),)),
              symmetric_double_slit(4.0, 0.5),
              WavefieldState((GaussianSlitMode(-2, 0.6, 0.3), GaussianSlitMode(1.5, 0.8, -0.2, 0.7))))
    pair = 0.0
    for s in states:
        r = quantum_potential_report(s, x, 1.3, UNITS)
        scale = np.max(np.abs(r["U_R"]))
        for a, b in (("U_grad", "U_R"), ("U_grad", "U_u"), ("U_R", "U_u")):
            pair = max(pair, float(np.max(np.abs(r[a] - r[b])) / scale))

    u = UnitsConstants(omega=1.7)
    h = 1e-3
    xh = np.arange(-10, 10 + h / 2, h)
    heat = grad = 0.0
    for s in states[:2]:
        sup = superpose(s, xh, 1.2, u)
        hf = heat_field(xh, sup.P, 1.0, units=u)
        m = probability_mask(sup.P)
        U_heat = quantum_potential_heat_form(hf, u)
        r = quantum_potential_report(s, xh, 1.2, u)
        ref = np.full(xh.size, np.nan)
        ref[sup.P > 1e-12 * sup.P.max()] = r["U_grad"]
        heat = max(heat, float(np.max(np.abs(U_heat - ref)[m]) / np.max(np.abs(ref[m]))))
        target = 2 * u.omega * u.mass * (-u.hbar / u.mass * np.real(sup.dpsi / sup.psi))
        grad = max(grad, float(np.max(np.abs(hf.gradient() - target)[m])
                               / np.max(np.abs(target[m]))))
    record(4, {"grad/R/u forms": (pair < 1e-10, f"{pair:.2e}"),
               "heat form": (heat < 1e-6, f"{heat:.2e}"),
               "grad dQ = 2 w m u": (grad < 1e-9, f"{grad:.2e}")})


def test_criterion_5_residuals():
    ds = symmetric_double_slit(4.0, 0.5)
    xs = np.linspace(-8, 8, 2001)
    P = ds.density(xs, 1.2, UNITS)
    hj = [residual_norm(hj_residual(field_fn(ds, UNITS), xs, 1.2, dt, UNITS), P)
          for dt in (1e-2, 5e-3, 2.5e-3)]
    hj_order = float(np.min(convergence_order(hj)))
    cont = []
    for h in (0.04, 0.02, 0.01):
        x = np.arange(-12, 12 + h / 2, h)
        Pc = total_intensity(build_channels(ds, x, 1.2, UNITS))
        cont.append(residual_norm(continuity_residual(ds, x, 1.2, h, UNITS), Pc))
    cont_order = float(np.min(convergence_order(cont)))
    free = WavefieldState((GaussianSlitMode(0.3, 0.8, 0.4),))
    xf = np.linspace(-8, 8, 2001)
    r = residual_norm(hj_residual(field_fn(free, UNITS), xf, 1.2, 1e-4, UNITS),
                      free.density(xf, 1.2, UNITS))
    # observed order 2 means each halving cuts the error by 4x up to rounding
    record(5, {"HJ order": (hj_order > 1.95, f"{hj_order:.3f}"),
               "continuity order": (cont_order > 1.95, f"{cont_order:.3f}"),
               "free HJ": (r < 1e-6, f"{r:.2e}")})


def test_criterion_6_oracle():
    x = grid(-20, 20, 2048)
    g0 = GridWavefunction(-20, 20, gaussian_on_grid(x, 0.0, 1.0))
    g = split_operator_evolve(g0, None, 1e-3, 1000, UNITS)
    exact = evaluate_mode(GaussianSlitMode(0.0, 1.0), g.x, 1.0, UNITS).psi
    l2 = math.sqrt(np.sum(np.abs(g.values - exact) ** 2) * g.dx)
    gk = GridWavefunction(-20, 20, gaussian_on_grid(x, 0.0, 1.0, 1.5))
    gh = split_operator_evolve(gk, harmonic_potential(0.3, UNITS), 1e-3, 1000, UNITS)
    drift = abs(gh.norm() - gk.norm())
    worst = 0.0
    for n in (1, 2, 3):
        centers = np.linspace(-3, 3, n) if n > 1 else [0.2]
        state = WavefieldState(tuple(GaussianSlitMode(c, 0.5, 0.2 * i, 0.4 * i)
                                     for i, c in enumerate(centers)))
        ge = evolve_modes(state.modes, -40, 40, 2048, 1.5, 0.5, UNITS)
        vg = bohm_velocity_from_grid(ge, UNITS)
        vc = emergent_velocity(build_channels(state, ge.x, 1.5, UNITS))
        m = probability_mask(ge.density()) & np.isfinite(vc) & np.isfinite(vg)
        worst = max(worst, float(np.max(np.abs(vc[m] - vg[m])) / np.max(np.abs(vg[m]))))
    record(6, {"free L2": (l2 < 1e-8, f"{l2:.2e}"),
               "norm drift/1e3 steps": (drift < 1e-12, f"{drift:.1e}"),
               "channel vs grid": (worst < 1e-6, f"{worst:.2e}")})


def test_criterion_7_trajectories():
    sigma0 = 0.7
    single = WavefieldState((GaussianSlitMode(0.0, sigma0),))
    stream = 0.0
    for x0 in (-1.3, 0.4, 2.0):
        tr = integrate_trajectory(x0, 0.0, 3.0, single, IntegratorSettings(dt=1e-3), UNITS)
        exact = x0 * np.array([GaussianSlitMode(0.0, sigma0).width(t, UNITS) for t in tr.t]) / sigma0
        stream = max(stream, float(np.max(np.abs(tr.x - exact) / np.abs(exact))))

    ds = symmetric_double_slit(10.0, 0.25)
    x0 = np.sort(sample_initial_positions(ds, 0.0, 1000, seed=21))
    res = integrate_ensemble(x0, 0.0, 5.0, [ds], IntegratorSettings(dt=0.005), UNITS,
                             threads=THREADS)
    pos = res.positions[:, 0, :]
    ordered = bool(np.all(np.diff(pos, axis=1) > 0)) and not res.flagged.any()

    mirror = integrate_ensemble(-x0, 0.0, 5.0, [ds], IntegratorSettings(dt=0.005), UNITS,
                                threads=THREADS)
    sym = float(np.max(np.abs(pos + mirror.positions[:, 0, :])))
    record(7, {"streamline": (stream < 1e-6, f"{stream:.2e}"),
               "no crossing (1e3)": (ordered, str(ordered)),
               "mirror": (sym < 1e-8, f"{sym:.1e}")})


def _preset_run(name, tmp_path):
    config = load_preset(name)
    start = time.perf_counter()
    run_scenario(config, tmp_path / name, threads=THREADS)
    elapsed = time.perf_counter() - start
    diag = json.loads((tmp_path / name / "diagnostics.json").read_text())["particles"][0]
    return config, diag, elapsed


def test_criterion_8_figure_presets(tmp_path):
    checks = {}
    cfg3, d3, t3 = _preset_run("fig3", tmp_path)
    spread3 = np.array(d3["mean_abs_offset"])[:, 1]
    checks["fig3 n"] = (d3["histogram_total"] + d3["flagged"] == 100_000,
                        str(d3["histogram_total"]))
    checks["fig3 KS"] = (d3["ks_distance"] < 0.01, f"{d3['ks_distance']:.4f}")
    checks["fig3 minima"] = (d3["minima"]["ok"],
                             f"{d3['minima']['found_count']}/{d3['minima']['reference_count']} "
                             f"max offset {d3['minima']['max_offset_bins']} bin")
    # fringe channeling: paths stay on their side, fan out and bunch into fringes
    checks["fig3 channeling"] = (d3["midline_crossings"] == 0 and spread3[-1] > spread3[0]
                                 and d3["minima"]["found_count"] >= 2,
                                 f"crossings {d3['midline_crossings']}, "
                                 f"spread {spread3[0]:.2f}->{spread3[-1]:.2f}")
    checks["fig3 time"] = (t3 <= 300, f"{t3:.0f}s")

    cfg2, d2, t2 = _preset_run("fig2", tmp_path)
    spread2 = np.array(d2["mean_abs_offset"])[:, 1]
    checks["fig2 KS"] = (d2["ks_distance"] < 0.01, f"{d2['ks_distance']:.4f}")
    checks["fig2 minima"] = (d2["minima"]["ok"],
                             f"{d2['minima']['found_count']}/{d2['minima']['reference_count']} "
                             f"max offset {d2['minima']['max_offset_bins']} bin")
    # converging beams: the two bundles approach the axis but do not cross it
    checks["fig2 converging"] = (d2["midline_crossings"] == 0 and spread2.min() < 0.5 * spread2[0],
                                 f"crossings {d2['midline_crossings']}, "
                                 f"spread {spread2[0]:.2f}->{spread2.min():.2f}")
    checks["fig2 time"] = (t2 <= 300, f"{t2:.0f}s")
    record(8, checks)


def test_criterion_9_switching(tmp_path):
    config = load_preset("switching")
    run_scenario(config, tmp_path / "switch", threads=THREADS)
    (kick,) = json.loads((tmp_path / "switch" / "momentum.json").read_text())["events"]
    z = kick["z_mean_delta_p"]

    static = parse_config('preset = "switching"\nevents = []\n[ensemble]\ncount = 20000\n')
    late = parse_config('preset = "switching"\n[ensemble]\ncount = 20000\n'
                        '[[events]]\ntime = 3.5\naction = "open"\n'
                        'slit = { center = 1.0, sigma0 = 0.5 }\n')
    run_scenario(static, tmp_path / "static", threads=THREADS)
    run_scenario(late, tmp_path / "late", threads=THREADS)
    same = data_files(tmp_path / "static") == data_files(tmp_path / "late")
    record(9, {"kick z": (abs(z) > 5, f"{z:.1f} (n={kick['count']}, "
                                      f"mean dp {kick['mean_delta_p']:.4f})"),
               "after-screen event identical": (same, str(same))})


def test_criterion_10_determinism(tmp_path):
    config = parse_config('preset = "fig3"\n[ensemble]\ncount = 20000\n')
    bundles = []
    for i, threads in enumerate((1, 1, 2, THREADS + 3)):
        run_scenario(config, tmp_path / f"run{i}", threads=threads, emit_fields=True)
        bundles.append(data_files(tmp_path / f"run{i}"))
    same = all(b == bundles[0] for b in bundles[1:])
    record(10, {"threads 1/1/2/%d" % (THREADS + 3): (same, "identical" if same else "differ")})
