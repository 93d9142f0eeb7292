import hashlib
import json
import os
import stat
import subprocess
import sys
from pathlib import Path

import pytest

from twomomenta import cli
from twomomenta.config import load_preset, parse_config

SMALL = """
name = "small"
[[slits]]
center = -2.0
sigma0 = 0.4
[[slits]]
center = 2.0
sigma0 = 0.4
[time]
t_screen = 1.5
[integrator]
dt = 0.01
[ensemble]
count = 400
seed = 7
[grid]
points = 64
times = 3
[output]
trajectory_count = 10
record_every = 30
"""


def data_files(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def test_small_run_bundle(tmp_path, cfg_file):
    out = tmp_path / "out"
    assert cli.main(["--config", str(cfg_file), "--out-dir", str(out)]) == cli.EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert names == {"trajectories.csv", "histogram.csv", "diagnostics.json",
                     "momentum.json", "manifest.json"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["artifacts"]) == names - {"manifest.json"}
    for name, meta in manifest["artifacts"].items():
        data = (out / name).read_bytes()
        assert hashlib.sha256(data).hexdigest() == meta["sha256"] and len(data) == meta["bytes"]
    assert manifest["seed"] == 7 and manifest["config"]["name"] == "small"
    assert manifest["design"]["phase_convention"]
    assert "timing" in manifest and manifest["tool"] == "twomomenta"

    lines = (out / "trajectories.csv").read_text().splitlines()
    assert lines[0] == "trajectory_id,t,x"
    assert len({l.split(",")[0] for l in lines[1:]}) == 10
    hist = (out / "histogram.csv").read_text().splitlines()
    assert hist[0] == "bin_lo,bin_hi,count"
    assert sum(int(l.split(",")[2]) for l in hist[1:]) == 400
    diag = json.loads((out / "diagnostics.json").read_text())["particles"][0]
    assert diag["flagged"] == 0 and diag["midline_crossings"] == 0
    assert diag["guidance_max_rel"] < 1e-9 and diag["intensity_identity_max_rel"] < 1e-12
    assert json.loads((out / "momentum.json").read_text()) == {"events": []}


def test_reruns_are_byte_identical_across_threads(tmp_path, cfg_file):
    runs = []
    for i, threads in enumerate((1, 1, 4)):
        out = tmp_path / f"r{i}"
        cli.main(["--config", str(cfg_file), "--out-dir", str(out), "--threads", str(threads)])
        runs.append(data_files(out))
    assert runs[0] == runs[1] == runs[2]


def test_seed_override_changes_data(tmp_path, cfg_file):
    cli.main(["--config", str(cfg_file), "--out-dir", str(tmp_path / "a")])
    cli.main(["--config", str(cfg_file), "--out-dir", str(tmp_path / "b"), "--seed", "8"])
    assert data_files(tmp_path / "a")["histogram.csv"] != data_files(tmp_path / "b")["histogram.csv"]
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 8


def test_emit_fields(tmp_path, cfg_file):
    out = tmp_path / "f"
    assert cli.main(["--config", str(cfg_file), "--out-dir", str(out), "--emit-fields"]) == 0
    lines = (out / "field.csv").read_text().splitlines()
    assert lines[0] == "t,x,P_tot" and len(lines) == 1 + 64 * 3
    assert "field.csv" in json.loads((out / "manifest.json").read_text())["artifacts"]


def test_zero_count_writes_only_requested_fields(tmp_path):
    text = SMALL.replace("count = 400", "count = 0")
    out = tmp_path / "z"
    cli.run_scenario(parse_config(text), out, emit_fields=True)
    assert {p.name for p in out.iterdir()} == {"field.csv", "manifest.json"}


def test_config_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(SMALL.replace("sigma0 = 0.4", "sigma0 = 0", 1))
    assert cli.main(["--config", str(bad), "--out-dir", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert "slits[0].sigma0" in capsys.readouterr().err
    assert cli.main(["--config", str(tmp_path / "missing.toml")]) == cli.EXIT_CONFIG
    assert cli.main(["--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["--preset", "fig3", "--threads", "0"]) == cli.EXIT_CONFIG


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_directory_permissions(tmp_path, cfg_file):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(stat.S_IRUSR | stat.S_IXUSR)
    assert cli.main(["--config", str(cfg_file), "--out-dir", str(ro)]) == cli.EXIT_RUNTIME


def test_unwritable_directory(tmp_path, cfg_file, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code = cli.main(["--config", str(cfg_file), "--out-dir", str(blocker / "sub")])
    assert code == cli.EXIT_RUNTIME
    assert "not writable" in capsys.readouterr().err


def test_oracle_guard(tmp_path, cfg_file, monkeypatch):
    out = tmp_path / "ok"
    assert cli.main(["--config", str(cfg_file), "--out-dir", str(out), "--check-oracle"]) == 0
    check = json.loads((out / "manifest.json").read_text())["oracle_check"]
    assert check and max(r["relative"] for r in check) < cli.ORACLE_THRESHOLD
    monkeypatch.setattr(cli, "ORACLE_THRESHOLD", 0.0)
    out2 = tmp_path / "guard"
    assert cli.main(["--config", str(cfg_file), "--out-dir", str(out2),
                     "--check-oracle"]) == cli.EXIT_RUNTIME
    assert not (out2 / "manifest.json").exists()


def test_list_presets(capsys):
    assert cli.main(["--list-presets"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 6 and lines[0].split()[0] in ("fig3", "fig2")


def test_out_dir_from_environment(tmp_path, cfg_file, monkeypatch):
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path / "env"))
    assert cli.main(["--config", str(cfg_file)]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def test_default_out_dir(tmp_path, cfg_file, monkeypatch):
    monkeypatch.delenv(cli.OUT_DIR_ENV, raising=False)
    monkeypatch.chdir(tmp_path)
    assert cli.main(["--config", str(cfg_file)]) == 0
    assert (tmp_path / "runs" / "small" / "manifest.json").exists()


def test_preset_with_override_file(tmp_path):
    over = tmp_path / "o.toml"
    over.write_text("[ensemble]\ncount = 50\n[time]\nt_screen = 0.5\n"
                    "[output]\nrecord_every = 50\n")
    out = tmp_path / "p"
    assert cli.main(["--preset", "single-slit", "--config", str(over), "--out-dir", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["config"]["name"] == "single-slit" and m["config"]["ensemble"]["count"] == 50


def test_two_particle_suffixes(tmp_path):
    config = parse_config('preset = "two-particle"\n[ensemble]\ncount = 100\n'
                          '[time]\nt_screen = 0.5\n')
    m = cli.run_scenario(config, tmp_path)
    assert {"trajectories_p0.csv", "trajectories_p1.csv",
            "histogram_p0.csv", "histogram_p1.csv"} <= set(m.artifacts)


def test_event_after_screen_leaves_data_unchanged(tmp_path):
    base = parse_config('preset = "switching"\nevents = []\n[ensemble]\ncount = 300\n')
    late = parse_config('preset = "switching"\n[ensemble]\ncount = 300\n'
                        '[[events]]\ntime = 10.0\naction = "open"\n'
                        'slit = { center = 1.0, sigma0 = 0.5 }\n')
    cli.run_scenario(base, tmp_path / "a")
    cli.run_scenario(late, tmp_path / "b")
    assert data_files(tmp_path / "a") == data_files(tmp_path / "b")


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "twomomenta", "--list-presets"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "fig3" in r.stdout
