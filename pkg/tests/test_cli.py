import json

import pytest

from tamed_mhd.cli import run_command
from tamed_mhd.io import parse_document, read_diagnostics_csv, read_snapshot

SMALL = """
[grid]
n = 8
[integrator]
dt = 0.01
T = 0.05
record_every = 1
[experiment]
paths = 2
verify_samples = 10
deltas = [1e-3, 1e-4]
dt_levels = [0.01, 0.005]
dt_ref = 0.0025
taming_levels = [1.0, 2.0]
feller_t = 0.02
feller_deltas = [1e-2, 1e-3]
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def run(config, out, *args):
    return run_command([args[0], "--config", str(config), "--out", str(out), "--quiet", *args[1:]])


def test_verify_passes_with_defaults(tmp_path, config):
    out = tmp_path / "v"
    assert run(config, out, "verify", "--seed", "1") == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["seed"] == 1 and meta["command"] == "verify"
    assert parse_document(meta["config_toml"]) == meta["config"]
    assert "Philox" in meta["rng"]


def test_run_writes_csv_and_snapshots(tmp_path, config):
    out = tmp_path / "r"
    assert run(config, out, "run") == 0
    recs = read_diagnostics_csv(out / "diagnostics.csv")
    assert len(recs) == 6
    snaps = sorted(out.glob("snap_*.stmh"))
    y, t, N = read_snapshot(snaps[-1])
    assert t == pytest.approx(0.05) and N == 100.0


def test_run_reproducible(tmp_path, config):
    assert run(config, tmp_path / "a", "run", "--seed", "4") == 0
    assert run(config, tmp_path / "b", "run", "--seed", "4") == 0
    a = sorted((tmp_path / "a").glob("snap_*.stmh"))
    b = sorted((tmp_path / "b").glob("snap_*.stmh"))
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_twin_and_errors(tmp_path, config):
    out = tmp_path / "t"
    assert run(config, out, "twin", "--delta", "1e-3", "--mode", "1,0,0") == 0
    assert (out / "twin.csv").read_text().startswith("t,diff_h0_sq,diff_h1_sq")
    assert run(config, out, "twin", "--delta", "0") == 2
    assert run(config, out, "twin", "--mode", "9,0,0") == 2


@pytest.mark.parametrize("cmd", ["ergodic", "order", "apriori", "feller"])
def test_experiment_commands(tmp_path, config, cmd):
    out = tmp_path / cmd
    assert run(config, out, cmd) in (0, 1)
    assert (out / "metadata.json").is_file()


def test_usage_errors(tmp_path):
    assert run_command(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\nn = 12\n")
    assert run_command(["run", "--config", str(bad)]) == 2
    assert run_command(["frobnicate"]) == 2
    assert run_command(["run", "--paths", "0", "--config", str(bad)]) == 2
    assert run_command(["apriori", "--taming-levels", "x"]) == 2
