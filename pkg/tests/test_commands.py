import asyncio
import json
from pathlib import Path

import pandas as pd
import pytest

from helpers.field_classes import WorkbenchError
from Workbench import Workbench

ROOT = Path(__file__).resolve().parents[1]
COMMANDS = {"gauge-test", "identity-check", "ucp-probe", "recover", "stability",
            "geodesics", "raytransform", "sinvert", "dtn", "wkb"}

SMALL_CONFIG = """
seed = 3

[grid]
n = 24

[metric]
family = "conformal"
epsilon = 0.05

[bundle]
n_points = 8
n_dirs = 8

[time]
T_factor = 1.0
geodesic_step = 1e-2

[dtn]
n_spatial = 2
n_temporal = 1
"""


@pytest.fixture
def bench():
    wb = Workbench()
    asyncio.run(wb.load_commands(str(ROOT / "cogs" / "cogs.csv")))
    return wb


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return path


def _run(bench, *argv):
    return asyncio.run(bench.run([str(a) for a in argv]))


def test_every_command_is_registered(bench):
    assert set(bench.commands) == COMMANDS
    assert len(bench.extensions) == 6


def test_duplicate_command_is_rejected(bench):
    with pytest.raises(WorkbenchError, match="twice"):
        bench.add_command("dtn", bench.commands["dtn"].callback, help="again")


def test_parser_knows_command_flags(bench):
    args = bench.build_parser().parse_args(["--seed", "4", "geodesics", "--n-rays", "6"])
    assert (args.command, args.seed, args.n_rays) == ("geodesics", 4, 6)
    with pytest.raises(SystemExit):
        bench.build_parser().parse_args(["no-such-command"])


def test_dtn_command_writes_outputs(bench, config_path, tmp_path):
    out = tmp_path / "runs"
    assert _run(bench, "--config", config_path, "--out", out, "dtn") == 0
    manifest = json.loads((out / "dtn" / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["seed"] == 3
    assert manifest["report"]["n_basis"] == 2
    assert manifest["report"]["diff_from_euclidean"] > 0.0
    assert "total" in manifest["timings"]
    assert (out / "dtn" / "dtn.bin").exists()
    assert (out / "dtn" / "dtn_euclidean.json").exists()


def test_geodesics_are_reproducible(bench, config_path, tmp_path):
    for name in ("first", "second"):
        assert _run(bench, "--config", config_path, "--out", tmp_path / name, "geodesics", "--n-rays", 4) == 0
    for csv in ("geodesics.csv", "scattering.csv"):
        first = (tmp_path / "first" / "geodesics" / csv).read_bytes()
        second = (tmp_path / "second" / "geodesics" / csv).read_bytes()
        assert first == second
    frame = pd.read_csv(tmp_path / "first" / "geodesics" / "scattering.csv")
    assert len(frame) == 4
    manifest = json.loads((tmp_path / "first" / "geodesics" / "manifest.json").read_text())
    assert manifest["report"]["hamiltonian_drift"] <= 1e-4


def test_config_error_exits_with_two(bench, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\nnodes = 3\n", encoding="utf-8")
    assert _run(bench, "--config", bad, "--out", tmp_path, "dtn") == 2


def test_command_error_exits_with_one(bench, config_path, tmp_path):
    text = config_path.read_text() + "\n[stability]\nepsilons = [0.0, 0.05, 0.1]\n"
    config_path.write_text(text, encoding="utf-8")
    assert _run(bench, "--config", config_path, "--out", tmp_path, "stability") == 1
    manifest = json.loads((tmp_path / "stability" / "manifest.json").read_text())
    assert manifest["status"] == "error"
    assert "ConfigError" in manifest["error"]


def test_raytransform_command_checks_adjointness(bench, config_path, tmp_path):
    assert _run(bench, "--config", config_path, "--out", tmp_path, "raytransform") == 0
    manifest = json.loads((tmp_path / "raytransform" / "manifest.json").read_text())
    assert manifest["report"]["adjoint_gap"] <= 1e-10
    assert (tmp_path / "raytransform" / "sinogram.csv").exists()
    assert (tmp_path / "raytransform" / "phantom.bin").exists()
