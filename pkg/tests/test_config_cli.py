import csv
import json
import subprocess
import sys

import pytest

from mlffbench.aev import AevParams
from mlffbench.cli import main
from mlffbench.config import BenchConfig, format_config, parse_config
from mlffbench.errors import ConfigurationError


def test_parse_and_format_round_trip():
    cfg = parse_config("""
        # comment
        sizes = 10, 20
        model = et   # trailing comment
        deterministic = yes
        reps = 3
        dt = 0.25
    """)
    assert cfg.sizes == (10, 20) and cfg.model == "et" and cfg.deterministic and cfg.reps == 3 and cfg.dt == 0.25
    assert parse_config(format_config(cfg)) == cfg


@pytest.mark.parametrize("text", ["sizes = ", "reps = many", "model = gpt", "colour = red", "justtext",
                                  "deterministic = maybe", "sizes = 0", "stages = warp", "reps = 0"])
def test_bad_config(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_overrides_skip_none():
    cfg = BenchConfig().with_overrides(model="cff", reps=None)
    assert cfg.model == "cff" and cfg.reps == BenchConfig().reps


def test_cli_gen_and_stage_bench(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["gen", "--sizes", "1,2", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["polyala_0001.xyz", "polyala_0002.xyz"]
    assert main(["stage-bench", "--sizes", "1,2", "--reps", "1", "--strategy", "staged", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "stage_bench.csv")))
    assert list(rows[0]) == ["size", "atoms", "stage", "strategy", "median_s", "flops", "bytes"]
    assert {r["stage"] for r in rows} == {"neighbors", "aev_forward", "energy_forward", "force_backward"}
    assert all(r["strategy"] == "staged" for r in rows)
    doc = json.loads((out / "stage_bench.json").read_text())
    assert doc["schema_version"] == 1 and all(c["passed"] for c in doc["checks"])


def test_cli_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("sizes = 1\nmodel = cff\nreps = 1\n")
    out = tmp_path / "o"
    assert main(["stage-bench", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "stage_bench.csv")))
    assert {r["stage"] for r in rows} == {"neighbors", "cff"}


def test_cli_md_and_ratio(tmp_path):
    out = tmp_path / "o"
    assert main(["md", "--sizes", "1", "--steps", "5", "--mode", "CFFsys", "--deterministic", "--out", str(out)]) == 0
    run = json.loads((out / "md_report.json").read_text())["runs"][0]
    assert run["steps"] == 5 and run["mode"] == "CFFsys"
    assert main(["ratio", "--sizes", "1", "--out", str(out)]) == 0
    doc = json.loads((out / "ratio.json").read_text())
    assert doc["entries"][0]["label"] == "dipeptide" and 500 <= doc["entries"][0]["ratio"] <= 2500


@pytest.mark.parametrize("argv", [["md", "--sizes", "0"], ["md", "--sizes", "x"],
                                  ["md", "--sizes", "1", "--mode", "CMLsys"],
                                  ["md", "--model", "cff", "--mode", "MLFFsys", "--sizes", "1"],
                                  ["ratio", "--config", "/nonexistent.cfg"]])
def test_cli_configuration_errors_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_cli_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["dance"])
    assert info.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mlffbench", "gen", "--sizes", "1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "wrote 1 systems" in proc.stdout


def test_aev_keys_round_trip():
    cfg = parse_config("aev.radial_cutoff = 5.2\naev.zeta = 16, 16, 32, 32, 32, 32, 32, 32\n")
    params = cfg.aev_params()
    assert params.radial_cutoff == 5.2 and params.zeta[0] == 16.0
    assert params.width == 1008
    again = parse_config(format_config(cfg))
    assert again.aev == cfg.aev
    assert BenchConfig().aev_params().to_dict() == AevParams().to_dict()


@pytest.mark.parametrize("text", ["aev.bogus = 1", "aev.radial_cutoff = 1, 2", "aev.zeta = a",
                                  "aev.angular_cutoff = 9.0", "aev.zeta = 1, 2"])
def test_bad_aev_keys(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)
