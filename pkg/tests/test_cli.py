import csv
import os
import re
import subprocess
import sys

import pytest

from cfurllc import cli
from cfurllc.presets import PRESETS, load_config, plan_to_ini, preset, split_antennas

TINY = """\
[plan]
name = tiny

[scenario]
L = 16
M = 2
K = 4
np_ul = 4
np_dl = 4
n_stat = 200

[experiment]
n_placements = 3
n_fading = 20
seed = 0

[sweep]
param = rho_ul_dbm
values = -20, -10

[curve cf]
architecture = centralized

[curve cell]
architecture = cellular
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_validate_table_one_defaults(tmp_path, capsys):
    path = write(tmp_path, "[scenario]\n")
    assert cli.main(["validate", path]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert out.strip().endswith("valid")
    for label, value in [("n", "300"), ("n/2", "150"), ("K", "40"), ("bits b", "160")]:
        assert re.search(rf"^\s+{re.escape(label)}\s+{value}\s*$", out, re.M), label
    assert re.search(r"np_ul / np_dl\s+40 / 40", out)


def test_validate_reports_grid_integrity(tmp_path, capsys):
    path = write(tmp_path, "[scenario]\nL = 5\n")
    assert cli.main(["validate", path]) == cli.EXIT_INVALID
    out = capsys.readouterr().out
    assert "not a perfect square" in out and out.strip().endswith("invalid")


def test_validate_reports_pilot_contamination(tmp_path, capsys):
    path = write(tmp_path, "[scenario]\nK = 50\nnp_ul = 40\n")
    assert cli.main(["validate", path]) == cli.EXIT_INVALID
    assert "pilot contamination is unsupported" in capsys.readouterr().out


def test_hardening_is_a_warning_not_an_error(tmp_path, capsys):
    path = write(tmp_path, "[scenario]\narchitecture = distributed\nM = 1\n")
    assert cli.main(["validate", path]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "warning" in out and "channel hardening" in out


@pytest.mark.parametrize("text,where", [("[scenario]\nKK = 3\n", "[scenario]"),
                                        ("[experiment]\nplacements = 3\n", "[experiment]"),
                                        ("[sweep]\nparameter = K\n", "[sweep]")])
def test_unknown_keys_list_valid_ones(tmp_path, capsys, text, where):
    path = write(tmp_path, text)
    assert cli.main(["validate", path]) == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "unknown key" in err and where in err and "valid keys:" in err


def test_unknown_override_key(tmp_path, capsys):
    path = write(tmp_path, TINY)
    assert cli.main(["run", path, "--out", str(tmp_path / "o"), "--override", "antennas=4"]) == cli.EXIT_USAGE
    assert "valid keys:" in capsys.readouterr().err


def test_every_preset_validates(capsys):
    for name in PRESETS:
        assert cli.main(["validate", name]) == cli.EXIT_OK, name
    capsys.readouterr()


def test_presets_cover_the_figures():
    assert set(PRESETS) == {"nonfading-3way", "ul-antenna-sweep", "ul-power-sweep", "dl-hardening-single-ue",
                            "dl-antenna-sweep", "dl-power-sweep", "outage-comparison"}
    assert preset("nonfading-3way").sweep_values == tuple(range(1, 41))
    assert preset("ul-power-sweep").sweep_values == tuple(range(-20, 21, 4))


def test_split_rules():
    assert split_antennas("centralized", 64) == (64, 1)
    assert split_antennas("distributed", 64) == (16, 4)
    assert split_antennas("cellular4", 64) == (4, 16)
    assert split_antennas("centralized", 50) is None


def test_csv_schema_and_format(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["run", write(tmp_path, TINY), "--out", str(out)]) == cli.EXIT_OK
    capsys.readouterr()
    files = sorted(os.listdir(out))
    assert files == ["run-manifest.ini", "run-manifest.json", "tiny__cell.csv", "tiny__cf.csv"]
    raw = read_bytes(out / "tiny__cf.csv")
    assert raw.count(b"\r\n") == 3
    with open(out / "tiny__cf.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == cli.CSV_COLUMNS
    assert [r[1] for r in rows[1:]] == ["-20", "-10"]
    for r in rows[1:]:
        assert r[0] == "rho_ul_dbm"
        assert re.fullmatch(r"-?\d\.\d{6}e[+-]\d+", r[5])
        assert 0 <= float(r[3]) <= float(r[2]) <= float(r[4]) <= 1
        assert r[6:] == ["3", "20", "0"]


def test_same_seed_gives_identical_csvs(tmp_path, capsys):
    cfg = write(tmp_path, TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["run", cfg, "--seed", "7", "--out", str(d)]) == cli.EXIT_OK
    capsys.readouterr()
    for name in ("tiny__cf.csv", "tiny__cell.csv"):
        assert read_bytes(a / name) == read_bytes(b / name)
    assert b",7\r\n" in read_bytes(a / "tiny__cf.csv")


def test_manifest_rerun_reproduces_outputs(tmp_path, capsys):
    first = tmp_path / "first"
    cli.main(["run", write(tmp_path, TINY), "--seed", "3", "--placements", "2", "--fading", "15",
              "--values", "-15", "--override", "K=3", "--out", str(first)])
    second = tmp_path / "second"
    assert cli.main(["run", str(first / cli.MANIFEST_NAME), "--out", str(second)]) == cli.EXIT_OK
    capsys.readouterr()
    for name in ("tiny__cf.csv", "tiny__cell.csv"):
        assert read_bytes(first / name) == read_bytes(second / name)
    plan = load_config(str(first / cli.MANIFEST_NAME))
    assert plan.base.K == 3 and plan.seed == 3 and plan.sweep_values == (-15.0,)


def test_manifest_roundtrip_for_presets(tmp_path):
    for name in PRESETS:
        plan = preset(name)
        path = write(tmp_path, plan_to_ini(plan), f"{name}.ini")
        assert load_config(path) == plan


def test_workers_env_keeps_csvs_identical(tmp_path, capsys, monkeypatch):
    cfg = write(tmp_path, TINY)
    cli.main(["run", cfg, "--out", str(tmp_path / "w1")])
    monkeypatch.setenv("CFURLLC_WORKERS", "2")
    cli.main(["run", cfg, "--out", str(tmp_path / "w2")])
    capsys.readouterr()
    assert read_bytes(tmp_path / "w1" / "tiny__cf.csv") == read_bytes(tmp_path / "w2" / "tiny__cf.csv")


def test_sweep_flag_and_bad_values(tmp_path, capsys):
    cfg = write(tmp_path, TINY)
    assert cli.main(["run", cfg, "--sweep", "bogus", "--out", str(tmp_path / "x")]) == cli.EXIT_USAGE
    assert cli.main(["run", "no-such-preset", "--out", str(tmp_path / "x")]) == cli.EXIT_USAGE
    assert cli.main(["run", cfg, "--sweep", "K", "--values", "1,2", "--out", str(tmp_path / "k")]) == cli.EXIT_OK
    capsys.readouterr()
    with open(tmp_path / "k" / "tiny__cf.csv", newline="") as fh:
        assert [r[:2] for r in csv.reader(fh)][1:] == [["K", "1"], ["K", "2"]]


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cfurllc.cli", "validate", "nonfading-3way"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and r.stdout.strip().endswith("valid")
