import json
import math

import pytest
import yaml

from lbguard.cli import (RESULT_COLUMNS, ConfigError, ExperimentGrid, emit_bound_report, main,
                         read_results_csv, run_grid, write_results_csv)
from lbguard.sizedist import BoundedPareto, Exponential

BASE = {"k": 3, "dist": {"name": "exponential", "mean": 1.0}, "rho": 0.6, "trials": 2,
        "jobs_per_trial": 3000, "seed": 5}


def write_cfg(tmp_path, extra):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(dict(BASE, **extra)))
    return p


def test_empty_axes_single_cell():
    grid = ExperimentGrid.from_dict(dict(BASE))
    cells = grid.cells()
    assert len(cells) == 1 and cells[0].rho == 0.6


def test_axes_product():
    grid = ExperimentGrid.from_dict(dict(BASE, rho=[0.5, 0.8], policy=["Random", "JSQ-2"],
                                         guarded=[False, True]))
    cells = grid.cells()
    assert len(cells) == 8
    assert {c.policy.label for c in cells} == {"Random", "JSQ-2"}


def test_invalid_cells_name_field():
    grid = ExperimentGrid.from_dict(dict(BASE, rho=[0.5, 1.5]))
    cells = grid.cells()
    assert isinstance(cells[1], ConfigError) and cells[1].field == "rho"
    bad = ExperimentGrid.from_dict(dict(BASE, bogus=1)).cells()[0]
    assert isinstance(bad, ConfigError) and bad.field == "bogus"
    bad = ExperimentGrid.from_dict({k: v for k, v in BASE.items() if k != "dist"}).cells()[0]
    assert bad.field == "dist"


def test_csv_round_trip(tmp_path):
    grid = ExperimentGrid.from_dict(dict(BASE, policy=["Random", "LWL"], guarded=[False, True]))
    res = run_grid(grid)
    p = tmp_path / "out.csv"
    write_results_csv(p, res)
    rows = read_results_csv(p)
    assert rows == [r.row for r in res]
    assert p.read_text().splitlines()[0] == ",".join(RESULT_COLUMNS)


def test_rerun_identical_bytes(tmp_path):
    cfg = write_cfg(tmp_path, {"policy": ["Random", "LWL"], "guarded": [False, True]})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    side = json.loads(a.with_suffix(".json").read_text())
    assert side["cells"][0]["seeds"] == [5, 6]
    assert "numpy" in side["versions"]


def test_parallel_matches_serial(tmp_path):
    cfg = write_cfg(tmp_path, {"policy": ["Random", "LWL", "JSQ"]})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["--config", str(cfg), "--out", str(a)]) == 0
    assert main(["--config", str(cfg), "--out", str(b), "--parallelism", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_flag_overrides(tmp_path):
    cfg = write_cfg(tmp_path, {})
    out = tmp_path / "o.csv"
    assert main(["--config", str(cfg), "--out", str(out), "--trials", "3", "--jobs", "2000",
                 "--seed", "9", "--assert-invariants", "off"]) == 0
    (row,) = read_results_csv(out)
    assert row["trials"] == 3 and row["jobs_per_trial"] == 2000
    side = json.loads(out.with_suffix(".json").read_text())
    assert side["cells"][0]["seeds"] == [9, 10, 11]
    assert side["cells"][0]["config"]["check_invariants"] is False


def test_exit_code_on_invalid_cell(tmp_path):
    cfg = write_cfg(tmp_path, {"rho": [0.5, 2.0]})
    out = tmp_path / "o.csv"
    assert main(["--config", str(cfg), "--out", str(out)]) == 1
    assert len(read_results_csv(out)) == 1


def test_unstable_cell_recorded(tmp_path):
    cfg = write_cfg(tmp_path, {"rho": [0.5, 0.99], "max_in_system": 8, "jobs_per_trial": 30000,
                               "k": 1})
    out = tmp_path / "o.csv"
    rc = main(["--config", str(cfg), "--out", str(out)])
    rows = read_results_csv(out)
    assert len(rows) == 2 and math.isnan(rows[1]["mean_T"])
    assert "unstable" in out.read_text()
    assert rc == 0


def test_bound_report_values():
    rows = emit_bound_report(BoundedPareto(1.5, 1, 1e6), 10, 1.0, [0.8, 0.98],
                             sim={0.8: (35.0, 1.0)})
    assert rows[0]["bound_mean"] == pytest.approx(1409.25, rel=1e-4)
    assert rows[1]["bound_mean"] == pytest.approx(4373.38, rel=1e-4)
    assert rows[0]["sim_mean_T"] <= rows[0]["bound_mean"]
    with pytest.raises(ValueError):
        emit_bound_report(Exponential(), 2, 1.0, [0.0])


def test_bounds_command(tmp_path):
    p = tmp_path / "b.yaml"
    p.write_text(yaml.safe_dump({"k": 10, "g": 1, "rho": [0.8, 0.98],
                                 "dist": {"name": "bp", "alpha": 1.5, "lower": 1, "upper": "1e6"}}))
    out = tmp_path / "b.csv"
    assert main(["bounds", "--config", str(p), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("rho,k,g,c,bound_mean") and len(lines) == 3


def test_shipped_configs_parse():
    from pathlib import Path
    for p in sorted(Path(__file__).parent.parent.joinpath("configs").glob("*.yaml")):
        cells = ExperimentGrid.load(p).cells()
        assert cells and not any(isinstance(c, ConfigError) for c in cells), p.name
