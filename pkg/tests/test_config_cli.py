import json
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import yaml

from fpmr.cli import main
from fpmr.config import ConfigError, load_config, parse_config, shipped_configs
from fpmr.experiments import grid_sizes, run_experiment
from fpmr.output import read_csv, write_outputs

SHIPPED = shipped_configs()


def raw(name):
    return yaml.safe_load(SHIPPED[name].read_text())


def dump(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_all_shipped_configs_validate():
    assert {"fig2_overtone_mas", "fig3_dor_overtone", "fig5_ultrafast_desk", "fig6_deer",
            "pgse", "hard_pulse"} <= set(SHIPPED)
    for p in SHIPPED.values():
        load_config(p)


def test_fig2_parameters():
    cfg = load_config(SHIPPED["fig2_overtone_mas"])
    n = cfg.spin_system.spins[0]
    assert n.isotope == "14N" and n.quadrupole.cq_hz == 1.18e6 and n.quadrupole.eta == 0.53
    assert cfg.spin_system.field_t == 14.1 and cfg.experiment.rate_hz == 10e3
    assert cfg.experiment.both_directions


def test_fig5_parameters():
    cfg = load_config(SHIPPED["fig5_ultrafast_desk"])
    assert [s.shift_ppm for s in cfg.spin_system.spins] == [3.70, 3.92, 4.50]
    assert sorted(c.j_hz for c in cfg.spin_system.couplings) == [4, 10, 12]


def test_negative_t2_rejected_with_field_path():
    data = raw("pgse")
    data["spin_system"]["relaxation"] = {"t2_s": -1.0}
    with pytest.raises(ConfigError, match=r"spin_system\.relaxation"):
        parse_config(data)


def test_unknown_key_rejected():
    data = raw("pgse")
    data["experiment"]["gradient_mt_per_m"] = 1.0
    with pytest.raises(ConfigError, match="gradient_mt_per_m"):
        parse_config(data)


def test_yaml_error_reports_position(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("spin_system:\n  field_t: 1\n  spins: [\n")
    with pytest.raises(ConfigError, match=r"line \d+, column \d+"):
        load_config(p)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.yaml")


def test_zero_rate_mas_equals_static():
    data = raw("mas_csa")
    data["detection"]["points"] = 50
    data["experiment"]["rate_hz"] = 0.0
    mas = run_experiment(parse_config(data)).result.primary
    data["experiment"]["kind"] = "static"
    static = run_experiment(parse_config(data)).result.primary
    assert np.array_equal(mas, static)


def test_outputs_round_trip(tmp_path):
    cfg = load_config(SHIPPED["pgse"])
    report = run_experiment(cfg)
    paths = write_outputs(report, tmp_path, "pgse", ["csv", "json"], plot=True)
    csvs = [p for p in paths if p.suffix == ".csv"]
    assert csvs
    for p in csvs:
        table = report.result.tables[p.stem.removeprefix("pgse_")]
        back = read_csv(p)
        n = len(next(iter(table.values())))
        assert len(p.read_text().splitlines()) == n + 1
        for k, v in table.items():
            assert np.array_equal(np.asarray(back[k]), np.asarray(v, dtype=float))
    doc = json.loads((tmp_path / "pgse.json").read_text())
    for name, table in report.result.tables.items():
        for k, v in table.items():
            assert doc["tables"][name][k] == [float(x) for x in np.asarray(v)]
    for p in paths:
        if p.suffix == ".svg":
            assert ET.parse(p).getroot().tag.endswith("svg")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["validate", "pgse"]) == 0
    assert main(["list"]) == 0
    bad = dump(tmp_path, {"spin_system": {"field_t": -1, "spins": []}})
    assert main(["validate", str(bad)]) == 1
    assert main(["run", str(bad)]) == 1
    # valid schema, but a coupling refers to a spin that does not exist
    data = raw("pgse")
    data["spin_system"]["couplings"] = [{"spins": [0, 3], "j_hz": 5}]
    p = dump(tmp_path, data, "badspin.yaml")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 1
    # a singular resolvent is a numerical failure
    data = {"spin_system": {"field_t": 9.4, "spins": [{"isotope": "13C"}]},
            "experiment": {"kind": "static", "initial": {"operator": "x"}},
            "detection": {"domain": "frequency", "coil": {"operator": "z"},
                          "sweep": {"center_hz": 0.0, "width_hz": 10.0, "points": 3}}}
    p = dump(tmp_path, data, "singular.yaml")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    capsys.readouterr()


def test_cli_run_and_oracle_deterministic(tmp_path, capsys):
    data = raw("mas_csa")
    data["detection"]["points"] = 40
    p = dump(tmp_path, data, "small.yaml")
    out = tmp_path / "o"
    assert main(["run", str(p), "--out", str(out), "--format", "csv", "--format", "json"]) == 0
    first = (out / "small_fid.csv").read_bytes()
    assert main(["run", str(p), "--out", str(out), "--format", "csv"]) == 0
    assert (out / "small_fid.csv").read_bytes() == first
    assert main(["oracle", str(p), "--out", str(out)]) == 0
    fp = read_csv(out / "small_fid.csv")
    orc = read_csv(out / "small_oracle_fid.csv")
    diff = np.hypot(np.subtract(fp["real"], orc["real"]), np.subtract(fp["imag"], orc["imag"]))
    assert diff.max() < 0.01 * np.hypot(fp["real"], fp["imag"]).max()
    capsys.readouterr()


def test_oracle_unsupported_kind(tmp_path, capsys):
    assert main(["oracle", "pgse", "--out", str(tmp_path)]) == 1
    assert "time-sliced reference" in capsys.readouterr().err


def test_convergence_history_capped():
    data = raw("mas_csa")
    data["detection"]["points"] = 20
    data["experiment"]["rotor_points"] = 4
    data["convergence"] = {"tolerance": 1e-14, "max_doublings": 2}
    cfg = parse_config(data)
    report = run_experiment(cfg, converge=1e-14)
    # base grid plus at most max_doublings refinements
    assert len(report.convergence) == 3
    assert report.converged is False
    assert report.convergence[0]["change"] is None
    assert all(np.isfinite(h["change"]) for h in report.convergence[1:])
    grids = [h["grids"]["rotor_points"] for h in report.convergence]
    assert grids == [4, 8, 16] and grids[0] == grid_sizes(cfg)["rotor_points"]


def test_deer_trace_length():
    report = run_experiment(load_config(SHIPPED["fig6_deer"]))
    trace = report.result.tables["trace"]
    assert len(trace["pump_position_s"]) == 100
    assert np.all(np.isfinite(trace["echo_real"]))


def test_hard_pulse_profile():
    report = run_experiment(load_config(SHIPPED["hard_pulse"]))
    prof = report.result.tables["profile"]
    assert np.abs(np.asarray(prof["my"]) + 0.5).max() < 1e-3
    assert np.abs(np.asarray(prof["mx"])).max() < 1e-3
    assert np.abs(np.asarray(prof["mz"])).max() < 1e-3


BUDGET_S = {
    "hard_pulse": 5, "pgse": 5, "mas_csa": 5, "fig6_deer": 60, "deer_resonant_desk": 60,
    "fig2_overtone_mas": 120, "fig3_dor_overtone": 120, "fig5_ultrafast_desk": 180,
    "overtone_cp_desk": 300,
}


@pytest.mark.parametrize("name", sorted(SHIPPED))
def test_shipped_config_runs_within_budget(name, tmp_path):
    cfg = load_config(SHIPPED[name])
    t0 = time.perf_counter()
    report = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    assert report.result.tables
    for table in report.result.tables.values():
        for col in table.values():
            assert np.all(np.isfinite(np.asarray(col, dtype=float)))
    assert elapsed < BUDGET_S[name], f"{name} took {elapsed:.1f} s"
