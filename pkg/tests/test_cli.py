import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qgmix.cli import main

SMALL = ["--n", "100", "--d", "4", "--reps", "3", "--seed", "5", "--bootstraps", "10"]


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_all_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--scenario", "1", *SMALL, "--out", str(out)]) == 0
    summary = read_csv(out / "summary.csv")
    assert {r["method"] for r in summary} == {"qgcomp", "wqs"}
    for col in ("bias", "mcse", "rmvar", "coverage", "power", "n_failed"):
        assert col in summary[0]
    reps = read_csv(out / "replications.csv")
    assert len(reps) == 6
    meta = json.loads((out / "run_metadata.json").read_text())
    assert meta["seed"] == 5 and meta["qgcomp_bootstrap"] == 10 and meta["wqs_bootstrap"] == 10
    assert "x1x2" in meta["cells"][0]["realized_correlation"]
    assert "version" in meta


def test_rerun_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--scenario", "7", *SMALL, "--out", str(tmp_path / name)]) == 0
    for f in ("replications.csv", "summary.csv", "run_metadata.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_report_round_trip(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--scenario", "3", *SMALL, "--out", str(out)]) == 0
    original = (out / "summary.csv").read_bytes()
    assert main(["report", "--results", str(out), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "summary.csv").read_bytes() == original


def test_markdown_format(tmp_path):
    assert main(["simulate", "--scenario", "1", *SMALL, "--format", "markdown", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "summary.md").read_text()
    assert text.startswith("|") and "coverage" in text


def test_figure_data_for_scenario_five(tmp_path):
    args = ["simulate", "--scenario", "5", "--n", "100", "--reps", "2", "--bootstraps", "10",
            "--beta2=-0.2,-0.05", "--rho", "0,0.4", "--emit-figure-data", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = read_csv(tmp_path / "figure_data.csv")
    variants = {r["variant"] for r in rows}
    assert len(variants) == 4
    assert {r["component"] for r in rows} == {"psi1", "beta1"}
    r = rows[0]
    assert float(r["bias"]) == pytest.approx(float(r["estimate"]) - float(r["truth"]))


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": 1, "n": 100, "reps": 4, "seed": 9, "bootstraps": 10,
                               "methods": "qgcomp", "out": str(tmp_path / "from_cfg")}))
    assert main(["simulate", "--config", str(cfg), "--reps", "2"]) == 0
    meta = json.loads((tmp_path / "from_cfg" / "run_metadata.json").read_text())
    assert meta["reps"] == 2 and meta["seed"] == 9 and meta["methods"] == ["qgcomp"]


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": 1, "colour": "red"}))
    assert main(["simulate", "--config", str(cfg)]) == 1


def test_env_var_sets_output_directory(tmp_path, monkeypatch):
    monkeypatch.setenv("QGMIX_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--scenario", "1", *SMALL, "--methods", "qgcomp"]) == 0
    assert (tmp_path / "env" / "summary.csv").exists()
    assert main(["simulate", "--scenario", "1", *SMALL, "--methods", "qgcomp",
                 "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "summary.csv").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["simulate"],
    ["simulate", "--scenario", "9"],
    ["simulate", "--scenario", "1", "--methods", "lasso"],
    ["simulate", "--scenario", "1", "--bogus"],
    ["fit", "--data", "x.csv"],
])
def test_usage_errors(argv, tmp_path, capsys):
    assert main([*argv, "--out", str(tmp_path)] if argv else argv) == 1
    assert "usage error" in capsys.readouterr().err


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "--scenario", "1", *SMALL, "--out", str(blocker / "sub")]) == 2


def test_fit_large_sample_example(tmp_path):
    rng = np.random.default_rng(0)
    n = 20_000
    X = rng.integers(0, 4, (n, 4))
    y = X @ [2.5, 1.25, 0.75, 0.5] + rng.normal(size=n)
    data = tmp_path / "d.csv"
    write_csv(data, ["y", "a", "b", "c", "e"], np.column_stack([y, X]).tolist())
    assert main(["fit", "--data", str(data), "--outcome", "y", "--exposures", "a,b,c,e",
                 "--out", str(tmp_path / "fit")]) == 0
    report = json.loads((tmp_path / "fit" / "fit_report.json").read_text())
    assert report["qgcomp"]["psi"][0] == pytest.approx(5.0, abs=0.05)
    assert report["wqs"]["psi"][0] == pytest.approx(5.0, abs=0.05)
    assert report["wqs"]["weights"]["a"] == pytest.approx(0.5, abs=0.01)
    assert report["qgcomp"]["weights_positive"]["e"] == pytest.approx(0.1, abs=0.01)
    assert set(report["cutpoints"]) == {"a", "b", "c", "e"}
    assert len(read_csv(tmp_path / "fit" / "fit_summary.csv")) == 2


def test_fit_single_exposure(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.normal(size=300)
    data = tmp_path / "d.csv"
    write_csv(data, ["y", "x"], np.column_stack([x + rng.normal(size=300), x]).tolist())
    assert main(["fit", "--data", str(data), "--outcome", "y", "--exposures", "x",
                 "--out", str(tmp_path / "fit")]) == 0
    report = json.loads((tmp_path / "fit" / "fit_report.json").read_text())
    assert report["wqs"]["weights"] == {"x": 1.0}
    assert report["qgcomp"]["weights_positive"] == {"x": 1.0}


def test_fit_constant_exposure_names_column(tmp_path, capsys):
    rng = np.random.default_rng(2)
    data = tmp_path / "d.csv"
    write_csv(data, ["y", "a", "flat"], [[float(v), float(a), 1.0] for v, a in
                                         zip(rng.normal(size=50), rng.normal(size=50))])
    assert main(["fit", "--data", str(data), "--outcome", "y", "--exposures", "a,flat",
                 "--out", str(tmp_path / "fit")]) == 3
    assert "flat" in capsys.readouterr().err


def test_fit_parse_error_reports_line(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("y,a\n1.0,2.0\n2.0,oops\n3.0,4.0\n")
    assert main(["fit", "--data", str(data), "--outcome", "y", "--exposures", "a",
                 "--out", str(tmp_path / "fit")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_fit_missing_column(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("y,a\n1.0,2.0\n")
    assert main(["fit", "--data", str(data), "--outcome", "y", "--exposures", "b",
                 "--out", str(tmp_path / "fit")]) == 2
    assert "'b'" in capsys.readouterr().err


def test_fit_logit_requires_binary_outcome(tmp_path):
    data = tmp_path / "d.csv"
    write_csv(data, ["y", "a"], [[0.5 * i, i % 4] for i in range(40)])
    assert main(["fit", "--data", str(data), "--outcome", "y", "--exposures", "a", "--link", "logit",
                 "--methods", "qgcomp", "--out", str(tmp_path / "fit")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qgmix", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "qgmix" in proc.stdout
