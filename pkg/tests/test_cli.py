import csv
import json

import numpy as np
import pytest

from prescribed_ricci import cli

FLAT = """
[geometry]
kind = flat_slab
resolution = 8, 8, 9

[problem]
family = ricci
lambda_shift = 1.0
"""


def write_cfg(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return str(path)


def run(tmp_path, command, text, *extra):
    out = tmp_path / "out"
    code = cli.main([command, "--config", write_cfg(tmp_path, text), "--output", str(out), *extra])
    return code, out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_load_config_defaults_and_types():
    cfg = cli.load_config(text=FLAT)
    assert cfg["geometry"]["resolution"] == (8, 8, 9)
    assert cfg["solver"]["method"] == "chord"
    assert cfg["converge"]["resolutions"] == [(8, 8, 9), (8, 8, 17), (8, 8, 33)]


@pytest.mark.parametrize(
    "extra",
    [
        "[bogus]\nx = 1\n",
        "[solver]\nmystery = 1\n",
        "[solver]\nmethod = bisection\n",
        "[solver]\ntol = abc\n",
        "[problem.target]\nkind = conformal_scaling\n[geometry]\nkind = hyperbolic_slab\n",
    ],
)
def test_config_errors_exit_1(tmp_path, extra):
    text = FLAT.replace("[geometry]\nkind = flat_slab\nresolution = 8, 8, 9", "") if "[geometry]" in extra else FLAT
    code, _ = run(tmp_path, "solve", text + extra)
    assert code == cli.EXIT_CONFIG


def test_excluded_coefficient_and_missing_file(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.load_config(text=FLAT.replace("lambda_shift = 1.0", "lambda_shift = 1.0\na = -1.0"))
    assert cli.main(["verify", "--config", str(tmp_path / "nope.ini")]) == cli.EXIT_CONFIG


def test_hypothesis_violation_exit_2(tmp_path):
    text = FLAT.replace("flat_slab", "hyperbolic_slab").replace("lambda_shift = 1.0", "lambda_shift = 2.0")
    code, _ = run(tmp_path, "solve", text)
    assert code == cli.EXIT_HYPOTHESIS


def test_spectrum_outputs(tmp_path):
    code, out = run(tmp_path, "spectrum", FLAT + "[spectrum]\nk = 2\n")
    assert code == 0
    rows = read_rows(out / "eigenvalues.csv")
    assert len(rows) > 1
    margins = json.loads((out / "margins.json").read_text())
    assert margins["flagged"] is False


def test_spectrum_k_zero_header_only(tmp_path):
    code, out = run(tmp_path, "spectrum", FLAT + "[spectrum]\nk = 0\n")
    assert code == 0
    assert len(read_rows(out / "eigenvalues.csv")) == 1


def test_solve_zero_target(tmp_path):
    code, out = run(tmp_path, "solve", FLAT)
    assert code == 0
    rows = read_rows(out / "solution.csv")
    assert rows[0] == ["node_index", "i", "j", "value"]
    assert len(rows) == 1 + 6 * 8 * 8 * 9
    assert all(float(r[3]) == 0.0 for r in rows[1:])
    report = json.loads((out / "solve_report.json").read_text())
    assert report["converged"] and report["extra"]["h_error_sup"] == 0.0


def test_solve_conformal_scaling(tmp_path):
    text = FLAT + "[problem.target]\nkind = conformal_scaling\nepsilon = 1e-3\n[solver]\ntol = 1e-12\n"
    code, out = run(tmp_path, "solve", text)
    assert code == 0
    report = json.loads((out / "solve_report.json").read_text())
    assert report["extra"]["h_error_sup"] < 1e-10
    # g-norm of eps * g in dimension 3
    assert report["extra"]["amplitude"] == pytest.approx(np.sqrt(3) * 1e-3)


def test_solve_manufactured_reports_error(tmp_path):
    text = FLAT.replace("flat_slab", "hyperbolic_slab").replace("8, 8, 9", "8, 8, 17")
    code, out = run(tmp_path, "solve", text + "[problem.target]\nkind = manufactured\namplitude = 3e-4\n")
    assert code == 0
    report = json.loads((out / "solve_report.json").read_text())
    assert 0 < report["extra"]["h_error_sup"] < 1e-3


def test_solve_divergence_exit_3(tmp_path):
    text = FLAT.replace("flat_slab", "hyperbolic_slab") + (
        "[problem.target]\nkind = manufactured\nhstar = traceless_fourier\namplitude = 0.3\n"
        "[solver]\nepsilon_cap = 10\nmax_iter = 2\n"
    )
    code, out = run(tmp_path, "solve", text)
    assert code == cli.EXIT_DIVERGENCE
    assert (out / "solve_report.json").exists()


def test_verify_pass_and_flip(tmp_path):
    code, out = run(tmp_path, "verify", FLAT)
    assert code == 0
    report = json.loads((out / "verify.json").read_text())
    assert report["all_pass"]
    hyp = FLAT.replace("flat_slab", "hyperbolic_slab")
    code, _ = run(tmp_path, "verify", hyp + "[verify]\nflip_mean_curvature = true\n")
    assert code == cli.EXIT_VERIFY


def test_converge_writes_table(tmp_path):
    text = FLAT.replace("flat_slab", "hyperbolic_slab") + "[converge]\nresolutions = 8,8,9; 8,8,17; 8,8,33\n"
    code, out = run(tmp_path, "converge", text)
    assert code == 0
    rows = read_rows(out / "convergence.csv")
    assert rows[0] == ["quantity", "resolution", "error", "order"]
    assert len(rows) == 4
    errors = np.array([float(r[2]) for r in rows[1:]])
    assert np.all(np.diff(errors) < 0)


def test_converge_bad_resolutions(tmp_path):
    code, _ = run(tmp_path, "converge", FLAT + "[converge]\nresolutions = 8,8,9; 8,8,17\n")
    assert code == cli.EXIT_CONFIG
