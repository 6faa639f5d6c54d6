import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nashbcd import harness
from nashbcd.__main__ import main
from nashbcd.harness import (
    CSV_HEADER,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_UNKNOWN,
    EXIT_VIOLATION,
    ConfigError,
    ExperimentConfig,
    UnknownNameError,
    format_number,
    gradcheck,
    parse_config_text,
    parse_value,
)
from nashbcd.problems import PROBLEM_NAMES
from nashbcd.solvers import VARIANTS

from helpers import broken_gradient


def write_config(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# config format


def test_parse_values():
    assert parse_value("3") == 3
    assert parse_value("0.25") == 0.25
    assert parse_value("1e-3") == 1e-3
    assert parse_value("true") is True
    assert parse_value("none") is None
    assert parse_value("rbcd") == "rbcd"
    assert parse_value("rbcd, a_rbcd") == ["rbcd", "a_rbcd"]
    assert parse_value("7,") == [7]
    assert parse_value("1..4") == [1, 2, 3, 4]


def test_bad_range():
    with pytest.raises(ConfigError):
        parse_value("a..b")


def test_comments_and_blank_lines():
    d = parse_config_text("# header\n\nproblem.name = f4  # inline\ncournot.a = 10\n")
    assert d == {"problem.name": "f4", "cournot.a": 10}


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("alpha = 1\nalpha = 2\n")


def test_line_without_equals_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("problem.name f4\n")


def test_family_prefixed_parameters():
    cfg = ExperimentConfig.from_text("problem.name = cournot-linear\ncournot.a = 12\ncournot.n = 3\n")
    assert cfg.problem_params == {"a": 12, "n": 3}
    spec = harness.build_problem(cfg)
    assert spec.game.n == 3


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("problem.name = f4\nsolver.alfa = 0.1\n")


def test_missing_problem_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("alpha = 0.1\n")


def test_unknown_variant_rejected():
    with pytest.raises(UnknownNameError):
        ExperimentConfig.from_text("problem.name = f4\nvariants = rbcd, newton\n")


def test_bad_solver_value_is_config_error():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("problem.name = f4\nsolver.alpha = -1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("problem.name = f4\nsolver.T = 2.5\n")


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(
    problem=st.sampled_from(["f1", "f4", "f6", "resource", "saddle"]),
    variants=st.lists(st.sampled_from(VARIANTS), min_size=1, max_size=3, unique=True),
    seeds=st.lists(st.integers(0, 10**6), min_size=1, max_size=5),
    alpha=st.floats(1e-6, 1.0, allow_nan=False),
    beta=st.none() | st.floats(1e-6, 1.0, allow_nan=False),
    gamma=st.floats(0.0, 0.999, allow_nan=False),
    C=st.floats(1e-6, 100.0, allow_nan=False),
    T=st.integers(0, 10**5),
    T_prime=st.integers(0, 1000),
    x0=st.none() | st.lists(finite, min_size=2, max_size=2),
)
def test_config_round_trip(problem, variants, seeds, alpha, beta, gamma, C, T, T_prime, x0):
    cfg = ExperimentConfig(problem=problem, variants=variants, seeds=seeds, alpha=alpha, beta=beta,
                           gamma=gamma, C=C, T=T, T_prime=T_prime, x0=x0, output_dir="runs/a")
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.to_text() == cfg.to_text()


def test_round_trip_with_problem_params():
    cfg = ExperimentConfig(problem="cournot-linear", problem_params={"a": 10.0, "b": 1.0, "n": 2})
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg


# numbers and CSV


def test_format_number_round_trips():
    for v in (0.1, 1 / 3, 1e-300, 123456789.123456789, -2.5e17):
        assert float(format_number(v)) == v
    assert format_number(None) == ""


def test_run_writes_csv_and_summary(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f4\nvariants = rbcd, ia_rbcd\nseeds = 1..2\nsolver.T = 100\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.txt", "summary.json", "trace_ia_rbcd_seed1.csv", "trace_ia_rbcd_seed2.csv",
                     "trace_rbcd_seed1.csv", "trace_rbcd_seed2.csv"]
    rows = read_csv(out / "trace_rbcd_seed1.csv")
    assert tuple(rows[0]) == CSV_HEADER
    iters = [int(r[0]) for r in rows[1:]]
    assert iters == sorted(iters) and iters[0] == 0
    # block numbers are 1-based; 0 marks the initial record
    assert rows[1][1] == "0" and all(r[1] in ("1", "2") for r in rows[2:])
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["runs"]) == 4
    for r in summary["runs"]:
        assert {"final_gap", "final_residual", "rate_fit", "case_histogram"} <= set(r)
    ia = [r for r in summary["runs"] if r["variant"] == "ia_rbcd"]
    assert all(set(r["case_histogram"]) <= {"Case1", "Case2", "Case3", "converged"} for r in ia)


def test_run_config_copy_reloads(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f6\nsolver.T = 10\nseeds = 3,\n")
    out = tmp_path / "o"
    main(["run", "--config", cfg, "--out", str(out)])
    assert harness.load_config(out / "config.txt") == harness.load_config(cfg)


def test_zero_iterations_gives_initial_record_only(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f4\nsolver.T = 0\nseeds = 5,\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "trace_rbcd_seed5.csv")
    assert len(rows) == 2 and rows[1][0] == "0"


def test_csv_numbers_have_17_digits(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f6\nsolver.T = 20\nx0 = 0.3, -0.7\n")
    out = tmp_path / "out"
    main(["run", "--config", cfg, "--out", str(out)])
    rows = read_csv(out / "trace_rbcd_seed0.csv")
    g0 = float(rows[1][4])
    # f6 gap at (0.3, -0.7): f1 term 0.3^2, f2 term 0.4^2
    assert g0 == pytest.approx(0.09 + 0.16, rel=1e-15)
    assert rows[1][4] == "%.17g" % g0


def test_seed_flag_overrides(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f4\nseeds = 1..5\nsolver.T = 10\n")
    out = tmp_path / "out"
    main(["run", "--config", cfg, "--out", str(out), "--seed", "9"])
    assert sorted(p.name for p in out.glob("*.csv")) == ["trace_rbcd_seed9.csv"]


def test_byte_identical_reruns(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f2\nvariants = rbcd, ia_rbcd, a_rbcd\nseeds = 4,\n"
                                 "solver.T = 300\nsolver.T_prime = 20\nsolver.alpha = 0.01\n")
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", cfg, "--out", str(a)])
    main(["run", "--config", cfg, "--out", str(b)])
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_f4_rbcd_twenty_seeds_linear(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f4\nvariants = rbcd\nsolver.T = 500\nseeds = 1..20\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert len(list(out.glob("*.csv"))) == 20
    runs = json.loads((out / "summary.json").read_text())["runs"]
    assert all(r["rate_fit"]["kind"] == "linear" for r in runs)


@pytest.mark.slow
def test_saddle_run_separates_solvers(tmp_path):
    cfg = write_config(tmp_path, "problem.name = saddle\nvariants = a_rbcd, rbcd, bm2\nseeds = 1..3\n"
                                 "solver.T = 2000\nsolver.alpha = 0.02\nsolver.beta = 0.2\nsolver.T_prime = 30\n")
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    runs = json.loads((out / "summary.json").read_text())["runs"]
    for r in runs:
        if r["variant"] == "a_rbcd":
            assert r["final_residual"] <= 1e-6
        if r["variant"] == "rbcd":
            assert r["rate_fit"]["kind"] in ("diverged", "stalled")


# exit codes


def test_missing_config_file_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG
    assert "config" in capsys.readouterr().err


def test_malformed_config_exit_2(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f4\nthis line is wrong\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_x0_wrong_size_exit_2(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f4\nx0 = 1, 2, 3\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_abr_budget_needed_without_constants(tmp_path):
    cfg = write_config(tmp_path, "problem.name = saddle\nvariants = a_rbcd\nsolver.T = 5\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_unknown_problem_exit_3(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f99\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_UNKNOWN


def test_unknown_variant_exit_3(tmp_path):
    cfg = write_config(tmp_path, "problem.name = f4\nvariants = sgd\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_UNKNOWN


def test_unknown_verify_scope_exit_3():
    assert main(["verify", "nonsense"]) == EXIT_UNKNOWN


def test_unknown_gradcheck_problem_exit_3():
    assert main(["gradcheck", "nonsense"]) == EXIT_UNKNOWN


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    text = capsys.readouterr().out
    for name in PROBLEM_NAMES:
        assert name in text
    for v in VARIANTS:
        assert v in text


# verify


def test_verify_resource_passes(capsys):
    assert main(["verify", "resource"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["checks"]
    assert {c["problem"] for c in report["checks"]} == {"resource"}


def test_verify_lq_counterexample(capsys):
    assert main(["verify", "lq-counterexample"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    costs = report["checks"][0]["costs"]
    assert math.isfinite(costs[0]) and math.isfinite(costs[1]) and costs[2] == "inf"


def test_verify_writes_report(tmp_path, capsys):
    main(["verify", "f6", "--out", str(tmp_path)])
    report = json.loads((tmp_path / "verify_f6.json").read_text())
    assert report["passed"]


def test_verify_violation_exit_4(monkeypatch, capsys):
    def failing():
        return harness.Check("sandwich", "f4", False, {"violations": [{"x": [1.0, 2.0]}]})

    monkeypatch.setattr(harness, "_battery", lambda: [("sandwich", "f4", failing)])
    assert main(["verify", "sandwich"]) == EXIT_VIOLATION
    report = json.loads(capsys.readouterr().out)
    assert report["checks"][0]["violations"][0]["x"] == [1.0, 2.0]


# gradcheck


def test_gradcheck_broken_double_reports_worst_coordinate():
    rows = gradcheck(broken_gradient(), 20, 0)
    assert not rows[0].passed
    assert rows[0].worst_coordinate == 1
    assert rows[0].worst_x is not None


def test_gradcheck_broken_table():
    rows = gradcheck(broken_gradient(), 20, 0)
    text = harness.format_gradcheck("broken", rows)
    assert "FAIL" in text and "worst point" in text


def test_gradcheck_zero_samples_warns():
    with pytest.warns(UserWarning):
        rows = gradcheck(broken_gradient(), 0, 0)
    assert all(r.passed for r in rows)


def test_gradcheck_zero_samples_cli(recwarn):
    assert main(["gradcheck", "f4", "--samples", "0"]) == EXIT_OK
    assert any("vacuous" in str(w.message) for w in recwarn)


def test_gradcheck_negative_samples_exit_2():
    assert main(["gradcheck", "f4", "--samples", "-1"]) == EXIT_CONFIG


def test_gradcheck_failure_exit_4(monkeypatch):
    monkeypatch.setattr(harness, "registry_get", lambda name: broken_gradient())
    assert harness.cmd_gradcheck("broken", 10, 0) == EXIT_VIOLATION


@pytest.mark.parametrize("name", ["f1", "f4", "saddle", "cournot-linear"])
def test_gradcheck_registered_problem(name):
    assert all(r.passed for r in gradcheck(harness.registry_get(name), 30, 1))


def test_start_point_independent_of_block_stream():
    spec = harness.registry_get("f4")
    cfg = ExperimentConfig(problem="f4")
    a = harness.start_point(spec, cfg, 3)
    b = harness.start_point(spec, cfg, 3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, harness.start_point(spec, cfg, 4))
