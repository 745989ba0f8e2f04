import json
import os
import subprocess
import sys

import pytest

from hybridcert.cli import EXIT_NUMERIC, EXIT_OK, EXIT_PARAMETER, EXIT_VERIFY_FAILED, main

QUANTILE_AT_0_9 = 1.281551565544600467
SMALL_VERIFY = ["--quad-configs", "3", "--mc-configs", "5", "--mc-samples", "2000", "--knapsack-inputs", "50"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def strip_timestamp(text):
    return "\n".join(line for line in text.splitlines() if not line.startswith("# generated_at:"))


def csv_rows(text):
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


class TestCertify:
    def test_gaussian_limit(self, capsys):
        code, out, _ = run(capsys, "certify", "--pa", "0.9", "--sigma", "1", "--kernel", "uniform",
                           "--beta", "0.5", "--vocab", "3", "--d", "0", "--tau", "0.5")
        rec = json.loads(out)
        assert code == EXIT_OK
        assert rec["certified"]
        assert QUANTILE_AT_0_9 - 1e-4 <= rec["radius"] <= QUANTILE_AT_0_9
        assert rec["config"]["pa"] == 0.9

    def test_degenerate(self, capsys):
        code, out, _ = run(capsys, "certify", "--pa", "0.7", "--kernel", "absorbing", "--beta", "0.5",
                           "--d", "2", "--tau", "1e-4")
        rec = json.loads(out)
        assert code == EXIT_OK
        assert not rec["certified"] and rec["radius"] == 0.0

    def test_counts_use_clopper_pearson(self, capsys):
        code, out, _ = run(capsys, "certify", "--n", "100", "--k", "100", "--alpha", "0.01")
        assert code == EXIT_OK
        assert json.loads(out)["p_a_lower"] == pytest.approx(0.954992586021436, rel=1e-14)

    def test_conflicting_sources(self, capsys):
        code, _, err = run(capsys, "certify", "--pa", "0.9", "--n", "10", "--k", "9")
        assert code == EXIT_PARAMETER
        assert "either" in err

    def test_bad_probability(self, capsys):
        assert run(capsys, "certify", "--pa", "1.5")[0] == EXIT_PARAMETER

    def test_unknown_flag(self, capsys):
        assert run(capsys, "certify", "--bogus")[0] == EXIT_PARAMETER

    def test_dump_groups(self, capsys):
        _, out, _ = run(capsys, "certify", "--pa", "0.9", "--beta", "0.5", "--vocab", "3", "--d", "1",
                        "--dump-groups")
        assert len(json.loads(out)["groups"]) == 3

    def test_numeric_error_exit_code(self, capsys, monkeypatch):
        from hybridcert import cli
        from hybridcert.errors import BracketError

        def boom(*a, **k):
            raise BracketError("no bracket")
        monkeypatch.setattr(cli, "certified_radius", boom)
        assert run(capsys, "certify", "--pa", "0.9")[0] == EXIT_NUMERIC

    def test_config_file_and_override(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"pa": 0.9, "sigma": 2.0}))
        _, out, _ = run(capsys, "certify", "--config", str(cfg), "--sigma", "1")
        rec = json.loads(out)
        assert rec["config"]["sigma"] == 1.0
        assert rec["config"]["pa"] == 0.9

    def test_artifact_replay(self, capsys, tmp_path):
        first = tmp_path / "a.json"
        second = tmp_path / "b.json"
        run(capsys, "certify", "--pa", "0.95", "--d", "2", "--beta", "0.25", "--vocab", "5", "-o", str(first))
        run(capsys, "certify", "--config", str(first), "-o", str(second))
        assert first.read_bytes() == second.read_bytes()

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"pa": 0.9, "colour": "red"}))
        assert run(capsys, "certify", "--config", str(cfg))[0] == EXIT_PARAMETER


class TestFrontier:
    def test_rows_monotone(self, capsys):
        code, out, _ = run(capsys, "frontier", "--pa", "0.99", "--beta", "0.1", "--vocab", "20",
                           "--d-list", "0..3")
        rows = csv_rows(out)
        assert code == EXIT_OK
        assert [int(r["d"]) for r in rows] == [0, 1, 2, 3]
        radii = [float(r["radius"]) for r in rows]
        assert all(a >= b for a, b in zip(radii, radii[1:]))

    def test_smaller_tau_gives_larger_radii(self, capsys):
        args = ["frontier", "--pa", "0.99", "--beta", "0.1", "--vocab", "20", "--d-max", "3"]
        a = csv_rows(run(capsys, *args, "--tau", "0.5")[1])
        b = csv_rows(run(capsys, *args, "--tau", "0.25")[1])
        assert all(float(y["radius"]) >= float(x["radius"]) for x, y in zip(a, b))

    def test_empty_list(self, capsys):
        assert run(capsys, "frontier", "--pa", "0.9", "--d-list", "")[0] == EXIT_PARAMETER

    def test_missing_budget(self, capsys):
        assert run(capsys, "frontier", "--pa", "0.9")[0] == EXIT_PARAMETER

    def test_plot_data(self, capsys):
        _, out, _ = run(capsys, "frontier", "--pa", "0.9", "--d-max", "1", "--plot-data")
        assert "series,x,y" in out

    def test_header_lines(self, capsys):
        _, out, _ = run(capsys, "frontier", "--pa", "0.9", "--d-max", "1")
        assert any(line.startswith("# generated_at:") for line in out.splitlines())
        assert any(line.startswith("# config:") for line in out.splitlines())


class TestSweep:
    def test_synthetic(self, capsys):
        code, out, _ = run(capsys, "sweep", "--n-examples", "10", "--n-samples", "300", "--eps-max", "1",
                           "--eps-step", "0.5", "--seed", "3")
        rows = csv_rows(out)
        assert code == EXIT_OK
        assert list(rows[0]) == ["d", "epsilon", "certified_fraction", "n_examples", "sigma", "beta", "tau", "seed"]
        assert len(rows) == 9

    def test_replay_byte_identical(self, capsys, tmp_path):
        first, second = tmp_path / "s1.csv", tmp_path / "s2.csv"
        run(capsys, "sweep", "--n-examples", "8", "--n-samples", "200", "--seed", "4", "-o", str(first))
        run(capsys, "sweep", "--config", str(first), "-o", str(second))
        assert strip_timestamp(first.read_text()) == strip_timestamp(second.read_text())

    def test_seed_from_environment(self, capsys, monkeypatch):
        monkeypatch.setenv("HYBRIDCERT_SEED", "11")
        _, out, _ = run(capsys, "sweep", "--n-examples", "4", "--n-samples", "100", "--eps-max", "0")
        assert csv_rows(out)[0]["seed"] == "11"

    def test_csv_input(self, capsys, data_dir):
        code, out, _ = run(capsys, "sweep", "--csv", os.path.join(data_dir, "adult_header.csv"),
                           "--categorical", "race,sex", "--continuous", "age,hours-per-week",
                           "--label", "income", "--n-samples", "200", "--d-list", "0,1", "--eps-max", "0.5")
        assert code == EXIT_OK
        # the row with "?" is kept: its missing cells are in unused columns
        assert csv_rows(out)[0]["n_examples"] == "13"

    def test_csv_missing_column(self, capsys, data_dir):
        code, _, err = run(capsys, "sweep", "--csv", os.path.join(data_dir, "adult_header.csv"),
                           "--categorical", "colour", "--label", "income")
        assert code == EXIT_PARAMETER
        assert "colour" in err


class TestVerify:
    def test_small_grid_passes(self, capsys):
        code, out, _ = run(capsys, "verify", *SMALL_VERIFY)
        assert code == EXIT_OK
        assert out.count("[PASS]") == 4

    def test_zero_samples(self, capsys):
        assert run(capsys, "verify", "--mc-samples", "0")[0] == EXIT_PARAMETER

    def test_injected_fault_fails(self, capsys):
        code, out, _ = run(capsys, "verify", *SMALL_VERIFY, "--perturb-phi", "1e-3")
        assert code == EXIT_VERIFY_FAILED
        assert "[FAIL] quadrature" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hybridcert", "certify", "--pa", "0.9"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert json.loads(res.stdout)["certified"]
