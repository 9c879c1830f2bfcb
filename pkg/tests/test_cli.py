import csv
import json
import subprocess
import sys

import pytest

from tic_solve.cli import main

FAST = ["--paths", "2000", "--steps", "50"]


def summary(out):
    return (out / "summary.txt").read_text().splitlines()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestRuns:
    def test_mv(self, tmp_path):
        code = main(["mv", "--gamma", "2", "--alpha", "0.08", "--r", "0.03", "--sigma", "0.2",
                     "--T", "1", "--out", str(tmp_path), *FAST])
        assert code == 0
        for name in ("mv_solution.csv", "mv_certify.csv", "mv_spike.csv", "summary.txt"):
            assert (tmp_path / name).exists()
        lines = summary(tmp_path)
        assert lines[0] == "command: mv"
        assert all(line.startswith("PASS") for line in lines[1:])

    def test_grid_table(self, tmp_path):
        assert main(["grid", "--example", "mv", "--nx", "101", "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "grid_solution.csv")
        assert rows[0] == ["t", "x", "V", "u_hat", "g", "V_exact", "u_hat_exact", "g_exact"]
        assert len(rows) == 1 + 3 * 101

    @pytest.mark.parametrize("command", ["lq", "mv-wealth"])
    def test_other_commands(self, tmp_path, command):
        assert main([command, "--out", str(tmp_path), *FAST]) == 0

    def test_failing_check_exits_one(self, tmp_path, capsys):
        assert main(["grid", "--nx", "9", "--nu", "3", "--out", str(tmp_path)]) == 1
        assert "value_at_0_1" in capsys.readouterr().err
        assert any(line.startswith("FAIL value_at_0_1") for line in summary(tmp_path))


class TestOutputFormat:
    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["lq", "--out", str(out), *FAST]) == 0
        for name in ("lq_solution.csv", "lq_certify.csv", "summary.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seventeen_digits(self, tmp_path):
        main(["mv", "--out", str(tmp_path), *FAST])
        rows = read_csv(tmp_path / "mv_solution.csv")
        value = rows[1][rows[0].index("V")]
        assert value == format(float(value), ".17g")
        assert b"\r\n" not in (tmp_path / "mv_solution.csv").read_bytes()


class TestConfiguration:
    def test_unknown_flag(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["mv", "--bogus", "1", "--out", str(tmp_path)])
        assert exc.value.code == 2
        err = capsys.readouterr().err
        assert err.count("\n") == 1 and "bogus" in err

    def test_bad_choice(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["discount", "--family", "weird", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_config_then_flags(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"gamma": 4.0, "sigma": 0.25}))
        out = tmp_path / "o"
        assert main(["mv", "--config", str(cfg), "--gamma", "3", "--out", str(out), *FAST]) == 0
        rows = read_csv(out / "mv_solution.csv")
        u_T = float(rows[-1][rows[0].index("u_hat")])
        assert u_T == pytest.approx(0.05 / (3 * 0.25**2))

    @pytest.mark.parametrize("payload", [{"nope": 1}, {"gamma": "x"}, [1, 2], {"gamma": [1]}])
    def test_bad_config(self, tmp_path, payload, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(payload))
        assert main(["mv", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert capsys.readouterr().err.count("\n") == 1

    def test_missing_config(self, tmp_path):
        assert main(["mv", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2

    @pytest.mark.parametrize("argv", [["mv", "--sigma", "-1"], ["mv", "--paths", "1"],
                                      ["grid", "--nt", "3"], ["cir", "--family", "hyperbolic",
                                                              "--m", "1"]])
    def test_invalid_values(self, tmp_path, argv):
        assert main([*argv, "--out", str(tmp_path)]) == 2

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "tic_solve.cli", "mv", "--nope"],
                              capture_output=True, text=True, cwd=tmp_path)
        assert proc.returncode == 2
        assert len(proc.stderr.strip().splitlines()) == 1
