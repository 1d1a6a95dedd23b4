import json

import pytest

from zrpeq.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def csv_body(text):
    lines = text.strip().splitlines()
    assert lines[0].startswith("# config: ")
    json.loads(lines[0][len("# config: "):])
    header = lines[1].split(",")
    return header, [l.split(",") for l in lines[2:]]


class TestCommands:
    def test_gc_eval_slowed_free(self, capsys):
        code, out, err = run(capsys, "gc-eval", "--weight", "slowed-free", "--b", "4", "--mu", "-1,0")
        assert code == 0
        d = json.loads(out)
        assert set(d) >= {"z", "p", "R", "cov", "membership", "trunc_error"}
        assert d["R"][0] == pytest.approx(0.5, abs=1e-3)
        assert len(err.strip().splitlines()) == 1

    def test_boundary_csv(self, capsys):
        code, out, _ = run(capsys, "boundary", "--weight", "evans-hanney", "--b", "4", "--npoints", "5")
        header, rows = csv_body(out)
        assert header == ["tilde_mu1", "tilde_mu2", "is_corner"]
        assert code == 0 and any(r[2] == "1" for r in rows)

    def test_solve_json(self, capsys):
        code, out, _ = run(capsys, "solve", "--weight", "slowed-free", "--b", "4", "--rho", "2,3")
        d = json.loads(out)
        assert code == 0 and d["phase"] == "CondensedBoth"

    def test_phase_diagram_files(self, tmp_path, capsys):
        out = tmp_path / "pd.csv"
        code, _, _ = run(capsys, "phase-diagram", "--weight", "evans-hanney", "--b", "4", "--box", "3",
                         "--res", "4", "--out", str(out))
        assert code == 0
        header, rows = csv_body(out.read_text())
        assert header[:8] == ["rho1", "rho2", "phase", "rc1", "rc2", "s", "mu1", "mu2"]
        assert len(rows) == 16
        assert "plot" in out.with_suffix(".gp").read_text()

    def test_equivalence_decreasing(self, capsys):
        code, out, _ = run(capsys, "equivalence", "--weight", "evans-hanney", "--b", "4",
                           "--rho", "0.2,0.3", "--L", "8,16,32")
        header, rows = csv_body(out)
        assert header == ["L", "N1", "N2", "h", "logZ_per_site", "ldp_residual"]
        h = [float(r[3]) for r in rows]
        assert code == 0 and h[0] > h[1] > h[2]

    def test_marginal(self, capsys):
        code, out, _ = run(capsys, "marginal", "--b", "4", "--L", "2", "--N", "1,0")
        header, rows = csv_body(out)
        assert header == ["k1", "k2", "probability"]
        assert float(rows[1][2]) == pytest.approx(0.5)

    def test_simulate_deterministic(self, tmp_path, capsys):
        args = ["simulate", "--b", "4", "--L", "6", "--N", "3,3", "--events", "20000", "--seed", "7",
                "--p", "asym:1.0"]
        s1 = tmp_path / "a.csv"
        code, out1, _ = run(capsys, *args, "--series", str(s1))
        first = s1.read_text()
        _, out2, _ = run(capsys, *args, "--series", str(s1))
        assert code == 0 and out1 == out2 and s1.read_text() == first
        assert json.loads(out1)["conserved"] is True
        header, _ = csv_body(s1.read_text())
        assert header == ["t", "M1", "M2", "argmax1", "argmax2"]

    def test_tail_rate(self, capsys):
        code, out, _ = run(capsys, "tail-rate", "--weight", "slowed-free", "--b", "4", "--mu", "-1,0",
                           "--direction", "1,1", "--radii", "25,50")
        header, rows = csv_body(out)
        assert code == 0 and len(rows) == 2

    def test_config_file(self, tmp_path, capsys):
        f = tmp_path / "c.json"
        f.write_text(json.dumps({"weight": "evans-hanney", "params": {"b": 4}, "psi": [0.5, 0.5]}))
        code, out, _ = run(capsys, "gc-eval", "--config", str(f))
        assert code == 0 and json.loads(out)["membership"] == "Interior"

    def test_weight_file(self, tmp_path, capsys):
        f = tmp_path / "w.json"
        f.write_text(json.dumps({"expression": "factorial(k1) / pochhammer(5, k1)", "tail_exponent": [4, None]}))
        code, out, _ = run(capsys, "gc-eval", "--weight", str(f), "--psi", "0.5,0")
        assert code == 0


class TestExitCodes:
    def test_unknown_weight(self, capsys):
        code, _, err = run(capsys, "gc-eval", "--weight", "nope", "--psi", "1,1")
        assert code == 2 and "UnknownName" in err

    def test_unknown_flag(self, capsys):
        code, _, _ = run(capsys, "solve", "--frobnicate")
        assert code == 2

    def test_unknown_subcommand(self, capsys):
        code, _, _ = run(capsys, "plot")
        assert code == 2

    def test_numerical_failure(self, capsys):
        code, _, err = run(capsys, "gc-eval", "--b", "2", "--psi", "2,2")
        assert code == 1 and "Diverged" in err

    def test_missing_point(self, capsys):
        code, _, _ = run(capsys, "gc-eval", "--b", "4")
        assert code == 2

    def test_config_key_rejected(self, tmp_path, capsys):
        f = tmp_path / "c.yaml"
        f.write_text("colour: red\n")
        code, _, err = run(capsys, "solve", "--config", str(f))
        assert code == 2 and "colour" in err
