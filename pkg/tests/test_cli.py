import numpy as np
import pytest

from topksum import bench, cli


def parse(out):
    return dict(line.split("=", 1) for line in out.strip().splitlines())


@pytest.fixture
def three(tmp_path):
    path = tmp_path / "three.csv"
    path.write_text("4\n3\n1")
    return str(path)


class TestProject:
    def test_three_entries(self, three, capsys):
        assert cli.main(["project", "--input", three, "--k", "2", "--r", "5"]) == 0
        out = parse(capsys.readouterr().out)
        assert out["u_star"] == "3" and out["l_star"] == "2"
        assert out["lam"] == "1" and out["n"] == "3"

    @pytest.mark.parametrize("algo", ["eips", "sorted", "grid"])
    def test_algorithms_agree(self, three, tmp_path, capsys, algo):
        dest = tmp_path / "x.txt"
        status = cli.main(["project", "--input", three, "--k", "2", "--r", "5", "--algo", algo,
                           "--out", str(dest)])
        assert status == 0
        np.testing.assert_allclose(bench.read_vector(dest), [3, 2, 1], atol=1e-12)

    def test_generated_feasible(self, capsys):
        args = ["project", "--n", "1000", "--seed", "7", "--tau-k", "0.1", "--tau-r", "2.0"]
        assert cli.main(args) == 0
        out = parse(capsys.readouterr().out)
        assert out["flag"] == "0" and out["k"] == "100" and out["gsearch_passes"] == "0"

    def test_k_zero(self, three, capsys):
        assert cli.main(["project", "--input", three, "--k", "0", "--r", "5"]) == 2
        assert "k must satisfy" in capsys.readouterr().err

    @pytest.mark.parametrize("extra", [["--tau-k", "0"], ["--k", "4"]])
    def test_infeasible_parameters(self, three, capsys, extra):
        assert cli.main(["project", "--input", three, *extra, "--r", "1"]) == 2

    def test_malformed_file(self, tmp_path, capsys):
        path = tmp_path / "bad.txt"
        path.write_text("1\n2\nx2\n")
        assert cli.main(["project", "--input", str(path), "--k", "1", "--r", "0"]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        args = ["project", "--input", str(tmp_path / "none"), "--k", "1", "--r", "0"]
        assert cli.main(args) == 2

    def test_verify(self, capsys):
        args = ["project", "--n", "500", "--seed", "3", "--tau-k", "0.2", "--tau-r", "0.7",
                "--verify"]
        assert cli.main(args) == 0
        out = parse(capsys.readouterr().out)
        assert out["kkt_pass"] == "true" and out["oracle_pass"] == "true"

    def test_verify_skips_oracle_when_large(self, capsys):
        args = ["project", "--n", "20000", "--seed", "3", "--tau-k", "0.2", "--tau-r", "0.7",
                "--verify"]
        assert cli.main(args) == 0
        out = parse(capsys.readouterr().out)
        assert out["kkt_pass"] == "true" and "oracle_pass" not in out

    def test_certificate_failure_exit(self, monkeypatch, capsys):
        from topksum.core import ProjectionSolution

        def broken(inst, eps=1e-8):
            return ProjectionSolution(inst.a.copy(), 0.0, 0.0, 1)

        monkeypatch.setitem(bench.SOLVERS, "eips", broken)
        args = ["project", "--n", "50", "--seed", "3", "--k", "5", "--tau-r", "0.5", "--verify"]
        assert cli.main(args) == 3

    def test_hash_deterministic(self, capsys):
        args = ["project", "--n", "2000", "--seed", "11", "--tau-k", "0.3", "--tau-r", "0.4"]
        cli.main(args)
        first = parse(capsys.readouterr().out)
        cli.main(args)
        second = parse(capsys.readouterr().out)
        assert first["x_sha256"] == second["x_sha256"]
        assert first["u_star"] == second["u_star"]

    def test_seed_from_environment(self, monkeypatch, capsys):
        base = ["project", "--n", "100", "--tau-k", "0.1", "--tau-r", "0.5"]
        monkeypatch.setenv("TKS_SEED", "42")
        cli.main(base)
        from_env = parse(capsys.readouterr().out)["x_sha256"]
        cli.main(base + ["--seed", "42"])
        assert parse(capsys.readouterr().out)["x_sha256"] == from_env
        monkeypatch.setenv("TKS_SEED", "43")
        cli.main(base)
        assert parse(capsys.readouterr().out)["x_sha256"] != from_env

    @pytest.mark.parametrize("name, magic", [("x.bin", True), ("x.txt", False)])
    def test_out_format_by_suffix(self, three, tmp_path, capsys, name, magic):
        dest = tmp_path / name
        cli.main(["project", "--input", three, "--k", "2", "--r", "5", "--out", str(dest)])
        assert dest.read_bytes().startswith(bench.BINARY_MAGIC) == magic

    def test_binary_input(self, tmp_path, capsys):
        path = tmp_path / "a.bin"
        bench.write_vector(path, [4.0, 3.0, 1.0], "binary")
        assert cli.main(["project", "--input", str(path), "--k", "2", "--r", "5"]) == 0
        assert parse(capsys.readouterr().out)["u_star"] == "3"


class TestBenchCommands:
    def test_bench_and_slope(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        flags = tmp_path / "f.csv"
        args = ["bench", "--n-list", "1e3", "2e3", "4e3", "--tau-k", "0.1", "--tau-r", "0.5",
                "2.0", "--reps", "2", "--seed", "5", "--out", str(out), "--flag-table",
                str(flags)]
        assert cli.main(args) == 0
        assert parse(capsys.readouterr().out)["records"] == str(3 * 2 * 2 * 3)
        assert flags.read_text().splitlines()[0] == "tau_k,tau_r,mean_flag"
        assert cli.main(["slope", "--input", str(out)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "tau_k,tau_r,slope" and len(lines) == 3

    def test_slope_needs_three_sizes(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        cli.main(["bench", "--n-list", "100", "200", "--tau-k", "0.1", "--tau-r", "0.5",
                  "--reps", "1", "--out", str(out)])
        assert cli.main(["slope", "--input", str(out)]) == 2

    def test_bench_rejects_bad_grid(self, tmp_path, capsys):
        args = ["bench", "--n-list", "100", "--tau-k", "1.5", "--out", str(tmp_path / "b.csv")]
        assert cli.main(args) == 2

    def test_verify_command(self, capsys):
        assert cli.main(["verify", "--count", "30", "--seed", "2"]) == 0
        assert parse(capsys.readouterr().out) == {"checked": "30", "failures": "0"}

    def test_verify_rejects_large(self, capsys):
        assert cli.main(["verify", "--count", "1", "--n-max", "20000"]) == 2

    def test_module_entry_point(self, three):
        import subprocess
        import sys
        proc = subprocess.run([sys.executable, "-m", "topksum", "project", "--input", three,
                               "--k", "2", "--r", "5"], capture_output=True, text=True)
        assert proc.returncode == 0 and "u_star=3" in proc.stdout
