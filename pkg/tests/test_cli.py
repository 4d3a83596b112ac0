import os
import subprocess
import sys

import numpy as np
import pytest

import cpfit
from cpfit.cli import main
from cpfit.core import RngState
from cpfit.tensor_io import (parse_tns, read_factors, read_trace, write_tns,
                             write_trace)
from cpfit.trace import RunTrace


def run_cli(args, cwd=None):
    proc = subprocess.run([sys.executable, "-m", "cpfit", *args],
                          capture_output=True, text=True, cwd=cwd)
    return proc


class TestParseTns:
    def test_basic(self, tmp_path):
        p = tmp_path / "x.tns"
        p.write_text("1 1 1 5.0\n2 2 2 7.0\n")
        t = parse_tns(p)
        assert t.shape == (2, 2, 2)
        assert t.nnz == 2
        assert t.values.tolist() == [5.0, 7.0]
        assert t.keys.tolist() == [0, 7]

    def test_comment_skip(self, tmp_path):
        p = tmp_path / "x.tns"
        p.write_text("# comment\n1 1 1 1.0\n")
        assert parse_tns(p).nnz == 1

    def test_duplicate_sum(self, tmp_path):
        p = tmp_path / "x.tns"
        p.write_text("1 1 1 1.0\n1 1 1 2.0\n")
        t = parse_tns(p)
        assert t.nnz == 1
        assert t.values.tolist() == [3.0]

    def test_dims_header(self, tmp_path):
        p = tmp_path / "x.tns"
        p.write_text("# dims: 4 5 6\n1 1 1 1.0\n")
        assert parse_tns(p).shape == (4, 5, 6)

    def test_non_numeric_reports_line(self, tmp_path):
        p = tmp_path / "x.tns"
        p.write_text("1 1 1 1.0\n1 x 1 2.0\n")
        with pytest.raises(cpfit.DataError, match=":2"):
            parse_tns(p)

    def test_zero_coordinate_rejected(self, tmp_path):
        p = tmp_path / "x.tns"
        p.write_text("0 1 1 1.0\n")
        with pytest.raises(cpfit.DataError, match="1-based"):
            parse_tns(p)

    def test_ragged_arity_rejected(self, tmp_path):
        p = tmp_path / "x.tns"
        p.write_text("1 1 1 1.0\n1 1 2.0\n")
        with pytest.raises(cpfit.DataError, match=":2"):
            parse_tns(p)

    def test_roundtrip(self, tmp_path):
        t, _ = cpfit.gen_low_rank((5, 4, 3), 2, 0.5, rng=RngState(1))
        p = tmp_path / "x.tns"
        write_tns(t, p)
        back = parse_tns(p)
        assert back.shape == t.shape
        assert np.array_equal(back.keys, t.keys)
        assert np.array_equal(back.values, t.values)


class TestTrace:
    def make_trace(self):
        tr = RunTrace(metric_name="rmse", metadata={"algo": "als", "seed": "7"})
        tr.append(0, 0.0, 10.0, 1.5)
        tr.append(1, 0.25, 5.0, 0.75)
        tr.append(3, 0.5, 1.0 / 3.0, 0.1234567890123456)
        return tr

    def test_roundtrip_exact(self, tmp_path):
        tr = self.make_trace()
        p = tmp_path / "trace.csv"
        write_trace(tr, p)
        back = read_trace(p)
        assert back.metric_name == "rmse"
        assert back.metadata["algo"] == "als"
        assert [(r.iteration, r.elapsed_s, r.objective, r.metric)
                for r in back.records] == \
               [(r.iteration, r.elapsed_s, r.objective, r.metric)
                for r in tr.records]

    def test_empty_trace(self, tmp_path):
        tr = RunTrace(metric_name="norm_loss")
        p = tmp_path / "trace.csv"
        write_trace(tr, p)
        text = p.read_text()
        assert "iter,elapsed_s,objective,metric" in text
        assert read_trace(p).metric_name == "norm_loss"
        assert len(read_trace(p).records) == 0

    def test_byte_stable(self, tmp_path):
        tr = self.make_trace()
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trace(tr, p1)
        write_trace(tr, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_invariants(self):
        tr = RunTrace()
        tr.append(0, 0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            tr.append(0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            tr.append(2, -1.0, 1.0, 1.0)

    def test_factors_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        factors = [rng.standard_normal((4, 2)), rng.standard_normal((3, 2))]
        p = tmp_path / "f.npy"
        from cpfit.tensor_io import write_factors
        write_factors(factors, p)
        back = read_factors(p)
        assert len(back) == 2
        for a, b in zip(factors, back):
            assert np.array_equal(a, b)


class TestCliCommands:
    def test_gen_deterministic(self, tmp_path):
        args = ["gen", "lowrank", "--dims", "20,20,20", "--rank", "3",
                "--fraction", "0.2", "--seed", "1"]
        a = run_cli(args + ["--out", str(tmp_path / "a.tns")])
        b = run_cli(args + ["--out", str(tmp_path / "b.tns")])
        assert a.returncode == 0 and b.returncode == 0
        assert (tmp_path / "a.tns").read_bytes() == \
            (tmp_path / "b.tns").read_bytes()
        assert (tmp_path / "a.tns.factors.npy").read_bytes() == \
            (tmp_path / "b.tns.factors.npy").read_bytes()

    def test_gen_function(self, tmp_path):
        out = tmp_path / "f.tns"
        r = run_cli(["gen", "function", "--dims", "8,8,8",
                     "--fraction", "0.5", "--out", str(out)])
        assert r.returncode == 0
        assert parse_tns(out).shape == (8, 8, 8)

    def test_run_als(self, tmp_path):
        data = tmp_path / "x.tns"
        r = run_cli(["gen", "lowrank", "--dims", "15,15,15", "--rank", "3",
                     "--fraction", "0.4", "--seed", "2", "--out", str(data)])
        assert r.returncode == 0
        trace = tmp_path / "out.csv"
        r = run_cli(["run", "--algo", "als", "--loss", "ls", "--rank", "5",
                     "--reg", "1e-5", "--max-iters", "15", "--seed", "7",
                     "--input", str(data), "--trace", str(trace)])
        assert r.returncode == 0, r.stderr
        tr = read_trace(trace)
        assert len(tr.records) <= 16
        assert tr.records[-1].objective <= tr.records[0].objective

    def test_run_missing_file_is_data_error(self):
        r = run_cli(["run", "--input", "/nonexistent/x.tns"])
        assert r.returncode == 2

    def test_malformed_file_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.tns"
        bad.write_text("1 1 abc\n")
        r = run_cli(["run", "--input", str(bad)])
        assert r.returncode == 2
        assert "data error" in r.stderr

    def test_usage_error_exit_code(self):
        r = run_cli(["run"])  # missing --input
        assert r.returncode == 1
        r = run_cli(["frobnicate"])
        assert r.returncode == 1

    def test_incompatible_flags_rejected(self, tmp_path):
        data = tmp_path / "x.tns"
        run_cli(["gen", "lowrank", "--dims", "5,5,5", "--fraction", "1.0",
                 "--out", str(data)])
        r = run_cli(["run", "--algo", "als", "--sample-rate", "0.5",
                     "--input", str(data)])
        assert r.returncode == 1
        assert "requires --algo sgd" in r.stderr
        r = run_cli(["run", "--algo", "sgd", "--cg-tol", "0.01",
                     "--input", str(data)])
        assert r.returncode == 1

    def test_numerical_failure_exit_code(self, tmp_path):
        data = tmp_path / "x.tns"
        run_cli(["gen", "lowrank", "--dims", "8,8,8", "--fraction", "0.9",
                 "--seed", "3", "--out", str(data)])
        r = run_cli(["run", "--algo", "sgd", "--step", "50.0",
                     "--sample-rate", "1.0", "--max-iters", "50",
                     "--input", str(data)])
        assert r.returncode == 3
        assert "numerical failure" in r.stderr

    def test_poisson_rejects_negative_data(self, tmp_path):
        data = tmp_path / "neg.tns"
        data.write_text("1 1 1 -2.0\n2 2 2 1.0\n")
        r = run_cli(["run", "--algo", "als", "--loss", "poisson",
                     "--input", str(data)])
        assert r.returncode == 2

    def test_bench_smoke(self):
        r = run_cli(["bench", "mttkrp", "--dims", "12,12,12", "--nnz", "400",
                     "--rank", "4", "--repeats", "2"])
        assert r.returncode == 0, r.stderr
        assert "all-at-once" in r.stdout and "pairwise" in r.stdout
        assert "ratio" in r.stdout
        r = run_cli(["bench", "tttp", "--dims", "12,12,12", "--nnz", "400",
                     "--rank", "4", "--repeats", "2"])
        assert r.returncode == 0
        r = run_cli(["bench", "solvefactor", "--dims", "12,12,12", "--nnz",
                     "400", "--rank", "4", "--repeats", "2"])
        assert r.returncode == 0

    def test_main_callable_directly(self, tmp_path):
        out = tmp_path / "t.tns"
        code = main(["gen", "lowrank", "--dims", "6,6,6", "--fraction",
                     "0.5", "--out", str(out)])
        assert code == 0
        assert out.exists()


class TestDeterministicRuns:
    def test_trace_bytes_identical_across_runs_and_threads(self, tmp_path):
        data = tmp_path / "x.tns"
        run_cli(["gen", "lowrank", "--dims", "12,12,12", "--rank", "3",
                 "--fraction", "0.3", "--seed", "5", "--out", str(data)])
        outs = []
        for i, threads in enumerate(("1", "1", "4")):
            trace = tmp_path / f"t{i}.csv"
            r = run_cli(["run", "--algo", "als", "--rank", "3",
                         "--max-iters", "5", "--seed", "11", "--input",
                         str(data), "--deterministic", "--threads", threads,
                         "--trace", str(trace)])
            assert r.returncode == 0, r.stderr
            outs.append(trace.read_bytes())
        assert outs[0] == outs[1] == outs[2]
