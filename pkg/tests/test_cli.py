"""CLI: subcommand behavior, exit codes, artifact round trips."""

import json
import os

import pytest

from goalnet.cli import main
from goalnet.config import ExperimentConfig, parse_config_text, ConfigError
from goalnet.goal_text import parse_text


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestConfig:
    def test_defaults_resolve(self):
        cfg = ExperimentConfig()
        assert cfg.get_float("loggops.L") == 3700.0
        assert cfg.get_int("net.mtu") == 4096

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("loggops.X = 5\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_comments_and_spacing(self):
        values = parse_config_text("# c\nloggops.L = 9000  # inline\n")
        assert values == {"loggops.L": "9000"}

    def test_hash_changes_with_values(self):
        assert ExperimentConfig().hash() != \
            ExperimentConfig({"seed": "2"}).hash()

    def test_env_seed_override(self, monkeypatch):
        monkeypatch.setenv("GOALNET_SEED", "777")
        assert ExperimentConfig().get_int("seed") == 777

    def test_env_seed_must_be_int(self, monkeypatch):
        monkeypatch.setenv("GOALNET_SEED", "abc")
        with pytest.raises(ConfigError):
            ExperimentConfig()


class TestGenerateValidateConvert:
    def test_generate_then_validate(self, tmp_path, capsys):
        out = str(tmp_path / "a.goal")
        code, _, _ = run(capsys, "generate", "-o", out, "microbenchmark",
                         "--pattern", "incast", "--n", "4", "--bytes", "1024")
        assert code == 0
        code, stdout, _ = run(capsys, "validate", out)
        assert code == 0 and stdout.strip() == "ok"

    def test_reproducibility_header(self, tmp_path, capsys):
        out = str(tmp_path / "a.goal")
        run(capsys, "generate", "-o", out, "microbenchmark",
            "--pattern", "incast", "--n", "2", "--bytes", "8")
        first = open(out).readline()
        assert first.startswith("# goalnet 0.1.0 config ")

    def test_convert_roundtrip(self, tmp_path, capsys):
        a = str(tmp_path / "a.goal")
        b = str(tmp_path / "a.bin")
        c = str(tmp_path / "b.goal")
        run(capsys, "generate", "-o", a, "microbenchmark",
            "--pattern", "ring_exchange", "--n", "4", "--bytes", "64",
            "--rounds", "2")
        assert run(capsys, "convert", a, "-o", b)[0] == 0
        assert run(capsys, "convert", b, "-o", c)[0] == 0
        assert parse_text(open(a).read().split("\n", 1)[1]) == \
            parse_text(open(c).read().split("\n", 1)[1])

    def test_validate_failure_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.goal"
        bad.write_text("num_ranks 2\nrank 0 { a: send 8b to 1 }\nrank 1 {\n}\n")
        code, _, err = run(capsys, "validate", str(bad))
        assert code == 4
        assert json.loads(err)["error"] == "validation"

    def test_syntax_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.goal"
        bad.write_text("num_ranks ???\n")
        code, _, err = run(capsys, "validate", str(bad))
        assert code == 4
        assert json.loads(err)["error"] == "format"

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfgf = tmp_path / "c.cfg"
        cfgf.write_text("bogus.key = 1\n")
        out = str(tmp_path / "a.goal")
        code, _, err = run(capsys, "generate", "--config", str(cfgf), "-o", out,
                           "microbenchmark", "--pattern", "incast",
                           "--n", "2", "--bytes", "8")
        assert code == 3
        assert json.loads(err)["error"] == "config"

    def test_missing_file(self, capsys):
        code, _, err = run(capsys, "validate", "/nonexistent.goal")
        assert code == 1
        assert json.loads(err)["error"] == "io"


class TestSimulate:
    def write_job(self, tmp_path, capsys, name="a.goal", n=4):
        out = str(tmp_path / name)
        run(capsys, "generate", "-o", out, "microbenchmark",
            "--pattern", "ring_exchange", "--n", str(n), "--bytes", "4096")
        return out

    def test_simulate_loggops_json(self, tmp_path, capsys):
        job = self.write_job(tmp_path, capsys)
        code, stdout, _ = run(capsys, "simulate", "--backend", "loggops", job)
        assert code == 0
        doc = json.loads(stdout)
        assert doc["makespan_ns"] > 0
        assert doc["mct"]["mean"] > 0
        assert doc["config"]["loggops.L"] == "3700"
        assert doc["tool"]["version"] == "0.1.0"

    def test_simulate_deterministic_bytes(self, tmp_path, capsys):
        job = self.write_job(tmp_path, capsys)
        out1 = run(capsys, "simulate", "--backend", "loggops", job)[1]
        out2 = run(capsys, "simulate", "--backend", "loggops", job)[1]
        assert out1 == out2

    def test_simulate_packet_backend(self, tmp_path, capsys):
        cfgf = tmp_path / "c.cfg"
        cfgf.write_text("fattree.hosts_per_tor = 2\nfattree.num_tors = 2\n"
                        "fattree.uplinks_per_tor = 2\nfattree.num_cores = 2\n")
        job = self.write_job(tmp_path, capsys)
        code, stdout, _ = run(capsys, "simulate", "--backend", "packet",
                              "--config", str(cfgf), job)
        assert code == 0
        assert json.loads(stdout)["makespan_ns"] > 0

    def test_messages_csv_and_stats_agree(self, tmp_path, capsys):
        job = self.write_job(tmp_path, capsys)
        csv_path = str(tmp_path / "msgs.csv")
        _, stdout, _ = run(capsys, "simulate", "--backend", "loggops",
                           "--messages-csv", csv_path, job)
        mean_sim = json.loads(stdout)["mct"]["mean"]
        code, stdout2, _ = run(capsys, "stats", csv_path)
        assert code == 0
        assert json.loads(stdout2)["mct"]["mean"] == mean_sim

    def test_csv_row_count(self, tmp_path, capsys):
        job = self.write_job(tmp_path, capsys, n=4)
        csv_path = str(tmp_path / "msgs.csv")
        run(capsys, "simulate", "--backend", "loggops",
            "--messages-csv", csv_path, job)
        rows = [ln for ln in open(csv_path)
                if ln.strip() and not ln.startswith("#") and not ln.startswith("src,")]
        assert len(rows) == 4  # one ring round: 4 messages

    def test_deadlocked_schedule_reports(self, tmp_path, capsys):
        bad = tmp_path / "dead.goal"
        bad.write_text(
            "num_ranks 2\n"
            "rank 0 {\n r0: recv 8b from 1 tag 0\n s0: send 8b to 1 tag 1\n"
            " s0 requires r0\n}\n"
            "rank 1 {\n r1: recv 8b from 0 tag 1\n s1: send 8b to 0 tag 0\n"
            " s1 requires r1\n}\n")
        code, _, err = run(capsys, "simulate", "--backend", "loggops", str(bad))
        assert code == 1
        assert json.loads(err)["error"] == "deadlock"


class TestPlace:
    def test_place_packed_then_simulate(self, tmp_path, capsys):
        jobs = []
        for i in range(2):
            out = str(tmp_path / f"j{i}.goal")
            run(capsys, "generate", "-o", out, "microbenchmark",
                "--pattern", "ring_exchange", "--n", "2", "--bytes", "64")
            jobs.append(out)
        merged = str(tmp_path / "merged.goal")
        code, _, _ = run(capsys, "place", *jobs, "--strategy", "packed",
                         "--system-size", "4", "-o", merged)
        assert code == 0
        doc = json.loads(run(capsys, "simulate", "--backend", "loggops", merged)[1])
        assert set(doc["jobs"]) == {"0", "1"}

    def test_place_random_seeded(self, tmp_path, capsys):
        jobs = []
        for i in range(2):
            out = str(tmp_path / f"j{i}.goal")
            run(capsys, "generate", "-o", out, "microbenchmark",
                "--pattern", "incast", "--n", "2", "--bytes", "64")
            jobs.append(out)
        m1 = str(tmp_path / "m1.goal")
        m2 = str(tmp_path / "m2.goal")
        run(capsys, "place", *jobs, "--strategy", "random", "--seed", "5",
            "--system-size", "8", "-o", m1)
        run(capsys, "place", *jobs, "--strategy", "random", "--seed", "5",
            "--system-size", "8", "-o", m2)
        assert open(m1).read() == open(m2).read()

    def test_insufficient_size_fails(self, tmp_path, capsys):
        out = str(tmp_path / "j.goal")
        run(capsys, "generate", "-o", out, "microbenchmark",
            "--pattern", "incast", "--n", "4", "--bytes", "64")
        code, _, err = run(capsys, "place", out, "--strategy", "packed",
                           "--system-size", "2", "-o", str(tmp_path / "m.goal"))
        assert code == 1
        assert json.loads(err)["error"] == "invalid"


class TestTraceCommands:
    def test_mpi_trace_generate(self, tmp_path, capsys):
        for r in range(2):
            (tmp_path / f"r{r}.csv").write_text("ALLREDUCE,4096,-,0-1,0,10\n")
        out = str(tmp_path / "t.goal")
        code, _, _ = run(capsys, "generate", "-o", out, "mpi-trace",
                         str(tmp_path / "r0.csv"), str(tmp_path / "r1.csv"))
        assert code == 0
        assert run(capsys, "validate", out)[0] == 0

    def test_mpi_trace_bad_algo_flag(self, tmp_path, capsys):
        for r in range(2):
            (tmp_path / f"r{r}.csv").write_text("ALLREDUCE,4096,-,0-1,0,10\n")
        code, _, err = run(capsys, "generate", "-o", str(tmp_path / "t.goal"),
                           "mpi-trace", str(tmp_path / "r0.csv"),
                           str(tmp_path / "r1.csv"), "--algo", "ALLREDUCE")
        assert code == 3

    def test_gpu_trace_generate(self, tmp_path, capsys):
        comms = tmp_path / "communicators.json"
        comms.write_text(json.dumps({"c0": [0, 1]}))
        for g in range(2):
            (tmp_path / f"g{g}.json").write_text(json.dumps(
                {"gpu": g, "streams": {"7": [
                    {"kind": "collective", "op": "allreduce", "bytes": 65536,
                     "comm": "c0", "ts": 0, "te": 10}]}}))
        out = str(tmp_path / "g.goal")
        code, _, _ = run(capsys, "generate", "-o", out, "gpu-trace",
                         "--communicators", str(comms),
                         str(tmp_path / "g0.json"), str(tmp_path / "g1.json"))
        assert code == 0
        assert run(capsys, "validate", out)[0] == 0

    def test_storage_generate(self, tmp_path, capsys):
        trace = tmp_path / "io.csv"
        trace.write_text("0,0,4096,R,0.0\n1,8,8192,W,0.0001\n")
        out = str(tmp_path / "s.goal")
        code, _, _ = run(capsys, "generate", "-o", out, "storage",
                         "--trace", str(trace))
        assert code == 0
        doc = json.loads(run(capsys, "simulate", "--backend", "loggops", out)[1])
        assert doc["makespan_ns"] > 0
