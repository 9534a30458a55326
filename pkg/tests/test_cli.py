import subprocess
import sys
import time

import pytest

from qkdsim.bits import BitString, random_bits, SeededRng
from qkdsim.cli import main

RUN_YAML = """\
p_det: 1.0
multiphoton_ratio: 0.0
dark_count_prob: 0.0
pol_error_prob: 0.0
block_pulses: 100000
target_valid_bits: 400000
seed: 11
"""


def _parse_kv(out):
    vals = {}
    for line in out.splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            vals[k.strip()] = v.strip()
    return vals


class TestCalc:
    def test_reference_point(self, capsys):
        assert main(["calc", "--n", "1000000", "--m", "1000000",
                     "--q", "0.06"]) == 0
        vals = _parse_kv(capsys.readouterr().out)
        assert float(vals["xi"]) == pytest.approx(0.0052512, abs=1e-6)
        assert float(vals["Delta(n)"]) == pytest.approx(0.0422344, abs=1e-6)
        assert float(vals["r"]) == pytest.approx(0.09631, abs=2e-4)
        assert int(vals["secret_key_len"]) == pytest.approx(96310, abs=200)

    def test_zero_key_regime(self, capsys):
        assert main(["calc", "--n", "10000", "--m", "10000",
                     "--q", "0.03"]) == 0
        vals = _parse_kv(capsys.readouterr().out)
        assert float(vals["r_raw"]) < 0
        assert float(vals["r"]) == 0.0
        assert int(vals["secret_key_len"]) == 0

    def test_bad_eps_split(self, capsys):
        assert main(["calc", "--eps", "1e-10", "--eps-pe", "1e-10",
                     "--eps-pa", "1e-10", "--eps-ec", "1e-10",
                     "--eps-smooth", "1e-10"]) == 1
        assert "error:" in capsys.readouterr().err


class TestCurve:
    def test_writes_csv(self, tmp_path):
        out = tmp_path / "curve.csv"
        assert main(["curve", "--q", "0.05", "--n-min", "1e4",
                     "--n-max", "1e6", "--n-points", "5",
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "q,n,r_raw,r,error"
        assert len(lines) == 6

    def test_stdout_default(self, capsys):
        assert main(["curve", "--q", "0.05", "--n-points", "3"]) == 0
        assert capsys.readouterr().out.startswith("q,n,r_raw,r,error")

    def test_empty_range_rejected(self, capsys):
        assert main(["curve", "--n-min", "1e6", "--n-max", "1e3"]) == 1


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_run")
    cfg = tmp / "run.yaml"
    cfg.write_text(RUN_YAML)
    out = tmp / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    return out


class TestRunAndOtp:
    def test_outputs_exist(self, run_dir):
        assert (run_dir / "report.csv").exists()
        assert (run_dir / "alice_key.bin").exists()
        assert (run_dir / "bob_key.bin").exists()

    def test_report_has_seed_comment_and_row(self, run_dir):
        lines = (run_dir / "report.csv").read_text().splitlines()
        assert lines[0].startswith("# seed=11 rng=pcg64 config=")
        assert lines[1].startswith("clock_rate,")
        assert len(lines) == 3

    def test_keys_identical_and_nonempty(self, run_dir):
        a = BitString.deserialize((run_dir / "alice_key.bin").read_bytes())
        b = BitString.deserialize((run_dir / "bob_key.bin").read_bytes())
        assert a == b
        assert len(a) > 0

    def test_otp_roundtrip(self, run_dir, tmp_path):
        key_bits = len(BitString.deserialize(
            (run_dir / "alice_key.bin").read_bytes()))
        plain = tmp_path / "plain.bin"
        payload = bytes(range(256)) * (key_bits // 8 // 256)
        plain.write_bytes(payload)
        ct = tmp_path / "ct.bin"
        pt = tmp_path / "pt.bin"
        assert main(["otp", "encrypt", "--key",
                     str(run_dir / "alice_key.bin"), "--in", str(plain),
                     "--out", str(ct)]) == 0
        assert ct.read_bytes() != payload
        assert main(["otp", "decrypt", "--key",
                     str(run_dir / "bob_key.bin"), "--in", str(ct),
                     "--out", str(pt)]) == 0
        assert pt.read_bytes() == payload

    def test_otp_key_too_short(self, run_dir, tmp_path, capsys):
        short_key = tmp_path / "short.bin"
        short_key.write_bytes(random_bits(64, SeededRng(1)).serialize())
        big = tmp_path / "big.bin"
        big.write_bytes(b"\x00" * 1000)
        assert main(["otp", "encrypt", "--key", str(short_key),
                     "--in", str(big), "--out", str(tmp_path / "x")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_corrupt_bit_aborts(self, tmp_path, capsys):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(RUN_YAML)
        assert main(["run", "--config", str(cfg),
                     "--out", str(tmp_path / "out"),
                     "--corrupt-bit", "5"]) == 3
        assert "aborted" in capsys.readouterr().err


class TestTwoProcess:
    def test_loopback_matches_in_process(self, tmp_path):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(RUN_YAML)
        inproc = tmp_path / "inproc"
        assert main(["run", "--config", str(cfg), "--out", str(inproc)]) == 0

        port = 29471
        bob = subprocess.Popen(
            [sys.executable, "-m", "qkdsim.cli", "run", "--config", str(cfg),
             "--listen", f"127.0.0.1:{port}",
             "--out", str(tmp_path / "bob")],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        time.sleep(1.0)
        alice = subprocess.Popen(
            [sys.executable, "-m", "qkdsim.cli", "run", "--config", str(cfg),
             "--connect", f"127.0.0.1:{port}",
             "--out", str(tmp_path / "alice")],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        out_a, err_a = alice.communicate(timeout=300)
        out_b, err_b = bob.communicate(timeout=300)
        assert alice.returncode == 0, err_a.decode()
        assert bob.returncode == 0, err_b.decode()

        k_in = (inproc / "alice_key.bin").read_bytes()
        k_a = (tmp_path / "alice" / "alice_key.bin").read_bytes()
        k_b = (tmp_path / "bob" / "bob_key.bin").read_bytes()
        assert k_a == k_b == k_in


class TestLdpcBench:
    def test_csv_output(self, tmp_path):
        out = tmp_path / "bench.csv"
        assert main(["ldpc-bench", "--n-block", "1000", "--q", "0.04",
                     "--trials", "3", "--seed", "1",
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "q,trials,success_rate,mean_iterations"
        fields = lines[1].split(",")
        assert fields[0] == "0.04"
        assert fields[1] == "3"
        assert 0.0 <= float(fields[2]) <= 1.0
