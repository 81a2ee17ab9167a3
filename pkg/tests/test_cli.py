"""End-to-end command line coverage, driving main() in process.

Each command's contract: line-oriented key=value output, exit 0 on success,
1 on a negative outcome or operational error, 2 on usage errors.
"""

import socket
import struct
import subprocess
import sys
import time

import numpy as np
import pytest

from photonpuf.cli import main
from photonpuf.service import ServiceClient
from photonpuf.token import challenge_to_bytes, load_pgm, random_pattern


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    kv = {}
    for line in out.out.splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            kv[key] = value
    return code, kv, out.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli")
    assert main(["token", "new", "--seed", "7", "--grid", "8x8", "--out", "32x32",
                 "--grain", "0", "--output", str(path / "tok.puft")]) == 0
    assert main(["token", "new", "--seed", "8", "--grid", "8x8", "--out", "32x32",
                 "--grain", "0", "--output", str(path / "other.puft")]) == 0
    assert main(["challenge", "gen", "--grid", "8x8", "--seed", "3",
                 "--output", str(path / "c.chal")]) == 0
    return path


# ---------------------------------------------------------------- token, challenge

def test_token_new_and_show(tmp_path, capsys):
    out_file = tmp_path / "t.puft"
    code, kv, _ = run_cli(capsys, "token", "new", "--seed", "42", "--kind", "pof",
                          "--grid", "4x4", "--out", "16x16", "--output", str(out_file))
    assert code == 0
    assert out_file.exists()
    assert kv["kind"] == "pof"
    assert kv["seed"] == "42"
    tid = kv["token_id"]

    code, kv, _ = run_cli(capsys, "token", "show", "--token", str(out_file))
    assert code == 0
    assert kv["token_id"] == tid
    assert kv["grid"] == "4x4"
    assert kv["out"] == "16x16"


def test_token_new_default_filename(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, kv, _ = run_cli(capsys, "token", "new", "--seed", "1", "--grid", "4x4",
                          "--out", "16x16")
    assert code == 0
    assert kv["file"] == f"token-{kv['token_id'][:8]}.puft"
    assert (tmp_path / kv["file"]).exists()


def test_challenge_gen_pattern(tmp_path, capsys):
    out_file = tmp_path / "p.chal"
    code, kv, _ = run_cli(capsys, "challenge", "gen", "--grid", "8x8", "--seed", "5",
                          "--on-fraction", "0.25", "--output", str(out_file))
    assert code == 0
    assert kv["challenge"] == "pixel_pattern"
    expected = random_pattern((8, 8), 5, on_fraction=0.25)
    assert kv["on_count"] == str(expected.on_count)   # Bernoulli draw, expectation 16
    assert out_file.read_bytes() == challenge_to_bytes(expected)


def test_challenge_gen_wavelength(tmp_path, capsys):
    out_file = tmp_path / "w.chal"
    code, kv, _ = run_cli(capsys, "challenge", "gen", "--wavelength", "1552.5",
                          "--output", str(out_file))
    assert code == 0
    assert kv["challenge"] == "wavelength"
    assert kv["wavelength_nm"] == "1552.5"


def test_challenge_gen_needs_grid_or_wavelength(capsys):
    code, _, err = run_cli(capsys, "challenge", "gen")
    assert code == 1
    assert err.startswith("error=")


def test_bad_dims_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["token", "new", "--seed", "1", "--grid", "8by8"])
    assert exc.value.code == 2


def test_missing_subcommand_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


# ---------------------------------------------------------------- capture

def test_capture_writes_pgm(workdir, tmp_path, capsys):
    out_file = tmp_path / "shot.pgm"
    code, kv, _ = run_cli(capsys, "capture", "--token", str(workdir / "tok.puft"),
                          "--challenge", str(workdir / "c.chal"),
                          "--output", str(out_file), "--noise-seed", "9")
    assert code == 0
    assert kv["dims"] == "32x32"
    image = load_pgm(out_file)
    assert image.as_float().shape == (32, 32)
    assert float(kv["mean"]) == pytest.approx(image.as_float().mean(), rel=1e-4)


def test_capture_missing_token_file(workdir, tmp_path, capsys):
    code, _, err = run_cli(capsys, "capture", "--token", str(tmp_path / "nope.puft"),
                           "--challenge", str(workdir / "c.chal"),
                           "--output", str(tmp_path / "x.pgm"))
    assert code == 1
    assert err.startswith("error=")


# ---------------------------------------------------------------- enroll, auth

def test_enroll_auth_accepts_same_token(workdir, tmp_path, capsys):
    record = tmp_path / "rec.pufr"
    code, kv, _ = run_cli(capsys, "enroll", "--token", str(workdir / "tok.puft"),
                          "--challenge", str(workdir / "c.chal"),
                          "--record", str(record), "--bch-m", "8", "--bch-t", "31")
    assert code == 0
    assert kv["code"] == "n=255,k=55,t=31"
    assert len(kv["digest"]) == 64

    code, kv, _ = run_cli(capsys, "auth", "--record", str(record),
                          "--token", str(workdir / "tok.puft"), "--noise-seed", "77")
    assert code == 0
    assert kv["accepted"] == "true"
    assert int(kv["corrected"]) <= 31


def test_auth_rejects_different_token(workdir, tmp_path, capsys):
    record = tmp_path / "rec.pufr"
    assert main(["enroll", "--token", str(workdir / "tok.puft"),
                 "--challenge", str(workdir / "c.chal"), "--record", str(record)]) == 0
    capsys.readouterr()
    code, kv, _ = run_cli(capsys, "auth", "--record", str(record),
                          "--token", str(workdir / "other.puft"))
    assert code == 1
    assert kv["accepted"] == "false"


def test_enroll_auth_from_pgm_files(workdir, tmp_path, capsys):
    shot = tmp_path / "shot.pgm"
    other = tmp_path / "other.pgm"
    assert main(["capture", "--token", str(workdir / "tok.puft"),
                 "--challenge", str(workdir / "c.chal"), "--output", str(shot),
                 "--noise-seed", "1"]) == 0
    assert main(["capture", "--token", str(workdir / "other.puft"),
                 "--challenge", str(workdir / "c.chal"), "--output", str(other),
                 "--noise-seed", "2"]) == 0
    capsys.readouterr()
    record = tmp_path / "rec.pufr"
    code, kv, _ = run_cli(capsys, "enroll", "--image", str(shot), "--record", str(record))
    assert code == 0
    # the very same frame re-derives the key exactly
    code, kv, _ = run_cli(capsys, "auth", "--record", str(record), "--image", str(shot))
    assert code == 0 and kv["corrected"] == "0"
    code, kv, _ = run_cli(capsys, "auth", "--record", str(record), "--image", str(other))
    assert code == 1 and kv["accepted"] == "false"


def test_enroll_needs_source(capsys, tmp_path):
    code, _, err = run_cli(capsys, "enroll", "--record", str(tmp_path / "r.pufr"))
    assert code == 1
    assert "error=" in err


# ---------------------------------------------------------------- eval

def test_eval_robustness_report(workdir, tmp_path, capsys):
    prefix = str(tmp_path / "rob")
    code, kv, _ = run_cli(capsys, "eval", "robustness", "--token", str(workdir / "tok.puft"),
                          "--challenge", str(workdir / "c.chal"), "--repeats", "6",
                          "--report", prefix)
    assert code == 0
    assert kv["pairs"] == "5"                   # reference vs the other five
    assert float(kv["cc_mean"]) > 0.9
    assert float(kv["hd_mean"]) < 0.2
    for name in ("euclidean", "correlation", "hamming"):
        assert (tmp_path / f"rob.{name}.tsv").exists()


def test_eval_unpredictability(workdir, capsys):
    code, kv, _ = run_cli(capsys, "eval", "unpredictability",
                          "--token", str(workdir / "tok.puft"),
                          "--challenges", "6", "--no-hash")
    assert code == 0
    assert kv["pairs"] == "5"
    assert float(kv["cc_mean"]) < 0.6
    assert "hd_mean" not in kv


def test_eval_unclonability(workdir, capsys):
    code, kv, _ = run_cli(capsys, "eval", "unclonability",
                          "--token", str(workdir / "tok.puft"),
                          "--challenge", str(workdir / "c.chal"), "--tokens", "4")
    assert code == 0
    assert kv["pairs"] == "3"
    assert abs(float(kv["cc_mean"])) < 0.3
    assert 0.3 < float(kv["hd_mean"]) < 0.7


def test_eval_svd_variant(workdir, capsys):
    code, kv, _ = run_cli(capsys, "eval", "robustness", "--token", str(workdir / "tok.puft"),
                          "--challenge", str(workdir / "c.chal"), "--repeats", "4",
                          "--algo", "svd", "--key-len", "20", "--svd-block1", "8",
                          "--svd-block2", "4", "--svd-count1", "8", "--svd-count2", "4")
    assert code == 0
    assert "hd_mean" in kv


def test_eval_success_curve(workdir, tmp_path, capsys):
    report = tmp_path / "curve.tsv"
    code, kv, _ = run_cli(capsys, "eval", "success-curve", "--token", str(workdir / "tok.puft"),
                          "--enrollments", "4", "--auths", "2",
                          "--bch-m", "4", "--bch-t", "3", "--report", str(report))
    assert code == 0
    assert kv["pairs"] == "8"
    assert kv["key_len"] == "15"
    assert kv["correctable_t"] == "3"
    lines = report.read_text().strip().split("\n")
    assert lines[0] == "threshold\tprobability"
    assert len(lines) == 1 + 16                 # thresholds 0..15
    assert lines[-1].endswith("1.000000")


# ---------------------------------------------------------------- rng

def test_rng_extract_and_single_stream_test(workdir, tmp_path, capsys):
    stream_file = tmp_path / "bits.puf"
    code, kv, _ = run_cli(capsys, "rng", "extract", "--token", str(workdir / "tok.puft"),
                          "--bits", "4096", "--bits-per-image", "500",
                          "--output", str(stream_file))
    assert code == 0
    assert kv["bits"] == "4096"
    assert kv["images"] == "9"
    assert 0.4 < float(kv["ones_fraction"]) < 0.6

    code, kv, _ = run_cli(capsys, "rng", "test", "--input", str(stream_file))
    assert "p_frequency" in kv
    assert "p_serial_1" in kv
    assert kv["passed"] in ("true", "false")
    assert code == (0 if kv["passed"] == "true" else 1)


def test_rng_multi_stream_suite(workdir, tmp_path, capsys):
    paths = []
    for i in range(3):
        path = tmp_path / f"s{i}.puf"
        assert main(["rng", "extract", "--token", str(workdir / "tok.puft"),
                     "--bits", "2048", "--bits-per-image", "500",
                     "--seed", str(100 * i + 1), "--hash-seed", str(i),
                     "--noise-seed", str(10 * i), "--output", str(path)]) == 0
        paths.append(str(path))
    capsys.readouterr()
    code, kv, _ = run_cli(capsys, "rng", "test", "--input", *paths)
    assert kv["streams"] == "3"
    assert "frequency_proportion" in kv
    assert "serial_band" in kv
    assert code in (0, 1)


def test_rng_test_missing_file(capsys, tmp_path):
    code, _, err = run_cli(capsys, "rng", "test", "--input", str(tmp_path / "ghost.puf"))
    assert code == 1
    assert err.startswith("error=")


# ---------------------------------------------------------------- serve

def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_subprocess_roundtrip(workdir, tmp_path):
    port = free_port()
    proc = subprocess.Popen(
        [sys.executable, "-m", "photonpuf.cli", "serve",
         "--host", "127.0.0.1", "--port", str(port),
         "--token", str(workdir / "tok.puft"), "--store", str(tmp_path / "store")],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        for line in proc.stdout:
            if line.startswith("listening="):
                break
        from photonpuf.token import load_token, token_id
        tid = token_id(load_token(workdir / "tok.puft"))
        blob = (workdir / "c.chal").read_bytes()
        deadline = time.monotonic() + 10
        client = None
        while client is None:
            try:
                client = ServiceClient(("127.0.0.1", port), timeout=5.0)
            except OSError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.05)
        with client:
            rid, digest = client.enroll(tid, blob)
            accepted, corrected = client.auth(rid)
        assert accepted
        assert (tmp_path / "store").is_dir()
    finally:
        proc.terminate()
        proc.wait(timeout=5)
