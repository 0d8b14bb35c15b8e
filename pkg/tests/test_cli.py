import json
import os
import socket
import subprocess
import sys
import time

import pytest

from sinclave.cli import build_parser
from sinclave.scenario import demo_blueprint


def run(*args, env=None, check=True, timeout=120):
    proc = subprocess.run(
        [sys.executable, "-m", "sinclave", *args],
        capture_output=True,
        text=True,
        env={**os.environ, **(env or {})},
        timeout=timeout,
    )
    if check and proc.returncode != 0:
        raise AssertionError(f"rc={proc.returncode}\n{proc.stdout}\n{proc.stderr}")
    return proc


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_for(port: int, deadline: float = 30.0) -> None:
    end = time.monotonic() + deadline
    while time.monotonic() < end:
        try:
            socket.create_connection(("127.0.0.1", port), timeout=1).close()
            return
        except OSError:
            time.sleep(0.1)
    raise TimeoutError(f"verifier did not come up on port {port}")


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_keygen_seeded(tmp_path):
    a = run("keygen", "--out", str(tmp_path / "a.pem"), "--seed", "7").stdout
    b = run("keygen", "--out", str(tmp_path / "b.pem"), "--seed", "7").stdout
    assert a == b and a.startswith("mrsigner ")


@pytest.fixture
def workspace(tmp_path):
    demo_blueprint().dump(tmp_path / "app.json")
    run("keygen", "--out", str(tmp_path / "signer.pem"), "--seed", "cli-signer")
    run("keygen", "--platform", "--out", str(tmp_path / "platform.json"), env={"SINCLAVE_SEED": "cli-platform"})
    (tmp_path / "secrets.json").write_text(json.dumps({"DB_PASSWORD": "hunter2", "MODEL": "/models/x.bin"}))
    (tmp_path / "policies").mkdir()
    return tmp_path


def test_measure_outputs(workspace):
    out = run(
        "measure",
        str(workspace / "app.json"),
        "--key",
        str(workspace / "signer.pem"),
        "--policy-out",
        str(workspace / "policies" / "app.json"),
        "--secrets",
        str(workspace / "secrets.json"),
    ).stdout
    fields = dict(line.split(None, 1) for line in out.splitlines())
    assert len(fields["base_hash"]) == 90
    assert len(fields["common_mrenclave"]) == 64
    assert (workspace / "app.sigstruct").exists()
    policy = json.loads((workspace / "policies" / "app.json").read_text())
    assert policy["secrets"]["DB_PASSWORD"] == "hunter2"


def test_full_flow(workspace):
    w = workspace
    run("measure", str(w / "app.json"), "--key", str(w / "signer.pem"), "--name", "app",
        "--policy-out", str(w / "policies" / "app.json"), "--secrets", str(w / "secrets.json"))
    port = free_port()
    server = subprocess.Popen(
        [sys.executable, "-m", "sinclave", "verifier", "serve", "--listen", f"127.0.0.1:{port}",
         "--policies", str(w / "policies"), "--journal", str(w / "tokens.journal"),
         "--platform", str(w / "platform.json")],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
    )
    try:
        wait_for(port)
        common = ["starter", "run", "--policy", "app", "--blueprint", str(w / "app.json"),
                  "--verifier", f"127.0.0.1:{port}", "--platform", str(w / "platform.json")]
        out = run(*common, "--show-secrets").stdout
        assert "DB_PASSWORD = hunter2" in out
        assert "<redacted>" in run(*common).stdout
        assert "no configuration" in run(*common, "--common").stdout
        bad = run(*common[:2], "--policy", "nope", *common[4:], check=False)
        assert bad.returncode == 2 and "E_UNKNOWN_POLICY" in bad.stderr
    finally:
        server.terminate()
        server.wait(timeout=10)
    assert (w / "tokens.journal").stat().st_size > 0


def test_attack_naive_cli_deterministic():
    env = {"SINCLAVE_SEED": "cli-attack"}
    a = run("attack", "demo", "--mode", "naive", env=env)
    b = run("attack", "demo", "--mode", "naive", env=env)
    assert "attack succeeded" in a.stdout
    assert a.stdout == b.stdout


@pytest.mark.parametrize("strategy,code", [("a", "E_TOKEN_UNKNOWN"), ("b", "E_TOKEN_USED"), ("c", "E_MRENCLAVE_MISMATCH")])
def test_attack_singleton_cli(strategy, code):
    out = run("attack", "demo", "--mode", "singleton", "--strategy", strategy).stdout
    assert f": {code} (expected {code})" in out


def test_build_matches_measure(workspace):
    w = workspace
    built = run("build", str(w / "app.json"), "--common").stdout
    measured = run("measure", str(w / "app.json"), "--key", str(w / "signer.pem")).stdout
    mre = dict(line.split(None, 1) for line in built.splitlines())["mrenclave"]
    assert f"common_mrenclave {mre}" in measured
    token = run("build", str(w / "app.json"), "--token", "11" * 32).stdout
    assert mre not in token
