"""Micro-benchmark harness: hashing, SIGSTRUCT signing/verification, singleton retrieval.

Each benchmark is warmed up for ``warmup`` seconds, then timed over
``samples`` samples; a sample runs enough iterations to fill its share of
``measurement`` seconds. The reported figure is the mean time per iteration.
"""

from __future__ import annotations

import csv
import hashlib
import io
import socket
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Callable

from . import hashcore
from .enclave import InstancePage, extend_with_instance_page
from .hashcore import BaseEnclaveHash
from .scenario import deploy
from .sigstruct import derive_singleton_sigstruct, generate_signer_key, sign_sigstruct, verify_sigstruct
from .errors import SigInvalid
from .transport import VerifierClient, parse_address

KiB = 1024
MiB = 1024 * KiB
SHA_SIZES = (2 * KiB, 16 * KiB, 128 * KiB, 1 * MiB, 8 * MiB, 64 * MiB)
SUITES = ("sha", "sign", "verify", "retrieval")


@dataclass
class BenchResult:
    suite: str
    name: str
    param: int
    mean_s: float
    median_s: float
    samples: int
    iterations: int
    bytes_per_iter: int = 0

    @property
    def throughput_mb_s(self) -> float | None:
        if not self.bytes_per_iter:
            return None
        return self.bytes_per_iter / self.mean_s / 1e6


def measure(
    fn: Callable[[], object],
    *,
    warmup: float = 3.0,
    samples: int = 20,
    measurement: float = 2.0,
) -> tuple[list[float], int]:
    """Return per-iteration times of each sample and the total iteration count."""
    start = time.perf_counter()
    n = 0
    while True:
        fn()
        n += 1
        elapsed = time.perf_counter() - start
        if elapsed >= warmup:
            break
    per_iter = elapsed / n
    iters = max(1, int(measurement / samples / per_iter))
    times = []
    for _ in range(samples):
        t0 = time.perf_counter()
        for _ in range(iters):
            fn()
        times.append((time.perf_counter() - t0) / iters)
    return times, iters * samples


def _result(suite, name, param, fn, nbytes=0, **opts) -> BenchResult:
    times, total = measure(fn, **opts)
    return BenchResult(suite, name, param, statistics.fmean(times), statistics.median(times), len(times), total, nbytes)


def _resumable(buf: bytes, step: int = 4 * KiB) -> bytes:
    # interrupted at every page: export, then resume from the serialized snapshot
    state = hashcore.hash_init()
    for off in range(0, len(buf), step):
        state = hashcore.hash_update(state, buf[off : off + step])
        if not state.pending:
            state = hashcore.resume_base(hashcore.export_base(state).to_bytes())
    return hashcore.hash_finalize(state)


def bench_sha(sizes=SHA_SIZES, **opts) -> list[BenchResult]:
    out = []
    for size in sizes:
        buf = bytes(range(256)) * (size // 256)
        variants = {
            "hashlib": lambda: hashlib.sha256(buf).digest(),
            "portable": lambda: hashcore.sha256(buf),
            "resumable": lambda: _resumable(buf),
            "basehash": lambda: hashcore.export_base(hashcore.hash_update(hashcore.hash_init(), buf)).to_bytes(),
        }
        for name, fn in variants.items():
            out.append(_result("sha", name, size, fn, size, **opts))
    for size in (2 * KiB, 64 * MiB):
        snap = BaseEnclaveHash(hashcore.IV, size)
        out.append(_result("sha", "finalize_base", size, lambda: hashcore.finalize_base(snap), **opts))
    return out


def _signing_fixture():
    key = generate_signer_key()
    ss = sign_sigstruct(key, hashlib.sha256(b"bench").digest(), date=0)
    bad = sign_sigstruct(key, hashlib.sha256(b"other").digest(), date=0)
    broken = ss.__class__(**{**ss.__dict__, "signature": bad.signature})
    return key, ss, broken


def bench_sign(**opts) -> list[BenchResult]:
    key, ss, _ = _signing_fixture()
    return [_result("sign", "sign_sigstruct", 3072, lambda: sign_sigstruct(key, ss.mrenclave, date=0), **opts)]


def bench_verify(**opts) -> list[BenchResult]:
    _, ss, broken = _signing_fixture()

    def verify_err():
        try:
            verify_sigstruct(broken)
        except SigInvalid:
            return
        raise AssertionError("tampered SIGSTRUCT verified")

    return [
        _result("verify", "verify_correct", 3072, lambda: verify_sigstruct(ss), **opts),
        _result("verify", "verify_error", 3072, verify_err, **opts),
    ]


def bench_retrieval(**opts) -> list[BenchResult]:
    with deploy() as dep:
        host, port = parse_address(dep.address)
        policy = dep.policy
        common = dep.common_sigstruct
        token = bytes(range(32))
        page = InstancePage(token, dep.verifier.identity)

        def open_close():
            with socket.create_connection((host, port)) as sock:
                sock.recv(1)

        def retrieve():
            with VerifierClient(dep.address) as client:
                client.request_singleton(policy.name, common)

        def expected():
            extend_with_instance_page(policy.base_hash, page, policy.instance_page_offset)

        def derive():
            derive_singleton_sigstruct(common, common.mrenclave, dep.signer)

        return [
            _result("retrieval", "open_close", 0, open_close, **opts),
            _result("retrieval", "singleton_retrieval", 0, retrieve, **opts),
            _result("retrieval", "verify_common_sigstruct", 0, lambda: verify_sigstruct(common), **opts),
            _result("retrieval", "expected_mrenclave", 0, expected, **opts),
            _result("retrieval", "derive_sigstruct", 0, derive, **opts),
        ]


RUNNERS = {"sha": bench_sha, "sign": bench_sign, "verify": bench_verify, "retrieval": bench_retrieval}


def run(suite: str, **opts) -> list[BenchResult]:
    if suite == "all":
        return [r for name in SUITES for r in RUNNERS[name](**opts)]
    if suite not in RUNNERS:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)} or all")
    return RUNNERS[suite](**opts)


def _fmt_time(seconds: float) -> str:
    for unit, scale in (("s", 1), ("ms", 1e-3), ("us", 1e-6)):
        if seconds >= scale:
            return f"{seconds / scale:8.3f} {unit}"
    return f"{seconds / 1e-9:8.1f} ns"


def format_table(results: list[BenchResult]) -> str:
    lines = [f"{'suite':<10}{'benchmark':<26}{'param':>12}{'mean':>14}{'MB/s':>10}"]
    for r in results:
        tput = f"{r.throughput_mb_s:10.1f}" if r.throughput_mb_s is not None else f"{'':>10}"
        lines.append(f"{r.suite:<10}{r.name:<26}{r.param:>12}{_fmt_time(r.mean_s):>14}{tput}")
    return "\n".join(lines)


def to_csv(results: list[BenchResult]) -> str:
    buf = io.StringIO()
    fields = list(asdict(results[0]).keys()) + ["throughput_mb_s"] if results else []
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    for r in results:
        writer.writerow({**asdict(r), "throughput_mb_s": r.throughput_mb_s or ""})
    return buf.getvalue()
