"""Randomness source for tokens, nonces and keys.

With ``SINCLAVE_SEED`` set (or after :func:`reseed`) every draw comes from a
SHA-256 counter-mode stream so whole protocol runs replay bit-exactly.
Otherwise :mod:`secrets` is used.
"""

from __future__ import annotations

import hashlib
import os
import secrets
import threading
import time

SEED_ENV = "SINCLAVE_SEED"
FIXED_EPOCH = 1_700_000_000


class DeterministicStream:
    """SHA-256(seed || label || counter) keystream; thread safe."""

    def __init__(self, seed: bytes | str | int, label: str = ""):
        if isinstance(seed, int):
            seed = str(seed)
        if isinstance(seed, str):
            seed = seed.encode()
        self._key = hashlib.sha256(seed + b"\x00" + label.encode()).digest()
        self._counter = 0
        self._lock = threading.Lock()

    def read(self, n: int) -> bytes:
        out = bytearray()
        with self._lock:
            while len(out) < n:
                out += hashlib.sha256(self._key + self._counter.to_bytes(8, "big")).digest()
                self._counter += 1
        return bytes(out[:n])

    def randbits(self, k: int) -> int:
        return int.from_bytes(self.read((k + 7) // 8), "big") >> (-k % 8)


_stream: DeterministicStream | None = None
_stream_lock = threading.Lock()


def reseed(seed: bytes | str | int | None) -> None:
    """Switch the process-wide source; ``None`` restores the CSPRNG."""
    global _stream
    with _stream_lock:
        _stream = None if seed is None else DeterministicStream(seed, "global")


def seeded() -> bool:
    return _stream is not None


def token_bytes(n: int) -> bytes:
    stream = _stream
    if stream is None:
        return secrets.token_bytes(n)
    return stream.read(n)


def now() -> int:
    return FIXED_EPOCH if seeded() else int(time.time())


def substream(label: str) -> DeterministicStream | None:
    """A labelled child stream of the global seed, or None when unseeded."""
    stream = _stream
    if stream is None:
        return None
    return DeterministicStream(stream._key, label)


if os.environ.get(SEED_ENV):
    reseed(os.environ[SEED_ENV])
