"""Portable SHA-256 with suspend/resume at block boundaries.

The chaining values and the byte counter after every whole 64-byte block
form a complete description of the computation, so a measurement can be
paused, shipped as a :class:`BaseEnclaveHash` and continued elsewhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedSnapshot, MessageTooLong, NotBlockAligned

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap

BLOCK_SIZE = 64
DIGEST_SIZE = 32
MAX_LENGTH = (1 << 64) - 1

# fmt: off
IV = (
    0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A,
    0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19,
)

_K = np.array([
    0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1, 0x923F82A4, 0xAB1C5ED5,
    0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3, 0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174,
    0xE49B69C1, 0xEFBE4786, 0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
    0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147, 0x06CA6351, 0x14292967,
    0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13, 0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85,
    0xA2BFE8A1, 0xA81A664B, 0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
    0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A, 0x5B9CCA4F, 0x682E6FF3,
    0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208, 0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2,
], dtype=np.int64)
# fmt: on

SNAPSHOT_MAGIC = b"SINB"
SNAPSHOT_VERSION = 1
SNAPSHOT_SIZE = 45
_SNAPSHOT = struct.Struct(">4sB8IQ")
assert _SNAPSHOT.size == SNAPSHOT_SIZE


@njit(cache=True)
def _compress(h, data, nblocks, k):
    # int64 lanes with explicit masking: numba would otherwise widen uint32 math
    m = 0xFFFFFFFF
    w = np.empty(64, dtype=np.int64)
    for b in range(nblocks):
        base = b * 64
        for i in range(16):
            j = base + 4 * i
            w[i] = (
                (np.int64(data[j]) << 24)
                | (np.int64(data[j + 1]) << 16)
                | (np.int64(data[j + 2]) << 8)
                | np.int64(data[j + 3])
            )
        for i in range(16, 64):
            x = w[i - 15]
            y = w[i - 2]
            s0 = (((x >> 7) | (x << 25)) ^ ((x >> 18) | (x << 14)) ^ (x >> 3)) & m
            s1 = (((y >> 17) | (y << 15)) ^ ((y >> 19) | (y << 13)) ^ (y >> 10)) & m
            w[i] = (w[i - 16] + s0 + w[i - 7] + s1) & m
        a = h[0]
        bb = h[1]
        c = h[2]
        d = h[3]
        e = h[4]
        f = h[5]
        g = h[6]
        hh = h[7]
        for i in range(64):
            S1 = (((e >> 6) | (e << 26)) ^ ((e >> 11) | (e << 21)) ^ ((e >> 25) | (e << 7))) & m
            ch = (e & f) ^ ((~e) & g & m)
            t1 = (hh + S1 + ch + k[i] + w[i]) & m
            S0 = (((a >> 2) | (a << 30)) ^ ((a >> 13) | (a << 19)) ^ ((a >> 22) | (a << 10))) & m
            maj = (a & bb) ^ (a & c) ^ (bb & c)
            t2 = (S0 + maj) & m
            hh = g
            g = f
            f = e
            e = (d + t1) & m
            d = c
            c = bb
            bb = a
            a = (t1 + t2) & m
        h[0] = (h[0] + a) & m
        h[1] = (h[1] + bb) & m
        h[2] = (h[2] + c) & m
        h[3] = (h[3] + d) & m
        h[4] = (h[4] + e) & m
        h[5] = (h[5] + f) & m
        h[6] = (h[6] + g) & m
        h[7] = (h[7] + hh) & m
    return h


def compress(h: tuple[int, ...], blocks: bytes | bytearray | memoryview) -> tuple[int, ...]:
    """Run the compression function over ``len(blocks) // 64`` whole blocks."""
    n = len(blocks) // BLOCK_SIZE
    if n == 0:
        return tuple(h)
    arr = np.frombuffer(blocks, dtype=np.uint8, count=n * BLOCK_SIZE)
    out = _compress(np.array(h, dtype=np.int64), arr, n, _K)
    return tuple(int(v) for v in out)


@dataclass(frozen=True)
class HashState:
    """Chaining values, total bytes consumed, and the unprocessed tail."""

    h: tuple[int, ...] = IV
    length: int = 0
    pending: bytes = field(default=b"")

    def __post_init__(self):
        if len(self.h) != 8:
            raise ValueError("chaining value must hold 8 words")
        if len(self.pending) != self.length % BLOCK_SIZE:
            raise ValueError("pending bytes disagree with length counter")


def hash_init() -> HashState:
    return HashState()


def hash_update(state: HashState, data: bytes) -> HashState:
    if not data:
        return state
    length = state.length + len(data)
    if length > MAX_LENGTH:
        raise MessageTooLong(f"message exceeds {MAX_LENGTH} bytes")
    h = state.h
    view = memoryview(data)
    if state.pending:
        need = BLOCK_SIZE - len(state.pending)
        if len(data) < need:
            return HashState(h, length, state.pending + bytes(data))
        h = compress(h, state.pending + bytes(view[:need]))
        view = view[need:]
    whole = len(view) - len(view) % BLOCK_SIZE
    h = compress(h, view[:whole])
    return HashState(h, length, bytes(view[whole:]))


def _padding(length: int) -> bytes:
    # bytes, not bits, are counted internally; convert only here
    pad_len = (55 - length) % BLOCK_SIZE
    return b"\x80" + b"\x00" * pad_len + struct.pack(">Q", (length * 8) & MAX_LENGTH)


def hash_finalize(state: HashState) -> bytes:
    tail = state.pending + _padding(state.length)
    h = compress(state.h, tail)
    return struct.pack(">8I", *h)


def sha256(data: bytes) -> bytes:
    return hash_finalize(hash_update(hash_init(), data))


@dataclass(frozen=True)
class BaseEnclaveHash:
    """Serializable snapshot of a block-aligned :class:`HashState`."""

    h: tuple[int, ...]
    length: int

    def __post_init__(self):
        if len(self.h) != 8 or any(not 0 <= v <= 0xFFFFFFFF for v in self.h):
            raise MalformedSnapshot("chaining value must be 8 x 32-bit words")
        if not 0 <= self.length <= MAX_LENGTH or self.length % BLOCK_SIZE:
            raise MalformedSnapshot(f"length {self.length} is not block aligned")

    def to_bytes(self) -> bytes:
        return _SNAPSHOT.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, *self.h, self.length)

    @classmethod
    def from_bytes(cls, raw: bytes) -> BaseEnclaveHash:
        if len(raw) != SNAPSHOT_SIZE:
            raise MalformedSnapshot(f"snapshot must be {SNAPSHOT_SIZE} bytes, got {len(raw)}")
        magic, version, *h, length = _SNAPSHOT.unpack(raw)
        if magic != SNAPSHOT_MAGIC:
            raise MalformedSnapshot(f"bad magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise MalformedSnapshot(f"unsupported version {version}")
        return cls(tuple(h), length)

    def hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def from_hex(cls, text: str) -> BaseEnclaveHash:
        try:
            raw = bytes.fromhex(text.strip())
        except ValueError as exc:
            raise MalformedSnapshot(f"not hex: {exc}") from None
        return cls.from_bytes(raw)


def export_base(state: HashState) -> BaseEnclaveHash:
    if state.pending:
        raise NotBlockAligned(
            f"snapshot requested at byte {state.length}, {len(state.pending)} bytes into a block"
        )
    return BaseEnclaveHash(state.h, state.length)


def resume_base(base: BaseEnclaveHash | bytes) -> HashState:
    if isinstance(base, (bytes, bytearray)):
        base = BaseEnclaveHash.from_bytes(bytes(base))
    elif not isinstance(base, BaseEnclaveHash):
        raise MalformedSnapshot(f"cannot resume from {type(base).__name__}")
    return HashState(base.h, base.length, b"")


def finalize_base(base: BaseEnclaveHash | bytes) -> bytes:
    """Finalize a snapshot directly.

    A block-aligned state always pads into exactly one extra block, so the
    cost is a single compression call whatever ``base.length`` is.
    """
    state = resume_base(base)
    return struct.pack(">8I", *compress(state.h, _padding(state.length)))
