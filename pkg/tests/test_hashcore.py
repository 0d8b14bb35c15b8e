import hashlib

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from sinclave import hashcore
from sinclave.errors import MalformedSnapshot, MessageTooLong, NotBlockAligned
from sinclave.hashcore import (
    IV,
    SNAPSHOT_SIZE,
    BaseEnclaveHash,
    HashState,
    export_base,
    finalize_base,
    hash_finalize,
    hash_init,
    hash_update,
    resume_base,
    sha256,
)

# FIPS 180-2 appendix B vectors
FIPS_VECTORS = [
    (b"", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    (b"abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
    (
        b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1",
    ),
    (b"a" * 1_000_000, "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0"),
]


@pytest.mark.parametrize("message,expected", FIPS_VECTORS, ids=["empty", "abc", "448bit", "million-a"])
def test_fips_vectors(message, expected):
    assert sha256(message).hex() == expected


def test_fresh_state():
    s = hash_init()
    assert s.h == IV and s.length == 0 and s.pending == b""
    assert hash_init() == hash_init()


def test_empty_update_is_identity():
    assert hash_update(hash_init(), b"") == hash_init()


def test_64_zero_bytes():
    assert hash_finalize(hash_update(hash_init(), bytes(64))) == hashlib.sha256(bytes(64)).digest()


@pytest.mark.parametrize("n", [0, 1, 55, 56, 57, 63, 64, 65, 119, 120, 127, 128, 129, 1000])
def test_padding_boundaries(n):
    msg = bytes(i % 251 for i in range(n))
    assert sha256(msg) == hashlib.sha256(msg).digest()


@given(st.binary(max_size=2048), st.binary(max_size=2048))
def test_update_is_concatenation(a, b):
    two = hash_update(hash_update(hash_init(), a), b)
    one = hash_update(hash_init(), a + b)
    assert two == one
    assert hash_finalize(two) == hashlib.sha256(a + b).digest()


@given(st.lists(st.binary(max_size=200), max_size=12))
def test_state_invariants(chunks):
    s = hash_init()
    for c in chunks:
        s = hash_update(s, c)
    total = sum(map(len, chunks))
    assert s.length == total
    assert len(s.pending) == total % 64


def test_finalize_is_pure():
    s = hash_update(hash_init(), b"abc")
    assert hash_finalize(s) == hash_finalize(s)
    assert s.length == 3


def test_length_overflow_rejected():
    near = hashcore.MAX_LENGTH - 3
    s = HashState(IV, near, bytes(near % 64))
    with pytest.raises(MessageTooLong):
        hash_update(s, b"12345")


def test_export_fresh_state():
    b = export_base(hash_init())
    assert b.h == IV and b.length == 0


def test_export_counts_bytes():
    assert export_base(hash_update(hash_init(), bytes(128))).length == 128


def test_export_mid_block_rejected():
    with pytest.raises(NotBlockAligned):
        export_base(hash_update(hash_init(), bytes(100)))


def test_snapshot_layout():
    b = export_base(hash_update(hash_init(), bytes(192)))
    raw = b.to_bytes()
    assert len(raw) == SNAPSHOT_SIZE == 45
    assert raw[:4] == b"SINB" and raw[4] == 1
    assert int.from_bytes(raw[37:], "big") == 192
    assert raw[5:9] == b.h[0].to_bytes(4, "big")
    assert len(b.hex()) == 90 and b.hex() == b.hex().lower()
    assert BaseEnclaveHash.from_hex(b.hex()) == b


@pytest.mark.parametrize(
    "mutate",
    [
        lambda r: b"XINB" + r[4:],
        lambda r: r[:4] + b"\x02" + r[5:],
        lambda r: r[:-1] + b"\x01",
        lambda r: r[:-1],
        lambda r: r + b"\x00",
    ],
    ids=["magic", "version", "unaligned", "short", "long"],
)
def test_malformed_snapshots(mutate):
    raw = export_base(hash_update(hash_init(), bytes(64))).to_bytes()
    with pytest.raises(MalformedSnapshot):
        resume_base(mutate(raw))
    with pytest.raises(MalformedSnapshot):
        finalize_base(mutate(raw))


def test_bad_hex_snapshot():
    with pytest.raises(MalformedSnapshot):
        BaseEnclaveHash.from_hex("zz" * 45)


@given(st.binary(max_size=1024), st.integers(0, 16), st.binary(max_size=300))
def test_resume_continues_stream(prefix_tail, blocks, tail):
    prefix = (prefix_tail * 64)[: blocks * 64].ljust(blocks * 64, b"\x5a")
    s = hash_update(hash_init(), prefix)
    snap = export_base(s)
    assert resume_base(snap) == s
    assert export_base(resume_base(snap)) == snap
    resumed = resume_base(BaseEnclaveHash.from_bytes(snap.to_bytes()))
    assert hash_finalize(hash_update(resumed, tail)) == hashlib.sha256(prefix + tail).digest()


@given(st.integers(0, 40))
def test_finalize_base_matches_finalize(blocks):
    s = hash_update(hash_init(), bytes(range(64)) * blocks)
    b = export_base(s)
    assert finalize_base(b) == hash_finalize(resume_base(b)) == hash_finalize(s)


def test_finalize_base_empty():
    assert finalize_base(export_base(hash_init())) == hashlib.sha256(b"").digest()


@pytest.mark.parametrize("length", [0, 64, 2048, 64 << 20, (1 << 40)])
def test_finalize_base_single_compression(monkeypatch, length):
    seen = []
    real = hashcore.compress

    def counting(h, blocks):
        seen.append(len(blocks) // 64)
        return real(h, blocks)

    monkeypatch.setattr(hashcore, "compress", counting)
    finalize_base(BaseEnclaveHash(IV, length))
    assert sum(seen) <= 2


@settings(max_examples=50)
@given(st.binary(min_size=0, max_size=600))
def test_compress_kernel_against_reference(data):
    # the JIT kernel and the plain python path must agree
    blocks = data[: len(data) - len(data) % 64]
    h_jit = hashcore.compress(IV, blocks)
    h_py = IV
    if blocks:
        import numpy as np

        fn = getattr(hashcore._compress, "py_func", hashcore._compress)
        out = fn(np.array(IV, dtype=np.int64), np.frombuffer(blocks, dtype=np.uint8), len(blocks) // 64, hashcore._K)
        h_py = tuple(int(v) for v in out)
    assert h_jit == h_py
