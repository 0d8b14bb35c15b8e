import hashlib
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinclave.errors import KeyMismatch, SigInvalid
from sinclave.sigstruct import (
    OFFSETS,
    SIGNED_SIZE,
    TOTAL_SIZE,
    SignerKey,
    SigStruct,
    derive_singleton_sigstruct,
    generate_signer_key,
    mrsigner_of,
    sign_sigstruct,
    verify_sigstruct,
)

MRE = hashlib.sha256(b"enclave").digest()


@pytest.fixture(scope="module")
def ss(signer):
    return sign_sigstruct(signer, MRE, isvprodid=7, isvsvn=2, date=1_700_000_000)


def test_seeded_keys_reproducible(signer):
    assert generate_signer_key("test-signer").modulus == signer.modulus
    assert generate_signer_key("another").modulus != signer.modulus
    assert int.from_bytes(signer.modulus, "big").bit_length() == 3072


def test_mrsigner_is_modulus_digest(signer, ss):
    assert signer.mrsigner == hashlib.sha256(signer.modulus).digest()
    assert ss.mrsigner == signer.mrsigner == mrsigner_of(ss)


def test_sizes_and_layout(ss, signer):
    body = ss.canonical_bytes()
    assert len(body) == SIGNED_SIZE == 472
    assert len(ss.to_bytes()) == TOTAL_SIZE
    assert body[:8] == b"SINSIG01"
    assert body[OFFSETS["mrenclave"] : OFFSETS["mrenclave"] + 32] == MRE
    assert body[OFFSETS["modulus"] : OFFSETS["modulus"] + 384] == signer.modulus
    assert body[OFFSETS["isvprodid"] : OFFSETS["isvprodid"] + 2] == b"\x00\x07"
    assert body[OFFSETS["exponent"] :] == (65537).to_bytes(4, "big")


def test_signing_deterministic(signer, ss):
    again = sign_sigstruct(signer, MRE, isvprodid=7, isvsvn=2, date=1_700_000_000)
    assert again.to_bytes() == ss.to_bytes()


def test_isvsvn_changes_only_its_field(signer, ss):
    other = sign_sigstruct(signer, MRE, isvprodid=7, isvsvn=3, date=1_700_000_000)
    a, b = ss.canonical_bytes(), other.canonical_bytes()
    diff = [i for i in range(SIGNED_SIZE) if a[i] != b[i]]
    assert diff and all(OFFSETS["isvsvn"] <= i < OFFSETS["isvsvn"] + 2 for i in diff)
    assert ss.signature != other.signature


def test_roundtrip_encodings(ss):
    assert SigStruct.from_bytes(ss.to_bytes()) == ss
    assert SigStruct.from_b64(ss.b64()) == ss
    assert bytes.fromhex(ss.hex()) == ss.to_bytes()


def test_verify_accepts(ss, signer):
    assert verify_sigstruct(ss).mrsigner == signer.mrsigner
    assert verify_sigstruct(ss.to_bytes()).mrsigner == signer.mrsigner


@pytest.mark.parametrize("field,value", [("isvsvn", 9), ("isvprodid", 0), ("date", 5), ("mrenclave", bytes(32))])
def test_field_tamper_rejected(ss, field, value):
    with pytest.raises(SigInvalid):
        verify_sigstruct(replace(ss, **{field: value}))


def test_modulus_swap_rejected(ss, other_signer):
    with pytest.raises(SigInvalid):
        verify_sigstruct(replace(ss, modulus=other_signer.modulus))


def test_wrong_exponent_rejected(ss):
    with pytest.raises(SigInvalid):
        verify_sigstruct(replace(ss, exponent=3))


def test_signature_flip_rejected(ss):
    sig = bytearray(ss.signature)
    sig[-1] ^= 1
    with pytest.raises(SigInvalid):
        verify_sigstruct(replace(ss, signature=bytes(sig)))


@settings(max_examples=30)
@given(st.integers(0, SIGNED_SIZE - 1), st.integers(1, 255))
def test_any_body_byte_flip_rejected(ss, pos, delta):
    raw = bytearray(ss.to_bytes())
    raw[pos] = (raw[pos] + delta) % 256
    with pytest.raises(SigInvalid):
        verify_sigstruct(bytes(raw))


@pytest.mark.parametrize("cut", [0, 1, SIGNED_SIZE, TOTAL_SIZE - 1])
def test_truncated_rejected(ss, cut):
    with pytest.raises(SigInvalid):
        SigStruct.from_bytes(ss.to_bytes()[:cut])


def test_bad_b64_rejected():
    with pytest.raises(SigInvalid):
        SigStruct.from_b64("not base64!!")


def test_constructor_validation():
    with pytest.raises(ValueError):
        SigStruct(mrenclave=bytes(31))
    with pytest.raises(ValueError):
        SigStruct(mrenclave=MRE, isvsvn=1 << 16)


def test_derive_preserves_fields(ss, signer):
    new_mre = hashlib.sha256(b"singleton").digest()
    derived = derive_singleton_sigstruct(ss, new_mre, signer)
    assert derived.mrenclave == new_mre
    assert verify_sigstruct(derived).mrsigner == ss.mrsigner
    a, b = ss.canonical_bytes(), derived.canonical_bytes()
    lo, hi = OFFSETS["mrenclave"], OFFSETS["mrenclave"] + 32
    assert a[:lo] == b[:lo] and a[hi:] == b[hi:]


def test_derive_key_mismatch(ss, other_signer):
    with pytest.raises(KeyMismatch):
        derive_singleton_sigstruct(ss, bytes(32), other_signer)


def test_derive_refuses_broken_common(ss, signer):
    with pytest.raises(SigInvalid):
        derive_singleton_sigstruct(replace(ss, isvsvn=99), bytes(32), signer)


def test_pem_roundtrip(signer):
    again = SignerKey.from_pem(signer.to_pem())
    assert again.modulus == signer.modulus
    assert b"PUBLIC KEY" in signer.public_pem()


def test_pem_rejects_small_key():
    from cryptography.hazmat.primitives import serialization
    from cryptography.hazmat.primitives.asymmetric import rsa

    small = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    pem = small.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
    )
    with pytest.raises(ValueError):
        SignerKey.from_pem(pem)
