import hashlib
import hmac

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sinclave.attestation import (
    QUOTE_SIZE,
    REPORT_SIZE,
    Quote,
    Report,
    bind_channel,
    check_report_mac,
    create_quote,
    create_report,
    generate_platform,
    load_public_key,
    verify_quote,
)
from sinclave.enclave import ConfigurationRefused, InstancePage, einit, make_attributes
from sinclave.errors import BadReportMac, NonceMismatch, ProtocolError, QuoteSigInvalid
from sinclave.sigstruct import sign_sigstruct

NONCE = bytes(range(32))
RD = bytes(range(64))


@pytest.fixture
def enclave(signer):
    mre = hashlib.sha256(b"attested").digest()
    ss = sign_sigstruct(signer, mre, attributes=make_attributes(), isvprodid=5, isvsvn=6, date=0)
    return einit(mre, ss, attributes=make_attributes())


@pytest.fixture(scope="module")
def quote(signer, platform):
    mre = hashlib.sha256(b"quoted").digest()
    enc = einit(mre, sign_sigstruct(signer, mre, date=0), attributes=bytes(16))
    return create_quote(platform, create_report(platform, enc, RD), NONCE)


@pytest.fixture(scope="module")
def other_platform():
    return generate_platform("platform-other", seed="platform-other")


def test_report_fields(platform, enclave, signer):
    r = create_report(platform, enclave, RD)
    assert len(r.to_bytes()) == REPORT_SIZE
    assert (r.mrenclave, r.mrsigner, r.isvprodid, r.isvsvn) == (enclave.mrenclave, signer.mrsigner, 5, 6)
    assert r.reportdata == RD
    expected_mac = hmac.new(platform.report_mac_key, r.body(), hashlib.sha256).digest()
    assert r.mac == expected_mac
    assert Report.from_bytes(r.to_bytes()) == r


def test_reportdata_length_enforced(platform, enclave):
    with pytest.raises(ValueError):
        create_report(platform, enclave, bytes(63))


def test_report_is_stale(platform, enclave):
    before = create_report(platform, enclave, RD).to_bytes()
    enclave.configure({"entrypoint": "anything-else.py"})
    enclave.configure({"x": "y" * 1000})
    assert create_report(platform, enclave, RD).to_bytes() == before


def test_singleton_refuses_unattested_config(signer, platform):
    mre = hashlib.sha256(b"singleton").digest()
    ss = sign_sigstruct(signer, mre, date=0)
    page = InstancePage(b"\x01" * 32, b"\x02" * 32)
    enc = einit(mre, ss, attributes=bytes(16), instance_page=page)
    with pytest.raises(ConfigurationRefused):
        enc.configure({"a": "b"})
    enc.configure({"a": "b"}, attested=True)
    with pytest.raises(ConfigurationRefused):
        enc.configure({"a": "c"}, attested=True)


def test_mac_flip_rejected(platform, enclave):
    r = create_report(platform, enclave, RD)
    bad = Report(**{**r.__dict__, "mac": bytes([r.mac[0] ^ 1]) + r.mac[1:]})
    with pytest.raises(BadReportMac):
        check_report_mac(platform, bad)
    with pytest.raises(BadReportMac):
        create_quote(platform, bad, NONCE)


def test_report_from_other_platform_not_quotable(platform, other_platform, enclave):
    r = create_report(other_platform, enclave, RD)
    with pytest.raises(BadReportMac):
        create_quote(platform, r, NONCE)


def test_quote_roundtrip(platform, enclave):
    q = create_quote(platform, create_report(platform, enclave, RD), NONCE)
    assert len(q.to_bytes()) == QUOTE_SIZE
    assert Quote.from_b64(q.b64()) == q
    assert verify_quote(q, platform.public_key(), NONCE) == q.report


def test_quote_wrong_platform(platform, other_platform, enclave):
    q = create_quote(platform, create_report(platform, enclave, RD), NONCE)
    with pytest.raises(QuoteSigInvalid):
        verify_quote(q, other_platform.public_key(), NONCE)


def test_quote_nonce_mismatch(platform, enclave):
    q = create_quote(platform, create_report(platform, enclave, RD), NONCE)
    with pytest.raises(NonceMismatch):
        verify_quote(q, platform.public_key(), bytes(32))


def test_quote_nonce_size(platform, enclave):
    with pytest.raises(ValueError):
        create_quote(platform, create_report(platform, enclave, RD), bytes(16))


@settings(max_examples=40)
@given(st.integers(0, REPORT_SIZE + 32 - 1), st.integers(1, 255))
def test_quote_perturbation_rejected(platform, quote, pos, delta):
    # any change to report or nonce breaks the quoting signature
    raw = bytearray(quote.to_bytes())
    raw[pos] = (raw[pos] + delta) % 256
    bad = Quote.from_bytes(bytes(raw))
    with pytest.raises(QuoteSigInvalid):
        verify_quote(bad, platform.public_key(), bad.nonce)


def test_quote_decoding_errors():
    with pytest.raises(ProtocolError):
        Quote.from_bytes(bytes(10))
    with pytest.raises(ProtocolError):
        Quote.from_b64("@@@")


def test_load_public_key(platform):
    pub = load_public_key(platform.public_pem())
    assert pub.public_numbers() == platform.public_key().public_numbers()


def test_seeded_platform_reproducible(platform):
    again = generate_platform("platform-test", seed="platform-test")
    assert again.report_mac_key == platform.report_mac_key
    assert again.quoting_key.modulus == platform.quoting_key.modulus


def test_bind_channel():
    pub = b"\x42" * 32
    rd = bind_channel(pub)
    assert len(rd) == 64 and rd[:32] == hashlib.sha256(pub).digest() and rd[32:] == bytes(32)
    assert bind_channel(b"\x43" * 32) != rd
