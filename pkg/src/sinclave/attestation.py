"""Reports and quotes, the evidence an initialized enclave can produce.

A report is MAC'd with a platform-local key; a quote re-signs it with the
platform quoting key together with a verifier nonce. Both describe the
enclave as it was at EINIT: nothing configured afterwards shows up.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from . import rng
from .enclave import InitializedEnclave
from .errors import BadReportMac, NonceMismatch, ProtocolError, QuoteSigInvalid
from .sigstruct import MODULUS_SIZE, SignerKey, generate_signer_key

REPORTDATA_SIZE = 64
NONCE_SIZE = 32
_BODY = struct.Struct(">32s32s16sHH64s")
REPORT_BODY_SIZE = _BODY.size
REPORT_SIZE = REPORT_BODY_SIZE + 32
QUOTE_SIZE = REPORT_SIZE + NONCE_SIZE + MODULUS_SIZE


@dataclass(frozen=True)
class Report:
    mrenclave: bytes
    mrsigner: bytes
    attributes: bytes
    isvprodid: int
    isvsvn: int
    reportdata: bytes
    mac: bytes = bytes(32)

    def body(self) -> bytes:
        return _BODY.pack(
            self.mrenclave, self.mrsigner, self.attributes, self.isvprodid, self.isvsvn, self.reportdata
        )

    def to_bytes(self) -> bytes:
        return self.body() + self.mac

    @classmethod
    def from_bytes(cls, raw: bytes) -> Report:
        if len(raw) != REPORT_SIZE:
            raise ProtocolError(f"report must be {REPORT_SIZE} bytes, got {len(raw)}")
        mre, mrs, attrs, prod, svn, rd = _BODY.unpack_from(raw)
        return cls(mre, mrs, attrs, prod, svn, rd, bytes(raw[REPORT_BODY_SIZE:]))


@dataclass(frozen=True)
class Quote:
    report: Report
    nonce: bytes
    signature: bytes

    def to_bytes(self) -> bytes:
        return self.report.to_bytes() + self.nonce + self.signature

    @classmethod
    def from_bytes(cls, raw: bytes) -> Quote:
        if len(raw) != QUOTE_SIZE:
            raise ProtocolError(f"quote must be {QUOTE_SIZE} bytes, got {len(raw)}")
        report = Report.from_bytes(raw[:REPORT_SIZE])
        nonce = bytes(raw[REPORT_SIZE : REPORT_SIZE + NONCE_SIZE])
        return cls(report, nonce, bytes(raw[REPORT_SIZE + NONCE_SIZE :]))

    def b64(self) -> str:
        return base64.b64encode(self.to_bytes()).decode()

    @classmethod
    def from_b64(cls, text: str) -> Quote:
        try:
            return cls.from_bytes(base64.b64decode(text, validate=True))
        except ValueError as exc:
            raise ProtocolError(f"bad quote encoding: {exc}") from None


@dataclass(frozen=True)
class PlatformKeys:
    """Stand-in for the hardware: report MAC key plus quoting key."""

    report_mac_key: bytes
    quoting_key: SignerKey
    platform_id: str = "platform-0"

    def public_key(self) -> rsa.RSAPublicKey:
        return self.quoting_key.public_key()

    def public_pem(self) -> bytes:
        return self.quoting_key.public_pem()

    def _mac(self, body: bytes) -> bytes:
        return hmac.new(self.report_mac_key, body, hashlib.sha256).digest()


def generate_platform(platform_id: str = "platform-0", seed: bytes | str | None = None) -> PlatformKeys:
    if seed is not None:
        stream = rng.DeterministicStream(seed, f"platform-mac:{platform_id}")
        mac_key = stream.read(32)
        quoting = generate_signer_key(f"{seed!r}:quoting:{platform_id}")
    else:
        mac_key = rng.token_bytes(32)
        quoting = generate_signer_key()
    return PlatformKeys(mac_key, quoting, platform_id)


def load_public_key(pem: bytes) -> rsa.RSAPublicKey:
    key = serialization.load_pem_public_key(pem)
    if not isinstance(key, rsa.RSAPublicKey):
        raise ValueError("expected an RSA public key")
    return key


def create_report(platform: PlatformKeys, enclave: InitializedEnclave, reportdata: bytes) -> Report:
    """EREPORT: only EINIT-time identity goes in, ``runtime_config`` never does."""
    if len(reportdata) != REPORTDATA_SIZE:
        raise ValueError(f"reportdata must be {REPORTDATA_SIZE} bytes")
    unsigned = Report(
        enclave.mrenclave,
        enclave.mrsigner,
        enclave.attributes,
        enclave.isvprodid,
        enclave.isvsvn,
        bytes(reportdata),
    )
    return Report(**{**unsigned.__dict__, "mac": platform._mac(unsigned.body())})


def check_report_mac(platform: PlatformKeys, report: Report) -> None:
    if not hmac.compare_digest(platform._mac(report.body()), report.mac):
        raise BadReportMac("report MAC does not verify under this platform")


def _quote_digest_input(report: Report, nonce: bytes) -> bytes:
    return report.to_bytes() + nonce


def create_quote(platform: PlatformKeys, report: Report, nonce: bytes) -> Quote:
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    check_report_mac(platform, report)
    sig = platform.quoting_key.sign(_quote_digest_input(report, nonce))
    return Quote(report, bytes(nonce), sig)


def verify_quote(quote: Quote, platform_pub: rsa.RSAPublicKey, expected_nonce: bytes) -> Report:
    """Authenticate the quote and its freshness; replay detection is up to the caller."""
    try:
        platform_pub.verify(
            quote.signature, _quote_digest_input(quote.report, quote.nonce), padding.PKCS1v15(), hashes.SHA256()
        )
    except (InvalidSignature, ValueError):
        raise QuoteSigInvalid("quote signature does not verify") from None
    if not hmac.compare_digest(quote.nonce, expected_nonce):
        raise NonceMismatch("quote nonce is not the session nonce")
    return quote.report


def bind_channel(channel_pub: bytes) -> bytes:
    return hashlib.sha256(channel_pub).digest() + bytes(32)
