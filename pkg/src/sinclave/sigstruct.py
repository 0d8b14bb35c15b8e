"""SIGSTRUCT: the signed statement of an enclave's expected identity.

Layout of the signed body (all integers big-endian)::

    0    header        8   b"SINSIG01"
    8    date          8   unix seconds
    16   attributes    16
    32   attr_mask     16
    48   mrenclave     32
    80   isvprodid     2
    82   isvsvn        2
    84   modulus       384
    468  exponent      4
    472  -- end of signed bytes; signature (384) follows
"""

from __future__ import annotations

import base64
import hashlib
import struct
from dataclasses import dataclass, replace
from functools import lru_cache

import gmpy2
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from . import rng
from .errors import KeyMismatch, SigInvalid

HEADER = b"SINSIG01"
KEY_BITS = 3072
MODULUS_SIZE = KEY_BITS // 8
EXPONENT = 65537
SIGNED_SIZE = 472
TOTAL_SIZE = SIGNED_SIZE + MODULUS_SIZE

_BODY = struct.Struct(">8sQ16s16s32sHH384sI")
assert _BODY.size == SIGNED_SIZE

# byte offsets of fields within the signed body
OFFSETS = {
    "header": 0,
    "date": 8,
    "attributes": 16,
    "attribute_mask": 32,
    "mrenclave": 48,
    "isvprodid": 80,
    "isvsvn": 82,
    "modulus": 84,
    "exponent": 468,
}

DEFAULT_ATTRIBUTE_MASK = b"\xff" * 16


@dataclass(frozen=True)
class SignerKey:
    private: rsa.RSAPrivateKey

    @property
    def modulus(self) -> bytes:
        return self.private.public_key().public_numbers().n.to_bytes(MODULUS_SIZE, "big")

    @property
    def mrsigner(self) -> bytes:
        return hashlib.sha256(self.modulus).digest()

    def public_key(self) -> rsa.RSAPublicKey:
        return self.private.public_key()

    def sign(self, data: bytes) -> bytes:
        # PKCS#1 v1.5 is deterministic: equal inputs give equal signatures
        return self.private.sign(data, padding.PKCS1v15(), hashes.SHA256())

    def to_pem(self) -> bytes:
        return self.private.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    def public_pem(self) -> bytes:
        return self.public_key().public_bytes(
            serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
        )

    @classmethod
    def from_pem(cls, data: bytes) -> SignerKey:
        key = serialization.load_pem_private_key(data, password=None)
        if not isinstance(key, rsa.RSAPrivateKey) or key.key_size != KEY_BITS:
            raise ValueError(f"expected an RSA-{KEY_BITS} private key")
        return cls(key)


def _seeded_prime(stream: rng.DeterministicStream, bits: int) -> int:
    while True:
        start = stream.randbits(bits) | (3 << (bits - 2)) | 1
        cand = int(gmpy2.next_prime(start))
        if cand.bit_length() == bits and (cand - 1) % EXPONENT:
            return cand


@lru_cache(maxsize=64)
def _seeded_key(seed: bytes) -> rsa.RSAPrivateKey:
    stream = rng.DeterministicStream(seed, "rsa-3072")
    half = KEY_BITS // 2
    while True:
        p = _seeded_prime(stream, half)
        q = _seeded_prime(stream, half)
        if p != q and (p * q).bit_length() == KEY_BITS:
            break
    if p < q:
        p, q = q, p
    n = p * q
    d = pow(EXPONENT, -1, (p - 1) * (q - 1))
    numbers = rsa.RSAPrivateNumbers(
        p=p,
        q=q,
        d=d,
        dmp1=rsa.rsa_crt_dmp1(d, p),
        dmq1=rsa.rsa_crt_dmq1(d, q),
        iqmp=rsa.rsa_crt_iqmp(p, q),
        public_numbers=rsa.RSAPublicNumbers(EXPONENT, n),
    )
    return numbers.private_key()


def generate_signer_key(seed: bytes | str | int | None = None) -> SignerKey:
    """RSA-3072 keypair; reproducible when ``seed`` is given or the global RNG is seeded."""
    if seed is None and rng.seeded():
        seed = rng.token_bytes(32)
    if seed is None:
        return SignerKey(rsa.generate_private_key(public_exponent=EXPONENT, key_size=KEY_BITS))
    if isinstance(seed, int):
        seed = str(seed)
    if isinstance(seed, str):
        seed = seed.encode()
    return SignerKey(_seeded_key(bytes(seed)))


@dataclass(frozen=True)
class SignerIdentity:
    mrsigner: bytes


@dataclass(frozen=True)
class SigStruct:
    mrenclave: bytes
    attributes: bytes = bytes(16)
    attribute_mask: bytes = DEFAULT_ATTRIBUTE_MASK
    isvprodid: int = 0
    isvsvn: int = 0
    date: int = 0
    modulus: bytes = bytes(MODULUS_SIZE)
    exponent: int = EXPONENT
    signature: bytes = bytes(MODULUS_SIZE)
    header: bytes = HEADER

    def __post_init__(self):
        if len(self.mrenclave) != 32:
            raise ValueError("mrenclave must be 32 bytes")
        if len(self.attributes) != 16 or len(self.attribute_mask) != 16:
            raise ValueError("attributes and mask must be 16 bytes")
        if not (0 <= self.isvprodid < 1 << 16 and 0 <= self.isvsvn < 1 << 16):
            raise ValueError("isvprodid/isvsvn are 16-bit")
        if len(self.modulus) != MODULUS_SIZE or len(self.signature) != MODULUS_SIZE:
            raise ValueError("modulus and signature must be 384 bytes")

    def canonical_bytes(self) -> bytes:
        return canonical_bytes(self)

    def to_bytes(self) -> bytes:
        return self.canonical_bytes() + self.signature

    @classmethod
    def from_bytes(cls, raw: bytes) -> SigStruct:
        if len(raw) != TOTAL_SIZE:
            raise SigInvalid(f"SIGSTRUCT must be {TOTAL_SIZE} bytes, got {len(raw)}")
        header, date, attrs, mask, mre, prod, svn, mod, exp = _BODY.unpack_from(raw)
        if header != HEADER:
            raise SigInvalid(f"bad header {header!r}")
        return cls(
            mrenclave=mre,
            attributes=attrs,
            attribute_mask=mask,
            isvprodid=prod,
            isvsvn=svn,
            date=date,
            modulus=mod,
            exponent=exp,
            signature=bytes(raw[SIGNED_SIZE:]),
            header=header,
        )

    def b64(self) -> str:
        return base64.b64encode(self.to_bytes()).decode()

    @classmethod
    def from_b64(cls, text: str) -> SigStruct:
        try:
            raw = base64.b64decode(text, validate=True)
        except ValueError as exc:
            raise SigInvalid(f"not base64: {exc}") from None
        return cls.from_bytes(raw)

    def hex(self) -> str:
        return self.to_bytes().hex()

    @property
    def mrsigner(self) -> bytes:
        return hashlib.sha256(self.modulus).digest()


def canonical_bytes(ss: SigStruct) -> bytes:
    return _BODY.pack(
        ss.header,
        ss.date,
        ss.attributes,
        ss.attribute_mask,
        ss.mrenclave,
        ss.isvprodid,
        ss.isvsvn,
        ss.modulus,
        ss.exponent,
    )


def sign_sigstruct(
    key: SignerKey,
    mrenclave: bytes,
    *,
    attributes: bytes = bytes(16),
    attribute_mask: bytes = DEFAULT_ATTRIBUTE_MASK,
    isvprodid: int = 0,
    isvsvn: int = 0,
    date: int | None = None,
) -> SigStruct:
    unsigned = SigStruct(
        mrenclave=mrenclave,
        attributes=attributes,
        attribute_mask=attribute_mask,
        isvprodid=isvprodid,
        isvsvn=isvsvn,
        date=rng.now() if date is None else date,
        modulus=key.modulus,
        exponent=EXPONENT,
    )
    return _resign(unsigned, key)


def _resign(ss: SigStruct, key: SignerKey) -> SigStruct:
    return replace(ss, signature=key.sign(canonical_bytes(ss)))


def verify_sigstruct(ss: SigStruct | bytes) -> SignerIdentity:
    """Check the embedded signature and return the signer identity."""
    if not isinstance(ss, SigStruct):
        ss = SigStruct.from_bytes(bytes(ss))
    if ss.header != HEADER:
        raise SigInvalid("bad header")
    if ss.exponent != EXPONENT:
        raise SigInvalid(f"unsupported exponent {ss.exponent}")
    n = int.from_bytes(ss.modulus, "big")
    if n.bit_length() != KEY_BITS:
        raise SigInvalid("modulus is not 3072 bits")
    try:
        pub = rsa.RSAPublicNumbers(ss.exponent, n).public_key()
        pub.verify(ss.signature, canonical_bytes(ss), padding.PKCS1v15(), hashes.SHA256())
    except (InvalidSignature, ValueError) as exc:
        raise SigInvalid(f"signature check failed: {exc.__class__.__name__}") from None
    return SignerIdentity(ss.mrsigner)


def mrsigner_of(ss: SigStruct) -> bytes:
    return verify_sigstruct(ss).mrsigner


def derive_singleton_sigstruct(common: SigStruct, singleton_mrenclave: bytes, key: SignerKey) -> SigStruct:
    """Copy ``common`` with a new MRENCLAVE and a fresh signature."""
    verify_sigstruct(common)
    if key.modulus != common.modulus:
        raise KeyMismatch("signer key does not match the common SIGSTRUCT modulus")
    return _resign(replace(common, mrenclave=bytes(singleton_mrenclave)), key)
