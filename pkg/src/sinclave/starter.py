"""Untrusted launcher plus the simulated in-enclave runtime for the honest flow."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa, x25519

from . import rng
from .attestation import PlatformKeys, bind_channel, create_quote, create_report
from .enclave import EinitToken, EnclaveBlueprint, InitializedEnclave, InstancePage, build_and_measure, einit
from .errors import InvalidLayout, VerifierIdentityMismatch
from .sigstruct import EXPONENT, SigStruct, verify_sigstruct
from .transport import VerifierClient
from .verifier import SecretsBundle, config_transcript

log = logging.getLogger(__name__)


@dataclass
class StartRequest:
    policy_name: str
    blueprint: EnclaveBlueprint
    common_sigstruct: SigStruct
    verifier_address: str
    platform: PlatformKeys

    def __post_init__(self):
        if not self.blueprint.has_instance_slot():
            raise InvalidLayout("blueprint must leave the last page free for the instance page")


@dataclass
class SingletonMaterial:
    token: bytes
    instance_page: InstancePage
    sigstruct: SigStruct
    verifier_identity: bytes


def request_singleton(req: StartRequest) -> SingletonMaterial:
    with VerifierClient(req.verifier_address) as client:
        token, page, ss, identity = client.request_singleton(req.policy_name, req.common_sigstruct)
    verify_sigstruct(ss)
    if page.token != token or page.verifier_identity != identity:
        raise InvalidLayout("instance page does not carry the issued token and verifier identity")
    return SingletonMaterial(token, page, ss, identity)


def _launch(req: StartRequest, page: InstancePage, ss: SigStruct) -> InitializedEnclave:
    _, mrenclave = build_and_measure(req.blueprint.with_instance_page(page))
    return einit(mrenclave, ss, EinitToken(), attributes=req.blueprint.attributes, instance_page=page)


def construct_singleton(req: StartRequest, page: InstancePage, ss: SigStruct) -> InitializedEnclave:
    return _launch(req, page, ss)


def construct_common(req: StartRequest) -> InitializedEnclave:
    """Zeroed instance page plus the shipped SIGSTRUCT; starts without the verifier."""
    return _launch(req, InstancePage.common(), req.common_sigstruct)


def _raw_public(key: x25519.X25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def new_channel_key() -> tuple[x25519.X25519PrivateKey, bytes]:
    key = x25519.X25519PrivateKey.from_private_bytes(rng.token_bytes(32))
    return key, _raw_public(key)


def check_verifier_identity(
    expected_identity: bytes, modulus: bytes, proof: bytes, transcript: bytes
) -> None:
    if hashlib.sha256(modulus).digest() != expected_identity:
        raise VerifierIdentityMismatch("configuration comes from a verifier other than the one in the instance page")
    try:
        pub = rsa.RSAPublicNumbers(EXPONENT, int.from_bytes(modulus, "big")).public_key()
        pub.verify(proof, transcript, padding.PKCS1v15(), hashes.SHA256())
    except (InvalidSignature, ValueError):
        raise VerifierIdentityMismatch("verifier did not prove possession of its identity key") from None


def run_attestation(
    enclave: InitializedEnclave, token: bytes, verifier_address: str, platform: PlatformKeys
) -> SecretsBundle:
    """Attest the singleton and install the configuration it is given."""
    if not enclave.requires_attestation:
        raise InvalidLayout("common enclaves do not attest")
    # single-use channel key per attempt
    _, channel_pub = new_channel_key()
    with VerifierClient(verifier_address) as client:
        report = create_report(platform, enclave, bind_channel(channel_pub))
        quote = create_quote(platform, report, client.nonce)
        config = client.attest(quote, token, channel_pub)
        nonce = client.nonce
    secrets = SecretsBundle(config.entries)
    check_verifier_identity(
        enclave.instance_page.verifier_identity,
        config.verifier_modulus,
        config.proof,
        config_transcript(nonce, token, channel_pub, secrets),
    )
    enclave.configure(secrets.entries, attested=True)
    return secrets


@dataclass
class StartResult:
    enclave: InitializedEnclave
    token: bytes | None
    secrets: SecretsBundle | None


def start(req: StartRequest, common: bool = False) -> StartResult:
    if common:
        enclave = construct_common(req)
        log.info("common enclave %s started without attestation", enclave.mrenclave.hex())
        return StartResult(enclave, None, None)
    material = request_singleton(req)
    enclave = construct_singleton(req, material.instance_page, material.sigstruct)
    secrets = run_attestation(enclave, material.token, req.verifier_address, req.platform)
    return StartResult(enclave, material.token, secrets)

