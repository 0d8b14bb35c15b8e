"""Ready-made deployments: keys, a demo enclave, a registered policy and a live verifier."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import rng
from .attestation import PlatformKeys, generate_platform
from .enclave import (
    PAGE_SIZE,
    PT_REG,
    PT_TCS,
    SI_R,
    SI_W,
    SI_X,
    EnclaveBlueprint,
    InstancePage,
    Page,
    PageSecInfo,
    base_hash_of,
    extend_with_instance_page,
    make_attributes,
)
from .sigstruct import SignerKey, SigStruct, generate_signer_key, sign_sigstruct
from .starter import StartRequest
from .transport import VerifierServer, start_server
from .verifier import Mode, Policy, SecretsBundle, Verifier

DEMO_POLICY = "python-app"


def demo_blueprint(enclave_size: int = 16 * PAGE_SIZE) -> EnclaveBlueprint:
    """A small interpreter-like enclave: code, one TCS, data; last slot left free."""
    layout = [
        PT_REG | SI_R | SI_X,
        PT_REG | SI_R | SI_X,
        PT_REG | SI_R | SI_X,
        PT_TCS,
        PT_REG | SI_R | SI_W,
        PT_REG | SI_R | SI_W,
    ]
    pages = []
    for i, flags in enumerate(layout):
        content = rng.token_bytes(PAGE_SIZE) if flags & SI_X else bytes(PAGE_SIZE)
        pages.append(Page(i * PAGE_SIZE, content, PageSecInfo(flags)))
    return EnclaveBlueprint(enclave_size, make_attributes(debug=False), tuple(pages))


def demo_secrets() -> SecretsBundle:
    return SecretsBundle(
        {
            "PYTHON_SCRIPT": "/app/train.py",
            "DB_PASSWORD": rng.token_bytes(16).hex(),
            "API_TOKEN": rng.token_bytes(24).hex(),
        }
    )


def common_sigstruct_for(
    blueprint: EnclaveBlueprint, signer: SignerKey, isvprodid: int = 1, isvsvn: int = 1
) -> SigStruct:
    """Sign the common enclave: the blueprint plus a zeroed instance page."""
    mrenclave = extend_with_instance_page(
        base_hash_of(blueprint), InstancePage.common(), blueprint.instance_page_offset
    )
    return sign_sigstruct(
        signer, mrenclave, attributes=blueprint.attributes, isvprodid=isvprodid, isvsvn=isvsvn
    )


def make_policy(
    name: str,
    blueprint: EnclaveBlueprint,
    signer: SignerKey,
    secrets: SecretsBundle,
    mode: Mode | str = Mode.SINGLETON,
    common: SigStruct | None = None,
) -> Policy:
    return Policy(
        name=name,
        base_hash=base_hash_of(blueprint),
        common_sigstruct=common or common_sigstruct_for(blueprint, signer),
        instance_page_offset=blueprint.instance_page_offset,
        secrets=secrets,
        mode=Mode(mode),
        signer_key=signer,
    )


@dataclass
class Deployment:
    signer: SignerKey
    platform: PlatformKeys
    verifier: Verifier
    blueprint: EnclaveBlueprint
    policy: Policy
    server: VerifierServer | None = None

    @property
    def address(self) -> str:
        if self.server is None:
            raise RuntimeError("deployment has no running verifier server")
        return self.server.address

    @property
    def common_sigstruct(self) -> SigStruct:
        return self.policy.common_sigstruct

    def start_request(self) -> StartRequest:
        address = self.server.address if self.server is not None else ""
        return StartRequest(self.policy.name, self.blueprint, self.common_sigstruct, address, self.platform)

    def close(self) -> None:
        if self.server is not None:
            self.server.shutdown()
            self.server.server_close()
            self.server = None

    def __enter__(self) -> Deployment:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def deploy(
    mode: Mode | str = Mode.SINGLETON,
    *,
    serve: bool = True,
    listen: str = "127.0.0.1:0",
    journal: str | Path | None = None,
    name: str = DEMO_POLICY,
) -> Deployment:
    """Draw every key and value from the process RNG, so a seeded RNG replays it all."""
    signer = generate_signer_key()
    platform = generate_platform()
    verifier = Verifier(generate_signer_key(), journal=journal)
    verifier.register_platform(platform.public_key())
    blueprint = demo_blueprint()
    policy = make_policy(name, blueprint, signer, demo_secrets(), mode)
    verifier.register_policy(policy)
    server = start_server(listen, verifier) if serve else None
    return Deployment(signer, platform, verifier, blueprint, policy, server)
