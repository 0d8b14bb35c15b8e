"""The reuse attack: a reconfigured enclave as report server plus a TEE impersonator.

The adversary owns the starter, the network and any client code, but not
the platform keys or the verifier's signing keys. It can still ask the
platform to EREPORT/quote on behalf of an enclave it runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import rng
from .attestation import PlatformKeys, Report, bind_channel, create_quote, create_report
from .enclave import InitializedEnclave
from .errors import AttestationRejected
from .scenario import Deployment, deploy
from .starter import construct_common, new_channel_key, start
from .transport import VerifierClient
from .verifier import Mode, SecretsBundle

log = logging.getLogger(__name__)

REPORT_SERVER_CONFIG = {"entrypoint": "report_server.py", "listen": "0.0.0.0:7000"}

EXPECTED_CODES = {"a": "E_TOKEN_UNKNOWN", "b": "E_TOKEN_USED", "c": "E_MRENCLAVE_MISMATCH"}


class SecurityRegression(AssertionError):
    """A singleton-mode attack strategy obtained secrets."""


@dataclass
class ReportServer:
    enclave: InitializedEnclave
    platform: PlatformKeys
    address: str = "in-process"

    def report(self, reportdata: bytes) -> Report:
        """Any 64-byte reportdata is accepted: this is the whole capability."""
        return create_report(self.platform, self.enclave, reportdata)


@dataclass
class Impersonator:
    verifier_address: str
    policy_name: str
    channel_pub: bytes = field(default_factory=lambda: new_channel_key()[1])


def configure_report_server(
    enclave: InitializedEnclave, platform: PlatformKeys, config: dict | None = None
) -> ReportServer:
    """Reconfigure a running enclave; its evidence does not change."""
    enclave.configure(dict(config or REPORT_SERVER_CONFIG))
    return ReportServer(enclave, platform)


def _forged_quote(client: VerifierClient, imp: Impersonator, server: ReportServer):
    report = server.report(bind_channel(imp.channel_pub))
    return create_quote(server.platform, report, client.nonce)


def run_attack_naive(imp: Impersonator, server: ReportServer) -> SecretsBundle:
    with VerifierClient(imp.verifier_address) as client:
        quote = _forged_quote(client, imp, server)
        config = client.attest_naive(quote, imp.channel_pub)
    log.info("naive verifier released %d entries to the impersonator", len(config.entries))
    return SecretsBundle(config.entries)


def run_attack_singleton(
    imp: Impersonator,
    server: ReportServer,
    strategy: str,
    stolen_token: bytes | None = None,
    common_sigstruct=None,
) -> str:
    """Try one strategy against a singleton verifier and return its error code.

    a: invent a token; b: replay ``stolen_token`` (already consumed);
    c: obtain a fresh token but answer with the report server's evidence.
    """
    if strategy not in EXPECTED_CODES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "b" and stolen_token is None:
        raise ValueError("strategy b needs a consumed token to replay")
    if strategy == "c" and common_sigstruct is None:
        raise ValueError("strategy c needs the common SIGSTRUCT to request a token")
    with VerifierClient(imp.verifier_address) as client:
        if strategy == "a":
            token = rng.token_bytes(32)
        elif strategy == "b":
            token = stolen_token
        else:
            token, _, _, _ = client.request_singleton(imp.policy_name, common_sigstruct)
        quote = _forged_quote(client, imp, server)
        try:
            config = client.attest(quote, token, imp.channel_pub)
        except AttestationRejected as exc:
            return exc.code
    raise SecurityRegression(f"strategy {strategy} obtained {sorted(config.entries)}")


@dataclass
class DemoOutcome:
    mode: str
    strategy: str | None
    expected: str
    observed: str
    secrets: SecretsBundle | None
    victim_secrets: SecretsBundle

    @property
    def ok(self) -> bool:
        return self.observed == self.expected


def _report_server(dep: Deployment) -> ReportServer:
    enclave = construct_common(dep.start_request())
    return configure_report_server(enclave, dep.platform)


def demo(mode: str, strategy: str | None = None) -> DemoOutcome:
    """Run one attack scenario end to end against an in-process verifier."""
    with deploy(Mode(mode)) as dep:
        server = _report_server(dep)
        imp = Impersonator(dep.address, dep.policy.name)
        victim = dep.policy.secrets
        if mode == Mode.NAIVE.value:
            stolen = run_attack_naive(imp, server)
            observed = "secrets" if stolen == victim else "wrong-secrets"
            return DemoOutcome(mode, None, "secrets", observed, stolen, victim)
        strategy = strategy or "a"
        stolen_token = None
        if strategy == "b":
            # the honest singleton starts first and consumes its token
            stolen_token = start(dep.start_request()).token
        try:
            code = run_attack_singleton(imp, server, strategy, stolen_token, dep.common_sigstruct)
        except SecurityRegression as exc:
            log.error("%s", exc)
            return DemoOutcome(mode, strategy, EXPECTED_CODES[strategy], "secrets", None, victim)
        return DemoOutcome(mode, strategy, EXPECTED_CODES[strategy], code, None, victim)
