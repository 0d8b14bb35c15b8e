"""The trusted verifier: policies, singleton issuance and exactly-once attestation."""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import logging
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from cryptography.hazmat.primitives.asymmetric import rsa

from . import rng
from .attestation import Quote, Report, bind_channel, load_public_key, verify_quote
from .enclave import InstancePage, extend_with_instance_page
from .errors import AttestationRejected, NonceMismatch, QuoteSigInvalid, SigInvalid, SinclaveError
from .hashcore import BaseEnclaveHash
from .sigstruct import SignerKey, SigStruct, derive_singleton_sigstruct, generate_signer_key, verify_sigstruct

log = logging.getLogger(__name__)

TOKEN_SIZE = 32
_MAX_TOKEN_DRAWS = 8


class Mode(str, enum.Enum):
    NAIVE = "naive"
    SINGLETON = "singleton"


class PolicyInvalid(SinclaveError):
    code = "E_PROTOCOL"


class DuplicateName(SinclaveError):
    code = "E_PROTOCOL"


@dataclass(frozen=True)
class SecretsBundle:
    entries: dict[str, str]

    def canonical(self) -> bytes:
        return json.dumps(self.entries, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class Policy:
    name: str
    base_hash: BaseEnclaveHash
    common_sigstruct: SigStruct
    instance_page_offset: int
    secrets: SecretsBundle
    mode: Mode = Mode.SINGLETON
    signer_key: SignerKey | None = None
    expected_mrsigner: bytes | None = None
    expected_attributes: bytes | None = None
    attribute_mask: bytes | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.expected_mrsigner is None:
            self.expected_mrsigner = self.common_sigstruct.mrsigner
        if self.expected_attributes is None:
            self.expected_attributes = self.common_sigstruct.attributes
        if self.attribute_mask is None:
            self.attribute_mask = self.common_sigstruct.attribute_mask
        if not isinstance(self.secrets, SecretsBundle):
            self.secrets = SecretsBundle(dict(self.secrets))

    @property
    def common_mrenclave(self) -> bytes:
        return self.common_sigstruct.mrenclave

    def check(self) -> None:
        """Raise PolicyInvalid unless the stored material is self-consistent."""
        try:
            identity = verify_sigstruct(self.common_sigstruct)
        except SigInvalid as exc:
            raise PolicyInvalid(f"{self.name}: common SIGSTRUCT does not verify ({exc})") from None
        common = extend_with_instance_page(self.base_hash, InstancePage.common(), self.instance_page_offset)
        if common != self.common_sigstruct.mrenclave:
            raise PolicyInvalid(f"{self.name}: common SIGSTRUCT does not match the base enclave hash")
        if identity.mrsigner != self.expected_mrsigner:
            raise PolicyInvalid(f"{self.name}: expected MRSIGNER disagrees with the common SIGSTRUCT")
        if self.mode is Mode.SINGLETON:
            if self.signer_key is None:
                raise PolicyInvalid(f"{self.name}: singleton policies need the enclave signer key")
            if self.signer_key.modulus != self.common_sigstruct.modulus:
                raise PolicyInvalid(f"{self.name}: signer key does not match the common SIGSTRUCT")

    # policy files
    def to_json(self, key_path: str | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "mode": self.mode.value,
            "base_hash": self.base_hash.hex(),
            "common_sigstruct": self.common_sigstruct.b64(),
            "expected_mrsigner": self.expected_mrsigner.hex(),
            "attributes": self.expected_attributes.hex(),
            "attribute_mask": self.attribute_mask.hex(),
            "instance_page_offset": self.instance_page_offset,
            "secrets": self.secrets.entries,
        }
        if key_path is not None:
            out["signer_key"] = key_path
        elif self.signer_key is not None:
            out["signer_key_pem"] = self.signer_key.to_pem().decode()
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any], base_dir: Path | None = None) -> Policy:
        key = None
        if "signer_key_pem" in data:
            key = SignerKey.from_pem(data["signer_key_pem"].encode())
        elif "signer_key" in data:
            path = Path(data["signer_key"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            key = SignerKey.from_pem(path.read_bytes())
        try:
            return cls(
                name=data["name"],
                mode=Mode(data.get("mode", "singleton")),
                base_hash=BaseEnclaveHash.from_hex(data["base_hash"]),
                common_sigstruct=SigStruct.from_b64(data["common_sigstruct"]),
                instance_page_offset=int(data["instance_page_offset"]),
                secrets=SecretsBundle(dict(data.get("secrets", {}))),
                signer_key=key,
                expected_mrsigner=bytes.fromhex(data["expected_mrsigner"]) if "expected_mrsigner" in data else None,
                expected_attributes=bytes.fromhex(data["attributes"]) if "attributes" in data else None,
                attribute_mask=bytes.fromhex(data["attribute_mask"]) if "attribute_mask" in data else None,
            )
        except (KeyError, ValueError) as exc:
            raise PolicyInvalid(f"bad policy file: {exc}") from None


class TokenState(str, enum.Enum):
    ISSUED = "issued"
    CONSUMED = "consumed"


@dataclass
class TokenRecord:
    token: bytes
    policy_name: str
    expected_mrenclave: bytes
    issued_sigstruct: SigStruct
    state: TokenState = TokenState.ISSUED
    issued_at: int = 0


class TokenJournal:
    """Append-only file of token events, each a u32 length plus a JSON object."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, event: dict[str, Any]) -> None:
        payload = json.dumps(event, sort_keys=True).encode()
        with self._lock, open(self.path, "ab") as fh:
            fh.write(struct.pack(">I", len(payload)) + payload)
            fh.flush()
            os.fsync(fh.fileno())

    def replay(self) -> Iterator[dict[str, Any]]:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        pos = 0
        while pos + 4 <= len(data):
            (n,) = struct.unpack_from(">I", data, pos)
            if pos + 4 + n > len(data):
                log.warning("journal %s: dropping truncated tail record", self.path)
                break
            yield json.loads(data[pos + 4 : pos + 4 + n])
            pos += 4 + n


@dataclass
class Issued:
    token: bytes
    instance_page: InstancePage
    sigstruct: SigStruct


class Verifier:
    def __init__(
        self,
        identity_key: SignerKey | None = None,
        platform_keys: list[rsa.RSAPublicKey] | None = None,
        journal: str | Path | None = None,
    ):
        self.identity_key = identity_key or generate_signer_key()
        self.platform_keys: list[rsa.RSAPublicKey] = list(platform_keys or [])
        self.policies: dict[str, Policy] = {}
        self.tokens: dict[bytes, TokenRecord] = {}
        self.events: list[tuple[str, str, str]] = []
        self._policy_lock = threading.RLock()
        self._token_lock = threading.Lock()
        self.journal = TokenJournal(journal) if journal is not None else None
        if self.journal is not None:
            self._restore()

    @property
    def identity(self) -> bytes:
        return hashlib.sha256(self.identity_key.modulus).digest()

    def register_platform(self, pub: rsa.RSAPublicKey | bytes) -> None:
        if isinstance(pub, bytes):
            pub = load_public_key(pub)
        self.platform_keys.append(pub)

    def _record(self, kind: str, subject: str, outcome: str) -> None:
        self.events.append((kind, subject, outcome))
        log.info("%s %s: %s", kind, subject, outcome)

    # policies

    def register_policy(self, policy: Policy) -> None:
        policy.check()
        with self._policy_lock:
            if policy.name in self.policies:
                raise DuplicateName(f"policy {policy.name!r} already registered")
            self.policies[policy.name] = policy
        self._record("register", policy.name, policy.mode.value)

    def load_policies(self, directory: str | Path) -> int:
        count = 0
        for path in sorted(Path(directory).glob("*.json")):
            self.register_policy(Policy.from_json(json.loads(path.read_text()), base_dir=path.parent))
            count += 1
        return count

    def check_policies(self) -> None:
        with self._policy_lock:
            for policy in self.policies.values():
                policy.check()

    def _policy(self, name: str) -> Policy:
        with self._policy_lock:
            policy = self.policies.get(name)
        if policy is None:
            raise AttestationRejected("E_UNKNOWN_POLICY", f"no policy named {name!r}")
        return policy

    # singleton issuance

    def instance_page_for(self, token: bytes) -> InstancePage:
        return InstancePage(token=token, verifier_identity=self.identity)

    def expected_mrenclave(self, policy: Policy | str, token: bytes) -> bytes:
        if isinstance(policy, str):
            policy = self._policy(policy)
        page = self.instance_page_for(token)
        return extend_with_instance_page(policy.base_hash, page, policy.instance_page_offset)

    def issue_singleton(self, policy_name: str, presented: SigStruct | bytes) -> Issued:
        policy = self._policy(policy_name)
        if policy.mode is not Mode.SINGLETON:
            raise AttestationRejected("E_UNKNOWN_POLICY", f"policy {policy_name!r} is not a singleton policy")
        raw = presented.to_bytes() if isinstance(presented, SigStruct) else bytes(presented)
        if not hmac.compare_digest(raw, policy.common_sigstruct.to_bytes()):
            raise AttestationRejected("E_SIGSTRUCT_INVALID", "presented SIGSTRUCT is not the registered common one")
        for _ in range(_MAX_TOKEN_DRAWS):
            token = rng.token_bytes(TOKEN_SIZE)
            page = self.instance_page_for(token)
            expected = extend_with_instance_page(policy.base_hash, page, policy.instance_page_offset)
            ss = derive_singleton_sigstruct(policy.common_sigstruct, expected, policy.signer_key)
            record = TokenRecord(token, policy.name, expected, ss, TokenState.ISSUED, rng.now())
            with self._token_lock:
                if token in self.tokens:
                    continue
                self.tokens[token] = record
                if self.journal is not None:
                    self.journal.append(
                        {
                            "event": "issue",
                            "token": token.hex(),
                            "policy": policy.name,
                            "expected_mrenclave": expected.hex(),
                            "sigstruct": ss.b64(),
                            "issued_at": record.issued_at,
                        }
                    )
            self._record("issue", policy.name, token.hex()[:16])
            return Issued(token, page, ss)
        raise RuntimeError("token source keeps repeating values")

    # attestation

    def new_nonce(self) -> bytes:
        return rng.token_bytes(32)

    def _authenticate(self, quote: Quote, nonce: bytes) -> Report:
        failure = "no platform keys registered"
        for pub in self.platform_keys:
            try:
                return verify_quote(quote, pub, nonce)
            except QuoteSigInvalid:
                failure = "quote signature not from a registered platform"
            except NonceMismatch:
                raise AttestationRejected("E_QUOTE_INVALID", "stale or foreign nonce") from None
        raise AttestationRejected("E_QUOTE_INVALID", failure)

    @staticmethod
    def _check_identity(report: Report, policy: Policy, channel_pub: bytes) -> None:
        if report.mrsigner != policy.expected_mrsigner:
            raise AttestationRejected("E_SIGNER_MISMATCH", "MRSIGNER differs from policy")
        mask = int.from_bytes(policy.attribute_mask, "little")
        got = int.from_bytes(report.attributes, "little") & mask
        if got != int.from_bytes(policy.expected_attributes, "little") & mask:
            raise AttestationRejected("E_ATTR_MISMATCH", "attributes differ from policy under mask")
        if not hmac.compare_digest(report.reportdata, bind_channel(channel_pub)):
            raise AttestationRejected("E_CHANNEL_BINDING", "reportdata does not bind this channel key")

    def attest_singleton(self, quote: Quote, token: bytes, channel_pub: bytes, nonce: bytes) -> SecretsBundle:
        try:
            report = self._authenticate(quote, nonce)
            with self._token_lock:
                record = self.tokens.get(bytes(token))
                state = record.state if record else None
            if record is None:
                raise AttestationRejected("E_TOKEN_UNKNOWN", "token was never issued")
            if state is not TokenState.ISSUED:
                raise AttestationRejected("E_TOKEN_USED", "token already attested")
            if not hmac.compare_digest(report.mrenclave, record.expected_mrenclave):
                raise AttestationRejected("E_MRENCLAVE_MISMATCH", "MRENCLAVE is not the one issued for this token")
            policy = self._policy(record.policy_name)
            self._check_identity(report, policy, channel_pub)
            with self._token_lock:
                # the single linearization point for exactly-once
                if record.state is not TokenState.ISSUED:
                    raise AttestationRejected("E_TOKEN_USED", "token already attested")
                record.state = TokenState.CONSUMED
                if self.journal is not None:
                    self.journal.append({"event": "consume", "token": record.token.hex()})
        except AttestationRejected as exc:
            self._record("attest_singleton", bytes(token).hex()[:16], exc.code)
            raise
        self._record("attest_singleton", record.policy_name, "released")
        return policy.secrets

    def attest_naive(self, quote: Quote, channel_pub: bytes, nonce: bytes) -> SecretsBundle:
        try:
            report = self._authenticate(quote, nonce)
            with self._policy_lock:
                candidates = [p for p in self.policies.values() if p.mode is Mode.NAIVE]
            policy = next(
                (p for p in candidates if hmac.compare_digest(p.common_mrenclave, report.mrenclave)), None
            )
            if policy is None:
                raise AttestationRejected("E_MRENCLAVE_MISMATCH", "no naive policy expects this MRENCLAVE")
            self._check_identity(report, policy, channel_pub)
        except AttestationRejected as exc:
            self._record("attest_naive", report_hex(quote), exc.code)
            raise
        self._record("attest_naive", policy.name, "released")
        return policy.secrets

    def config_proof(self, nonce: bytes, token: bytes, channel_pub: bytes, secrets: SecretsBundle) -> bytes:
        """Signature with which the enclave checks who released its configuration."""
        return self.identity_key.sign(config_transcript(nonce, token, channel_pub, secrets))

    # persistence

    def _restore(self) -> None:
        for event in self.journal.replay():
            token = bytes.fromhex(event["token"])
            if event["event"] == "issue":
                self.tokens[token] = TokenRecord(
                    token=token,
                    policy_name=event["policy"],
                    expected_mrenclave=bytes.fromhex(event["expected_mrenclave"]),
                    issued_sigstruct=SigStruct.from_b64(event["sigstruct"]),
                    issued_at=int(event.get("issued_at", 0)),
                )
            elif event["event"] == "consume" and token in self.tokens:
                self.tokens[token].state = TokenState.CONSUMED


def report_hex(quote: Quote) -> str:
    return quote.report.mrenclave.hex()[:16]


def config_transcript(nonce: bytes, token: bytes, channel_pub: bytes, secrets: SecretsBundle) -> bytes:
    h = hashlib.sha256()
    for part in (b"SINCFG01", nonce, token, hashlib.sha256(channel_pub).digest(), secrets.canonical()):
        h.update(struct.pack(">I", len(part)) + part)
    return h.digest()

