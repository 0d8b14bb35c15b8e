"""Length-prefixed JSON frames between clients and the verifier service.

Frame: u32 big-endian payload length, then a UTF-8 JSON object whose
``type`` selects one of the message variants below.
"""

from __future__ import annotations

import base64
import json
import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from typing import Any

from .attestation import Quote
from .enclave import InstancePage
from .errors import AttestationRejected, ProtocolError, SinclaveError
from .sigstruct import SigStruct
from .verifier import SecretsBundle, Verifier

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAX_FRAME = 1 << 20
_LEN = struct.Struct(">I")

MESSAGE_FIELDS: dict[str, tuple[str, ...]] = {
    "HELLO": ("protocol_version", "nonce_hex"),
    "REQUEST_SINGLETON": ("policy", "common_sigstruct_b64"),
    "SINGLETON_ISSUE": ("token_hex", "instance_page_measured_b64", "sigstruct_b64", "verifier_identity_hex"),
    "ATTEST": ("quote_b64", "token_hex", "channel_pub_b64"),
    "ATTEST_NAIVE": ("quote_b64", "channel_pub_b64"),
    "CONFIG": ("entries", "verifier_modulus_b64", "proof_b64"),
    "ERROR": ("code", "detail"),
}

ERROR_CODES = frozenset(
    {
        "E_UNKNOWN_POLICY",
        "E_SIGSTRUCT_INVALID",
        "E_TOKEN_UNKNOWN",
        "E_TOKEN_USED",
        "E_MRENCLAVE_MISMATCH",
        "E_SIGNER_MISMATCH",
        "E_ATTR_MISMATCH",
        "E_CHANNEL_BINDING",
        "E_QUOTE_INVALID",
        "E_PROTOCOL",
    }
)


@dataclass(frozen=True)
class Message:
    type: str
    fields: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.fields[key]


def _validate(obj: Any) -> Message:
    if not isinstance(obj, dict):
        raise ProtocolError("payload is not a JSON object")
    kind = obj.get("type")
    if kind not in MESSAGE_FIELDS:
        raise ProtocolError(f"unknown or missing message type {kind!r}")
    fields = {k: v for k, v in obj.items() if k != "type"}
    missing = [name for name in MESSAGE_FIELDS[kind] if name not in fields]
    if missing:
        raise ProtocolError(f"{kind} lacks {', '.join(missing)}")
    if kind == "ERROR" and fields["code"] not in ERROR_CODES:
        raise ProtocolError(f"unknown error code {fields['code']!r}")
    return Message(kind, fields)


def encode(msg: Message) -> bytes:
    _validate({"type": msg.type, **msg.fields})
    payload = json.dumps({"type": msg.type, **msg.fields}, sort_keys=True).encode()
    if len(payload) > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(payload)) + payload


def decode(frame: bytes) -> Message:
    if len(frame) < _LEN.size:
        raise ProtocolError("frame shorter than its length prefix")
    (length,) = _LEN.unpack_from(frame)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} exceeds {MAX_FRAME}")
    if len(frame) != _LEN.size + length:
        raise ProtocolError("frame length prefix disagrees with payload")
    try:
        obj = json.loads(frame[_LEN.size :].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"payload is not JSON: {exc}") from None
    return _validate(obj)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk
    return bytes(buf)


def read_message(sock: socket.socket) -> Message:
    head = _recv_exact(sock, _LEN.size)
    (length,) = _LEN.unpack(head)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} exceeds {MAX_FRAME}")
    return decode(head + _recv_exact(sock, length))


def write_message(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode(msg))


def error_message(code: str, detail: str = "") -> Message:
    if code not in ERROR_CODES:
        code = "E_PROTOCOL"
    return Message("ERROR", {"code": code, "detail": detail})


def b64e(data: bytes) -> str:
    return base64.b64encode(data).decode()


def b64d(text: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (ValueError, TypeError) as exc:
        raise ProtocolError(f"bad base64: {exc}") from None


def hexd(text: str, size: int | None = None) -> bytes:
    try:
        raw = bytes.fromhex(text)
    except (ValueError, TypeError) as exc:
        raise ProtocolError(f"bad hex: {exc}") from None
    if size is not None and len(raw) != size:
        raise ProtocolError(f"expected {size} bytes, got {len(raw)}")
    return raw


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {address!r}")
    return host.strip("[]"), int(port)


# server side


class _Session(socketserver.BaseRequestHandler):
    server: "VerifierServer"

    def handle(self) -> None:
        verifier = self.server.verifier
        sock = self.request
        nonce = verifier.new_nonce()
        try:
            write_message(sock, Message("HELLO", {"protocol_version": PROTOCOL_VERSION, "nonce_hex": nonce.hex()}))
            while True:
                try:
                    msg = read_message(sock)
                except ConnectionError:
                    return
                except ProtocolError as exc:
                    write_message(sock, error_message("E_PROTOCOL", str(exc)))
                    return
                write_message(sock, dispatch(verifier, msg, nonce))
        except OSError as exc:
            log.debug("session ended: %s", exc)


def dispatch(verifier: Verifier, msg: Message, nonce: bytes) -> Message:
    """Handle one request; every failure becomes an ERROR frame."""
    try:
        if msg.type == "REQUEST_SINGLETON":
            issued = verifier.issue_singleton(msg["policy"], _sigstruct(msg["common_sigstruct_b64"]))
            return Message(
                "SINGLETON_ISSUE",
                {
                    "token_hex": issued.token.hex(),
                    "instance_page_measured_b64": b64e(issued.instance_page.measured_bytes()),
                    "sigstruct_b64": issued.sigstruct.b64(),
                    "verifier_identity_hex": verifier.identity.hex(),
                },
            )
        if msg.type == "ATTEST":
            token = hexd(msg["token_hex"])
            channel_pub = b64d(msg["channel_pub_b64"])
            secrets = verifier.attest_singleton(Quote.from_b64(msg["quote_b64"]), token, channel_pub, nonce)
            return _config(verifier, nonce, token, channel_pub, secrets)
        if msg.type == "ATTEST_NAIVE":
            channel_pub = b64d(msg["channel_pub_b64"])
            secrets = verifier.attest_naive(Quote.from_b64(msg["quote_b64"]), channel_pub, nonce)
            return _config(verifier, nonce, b"", channel_pub, secrets)
        return error_message("E_PROTOCOL", f"{msg.type} is not a request")
    except SinclaveError as exc:
        return error_message(exc.code, exc.detail or str(exc))


def _sigstruct(text: str) -> SigStruct:
    try:
        return SigStruct.from_b64(text)
    except SinclaveError:
        raise
    except ValueError as exc:
        raise AttestationRejected("E_SIGSTRUCT_INVALID", str(exc)) from None


def _config(verifier: Verifier, nonce: bytes, token: bytes, channel_pub: bytes, secrets: SecretsBundle) -> Message:
    proof = verifier.config_proof(nonce, token, channel_pub, secrets)
    return Message(
        "CONFIG",
        {
            "entries": dict(secrets.entries),
            "verifier_modulus_b64": b64e(verifier.identity_key.modulus),
            "proof_b64": b64e(proof),
        },
    )


class VerifierServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], verifier: Verifier):
        super().__init__(address, _Session)
        self.verifier = verifier

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"


def start_server(address: str, verifier: Verifier) -> VerifierServer:
    """Bind and serve from a daemon thread; call ``shutdown()`` to stop."""
    server = VerifierServer(parse_address(address), verifier)
    threading.Thread(target=server.serve_forever, args=(0.05,), name="verifier", daemon=True).start()
    return server


def serve(address: str, verifier: Verifier) -> None:
    with VerifierServer(parse_address(address), verifier) as server:
        log.info("verifier listening on %s", server.address)
        server.serve_forever()


# client side


@dataclass
class Config:
    entries: dict[str, str]
    verifier_modulus: bytes
    proof: bytes


class VerifierClient:
    """One verifier session: connect, read HELLO, then issue requests."""

    def __init__(self, address: str, timeout: float = 30.0):
        self.sock = socket.create_connection(parse_address(address), timeout=timeout)
        hello = read_message(self.sock)
        if hello.type != "HELLO":
            self.close()
            raise ProtocolError(f"expected HELLO, got {hello.type}")
        self.nonce = hexd(hello["nonce_hex"], 32)
        self.protocol_version = hello["protocol_version"]

    def __enter__(self) -> VerifierClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self.sock.close()

    def call(self, msg: Message) -> Message:
        write_message(self.sock, msg)
        reply = read_message(self.sock)
        if reply.type == "ERROR":
            raise AttestationRejected(reply["code"], reply["detail"])
        return reply

    def request_singleton(self, policy: str, common: SigStruct) -> tuple[bytes, InstancePage, SigStruct, bytes]:
        reply = self.call(
            Message("REQUEST_SINGLETON", {"policy": policy, "common_sigstruct_b64": common.b64()})
        )
        if reply.type != "SINGLETON_ISSUE":
            raise ProtocolError(f"expected SINGLETON_ISSUE, got {reply.type}")
        token = hexd(reply["token_hex"], 32)
        page = InstancePage.from_bytes(b64d(reply["instance_page_measured_b64"]))
        return token, page, SigStruct.from_b64(reply["sigstruct_b64"]), hexd(reply["verifier_identity_hex"], 32)

    def attest(self, quote: Quote, token: bytes, channel_pub: bytes) -> Config:
        reply = self.call(
            Message(
                "ATTEST",
                {"quote_b64": quote.b64(), "token_hex": token.hex(), "channel_pub_b64": b64e(channel_pub)},
            )
        )
        return self._config(reply)

    def attest_naive(self, quote: Quote, channel_pub: bytes) -> Config:
        reply = self.call(Message("ATTEST_NAIVE", {"quote_b64": quote.b64(), "channel_pub_b64": b64e(channel_pub)}))
        return self._config(reply)

    @staticmethod
    def _config(reply: Message) -> Config:
        if reply.type != "CONFIG":
            raise ProtocolError(f"expected CONFIG, got {reply.type}")
        entries = reply["entries"]
        if not isinstance(entries, dict):
            raise ProtocolError("CONFIG entries must be an object")
        return Config(dict(entries), b64d(reply["verifier_modulus_b64"]), b64d(reply["proof_b64"]))
