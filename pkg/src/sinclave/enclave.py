"""Software model of enclave construction, measurement and EINIT.

Each construction step contributes whole 64-byte records to a running
SHA-256 state; the finalized digest is MRENCLAVE. Record layouts::

    ECREATE  b"ECREATE\\0" | size u64 | 48 zero bytes
    EADD     b"EADD\\0\\0\\0\\0" | offset u64 | secinfo u64 | 40 zero bytes
    EEXTEND  b"EEXTEND\\0" | offset u64 | 48 zero bytes, then 256 content bytes

Attributes are deliberately not hashed; EINIT checks them against the
SIGSTRUCT under its attribute mask.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .errors import AttributeMismatch, InvalidLayout, LaunchDenied, MrenclaveMismatch
from .hashcore import BaseEnclaveHash, HashState, export_base, hash_finalize, hash_init, hash_update, resume_base
from .sigstruct import SigStruct, verify_sigstruct

PAGE_SIZE = 4096
CHUNK_SIZE = 256
RECORD_SIZE = 64
MIN_ENCLAVE_SIZE = 8192

ATTR_DEBUG = 1 << 0
ATTR_MODE64 = 1 << 1
_ATTR_KNOWN = ATTR_DEBUG | ATTR_MODE64

SI_R = 1 << 0
SI_W = 1 << 1
SI_X = 1 << 2
PT_REG = 0x01 << 8
PT_TCS = 0x02 << 8
_SI_PERMS = SI_R | SI_W | SI_X

INSTANCE_MEASURED = 1024
INSTANCE_PROTOCOL_VERSION = 1
INSTANCE_SECINFO = PT_REG | SI_R | SI_W


@dataclass(frozen=True)
class PageSecInfo:
    flags: int = PT_REG | SI_R

    def __post_init__(self):
        if self.flags & ~(_SI_PERMS | 0xFF00):
            raise InvalidLayout(f"reserved secinfo bits set: {self.flags:#x}")
        if (self.flags >> 8) & 0xFF not in (0x01, 0x02):
            raise InvalidLayout(f"unknown page type {(self.flags >> 8) & 0xFF:#x}")


@dataclass(frozen=True)
class Page:
    """One 4 KiB page; ``measured`` leading bytes are covered by EEXTEND."""

    offset: int
    content: bytes
    secinfo: PageSecInfo = PageSecInfo()
    measured: int = PAGE_SIZE

    def __post_init__(self):
        if len(self.content) != PAGE_SIZE:
            raise InvalidLayout(f"page content must be {PAGE_SIZE} bytes, got {len(self.content)}")
        if self.offset % PAGE_SIZE:
            raise InvalidLayout(f"page offset {self.offset:#x} is not page aligned")
        if self.measured % CHUNK_SIZE or not 0 <= self.measured <= PAGE_SIZE:
            raise InvalidLayout(f"measured span {self.measured} is not a multiple of {CHUNK_SIZE}")


def _check_attributes(attributes: bytes) -> None:
    if len(attributes) != 16:
        raise InvalidLayout("attributes must be 16 bytes")
    flags = int.from_bytes(attributes, "little")
    if flags & ~_ATTR_KNOWN:
        raise InvalidLayout(f"reserved attribute bits set: {attributes.hex()}")


def _check_size(size: int) -> None:
    if size < MIN_ENCLAVE_SIZE or size & (size - 1):
        raise InvalidLayout(f"enclave size {size} must be a power of two >= {MIN_ENCLAVE_SIZE}")


def make_attributes(debug: bool = False, mode64: bool = True) -> bytes:
    flags = (ATTR_DEBUG if debug else 0) | (ATTR_MODE64 if mode64 else 0)
    return flags.to_bytes(16, "little")


@dataclass(frozen=True)
class EnclaveBlueprint:
    enclave_size: int
    attributes: bytes
    pages: tuple[Page, ...] = ()

    def __post_init__(self):
        _check_size(self.enclave_size)
        _check_attributes(self.attributes)
        object.__setattr__(self, "pages", tuple(self.pages))
        prev = -1
        for page in self.pages:
            if page.offset >= self.enclave_size:
                raise InvalidLayout(f"page offset {page.offset:#x} beyond enclave size")
            if page.offset <= prev:
                raise InvalidLayout("page offsets must be strictly increasing")
            prev = page.offset

    @property
    def instance_page_offset(self) -> int:
        """The instance page always occupies the last page slot of the enclave."""
        return self.enclave_size - PAGE_SIZE

    def has_instance_slot(self) -> bool:
        return not self.pages or self.pages[-1].offset < self.instance_page_offset

    def with_instance_page(self, page: InstancePage | bytes) -> EnclaveBlueprint:
        if not self.has_instance_slot():
            raise InvalidLayout("blueprint occupies the instance page slot")
        raw = page.to_bytes() if isinstance(page, InstancePage) else bytes(page)
        extra = Page(self.instance_page_offset, raw, PageSecInfo(INSTANCE_SECINFO), INSTANCE_MEASURED)
        return replace(self, pages=self.pages + (extra,))

    # manifest I/O
    def to_manifest(self) -> dict[str, Any]:
        return {
            "enclave_size": self.enclave_size,
            "attributes": self.attributes.hex(),
            "pages": [
                {
                    "offset": p.offset,
                    "secinfo": p.secinfo.flags,
                    "content_hex": p.content.rstrip(b"\0").hex(),
                    **({"measured": p.measured} if p.measured != PAGE_SIZE else {}),
                }
                for p in self.pages
            ],
        }

    @classmethod
    def from_manifest(cls, data: dict[str, Any], base_dir: Path | None = None) -> EnclaveBlueprint:
        try:
            pages = []
            for entry in data.get("pages", []):
                if "content_file" in entry:
                    path = Path(entry["content_file"])
                    if base_dir is not None and not path.is_absolute():
                        path = base_dir / path
                    content = path.read_bytes()
                else:
                    content = bytes.fromhex(entry.get("content_hex", ""))
                if len(content) > PAGE_SIZE:
                    raise InvalidLayout(f"page at {entry['offset']} has {len(content)} bytes")
                pages.append(
                    Page(
                        offset=_int(entry["offset"]),
                        content=content.ljust(PAGE_SIZE, b"\0"),
                        secinfo=PageSecInfo(_int(entry.get("secinfo", PT_REG | SI_R))),
                        measured=_int(entry.get("measured", PAGE_SIZE)),
                    )
                )
            return cls(
                enclave_size=_int(data["enclave_size"]),
                attributes=bytes.fromhex(data.get("attributes", make_attributes().hex())),
                pages=tuple(pages),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidLayout):
                raise
            raise InvalidLayout(f"bad blueprint manifest: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> EnclaveBlueprint:
        path = Path(path)
        return cls.from_manifest(json.loads(path.read_text()), base_dir=path.parent)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_manifest(), indent=2))


def _int(value: Any) -> int:
    return int(value, 0) if isinstance(value, str) else int(value)


@dataclass(frozen=True)
class MeasurementLog:
    records: tuple[bytes, ...]
    running: HashState
    enclave_size: int
    attributes: bytes


def ecreate_record(size: int) -> bytes:
    return b"ECREATE\0" + struct.pack(">Q", size) + bytes(48)


def eadd_record(offset: int, secinfo: PageSecInfo) -> bytes:
    return b"EADD\0\0\0\0" + struct.pack(">QQ", offset, secinfo.flags) + bytes(40)


def eextend_records(offset: int, chunk: bytes) -> list[bytes]:
    header = b"EEXTEND\0" + struct.pack(">Q", offset) + bytes(48)
    return [header] + [chunk[i : i + RECORD_SIZE] for i in range(0, CHUNK_SIZE, RECORD_SIZE)]


def _append(log: MeasurementLog, new: list[bytes]) -> MeasurementLog:
    return replace(log, records=log.records + tuple(new), running=hash_update(log.running, b"".join(new)))


def measure_ecreate(size: int, attributes: bytes) -> MeasurementLog:
    _check_size(size)
    _check_attributes(attributes)
    rec = ecreate_record(size)
    return MeasurementLog((rec,), hash_update(hash_init(), rec), size, bytes(attributes))


def _check_offset(log: MeasurementLog, offset: int, align: int) -> None:
    if offset % align:
        raise InvalidLayout(f"offset {offset:#x} not {align}-byte aligned")
    if not 0 <= offset < log.enclave_size:
        raise InvalidLayout(f"offset {offset:#x} outside enclave of {log.enclave_size:#x} bytes")


def measure_eadd(log: MeasurementLog, offset: int, secinfo: PageSecInfo) -> MeasurementLog:
    _check_offset(log, offset, PAGE_SIZE)
    return _append(log, [eadd_record(offset, secinfo)])


def measure_eextend(log: MeasurementLog, offset: int, chunk: bytes) -> MeasurementLog:
    _check_offset(log, offset, CHUNK_SIZE)
    if len(chunk) != CHUNK_SIZE:
        raise InvalidLayout(f"EEXTEND chunk must be {CHUNK_SIZE} bytes, got {len(chunk)}")
    return _append(log, eextend_records(offset, chunk))


def page_records(page: Page) -> list[bytes]:
    recs = [eadd_record(page.offset, page.secinfo)]
    for off in range(0, page.measured, CHUNK_SIZE):
        recs += eextend_records(page.offset + off, page.content[off : off + CHUNK_SIZE])
    return recs


def _measure_pages(bp: EnclaveBlueprint) -> MeasurementLog:
    log = measure_ecreate(bp.enclave_size, bp.attributes)
    recs: list[bytes] = []
    for page in bp.pages:
        recs += page_records(page)
    # one update over the whole run; per-record updates give the same state
    return _append(log, recs)


def build_and_measure(bp: EnclaveBlueprint) -> tuple[MeasurementLog, bytes]:
    log = _measure_pages(bp)
    return log, hash_finalize(log.running)


def base_hash_of(bp: EnclaveBlueprint) -> BaseEnclaveHash:
    """Snapshot taken after the blueprint's own pages, before the instance page."""
    return export_base(_measure_pages(bp).running)


def extend_with_instance_page(
    base: BaseEnclaveHash | bytes, page: InstancePage | bytes, page_offset: int
) -> bytes:
    """Resume ``base``, add the instance page (one EADD, four EEXTEND) and finalize."""
    raw = page.to_bytes() if isinstance(page, InstancePage) else bytes(page)
    if page_offset % PAGE_SIZE:
        raise InvalidLayout(f"instance page offset {page_offset:#x} not page aligned")
    ipage = Page(page_offset, raw, PageSecInfo(INSTANCE_SECINFO), INSTANCE_MEASURED)
    state = hash_update(resume_base(base), b"".join(page_records(ipage)))
    return hash_finalize(state)


@dataclass(frozen=True)
class InstancePage:
    token: bytes = bytes(32)
    verifier_identity: bytes = bytes(32)
    protocol_version: int = INSTANCE_PROTOCOL_VERSION

    def __post_init__(self):
        if len(self.token) != 32 or len(self.verifier_identity) != 32:
            raise InvalidLayout("token and verifier identity must be 32 bytes")

    @classmethod
    def common(cls) -> InstancePage:
        return cls(bytes(32), bytes(32), 0)

    @property
    def is_common(self) -> bool:
        return self.to_bytes() == bytes(PAGE_SIZE)

    def measured_bytes(self) -> bytes:
        return self.to_bytes()[:INSTANCE_MEASURED]

    def to_bytes(self) -> bytes:
        head = self.token + self.verifier_identity + struct.pack(">I", self.protocol_version)
        return head.ljust(PAGE_SIZE, b"\0")

    @classmethod
    def from_bytes(cls, raw: bytes) -> InstancePage:
        if len(raw) not in (INSTANCE_MEASURED, PAGE_SIZE):
            raise InvalidLayout(f"instance page must be {PAGE_SIZE} bytes, got {len(raw)}")
        if any(raw[68:]):
            raise InvalidLayout("instance page bytes past offset 68 must be zero")
        (version,) = struct.unpack(">I", raw[64:68])
        return cls(bytes(raw[:32]), bytes(raw[32:64]), version)


@dataclass(frozen=True)
class EinitToken:
    permit_all: bool = True


class ConfigurationRefused(Exception):
    """The enclave runtime only accepts configuration through attestation."""


@dataclass
class InitializedEnclave:
    mrenclave: bytes
    mrsigner: bytes
    attributes: bytes
    isvprodid: int
    isvsvn: int
    instance_page: InstancePage
    runtime_config: dict | None = field(default=None)

    @property
    def requires_attestation(self) -> bool:
        """A non-zero instance page tells the runtime it is a singleton."""
        return not self.instance_page.is_common

    def configure(self, config: dict, *, attested: bool = False) -> None:
        """Install runtime configuration; never part of the measurement.

        A singleton runtime has no hook for configuration before its own
        attestation succeeded. A common enclave is freely configurable.
        """
        if self.requires_attestation and not attested:
            raise ConfigurationRefused("singleton enclave accepts configuration only after attestation")
        if self.requires_attestation and self.runtime_config is not None:
            raise ConfigurationRefused("singleton enclave was already configured")
        self.runtime_config = dict(config)


def einit(
    mrenclave: bytes,
    ss: SigStruct,
    tok: EinitToken = EinitToken(),
    *,
    attributes: bytes,
    instance_page: InstancePage | None = None,
) -> InitializedEnclave:
    identity = verify_sigstruct(ss)
    if ss.mrenclave != mrenclave:
        raise MrenclaveMismatch(
            f"SIGSTRUCT expects {ss.mrenclave.hex()}, enclave measured {bytes(mrenclave).hex()}"
        )
    mask = int.from_bytes(ss.attribute_mask, "little")
    if int.from_bytes(ss.attributes, "little") & mask != int.from_bytes(attributes, "little") & mask:
        raise AttributeMismatch(f"SIGSTRUCT attributes {ss.attributes.hex()} vs enclave {attributes.hex()}")
    if not tok.permit_all:
        raise LaunchDenied("launch policy is limited to flexible launch control")
    return InitializedEnclave(
        mrenclave=bytes(mrenclave),
        mrsigner=identity.mrsigner,
        attributes=bytes(attributes),
        isvprodid=ss.isvprodid,
        isvsvn=ss.isvsvn,
        instance_page=instance_page if instance_page is not None else InstancePage.common(),
    )
