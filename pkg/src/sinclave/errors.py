"""Exception hierarchy shared by all modules.

Every exception carries a wire ``code`` so the transport layer can map it
to an ERROR frame without a lookup table scattered across modules.
"""


class SinclaveError(Exception):
    code = "E_PROTOCOL"

    def __init__(self, detail: str = "", code: str | None = None):
        super().__init__(detail or self.__class__.__name__)
        self.detail = detail
        if code is not None:
            self.code = code


# hashcore
class HashError(SinclaveError):
    pass


class NotBlockAligned(HashError):
    pass


class MalformedSnapshot(HashError):
    pass


class MessageTooLong(HashError):
    pass


# enclave construction / EINIT
class EnclaveError(SinclaveError):
    pass


class InvalidLayout(EnclaveError):
    pass


class MrenclaveMismatch(EnclaveError):
    code = "E_MRENCLAVE_MISMATCH"


class AttributeMismatch(EnclaveError):
    code = "E_ATTR_MISMATCH"


class LaunchDenied(EnclaveError):
    pass


# sigstruct
class SigInvalid(SinclaveError):
    code = "E_SIGSTRUCT_INVALID"


class KeyMismatch(SinclaveError):
    code = "E_SIGSTRUCT_INVALID"


# attestation evidence
class BadReportMac(SinclaveError):
    code = "E_QUOTE_INVALID"


class QuoteSigInvalid(SinclaveError):
    code = "E_QUOTE_INVALID"


class NonceMismatch(SinclaveError):
    code = "E_QUOTE_INVALID"


class ProtocolError(SinclaveError):
    code = "E_PROTOCOL"


class AttestationRejected(SinclaveError):
    """A verifier decision; ``code`` is one of the wire error codes."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(detail or code, code=code)


class VerifierIdentityMismatch(SinclaveError):
    code = "E_VERIFIER_IDENTITY"
