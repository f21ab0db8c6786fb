"""Exception hierarchy shared by every stage of the pipeline."""


class QkdPqcError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(QkdPqcError, ValueError):
    pass


class PeakNotFound(QkdPqcError):
    """No statistically significant coincidence peak was found.

    ``round_index`` is set when the failure happens inside a multi-round
    synchronization run.
    """

    def __init__(self, message: str, round_index: int | None = None):
        super().__init__(message)
        self.round_index = round_index


class EmptyKey(QkdPqcError):
    pass


class InsufficientBits(QkdPqcError):
    pass


class DecodeFailure(QkdPqcError):
    def __init__(self, message: str, iterations: int = 0):
        super().__init__(message)
        self.iterations = iterations


class KeyExhausted(QkdPqcError):
    pass


class NonceReuse(QkdPqcError):
    pass


class MalformedCiphertext(QkdPqcError):
    pass


class UnknownIdentifier(QkdPqcError):
    pass


class MissingPublicKey(QkdPqcError):
    pass


class LayerFailure(QkdPqcError):
    """Decryption failed while undoing layer ``layer`` (1-based, encryption order)."""

    def __init__(self, layer: int, cause: Exception):
        super().__init__(f"layer {layer} failed: {cause}")
        self.layer = layer
        self.cause = cause


class ProtocolError(QkdPqcError):
    pass


class DigestMismatch(ProtocolError):
    pass


class VersionMismatch(ProtocolError):
    pass


class FramingError(ProtocolError):
    pass


class ConnectionLost(ProtocolError):
    pass


class AuthenticationFailure(ProtocolError):
    pass


class PeerAbort(ProtocolError):
    """The peer sent an ABORT frame."""
