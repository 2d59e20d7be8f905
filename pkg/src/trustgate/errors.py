"""Exception hierarchy shared across the package."""


class TrustGateError(Exception):
    """Base class for all library errors."""


class ValidationError(TrustGateError, ValueError):
    """A domain value violates its invariants."""


class SerializationError(TrustGateError):
    """Bytes could not be decoded into a domain value."""


class CryptoConfigError(TrustGateError, ValueError):
    """Malformed or unknown key material."""


class EnvelopeError(TrustGateError):
    """A sealed session key could not be opened."""


class DecryptionError(TrustGateError):
    """Authenticated decryption failed (tampered or wrong key)."""


class AuthenticationError(TrustGateError):
    """A signature did not verify."""


class MalformedTransaction(TrustGateError):
    """Transaction payload does not match its kind."""


class ContractError(TrustGateError):
    """Raised inside contract execution; the transaction is reverted.

    ``code`` is a short machine-readable reason carried on the failure receipt.
    """

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class ObsoleteContract(ContractError):
    def __init__(self, address: str):
        super().__init__("obsolete", f"contract {address} has been replaced")
        self.address = address


class RegistrationRejected(TrustGateError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class ConfigError(TrustGateError):
    """Scenario configuration failed validation.

    ``errors`` holds ``(field_path, message)`` pairs.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in self.errors))


class ScenarioAssertionError(TrustGateError):
    def __init__(self, failed):
        self.failed = list(failed)
        super().__init__("scenario checks failed: " + ", ".join(c.name for c in self.failed))


class ReplayError(TrustGateError):
    """Event log or state dump could not be parsed."""
