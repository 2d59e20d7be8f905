"""Signatures, session-key envelopes and authenticated data encryption.

Two interchangeable backends share the :class:`CryptoBackend` interface:

* :class:`Ed25519Backend` -- Ed25519 signatures and an X25519 sealed box
  (ephemeral ECDH, HKDF-SHA256, ChaCha20-Poly1305).  Public keys are 64 bytes:
  the Ed25519 verify key followed by the X25519 key.
* :class:`HashBackend` -- keyed-hash construction for fast, reproducible
  fixtures.  Verification consults the backend's own record of which secret
  belongs to which public key, i.e. it simulates a PKI oracle.  It is not a
  secure scheme and must only be used in simulations.

Both backends are deterministic when key seeds and envelope entropy are
supplied by the caller.  Key fixture files store keys as lowercase hex, one
``name public_hex secret_hex`` triple per line.
"""
from __future__ import annotations

import hashlib
import hmac
import os
import threading
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import CryptoConfigError, DecryptionError, EnvelopeError

SESSION_KEY_BYTES = 32
_NONCE_BYTES = 12


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes

    def __repr__(self) -> str:
        return f"KeyPair(public_key={self.public_key.hex()[:16]}...)"


@dataclass(frozen=True)
class SessionKey:
    k: bytes

    def __post_init__(self):
        if len(self.k) != SESSION_KEY_BYTES:
            raise CryptoConfigError(f"session key must be {SESSION_KEY_BYTES} bytes")

    @classmethod
    def generate(cls, entropy: Optional[bytes] = None) -> "SessionKey":
        return cls(entropy if entropy is not None else os.urandom(SESSION_KEY_BYTES))


def encrypt_data(key: SessionKey, data: bytes, nonce: Optional[bytes] = None) -> bytes:
    """ChaCha20-Poly1305 with the nonce prepended to the ciphertext."""
    nonce = nonce if nonce is not None else os.urandom(_NONCE_BYTES)
    if len(nonce) != _NONCE_BYTES:
        raise CryptoConfigError("nonce must be 12 bytes")
    return nonce + ChaCha20Poly1305(key.k).encrypt(nonce, bytes(data), None)


def decrypt_data(key: SessionKey, blob: bytes) -> bytes:
    if len(blob) < _NONCE_BYTES + 16:
        raise DecryptionError("ciphertext too short")
    try:
        return ChaCha20Poly1305(key.k).decrypt(blob[:_NONCE_BYTES], blob[_NONCE_BYTES:], None)
    except InvalidTag:
        raise DecryptionError("authentication tag mismatch") from None


class CryptoBackend:
    name = "abstract"

    def generate_keypair(self, seed: Optional[bytes] = None) -> KeyPair:
        raise NotImplementedError

    def sign(self, secret_key: bytes, msg: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, public_key: bytes, msg: bytes, sig: bytes) -> bool:
        raise NotImplementedError

    def seal_session_key(self, public_key: bytes, key: SessionKey, entropy: Optional[bytes] = None) -> bytes:
        raise NotImplementedError

    def open_session_key(self, secret_key: bytes, envelope: bytes) -> SessionKey:
        raise NotImplementedError


def _seed(seed: Optional[bytes]) -> bytes:
    seed = seed if seed is not None else os.urandom(32)
    if len(seed) != 32:
        raise CryptoConfigError("key seed must be 32 bytes")
    return seed


class Ed25519Backend(CryptoBackend):
    name = "ed25519"
    _INFO = b"trustgate/seal/v1"

    @staticmethod
    def _x_private(secret: bytes) -> X25519PrivateKey:
        return X25519PrivateKey.from_private_bytes(hashlib.sha256(b"x25519" + secret).digest())

    def generate_keypair(self, seed: Optional[bytes] = None) -> KeyPair:
        secret = _seed(seed)
        ed_pub = Ed25519PrivateKey.from_private_bytes(secret).public_key()
        x_pub = self._x_private(secret).public_key()
        raw = serialization.Encoding.Raw, serialization.PublicFormat.Raw
        return KeyPair(ed_pub.public_bytes(*raw) + x_pub.public_bytes(*raw), secret)

    def _signing_key(self, secret_key: bytes) -> Ed25519PrivateKey:
        if not isinstance(secret_key, (bytes, bytearray)) or len(secret_key) != 32:
            raise CryptoConfigError("Ed25519 secret key must be 32 bytes")
        return Ed25519PrivateKey.from_private_bytes(bytes(secret_key))

    def sign(self, secret_key: bytes, msg: bytes) -> bytes:
        return self._signing_key(secret_key).sign(msg)

    def verify(self, public_key: bytes, msg: bytes, sig: bytes) -> bool:
        if not isinstance(public_key, (bytes, bytearray)) or len(public_key) != 64:
            return False
        try:
            Ed25519PublicKey.from_public_bytes(bytes(public_key[:32])).verify(bytes(sig), msg)
        except (InvalidSignature, ValueError, TypeError):
            return False
        return True

    def _box_key(self, shared: bytes, eph_pub: bytes, x_pub: bytes) -> bytes:
        return HKDF(hashes.SHA256(), 32, salt=eph_pub + x_pub, info=self._INFO).derive(shared)

    def seal_session_key(self, public_key: bytes, key: SessionKey, entropy: Optional[bytes] = None) -> bytes:
        if len(public_key) != 64:
            raise CryptoConfigError("recipient public key must be 64 bytes")
        try:
            recipient = X25519PublicKey.from_public_bytes(bytes(public_key[32:]))
        except ValueError as exc:
            raise CryptoConfigError(str(exc)) from exc
        eph = X25519PrivateKey.from_private_bytes(_seed(entropy))
        eph_pub = eph.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        box = self._box_key(eph.exchange(recipient), eph_pub, bytes(public_key[32:]))
        return eph_pub + ChaCha20Poly1305(box).encrypt(b"\x00" * _NONCE_BYTES, key.k, None)

    def open_session_key(self, secret_key: bytes, envelope: bytes) -> SessionKey:
        if len(secret_key) != 32:
            raise CryptoConfigError("Ed25519 secret key must be 32 bytes")
        if len(envelope) != 32 + SESSION_KEY_BYTES + 16:
            raise EnvelopeError("envelope has wrong length")
        priv = self._x_private(secret_key)
        x_pub = priv.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        eph_pub = envelope[:32]
        try:
            shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
            box = self._box_key(shared, eph_pub, x_pub)
            return SessionKey(ChaCha20Poly1305(box).decrypt(b"\x00" * _NONCE_BYTES, envelope[32:], None))
        except (InvalidTag, ValueError):
            raise EnvelopeError("envelope does not open with this key") from None


class HashBackend(CryptoBackend):
    """HMAC-SHA256 signatures; simulation only (see module docstring)."""

    name = "hash"

    def __init__(self):
        self._secrets: dict[bytes, bytes] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _public(secret: bytes) -> bytes:
        return hashlib.sha256(b"hash-backend/pk" + secret).digest()

    def generate_keypair(self, seed: Optional[bytes] = None) -> KeyPair:
        secret = _seed(seed)
        pk = self._public(secret)
        with self._lock:
            self._secrets[pk] = secret
        return KeyPair(pk, secret)

    def _check_secret(self, secret_key: bytes) -> bytes:
        if not isinstance(secret_key, (bytes, bytearray)) or len(secret_key) != 32:
            raise CryptoConfigError("hash-backend secret key must be 32 bytes")
        return bytes(secret_key)

    def sign(self, secret_key: bytes, msg: bytes) -> bytes:
        return hmac.new(self._check_secret(secret_key), msg, hashlib.sha256).digest()

    def verify(self, public_key: bytes, msg: bytes, sig: bytes) -> bool:
        secret = self._secrets.get(bytes(public_key))
        if secret is None:
            return False
        return hmac.compare_digest(hmac.new(secret, msg, hashlib.sha256).digest(), bytes(sig))

    @staticmethod
    def _stream(secret: bytes, nonce: bytes) -> bytes:
        return hashlib.sha256(b"hash-backend/seal" + secret + nonce).digest()

    def seal_session_key(self, public_key: bytes, key: SessionKey, entropy: Optional[bytes] = None) -> bytes:
        secret = self._secrets.get(bytes(public_key))
        if secret is None:
            raise CryptoConfigError("unknown recipient public key")
        nonce = _seed(entropy)[:16]
        body = bytes(a ^ b for a, b in zip(key.k, self._stream(secret, nonce)))
        tag = hmac.new(secret, nonce + body, hashlib.sha256).digest()[:16]
        return nonce + body + tag

    def open_session_key(self, secret_key: bytes, envelope: bytes) -> SessionKey:
        secret = self._check_secret(secret_key)
        if len(envelope) != 16 + SESSION_KEY_BYTES + 16:
            raise EnvelopeError("envelope has wrong length")
        nonce, body, tag = envelope[:16], envelope[16:48], envelope[48:]
        if not hmac.compare_digest(hmac.new(secret, nonce + body, hashlib.sha256).digest()[:16], tag):
            raise EnvelopeError("envelope does not open with this key")
        return SessionKey(bytes(a ^ b for a, b in zip(body, self._stream(secret, nonce))))


def make_backend(name: str) -> CryptoBackend:
    if name == "ed25519":
        return Ed25519Backend()
    if name == "hash":
        return HashBackend()
    raise CryptoConfigError(f"unknown crypto backend {name!r}")


def dump_keys(named: dict) -> str:
    """Serialize ``{name: KeyPair}`` to the hex fixture format."""
    return "".join(f"{name} {kp.public_key.hex()} {kp.secret_key.hex()}\n" for name, kp in sorted(named.items()))


def load_keys(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CryptoConfigError(f"line {lineno}: expected 'name public_hex secret_hex'")
        try:
            out[parts[0]] = KeyPair(bytes.fromhex(parts[1]), bytes.fromhex(parts[2]))
        except ValueError as exc:
            raise CryptoConfigError(f"line {lineno}: {exc}") from exc
    return out
