import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trustgate.crypto import (
    SessionKey,
    decrypt_data,
    dump_keys,
    encrypt_data,
    load_keys,
    make_backend,
)
from trustgate.errors import CryptoConfigError, DecryptionError, EnvelopeError

BACKENDS = ["ed25519", "hash"]


@pytest.fixture(params=BACKENDS)
def backend(request):
    return make_backend(request.param)


def test_sign_verify(backend):
    kp = backend.generate_keypair(b"\x01" * 32)
    sig = backend.sign(kp.secret_key, b"message")
    assert backend.verify(kp.public_key, b"message", sig)
    assert not backend.verify(kp.public_key, b"messagf", sig)
    other = backend.generate_keypair(b"\x02" * 32)
    assert not backend.verify(other.public_key, b"message", sig)


def test_tampered_signature_rejected(backend):
    kp = backend.generate_keypair(b"\x05" * 32)
    sig = bytearray(backend.sign(kp.secret_key, b"m"))
    sig[0] ^= 1
    assert not backend.verify(kp.public_key, b"m", bytes(sig))


def test_seeded_keys_are_deterministic(backend):
    assert backend.generate_keypair(b"\x07" * 32) == backend.generate_keypair(b"\x07" * 32)


def test_bad_secret_key_is_config_error(backend):
    with pytest.raises(CryptoConfigError):
        backend.sign(b"short", b"m")
    with pytest.raises(CryptoConfigError):
        backend.generate_keypair(b"\x00" * 5)


def test_envelope_round_trip(backend):
    kp = backend.generate_keypair(b"\x03" * 32)
    key = SessionKey(b"\x42" * 32)
    env = backend.seal_session_key(kp.public_key, key, b"\x09" * 32)
    assert backend.open_session_key(kp.secret_key, env) == key


def test_envelope_wrong_recipient(backend):
    kp = backend.generate_keypair(b"\x03" * 32)
    other = backend.generate_keypair(b"\x04" * 32)
    env = backend.seal_session_key(kp.public_key, SessionKey(b"\x42" * 32), b"\x09" * 32)
    with pytest.raises(EnvelopeError):
        backend.open_session_key(other.secret_key, env)
    with pytest.raises(EnvelopeError):
        backend.open_session_key(kp.secret_key, env[:-1])


def test_unknown_backend():
    with pytest.raises(CryptoConfigError):
        make_backend("rsa")


def test_hash_backend_rejects_unknown_public_key():
    b = make_backend("hash")
    assert not b.verify(b"\x00" * 32, b"m", b"\x00" * 32)
    with pytest.raises(CryptoConfigError):
        b.seal_session_key(b"\x00" * 32, SessionKey(b"\x01" * 32))


@settings(max_examples=50)
@given(st.binary(max_size=300), st.binary(min_size=32, max_size=32))
def test_data_round_trip(data, k):
    key = SessionKey(k)
    assert decrypt_data(key, encrypt_data(key, data)) == data


def test_data_tamper_and_wrong_key():
    key = SessionKey(b"\x01" * 32)
    blob = bytearray(encrypt_data(key, b"payload", b"\x00" * 12))
    with pytest.raises(DecryptionError):
        decrypt_data(SessionKey(b"\x02" * 32), bytes(blob))
    blob[-1] ^= 1
    with pytest.raises(DecryptionError):
        decrypt_data(key, bytes(blob))
    with pytest.raises(DecryptionError):
        decrypt_data(key, b"tiny")


def test_session_key_length():
    with pytest.raises(CryptoConfigError):
        SessionKey(b"\x00" * 16)


def test_key_file_round_trip():
    b = make_backend("ed25519")
    keys = {"alice": b.generate_keypair(b"\x01" * 32), "bob": b.generate_keypair(b"\x02" * 32)}
    assert load_keys(dump_keys(keys)) == keys
