"""Domain types and their canonical byte encoding.

Every value that is hashed, signed or stored on the ledger goes through
:func:`canonical_serialize`.  The encoding is a tagged, length-prefixed
binary format:

====  =========================================================
tag   body
====  =========================================================
0x00  ``None``
0x01  ``False``
0x02  ``True``
0x03  int: u32 length, two's-complement little-endian bytes
0x04  float: IEEE-754 binary64, little-endian
0x05  str: u32 length, UTF-8 bytes
0x06  bytes: u32 length, raw bytes
0x07  sequence: u32 count, items (decodes to ``tuple``)
0x08  set: u32 count, items sorted by their own encoding
0x09  mapping: u32 count, (key, value) pairs sorted by key encoding
0x0A  record: type name (str body), u32 field count, fields in
      declaration order
0x0B  enum: type name (str body), value
====  =========================================================

All lengths and counts are unsigned 32-bit little-endian.  Records and enums
must be registered with :func:`canonical` so they can be decoded.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import struct
from dataclasses import dataclass
from typing import Any, Iterator, Mapping, Optional

from .errors import SerializationError, ValidationError

_REGISTRY: dict[str, type] = {}

_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


def canonical(cls):
    """Class decorator registering a dataclass or Enum with the codec."""
    name = cls.__name__
    if name in _REGISTRY and _REGISTRY[name] is not cls:
        raise TypeError(f"duplicate canonical type name {name!r}")
    _REGISTRY[name] = cls
    return cls


def _u32(n: int) -> bytes:
    return _U32.pack(n)


def _str_body(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _u32(len(raw)) + raw


def _encode(value: Any, out: list) -> None:
    if value is None:
        out.append(b"\x00")
    elif value is False:
        out.append(b"\x01")
    elif value is True:
        out.append(b"\x02")
    elif isinstance(value, enum.Enum):
        out.append(b"\x0b")
        out.append(_str_body(type(value).__name__))
        _encode(value.value, out)
    elif isinstance(value, int):
        length = (value.bit_length() + 8) // 8
        out.append(b"\x03" + _u32(length) + value.to_bytes(length, "little", signed=True))
    elif isinstance(value, float):
        out.append(b"\x04" + _F64.pack(value))
    elif isinstance(value, str):
        out.append(b"\x05" + _str_body(value))
    elif isinstance(value, (bytes, bytearray)):
        out.append(b"\x06" + _u32(len(value)) + bytes(value))
    elif dataclasses.is_dataclass(value) and not isinstance(value, type):
        fields = dataclasses.fields(value)
        out.append(b"\x0a" + _str_body(type(value).__name__) + _u32(len(fields)))
        for f in fields:
            _encode(getattr(value, f.name), out)
    elif isinstance(value, (list, tuple)):
        out.append(b"\x07" + _u32(len(value)))
        for item in value:
            _encode(item, out)
    elif isinstance(value, (set, frozenset)):
        items = sorted(canonical_serialize(v) for v in value)
        out.append(b"\x08" + _u32(len(items)))
        out.extend(items)
    elif isinstance(value, Mapping):
        pairs = sorted((canonical_serialize(k), canonical_serialize(v)) for k, v in value.items())
        out.append(b"\x09" + _u32(len(pairs)))
        for k, v in pairs:
            out.append(k)
            out.append(v)
    else:
        raise TypeError(f"cannot canonically serialize {type(value).__name__}")


def canonical_serialize(value: Any) -> bytes:
    out: list[bytes] = []
    _encode(value, out)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise SerializationError("truncated input")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def string(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SerializationError("invalid utf-8") from exc

    def value(self) -> Any:
        tag = self.take(1)[0]
        if tag == 0x00:
            return None
        if tag == 0x01:
            return False
        if tag == 0x02:
            return True
        if tag == 0x03:
            return int.from_bytes(self.take(self.u32()), "little", signed=True)
        if tag == 0x04:
            return _F64.unpack(self.take(8))[0]
        if tag == 0x05:
            return self.string()
        if tag == 0x06:
            return self.take(self.u32())
        if tag == 0x07:
            return tuple(self.value() for _ in range(self.u32()))
        if tag == 0x08:
            return frozenset(self.value() for _ in range(self.u32()))
        if tag == 0x09:
            n = self.u32()
            result = {}
            for _ in range(n):
                k = self.value()
                result[k] = self.value()
            return result
        if tag == 0x0A:
            cls = self._lookup(self.string())
            count = self.u32()
            fields = dataclasses.fields(cls)
            if count != len(fields):
                raise SerializationError(f"{cls.__name__}: expected {len(fields)} fields, got {count}")
            return cls(**{f.name: self.value() for f in fields})
        if tag == 0x0B:
            cls = self._lookup(self.string())
            return cls(self.value())
        raise SerializationError(f"unknown tag 0x{tag:02x}")

    @staticmethod
    def _lookup(name: str) -> type:
        try:
            return _REGISTRY[name]
        except KeyError:
            raise SerializationError(f"unregistered type {name!r}") from None


def canonical_deserialize(data: bytes) -> Any:
    reader = _Reader(bytes(data))
    try:
        value = reader.value()
    except ValidationError as exc:
        raise SerializationError(f"decoded value is invalid: {exc}") from exc
    if reader.pos != len(reader.data):
        raise SerializationError("trailing bytes")
    return value


def digest(value: Any) -> bytes:
    """SHA-256 over the canonical encoding."""
    return hashlib.sha256(canonical_serialize(value)).digest()


def to_jsonable(value: Any) -> Any:
    """Human-readable JSON mirror. Bytes become hex strings."""
    if isinstance(value, enum.Enum):
        return value.value
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        out = {"type": type(value).__name__}
        for f in dataclasses.fields(value):
            out[f.name] = to_jsonable(getattr(value, f.name))
        return out
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted((to_jsonable(v) for v in value), key=repr)
    if isinstance(value, Mapping):
        return {_json_key(k): to_jsonable(v) for k, v in sorted(value.items(), key=lambda kv: canonical_serialize(kv[0]))}
    raise TypeError(f"no JSON mirror for {type(value).__name__}")


def _json_key(k: Any) -> str:
    if isinstance(k, (bytes, bytearray)):
        return bytes(k).hex()
    if isinstance(k, enum.Enum):
        return str(k.value)
    if isinstance(k, tuple):
        return "/".join(_json_key(x) for x in k)
    return str(k)


# ---------------------------------------------------------------------------
# Attributes and policies


@canonical
class AttrType(str, enum.Enum):
    STRING = "string"
    INTEGER = "integer"
    BOOLEAN = "boolean"


_KIND_CHECK = {
    AttrType.STRING: lambda v: isinstance(v, str),
    AttrType.INTEGER: lambda v: isinstance(v, int) and not isinstance(v, bool),
    AttrType.BOOLEAN: lambda v: isinstance(v, bool),
}


@canonical
@dataclass(frozen=True)
class Attribute:
    key: str
    type: AttrType
    val: Any

    def __post_init__(self):
        if not isinstance(self.key, str) or not self.key:
            raise ValidationError("attribute key must be a nonempty string")
        object.__setattr__(self, "type", AttrType(self.type))
        if not _KIND_CHECK[self.type](self.val):
            raise ValidationError(f"attribute {self.key!r}: value {self.val!r} is not {self.type.value}")

    @classmethod
    def infer(cls, key: str, val: Any) -> "Attribute":
        if isinstance(val, bool):
            return cls(key, AttrType.BOOLEAN, val)
        if isinstance(val, int):
            return cls(key, AttrType.INTEGER, val)
        if isinstance(val, str):
            return cls(key, AttrType.STRING, val)
        raise ValidationError(f"attribute {key!r}: unsupported value type {type(val).__name__}")


@canonical
@dataclass(frozen=True)
class AttributeSet:
    attrs: frozenset = frozenset()

    def __post_init__(self):
        attrs = frozenset(self.attrs)
        keys = [a.key for a in attrs]
        if len(keys) != len(set(keys)):
            raise ValidationError("duplicate attribute keys")
        object.__setattr__(self, "attrs", attrs)

    @classmethod
    def of(cls, mapping: Optional[Mapping[str, Any]] = None, **kwargs) -> "AttributeSet":
        items = dict(mapping or {}, **kwargs)
        return cls(frozenset(Attribute.infer(k, v) for k, v in items.items()))

    def __iter__(self) -> Iterator[Attribute]:
        return iter(sorted(self.attrs, key=lambda a: a.key))

    def __len__(self) -> int:
        return len(self.attrs)

    def get(self, key: str) -> Optional[Attribute]:
        for a in self.attrs:
            if a.key == key:
                return a
        return None

    def as_dict(self) -> dict:
        return {a.key: a.val for a in self}


def attrs_satisfy(required: AttributeSet, held: AttributeSet) -> bool:
    """True iff every required attribute appears in ``held`` with equal key, type and value.

    Subset-or-equal: an exact match satisfies the policy.
    """
    return required.attrs <= held.attrs


@canonical
class Action(str, enum.Enum):
    READ = "read"
    WRITE = "write"
    STREAM = "stream"


@canonical
@dataclass(frozen=True)
class Context:
    """Validity window ``[start, end]`` in ticks and a per-token throughput limit."""

    start: int
    end: int
    limit: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValidationError("context start must not exceed end")
        if self.limit < 1:
            raise ValidationError("context limit must be >= 1")

    def covers(self, now: int) -> bool:
        return self.start <= now <= self.end


OPEN_CONTEXT_END = 2**62


@canonical
@dataclass(frozen=True)
class Policy:
    resource: str
    actions: frozenset
    required_attrs: AttributeSet
    rep_min: int
    context: Context
    created_at: int
    owner: bytes
    token_ttl: int = 300

    def __post_init__(self):
        actions = frozenset(Action(a) for a in self.actions)
        if not actions:
            raise ValidationError("policy must permit at least one action")
        if self.rep_min < 0:
            raise ValidationError("rep_min must be >= 0")
        if self.token_ttl < 1:
            raise ValidationError("token_ttl must be >= 1")
        if not self.resource:
            raise ValidationError("policy resource must be nonempty")
        object.__setattr__(self, "actions", actions)


# ---------------------------------------------------------------------------
# Requests and tokens


@canonical
@dataclass(frozen=True)
class AccessRequest:
    """The request message R: resource, action, sealed session key, requester signature."""

    resource: str
    action: Action
    session_key_envelope: bytes
    requester: bytes
    nonce: int
    requester_sig: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))

    def signing_bytes(self) -> bytes:
        return canonical_serialize(("R", self.resource, self.action, self.session_key_envelope,
                                    self.requester, self.nonce))

    def digest(self) -> bytes:
        return hashlib.sha256(self.signing_bytes()).digest()


@canonical
@dataclass(frozen=True)
class AccessToken:
    """Token_R: reputation snapshot, expiry, throughput limit, issue time, optional SP signature."""

    rep_snapshot: int
    expires_at: int
    limit: int
    issued_at: int
    issuer_sig: Optional[bytes] = None

    def __post_init__(self):
        if not self.issued_at < self.expires_at:
            raise ValidationError("token must expire after it is issued")
        if self.limit < 1:
            raise ValidationError("token limit must be >= 1")

    def core(self) -> "AccessToken":
        return dataclasses.replace(self, issuer_sig=None)

    def signing_bytes(self) -> bytes:
        return canonical_serialize(("TOKEN", self.core()))


def token_id(token: AccessToken, subject: bytes, resource: str, request_digest: bytes) -> str:
    return digest(("TOKEN-ID", token.core(), subject, resource, request_digest)).hex()


@canonical
@dataclass(frozen=True)
class TokenPresentation:
    """What a consumer hands to data storage: token, the original request, and a fresh signature.

    ``presenter_sig`` is made by ``request.requester`` over :meth:`signing_bytes`; it binds the
    presentation to the subject so nobody else can trigger a violation in their name.
    """

    token: AccessToken
    request: AccessRequest
    nonce: int
    presenter_sig: bytes = b""

    @property
    def subject(self) -> bytes:
        return self.request.requester

    def signing_bytes(self) -> bytes:
        return canonical_serialize(("PRESENT", self.token, self.request, self.nonce))


@canonical
@dataclass(frozen=True)
class NodeIdentity:
    public_key: bytes
    device_fingerprint: bytes


# ---------------------------------------------------------------------------
# Transactions


@canonical
class TxKind(str, enum.Enum):
    REG = "TX_reg"
    POL = "TX_pol"
    REQUEST = "TX_R"
    MISBEHAVIOR = "TX_misbehavior"
    TOKEN_STORE = "TX_token_store"
    TOKEN_USE = "TX_token_use"
    ADMIN = "TX_admin"


@canonical
@dataclass(frozen=True)
class Registration:
    subject: bytes
    attrs: AttributeSet
    device_fingerprint: bytes
    timestamp: int

    def signing_bytes(self) -> bytes:
        return canonical_serialize(("REG", self))


@canonical
@dataclass(frozen=True)
class PolicyChange:
    op: str  # register | update | revoke
    resource: str
    policy: Optional[Policy] = None

    def __post_init__(self):
        if self.op not in ("register", "update", "revoke"):
            raise ValidationError(f"unknown policy op {self.op!r}")
        if self.op != "revoke" and self.policy is None:
            raise ValidationError(f"policy op {self.op!r} requires a policy")
        if self.policy is not None and self.policy.resource != self.resource:
            raise ValidationError("policy resource mismatch")


@canonical
@dataclass(frozen=True)
class RequestSubmission:
    request: AccessRequest


@canonical
@dataclass(frozen=True)
class TokenStore:
    token_id: str
    sigma: bytes


@canonical
@dataclass(frozen=True)
class TokenUse:
    presentation: TokenPresentation


@canonical
@dataclass(frozen=True)
class MisbehaviorReport:
    evidence: TokenPresentation


@canonical
@dataclass(frozen=True)
class AdminAction:
    op: str  # blacklist | unblacklist | upgrade
    subject: Optional[bytes] = None
    role: Optional[str] = None
    code_id: Optional[str] = None


PAYLOAD_TYPES = {
    TxKind.REG: Registration,
    TxKind.POL: PolicyChange,
    TxKind.REQUEST: RequestSubmission,
    TxKind.MISBEHAVIOR: MisbehaviorReport,
    TxKind.TOKEN_STORE: TokenStore,
    TxKind.TOKEN_USE: TokenUse,
    TxKind.ADMIN: AdminAction,
}


@canonical
@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    payload: Any
    signatures: tuple = ()
    to: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TxKind(self.kind))
        object.__setattr__(self, "signatures", tuple(tuple(s) for s in self.signatures))

    def signing_bytes(self) -> bytes:
        return signing_bytes_for(self.kind, self.payload, self.to)

    @property
    def sender(self) -> bytes:
        return self.signatures[0][0] if self.signatures else b""

    @property
    def signers(self) -> frozenset:
        return frozenset(pk for pk, _ in self.signatures)

    def tx_hash(self) -> str:
        return digest(self).hex()


def signing_bytes_for(kind: TxKind, payload: Any, to: Optional[str] = None) -> bytes:
    return canonical_serialize(("TX", TxKind(kind), payload, to))


def well_formed(tx: Transaction) -> bool:
    return isinstance(tx.payload, PAYLOAD_TYPES[tx.kind]) and bool(tx.signatures)
