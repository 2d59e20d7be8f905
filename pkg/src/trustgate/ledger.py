"""Deterministic single-miner ledger with a logic/data contract host.

Transactions are verified on submission, pooled in submission order and
executed when :meth:`Ledger.produce_block` is called by the simulation clock.
Each transaction runs against journaled data contracts; if it raises
:class:`~trustgate.errors.ContractError` every write it made is undone and a
failure receipt is recorded.

Contract logic and contract data are separate objects.  Replacing a logic
contract flags the old instance obsolete and binds the new one to the same
data contract, so stored state carries over.

Event log export format (JSON lines, one event per line)::

    {"run": 0, "seq": 12, "kind": "misbehavior", "subject": "<hex>",
     "block_height": 7, "tx_hash": "<hex>", "payload": {...}}
"""
from __future__ import annotations

import copy
import dataclasses
import enum
import json
import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional

from .crypto import CryptoBackend
from .errors import AuthenticationError, ContractError, MalformedTransaction, ObsoleteContract, ValidationError
from .model import Transaction, TxKind, canonical_serialize, digest, to_jsonable, well_formed

GENESIS_PARENT = "00" * 32


class EventKind(str, enum.Enum):
    MISBEHAVIOR = "misbehavior"
    TOKEN_ISSUED = "token_issued"
    POLICY_REGISTERED = "policy_registered"
    ATTRIBUTE_REGISTERED = "attribute_registered"
    INTERACTION = "interaction"
    CONTRACT_UPGRADED = "contract_upgraded"


@dataclass(frozen=True)
class LedgerEvent:
    kind: EventKind
    subject: bytes
    block_height: int
    payload: dict
    tx_hash: str
    seq: int

    def to_json(self, run: int = 0) -> dict:
        return {
            "run": run,
            "seq": self.seq,
            "kind": self.kind.value,
            "subject": self.subject.hex(),
            "block_height": self.block_height,
            "tx_hash": self.tx_hash,
            "payload": self.payload,
        }


@dataclass(frozen=True)
class Block:
    height: int
    timestamp: int
    txs: tuple
    parent_hash: str
    receipts_root: str
    hash: str


def block_hash(height: int, timestamp: int, parent_hash: str, tx_hashes: Iterable[str], receipts_root: str) -> str:
    return digest(("BLOCK", height, timestamp, parent_hash, tuple(tx_hashes), receipts_root)).hex()


@dataclass
class Receipt:
    seq: int
    tx_hash: str
    status: str = "pending"  # pending | success | failure
    result: Any = None
    error: Optional[str] = None
    detail: str = ""
    block_height: Optional[int] = None
    timestamp: Optional[int] = None
    ops: int = 0
    calls: tuple = ()
    events: tuple = ()

    @property
    def ok(self) -> bool:
        return self.status == "success"

    def digest_material(self):
        return (self.tx_hash, self.status, self.error, self.result, self.ops)


@dataclass(frozen=True)
class ContractRef:
    role: str
    address: str
    logic_version: int
    data_address: str
    obsolete: bool = False


# ---------------------------------------------------------------------------
# Data contracts


class DataContract:
    """Plain table storage owned by one logic role. Values must be immutable."""

    def __init__(self, address: str):
        self.address = address
        self._tables: dict[str, dict] = {}
        self._journal: Optional[list] = None
        self.ops = 0

    def get(self, table: str, key, default=None):
        self.ops += 1
        return self._tables.get(table, {}).get(key, default)

    def has(self, table: str, key) -> bool:
        self.ops += 1
        return key in self._tables.get(table, {})

    def put(self, table: str, key, value) -> None:
        self.ops += 1
        if table not in self._tables and self._journal is not None:
            self._journal.append((table, None, None, None))
        tab = self._tables.setdefault(table, {})
        if self._journal is not None:
            self._journal.append((table, key, key in tab, tab.get(key)))
        tab[key] = value

    def delete(self, table: str, key) -> None:
        self.ops += 1
        tab = self._tables.get(table, {})
        if key not in tab:
            return
        if self._journal is not None:
            self._journal.append((table, key, True, tab[key]))
        del tab[key]

    def items(self, table: str):
        return sorted(self._tables.get(table, {}).items(), key=lambda kv: canonical_serialize(kv[0]))

    def begin(self) -> None:
        self._journal = []

    def commit(self) -> None:
        self._journal = None

    def rollback(self) -> None:
        for table, key, existed, old in reversed(self._journal or []):
            if existed is None:
                # the transaction created this table
                self._tables.pop(table, None)
                continue
            tab = self._tables.setdefault(table, {})
            if existed:
                tab[key] = old
            else:
                tab.pop(key, None)
        self._journal = None

    def snapshot(self) -> dict:
        return copy.deepcopy(self._tables)


# ---------------------------------------------------------------------------
# Logic contracts

CODE_REGISTRY: dict[str, type] = {}


def register_logic(code_id: str):
    def deco(cls):
        cls.code_id = code_id
        CODE_REGISTRY[code_id] = cls
        return cls
    return deco


class LogicContract:
    role: str = ""
    version: int = 1
    code_id: str = ""
    #: TxKind -> method name
    handles: dict = {}

    def __init__(self, host: "ContractHost", address: str, data: DataContract):
        self.host = host
        self.address = address
        self.data = data
        self.obsolete = False

    def guard(self) -> None:
        if self.obsolete:
            raise ObsoleteContract(self.address)


class ExecutionContext:
    def __init__(self, ledger: "Ledger", tx: Transaction, tx_hash: str, height: int, now: int):
        self.ledger = ledger
        self.tx = tx
        self.tx_hash = tx_hash
        self.height = height
        self.now = now
        self.events: list = []
        self.calls: list = []

    @property
    def sender(self) -> bytes:
        return self.tx.sender

    @property
    def backend(self) -> CryptoBackend:
        return self.ledger.backend

    def verify(self, public_key: bytes, msg: bytes, sig: bytes) -> bool:
        return self.ledger.backend.verify(public_key, msg, sig)

    def emit(self, kind: EventKind, subject: bytes, **payload) -> None:
        self.events.append((EventKind(kind), subject, to_jsonable(payload)))

    def call(self, role: str, method: str, *args, **kwargs):
        self.calls.append(f"{role}.{method}")
        target = self.ledger.host.active(role)
        return getattr(target, method)(self, *args, **kwargs)


class ContractHost:
    def __init__(self, manager: bytes, roles: dict):
        self.manager = manager
        self._active: dict[str, LogicContract] = {}
        self._by_address: dict[str, LogicContract] = {}
        self.data: dict[str, DataContract] = {}
        self.refs: list[ContractRef] = []
        self._deploy_count = 0
        for role, code_id in roles.items():
            data = DataContract(self._address("data", role, 0))
            self.data[role] = data
            self._install(role, code_id, data)

    def _address(self, *parts) -> str:
        return "0x" + digest(("ADDR",) + parts).hex()[:40]

    def _install(self, role: str, code_id: str, data: DataContract) -> LogicContract:
        cls = CODE_REGISTRY.get(code_id)
        if cls is None:
            raise ContractError("unknown_code", code_id)
        if cls.role != role:
            raise ContractError("role_mismatch", f"{code_id} implements {cls.role!r}, not {role!r}")
        self._deploy_count += 1
        address = self._address("logic", role, cls.version, self._deploy_count)
        logic = cls(self, address, data)
        self._active[role] = logic
        self._by_address[address] = logic
        self.refs.append(ContractRef(role, address, cls.version, data.address))
        return logic

    def active(self, role: str) -> LogicContract:
        return self._active[role]

    def resolve(self, target: str) -> LogicContract:
        if target in self._active:
            return self._active[target]
        logic = self._by_address.get(target)
        if logic is None:
            raise ContractError("unknown_contract", target)
        logic.guard()
        return logic

    def ref(self, role: str) -> ContractRef:
        return next(r for r in reversed(self.refs) if r.role == role and not r.obsolete)

    def upgrade_logic(self, role: str, code_id: str, caller: bytes) -> ContractRef:
        if caller != self.manager:
            raise ContractError("unauthorized", "only the deploying manager may upgrade contracts")
        if role not in self._active:
            raise ContractError("unknown_role", role)
        old = self._active[role]
        cls = CODE_REGISTRY.get(code_id)
        if cls is None:
            raise ContractError("unknown_code", code_id)
        if cls.version <= old.version:
            raise ContractError("same_version", f"{role} is already at version {old.version}")
        self._install(role, code_id, old.data)
        old.obsolete = True
        self.refs = [_mark_obsolete(r) if r.address == old.address else r for r in self.refs]
        return self.ref(role)

    def route(self, tx: Transaction) -> tuple:
        for role, logic in self._active.items():
            method = logic.handles.get(tx.kind)
            if method:
                if tx.to is not None and tx.to != logic.address:
                    target = self._by_address.get(tx.to)
                    if target is None:
                        raise ContractError("unknown_contract", tx.to)
                    target.guard()
                    raise ContractError("wrong_contract", f"{tx.to} does not handle {tx.kind.value}")
                return logic, method
        raise ContractError("unroutable", tx.kind.value)

    def begin(self) -> None:
        for d in self.data.values():
            d.begin()

    def commit(self) -> None:
        for d in self.data.values():
            d.commit()

    def rollback(self) -> None:
        for d in self.data.values():
            d.rollback()

    def ops(self) -> int:
        return sum(d.ops for d in self.data.values())


def _mark_obsolete(ref: ContractRef) -> ContractRef:
    return dataclasses.replace(ref, obsolete=True)


# ---------------------------------------------------------------------------
# Subscriptions


class Subscription:
    """Cursor over the event log filtered by kind.

    Events are delivered exactly once, in block order.  While disconnected
    nothing is delivered; :meth:`reconnect` replays everything missed.
    """

    def __init__(self, ledger: "Ledger", kinds, start_seq: int, callback: Optional[Callable] = None):
        self.ledger = ledger
        self.kinds = frozenset(EventKind(k) for k in kinds)
        self.next_seq = start_seq
        self.callback = callback
        self.connected = True
        self._pending: deque = deque()

    def _pump(self) -> None:
        if not self.connected:
            return
        events = self.ledger.events
        while self.next_seq < len(events):
            ev = events[self.next_seq]
            self.next_seq += 1
            if ev.kind in self.kinds:
                if self.callback is not None:
                    self.callback(ev)
                else:
                    self._pending.append(ev)

    def poll(self) -> list:
        self._pump()
        out = list(self._pending)
        self._pending.clear()
        return out

    def disconnect(self) -> None:
        self.connected = False

    def reconnect(self) -> None:
        self.connected = True
        self._pump()


# ---------------------------------------------------------------------------
# Ledger


class Ledger:
    def __init__(self, backend: CryptoBackend, manager: bytes, roles: dict, settings: Optional[dict] = None):
        self.backend = backend
        self.host = ContractHost(manager, roles)
        self.settings = dict(settings or {})
        self.blocks: list[Block] = []
        self.events: list[LedgerEvent] = []
        self.receipts: dict[int, Receipt] = {}
        self._pool: list = []
        self._seq = 0
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []
        for role in self.host.data:
            self.host.active(role).setup(self.settings)
        self._append_block(0, (), ())

    # -- submission -------------------------------------------------------

    def submit(self, tx: Transaction) -> int:
        if not well_formed(tx):
            raise MalformedTransaction(f"{tx.kind.value} payload must be {type(tx.payload).__name__}")
        msg = tx.signing_bytes()
        for pk, sig in tx.signatures:
            if not self.backend.verify(pk, msg, sig):
                raise AuthenticationError(f"signature by {bytes(pk).hex()[:16]} does not verify")
        tx_hash = tx.tx_hash()
        with self._lock:
            seq = self._seq
            self._seq += 1
            self._pool.append((seq, tx, tx_hash))
            self.receipts[seq] = Receipt(seq, tx_hash)
        return seq

    def pending(self) -> int:
        with self._lock:
            return len(self._pool)

    # -- block production -------------------------------------------------

    @property
    def height(self) -> int:
        return self.blocks[-1].height

    @property
    def last_timestamp(self) -> int:
        return self.blocks[-1].timestamp

    def produce_block(self, now: int) -> Block:
        if now < self.last_timestamp:
            raise ValueError(f"block time {now} precedes previous block at {self.last_timestamp}")
        with self._lock:
            batch, self._pool = self._pool, []
        height = self.height + 1
        receipts = []
        for seq, tx, tx_hash in batch:
            receipts.append(self._execute(seq, tx, tx_hash, height, now))
        block = self._append_block(now, tuple(tx for _, tx, _ in batch), receipts, height=height)
        for sub in list(self._subs):
            sub._pump()
        return block

    def _append_block(self, now: int, txs: tuple, receipts, height: int = 0) -> Block:
        parent = self.blocks[-1].hash if self.blocks else GENESIS_PARENT
        receipts_root = digest(tuple(r.digest_material() for r in receipts)).hex()
        tx_hashes = [tx.tx_hash() for tx in txs]
        block = Block(height, now, txs, parent, receipts_root, block_hash(height, now, parent, tx_hashes, receipts_root))
        self.blocks.append(block)
        return block

    def _execute(self, seq: int, tx: Transaction, tx_hash: str, height: int, now: int) -> Receipt:
        receipt = self.receipts[seq]
        ctx = ExecutionContext(self, tx, tx_hash, height, now)
        ops_before = self.host.ops()
        self.host.begin()
        try:
            if tx.kind == TxKind.ADMIN and tx.payload.op == "upgrade":
                result = self.host.upgrade_logic(tx.payload.role, tx.payload.code_id, tx.sender)
                ctx.emit(EventKind.CONTRACT_UPGRADED, tx.sender, role=result.role,
                         address=result.address, version=result.logic_version)
            else:
                logic, method = self.host.route(tx)
                logic.guard()
                result = getattr(logic, method)(ctx, tx.payload)
        except (ContractError, ValidationError) as exc:
            self.host.rollback()
            receipt.status = "failure"
            receipt.error = getattr(exc, "code", "invalid")
            receipt.detail = getattr(exc, "detail", str(exc))
        else:
            self.host.commit()
            receipt.status = "success"
            receipt.result = result
            evs = []
            for kind, subject, payload in ctx.events:
                ev = LedgerEvent(kind, subject, height, payload, tx_hash, len(self.events))
                self.events.append(ev)
                evs.append(ev.seq)
            receipt.events = tuple(evs)
        receipt.block_height = height
        receipt.timestamp = now
        receipt.calls = tuple(ctx.calls)
        receipt.ops = self.host.ops() - ops_before
        return receipt

    # -- reads ------------------------------------------------------------

    def receipt(self, seq: int) -> Receipt:
        return self.receipts[seq]

    def query(self, target: str, method: str, *args, **kwargs):
        logic = self.host.resolve(target)
        return getattr(logic, method)(*args, **kwargs)

    def subscribe(self, kinds, callback: Optional[Callable] = None, from_seq: Optional[int] = None) -> Subscription:
        start = len(self.events) if from_seq is None else from_seq
        sub = Subscription(self, kinds, start, callback)
        self._subs.append(sub)
        return sub

    # -- integrity and export ----------------------------------------------

    def verify_chain(self) -> bool:
        parent = GENESIS_PARENT
        for i, b in enumerate(self.blocks):
            if b.height != i or b.parent_hash != parent:
                return False
            if block_hash(b.height, b.timestamp, b.parent_hash, [tx.tx_hash() for tx in b.txs], b.receipts_root) != b.hash:
                return False
            parent = b.hash
        return True

    def chain_hashes(self) -> list:
        return [b.hash for b in self.blocks]

    def snapshot(self) -> dict:
        return {role: d.snapshot() for role, d in self.host.data.items()}

    def state_dump(self) -> dict:
        out = {}
        for role, data in self.host.data.items():
            out[role] = {table: {_key(k): to_jsonable(v) for k, v in data.items(table)}
                         for table in sorted(data._tables)}
        out["contracts"] = [dataclasses.asdict(r) for r in self.host.refs]
        return out

    def chain_dump(self) -> list:
        out = []
        for b in self.blocks:
            out.append({
                "height": b.height,
                "timestamp": b.timestamp,
                "parent_hash": b.parent_hash,
                "hash": b.hash,
                "receipts_root": b.receipts_root,
                "txs": [{"hash": tx.tx_hash(), "kind": tx.kind.value, "sender": tx.sender.hex()} for tx in b.txs],
            })
        return out

    def event_lines(self, run: int = 0) -> list:
        return [json.dumps(ev.to_json(run), sort_keys=True) for ev in self.events]


def _key(k) -> str:
    if isinstance(k, bytes):
        return k.hex()
    if isinstance(k, tuple):
        return "/".join(_key(x) for x in k)
    return str(k)
