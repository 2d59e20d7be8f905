"""Simulation harness tying together keys, clock, ledger, agents and the step trace."""
from __future__ import annotations

import hashlib
import random
import threading
from typing import Optional

from .agents import AttributeAuthority, DataStorage, ServiceConsumer, ServiceProvider, TrustReplay, DEFAULT_BLACKLIST_FLOOR
from .contracts import FLOW_SP, deploy
from .crypto import KeyPair, make_backend
from .ledger import Receipt
from .model import AttributeSet, Transaction, TxKind, signing_bytes_for
from .trs import RepParams, TrustParams

DEFAULT_BLOCK_INTERVAL = 12

# contract-internal calls -> numbered step, per flow
_CALL_STEPS = {
    FLOW_SP: {"ap.check_attributes": "3a", "trs.check_reputation": "3b"},
    "contract": {"ap.check_attributes": "2a", "trs.check_reputation": "2b", "trs.store_token": "3a"},
}


class World:
    def __init__(self, seed: int = 0, backend: str = "ed25519", rep_params: Optional[RepParams] = None,
                 trust_params: Optional[TrustParams] = None, denial_threshold: int = 3,
                 block_interval: int = DEFAULT_BLOCK_INTERVAL, theta_trust: float = 0.0,
                 blacklist_floor: float = DEFAULT_BLACKLIST_FLOOR):
        self.seed = seed
        self.rng = random.Random(seed)
        self._rng_lock = threading.Lock()
        self.backend = make_backend(backend)
        self.rep_params = rep_params or RepParams()
        self.trust_params = trust_params or TrustParams()
        self.block_interval = block_interval
        self.theta_trust = theta_trust
        self.blacklist_floor = blacklist_floor
        self.now = 0
        self.trace: list = []
        self._flows = 0

        self.manager = self.keypair("manager")
        self.aa = AttributeAuthority(self, self.keypair("aa"))
        self.ledger = deploy(self.backend, self.manager.public_key, self.aa.pk, self.rep_params, denial_threshold)
        self.storage = DataStorage(self, self.keypair("storage"))
        self.sps: dict[str, ServiceProvider] = {}
        self.scs: dict[str, ServiceConsumer] = {}

    # -- determinism helpers --------------------------------------------------

    def keypair(self, label: str) -> KeyPair:
        seed = hashlib.sha256(f"trustgate/key/{self.seed}/{label}".encode()).digest()
        return self.backend.generate_keypair(seed)

    def entropy(self, n: int) -> bytes:
        with self._rng_lock:
            return self.rng.randbytes(n)

    def fingerprint(self, label: str) -> bytes:
        return hashlib.sha256(f"device/{label}".encode()).digest()[:16]

    # -- ledger plumbing ------------------------------------------------------

    def sign_tx(self, keys: KeyPair, kind: TxKind, payload, to: Optional[str] = None) -> Transaction:
        sig = self.backend.sign(keys.secret_key, signing_bytes_for(kind, payload, to))
        return Transaction(kind, payload, ((keys.public_key, sig),), to)

    def mine(self):
        self.now += self.block_interval
        return self.ledger.produce_block(self.now)

    def advance(self, ticks: int) -> None:
        self.now += ticks

    def commit(self, tx: Transaction) -> Receipt:
        """Submit, produce the next block, and return the transaction's receipt."""
        seq = self.ledger.submit(tx)
        self.mine()
        return self.ledger.receipt(seq)

    # -- actors ---------------------------------------------------------------

    def add_sp(self, name: str, **kwargs) -> ServiceProvider:
        kwargs.setdefault("trust_params", self.trust_params)
        kwargs.setdefault("theta_trust", self.theta_trust)
        kwargs.setdefault("blacklist_floor", self.blacklist_floor)
        sp = ServiceProvider(self, name, self.keypair(f"sp/{name}"), **kwargs)
        self.sps[name] = sp
        return sp

    def add_sc(self, name: str, attrs: Optional[AttributeSet] = None, register: bool = True,
               fingerprint: Optional[bytes] = None, key_label: Optional[str] = None) -> ServiceConsumer:
        attrs = attrs if attrs is not None else AttributeSet.of(role="sensor")
        fp = fingerprint if fingerprint is not None else self.fingerprint(name)
        sc = ServiceConsumer(self, name, self.keypair(f"sc/{key_label or name}"), attrs, fp)
        if fp not in self.aa.building_spec:
            self.aa.enroll_device(fp, attrs)
        if register:
            sc.register(self.aa)
        self.scs[name] = sc
        return sc

    def add_resource(self, sp: ServiceProvider, resource: str, payload: bytes, **policy_kwargs) -> Receipt:
        receipt = sp.register_policy(resource, **policy_kwargs)
        self.storage.provision(sp.keys, resource, payload)
        return receipt

    # -- tracing ----------------------------------------------------------------

    def new_flow(self) -> int:
        self._flows += 1
        return self._flows

    def step(self, flow_id: int, flow: str, step: str, src: str, dst: str, what: str) -> None:
        self.trace.append({"flow_id": flow_id, "flow": flow, "step": step, "from": src, "to": dst,
                           "what": what, "t": self.now})

    def trace_calls(self, flow_id: int, flow: str, receipt: Receipt) -> None:
        table = _CALL_STEPS[flow]
        for call in receipt.calls:
            label = table.get(call)
            if label:
                src, _, method = call.partition(".")
                self.step(flow_id, flow, label, "pol", src, method)

    # -- inspection -------------------------------------------------------------

    def reputation(self, sc: ServiceConsumer) -> Optional[int]:
        return self.ledger.query("trs", "reputation_of", sc.pk)

    def rep_state(self, sc: ServiceConsumer):
        rec = self.ledger.query("trs", "record", sc.pk)
        return None if rec is None else rec.rep_state

    def misbehavior_events(self, subject: Optional[bytes] = None) -> list:
        return [e for e in self.ledger.events
                if e.kind.value == "misbehavior" and (subject is None or e.subject == subject)]

    def sp_trust_dump(self) -> dict:
        out = {}
        for name, sp in sorted(self.sps.items()):
            out[name] = {
                "pk": sp.pk.hex(),
                "subscribed_from": sp.subscribed_from,
                "trust": {s.hex(): {"i_accum": st.i_accum, "n": st.n} for s, st in sorted(sp.trust_table.items())},
                "local_blacklist": sorted(s.hex() for s in sp.local_blacklist),
            }
        return out

    def replay_trust(self, sp: ServiceProvider) -> dict:
        rep = TrustReplay(sp.pk.hex(), sp.trust_params)
        for ev in self.ledger.events[sp.subscribed_from:]:
            rep.feed(ev.to_json())
        return {bytes.fromhex(k): v for k, v in rep.states.items()}
