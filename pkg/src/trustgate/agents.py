"""Off-ledger actors: attribute authority, service providers, consumers and data storage.

Agents hold a reference to a :class:`trustgate.world.World`, which owns the
ledger, the simulation clock and the step trace.  Each agent is a sequential
state machine; agents talk to each other over :class:`SecureChannel` and to
the contracts only through signed transactions and read-only queries.
"""
from __future__ import annotations

import enum
import queue
import random
from dataclasses import dataclass, field
from typing import Optional

from .crypto import KeyPair, SessionKey, decrypt_data, encrypt_data
from .contracts import FLOW_CONTRACT, FLOW_SP, Denial, Grant, TokenCheck
from .errors import AuthenticationError, DecryptionError, RegistrationRejected
from .ledger import EventKind, LedgerEvent, Receipt
from .model import (
    AccessRequest,
    AccessToken,
    Action,
    AttributeSet,
    Context,
    MisbehaviorReport,
    OPEN_CONTEXT_END,
    Policy,
    PolicyChange,
    Registration,
    RequestSubmission,
    TokenPresentation,
    TokenStore,
    TokenUse,
    Transaction,
    TxKind,
    attrs_satisfy,
    signing_bytes_for,
)
from .trs import TrustParams, TrustState, default_trust, trust_step, trust_value

DEFAULT_BLACKLIST_FLOOR = 0.001


def decision_g(trust: float, rep: int, theta_trust: float, rep_min: int) -> bool:
    """The provider's final say: grant iff local trust and global reputation both clear their bars."""
    return trust >= theta_trust and rep >= rep_min


class SecureChannel:
    """Point-to-point, in-order message channel between two named endpoints."""

    def __init__(self, a: str, b: str):
        self.ends = (a, b)
        self._queues = {a: queue.Queue(), b: queue.Queue()}

    def send(self, sender: str, msg) -> None:
        a, b = self.ends
        if sender not in self.ends:
            raise ValueError(f"{sender!r} is not an endpoint of this channel")
        self._queues[b if sender == a else a].put(msg)

    def recv(self, receiver: str, timeout: Optional[float] = None):
        return self._queues[receiver].get(timeout=timeout)


@dataclass
class FlowResult:
    flow: str
    granted: bool
    reason: str = "ok"
    token: Optional[AccessToken] = None
    token_id: Optional[str] = None
    request: Optional[AccessRequest] = None
    session_key: Optional[SessionKey] = None
    data: Optional[bytes] = None
    check: Optional[TokenCheck] = None
    flow_id: int = 0


# ---------------------------------------------------------------------------


class AttributeAuthority:
    """Checks claimed attributes against the building specification and countersigns TX_reg."""

    name = "aa"

    def __init__(self, world, keys: KeyPair, building_spec: Optional[dict] = None):
        self.world = world
        self.keys = keys
        # device fingerprint -> AttributeSet the device is entitled to
        self.building_spec: dict = dict(building_spec or {})

    @property
    def pk(self) -> bytes:
        return self.keys.public_key

    def enroll_device(self, fingerprint: bytes, attrs: AttributeSet) -> None:
        self.building_spec[fingerprint] = attrs

    def countersign(self, reg: Registration, sc_sig: bytes) -> Transaction:
        """Validate a registration request and return the doubly signed TX_reg, or raise."""
        backend = self.world.backend
        msg = signing_bytes_for(TxKind.REG, reg)
        if not backend.verify(reg.subject, msg, sc_sig):
            raise RegistrationRejected("authentication", "request is not signed by the claimed subject")
        entitled = self.building_spec.get(reg.device_fingerprint)
        if entitled is None:
            raise RegistrationRejected("unknown_device", "fingerprint absent from the building specification")
        if not attrs_satisfy(reg.attrs, entitled):
            raise RegistrationRejected("forgery", "claimed attributes exceed the building specification")
        ledger = self.world.ledger
        if ledger.query("ap", "subject_for_device", reg.device_fingerprint) is not None:
            raise RegistrationRejected("duplicate_device", "device already registered under another key")
        if ledger.query("ap", "record", reg.subject) is not None:
            raise RegistrationRejected("duplicate_subject")
        return Transaction(TxKind.REG, reg, ((reg.subject, sc_sig), (self.pk, backend.sign(self.keys.secret_key, msg))))

    def register(self, channel: SecureChannel, sc_name: str) -> Receipt:
        """Serve one registration request waiting on ``channel``."""
        reg, sc_sig = channel.recv(self.name, timeout=1)
        tx = self.countersign(reg, sc_sig)
        receipt = self.world.commit(tx)
        if not receipt.ok:
            raise RegistrationRejected(receipt.error, receipt.detail)
        channel.send(self.name, receipt)
        return receipt


class DataStorage:
    """Off-chain store that releases data only after the ledger validates the presented token."""

    name = "storage"

    def __init__(self, world, keys: KeyPair):
        self.world = world
        self.keys = keys
        self.stored_data: dict[str, bytes] = {}
        # resource owner PK -> secret used to open session-key envelopes on its behalf
        self._openers: dict[bytes, bytes] = {}

    @property
    def pk(self) -> bytes:
        return self.keys.public_key

    def provision(self, owner: KeyPair, resource: str, payload: bytes) -> None:
        self._openers[owner.public_key] = owner.secret_key
        self.stored_data[resource] = bytes(payload)

    def serve(self, presentation: TokenPresentation, flow_id: int = 0, flow: str = FLOW_SP):
        """Validate via the trust contract, then return ``(check, Enc_k(data) or None)``."""
        w = self.world
        steps = ("7", "8") if flow == FLOW_SP else ("5", "6")
        tx = w.sign_tx(self.keys, TxKind.TOKEN_USE, TokenUse(presentation))
        w.step(flow_id, flow, steps[0], self.name, "trs", "validate token")
        receipt = w.commit(tx)
        check: Optional[TokenCheck] = receipt.result if receipt.ok else None
        if check is None or not check.valid:
            return check, None
        req = presentation.request
        policy = w.ledger.query("pol", "policy", req.resource)
        key = w.backend.open_session_key(self._openers[policy.owner], req.session_key_envelope)
        blob = encrypt_data(key, self.stored_data[req.resource], nonce=w.entropy(12))
        w.step(flow_id, flow, steps[1], self.name, "sc", "Enc_k(data)")
        return check, blob


class ServiceProvider:
    """Resource owner: registers policies, mediates requests, keeps local trust."""

    def __init__(self, world, name: str, keys: KeyPair, trust_params: Optional[TrustParams] = None,
                 theta_trust: float = 0.0, blacklist_floor: float = DEFAULT_BLACKLIST_FLOOR):
        self.world = world
        self.name = name
        self.keys = keys
        self.trust_params = trust_params or TrustParams()
        self.theta_trust = theta_trust
        self.blacklist_floor = blacklist_floor
        self.trust_table: dict[bytes, TrustState] = {}
        self.history: dict[bytes, list] = {}
        self.misbehavior_seen: dict[bytes, int] = {}
        self.local_blacklist: set = set()
        self.resource_map: dict[str, str] = {}
        self.policies: set = set()
        self.subscription = world.ledger.subscribe([EventKind.MISBEHAVIOR, EventKind.TOKEN_ISSUED], self.on_event)
        self.subscribed_from = self.subscription.next_seq

    @property
    def pk(self) -> bytes:
        return self.keys.public_key

    # -- local trust ---------------------------------------------------------

    def trust(self, subject: bytes) -> float:
        state = self.trust_table.get(subject)
        return default_trust() if state is None else trust_value(state, self.trust_params)

    def _interact(self, subject: bytes, positive: bool) -> None:
        state = self.trust_table.get(subject, TrustState())
        self.trust_table[subject] = trust_step(state, self.trust_params, positive)
        self.history.setdefault(subject, []).append(positive)

    def on_event(self, ev: LedgerEvent) -> None:
        if ev.kind == EventKind.MISBEHAVIOR:
            self._interact(ev.subject, False)
            self.misbehavior_seen[ev.subject] = self.misbehavior_seen.get(ev.subject, 0) + 1
            if self.trust(ev.subject) < self.blacklist_floor:
                self.local_blacklist.add(ev.subject)
        elif ev.kind == EventKind.TOKEN_ISSUED:
            if ev.payload.get("flow") == FLOW_SP and ev.payload.get("issuer") == self.pk.hex():
                self._interact(ev.subject, True)

    # -- policy administration ------------------------------------------------

    def register_policy(self, resource: str, actions=(Action.READ,), required: Optional[AttributeSet] = None,
                        rep_min: int = 0, context: Optional[Context] = None, token_ttl: int = 300,
                        node_id: Optional[str] = None, op: str = "register") -> Receipt:
        w = self.world
        policy = Policy(resource, frozenset(actions), required or AttributeSet(), rep_min,
                        context or Context(0, OPEN_CONTEXT_END, 1), w.now, self.pk, token_ttl)
        receipt = w.commit(w.sign_tx(self.keys, TxKind.POL, PolicyChange(op, resource, policy)))
        if receipt.ok:
            self.policies.add(receipt.result)
            self.resource_map[resource] = node_id or self.name
        return receipt

    def revoke_policy(self, resource: str) -> Receipt:
        w = self.world
        receipt = w.commit(w.sign_tx(self.keys, TxKind.POL, PolicyChange("revoke", resource)))
        if receipt.ok:
            self.resource_map.pop(resource, None)
        return receipt

    # -- SP-mediated authorization ---------------------------------------------

    def authorize(self, request: AccessRequest, flow_id: int = 0) -> FlowResult:
        """Forward R to the policy contract, apply g, sign and store the token."""
        w = self.world
        subject = request.requester
        if not w.backend.verify(subject, request.signing_bytes(), request.requester_sig):
            raise AuthenticationError("request signature does not verify")
        if subject in self.local_blacklist:
            return FlowResult(FLOW_SP, False, "local_blacklist", request=request, flow_id=flow_id)
        tx = w.sign_tx(self.keys, TxKind.REQUEST, RequestSubmission(request))
        w.step(flow_id, FLOW_SP, "2", self.name, "pol", "TX_R")
        receipt = w.commit(tx)
        w.trace_calls(flow_id, FLOW_SP, receipt)
        if not receipt.ok:
            return FlowResult(FLOW_SP, False, receipt.error, request=request, flow_id=flow_id)
        result = receipt.result
        if isinstance(result, Denial):
            return FlowResult(FLOW_SP, False, result.reason, request=request, flow_id=flow_id)
        grant: Grant = result
        w.step(flow_id, FLOW_SP, "4", "pol", self.name, "Token_R")
        policy = w.ledger.query("pol", "policy", request.resource)
        w.step(flow_id, FLOW_SP, "5a", self.name, self.name, "decision g")
        if not decision_g(self.trust(subject), grant.token.rep_snapshot, self.theta_trust, policy.rep_min):
            return FlowResult(FLOW_SP, False, "decision", request=request, flow_id=flow_id)
        sigma = w.backend.sign(self.keys.secret_key, grant.token.signing_bytes())
        store = w.commit(w.sign_tx(self.keys, TxKind.TOKEN_STORE, TokenStore(grant.token_id, sigma)))
        if not store.ok:
            return FlowResult(FLOW_SP, False, store.error, request=request, flow_id=flow_id)
        w.step(flow_id, FLOW_SP, "5b", self.name, "sc", "sigma (stored via trs)")
        signed = AccessToken(grant.token.rep_snapshot, grant.token.expires_at, grant.token.limit,
                             grant.token.issued_at, sigma)
        return FlowResult(FLOW_SP, True, "ok", token=signed, token_id=grant.token_id, request=request,
                          flow_id=flow_id)

    def report(self, presentation: TokenPresentation) -> Receipt:
        """Submit a misbehavior report carrying the offending presentation as evidence."""
        w = self.world
        return w.commit(w.sign_tx(self.keys, TxKind.MISBEHAVIOR, MisbehaviorReport(presentation)))


class Behavior(str, enum.Enum):
    HONEST = "honest"
    MALICIOUS = "malicious"


class ServiceConsumer:
    """A device requesting access; honest consumers never alter tokens."""

    def __init__(self, world, name: str, keys: KeyPair, attrs: AttributeSet, fingerprint: bytes):
        self.world = world
        self.name = name
        self.keys = keys
        self.attrs = attrs
        self.fingerprint = fingerprint
        self.tokens: dict[str, AccessToken] = {}
        self._nonce = 0
        # private randomness so consumers can build requests on separate threads deterministically
        self.rng = random.Random(f"{world.seed}/{name}")
        # interaction index ranges during which the scenario makes this consumer cheat
        self.malicious_windows: list = []

    @property
    def pk(self) -> bytes:
        return self.keys.public_key

    def behavior(self, interaction: int) -> Behavior:
        for start, end in self.malicious_windows:
            if start <= interaction <= end:
                return Behavior.MALICIOUS
        return Behavior.HONEST

    def entropy(self, n: int) -> bytes:
        return self.rng.randbytes(n)

    def next_nonce(self) -> int:
        self._nonce += 1
        return self._nonce

    def sign(self, msg: bytes) -> bytes:
        return self.world.backend.sign(self.keys.secret_key, msg)

    # -- registration --------------------------------------------------------

    def registration(self, claimed: Optional[AttributeSet] = None) -> tuple:
        reg = Registration(self.pk, claimed or self.attrs, self.fingerprint, self.world.now)
        return reg, self.sign(signing_bytes_for(TxKind.REG, reg))

    def register(self, aa: AttributeAuthority, claimed: Optional[AttributeSet] = None) -> Receipt:
        channel = SecureChannel(self.name, aa.name)
        channel.send(self.name, self.registration(claimed))
        return aa.register(channel, self.name)

    # -- requests ------------------------------------------------------------

    def make_request(self, resource: str, action=Action.READ) -> tuple:
        """Build a signed R with a fresh session key sealed to the resource owner."""
        w = self.world
        policy = w.ledger.query("pol", "policy", resource)
        owner = policy.owner if policy is not None else w.storage.pk
        key = SessionKey.generate(self.entropy(32))
        envelope = w.backend.seal_session_key(owner, key, entropy=self.entropy(32))
        unsigned = AccessRequest(resource, Action(action), envelope, self.pk, self.next_nonce())
        req = AccessRequest(unsigned.resource, unsigned.action, envelope, self.pk, unsigned.nonce,
                            self.sign(unsigned.signing_bytes()))
        return req, key

    def present(self, token: AccessToken, request: AccessRequest) -> TokenPresentation:
        unsigned = TokenPresentation(token, request, self.next_nonce())
        return TokenPresentation(token, request, unsigned.nonce, self.sign(unsigned.signing_bytes()))

    def request_via_sp(self, sp: ServiceProvider, resource: str, action=Action.READ) -> FlowResult:
        w = self.world
        flow_id = w.new_flow()
        req, key = self.make_request(resource, action)
        channel = SecureChannel(self.name, sp.name)
        channel.send(self.name, req)
        w.step(flow_id, FLOW_SP, "1", self.name, sp.name, "R")
        result = sp.authorize(channel.recv(sp.name, timeout=1), flow_id)
        result.session_key = key
        if result.granted:
            self.tokens[result.token_id] = result.token
        return result

    def request_via_contract(self, resource: str, action=Action.READ) -> FlowResult:
        w = self.world
        flow_id = w.new_flow()
        req, key = self.make_request(resource, action)
        tx = w.sign_tx(self.keys, TxKind.REQUEST, RequestSubmission(req))
        w.step(flow_id, FLOW_CONTRACT, "1", self.name, "pol", "TX_R")
        receipt = w.commit(tx)
        w.trace_calls(flow_id, FLOW_CONTRACT, receipt)
        if not receipt.ok:
            return FlowResult(FLOW_CONTRACT, False, receipt.error, request=req, session_key=key, flow_id=flow_id)
        result = receipt.result
        if isinstance(result, Denial):
            return FlowResult(FLOW_CONTRACT, False, result.reason, request=req, session_key=key, flow_id=flow_id)
        w.step(flow_id, FLOW_CONTRACT, "3b", "pol", self.name, "Token_R")
        self.tokens[result.token_id] = result.token
        return FlowResult(FLOW_CONTRACT, True, "ok", token=result.token, token_id=result.token_id, request=req,
                          session_key=key, flow_id=flow_id)

    def fetch(self, result: FlowResult, token: Optional[AccessToken] = None) -> FlowResult:
        """Present the token to storage and decrypt the returned data."""
        w = self.world
        presentation = self.present(token or result.token, result.request)
        w.step(result.flow_id, result.flow, "6" if result.flow == FLOW_SP else "4", self.name, w.storage.name,
               "<sigma, R>" if result.flow == FLOW_SP else "Token_R")
        check, blob = w.storage.serve(presentation, result.flow_id, result.flow)
        result.check = check
        if blob is None:
            result.data = None
            return result
        try:
            result.data = decrypt_data(result.session_key, blob)
        except DecryptionError:
            result.data = None
        return result

    def forged_presentation(self, resource: str, rep_snapshot: int = 10**6) -> TokenPresentation:
        """A token never issued by anyone, dressed up with an inflated reputation."""
        w = self.world
        req, _ = self.make_request(resource)
        token = AccessToken(rep_snapshot, w.now + 1000, 10, w.now, self.entropy(64))
        return self.present(token, req)

    def use_presentation(self, presentation: TokenPresentation) -> Optional[TokenCheck]:
        check, _ = self.world.storage.serve(presentation, self.world.new_flow())
        return check


def step_labels(trace: list, flow_id: int) -> list:
    return [t["step"] for t in trace if t["flow_id"] == flow_id]


@dataclass
class TrustReplay:
    """Recompute an SP's trust table from the event log alone."""

    sp_pk_hex: str
    params: TrustParams
    states: dict = field(default_factory=dict)

    def feed(self, ev: dict) -> None:
        kind = ev["kind"]
        subject = ev["subject"]
        if kind == EventKind.MISBEHAVIOR.value:
            positive = False
        elif kind == EventKind.TOKEN_ISSUED.value and ev["payload"].get("flow") == FLOW_SP \
                and ev["payload"].get("issuer") == self.sp_pk_hex:
            positive = True
        else:
            return
        self.states[subject] = trust_step(self.states.get(subject, TrustState()), self.params, positive)
