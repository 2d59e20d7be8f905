"""On-ledger state machines: attribute provider, trust/reputation, policy.

Each contract is a logic class bound to a data contract by the ledger host.
Methods taking ``ctx`` run inside a transaction; the rest are read-only
queries reachable through :meth:`trustgate.ledger.Ledger.query`.

Denials are ordinary successful executions returning :class:`Denial`; only
authentication, authorization and malformed-input problems revert a
transaction.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .crypto import CryptoBackend
from .errors import ContractError
from .ledger import EventKind, ExecutionContext, Ledger, LogicContract, register_logic
from .model import (
    AccessToken,
    AdminAction,
    AttributeSet,
    MisbehaviorReport,
    Policy,
    PolicyChange,
    Registration,
    RequestSubmission,
    TokenPresentation,
    TokenStore,
    TokenUse,
    TxKind,
    attrs_satisfy,
    canonical,
    digest,
    token_id,
)
from .trs import RepParams, RepState, rep_step, rep_value

FLOW_SP = "sp"
FLOW_CONTRACT = "contract"

# Denial reasons that count toward the repeated-violation threshold.
POLICY_VIOLATIONS = frozenset({"blacklisted", "context", "attributes", "action", "reputation"})


@canonical
@dataclass(frozen=True)
class AttributeRecord:
    subject: bytes
    attrs: AttributeSet
    device_fingerprint: bytes
    registered_at: int


@canonical
@dataclass(frozen=True)
class ReputationRecord:
    subject: bytes
    rep_state: RepState
    blacklisted: bool = False


@canonical
@dataclass(frozen=True)
class TokenRecord:
    token: AccessToken
    subject: bytes
    resource: str
    consumed_count: int
    owner: bytes
    flow: str
    request_digest: bytes

    def __post_init__(self):
        if self.consumed_count > self.token.limit:
            raise ValueError("consumed_count exceeds token limit")


@canonical
@dataclass(frozen=True)
class Denial:
    """The empty result of the access check, plus why."""

    reason: str
    reported: bool = False


@canonical
@dataclass(frozen=True)
class Grant:
    token: AccessToken
    token_id: str
    flow: str


@canonical
@dataclass(frozen=True)
class TokenCheck:
    valid: bool
    reason: str  # ok | forged | expired | throughput
    consumed: int = 0
    reputation: Optional[int] = None


@canonical
@dataclass(frozen=True)
class ReputationView:
    value: int
    blacklisted: bool


def policy_id(resource: str, owner: bytes) -> str:
    return digest(("POLICY", resource, owner)).hex()


def access_check(policy: Policy, action, held: AttributeSet, rep: int) -> Optional[str]:
    """The three nested conditions of the access-control check; returns the failing one or None."""
    if not attrs_satisfy(policy.required_attrs, held):
        return "attributes"
    if action not in policy.actions:
        return "action"
    if not rep >= policy.rep_min:
        return "reputation"
    return None


# ---------------------------------------------------------------------------


@register_logic("ap/v1")
class AttributeProvider(LogicContract):
    role = "ap"
    version = 1
    handles = {TxKind.REG: "register"}

    def setup(self, settings: dict) -> None:
        self.data.put("config", "aa", settings["aa"])

    def register(self, ctx: ExecutionContext, reg: Registration) -> AttributeRecord:
        aa = self.data.get("config", "aa")
        signers = ctx.tx.signers
        if aa not in signers:
            raise ContractError("missing_authority", "registration must be countersigned by the attribute authority")
        if reg.subject not in signers:
            raise ContractError("missing_subject_signature")
        if self.data.has("records", reg.subject):
            raise ContractError("duplicate_subject")
        if self.data.has("devices", reg.device_fingerprint):
            raise ContractError("duplicate_device", "device already bound to another identity")
        record = AttributeRecord(reg.subject, reg.attrs, reg.device_fingerprint, ctx.now)
        self.data.put("records", reg.subject, record)
        self.data.put("devices", reg.device_fingerprint, reg.subject)
        ctx.call("trs", "init_subject", reg.subject)
        ctx.emit(EventKind.ATTRIBUTE_REGISTERED, reg.subject, device=reg.device_fingerprint, attrs=reg.attrs.as_dict())
        return record

    def check_attributes(self, ctx: ExecutionContext, subject: bytes) -> Optional[AttributeSet]:
        record = self.data.get("records", subject)
        return record.attrs if record else None

    # queries
    def record(self, subject: bytes) -> Optional[AttributeRecord]:
        self.guard()
        return self.data.get("records", subject)

    def subject_for_device(self, fingerprint: bytes) -> Optional[bytes]:
        self.guard()
        return self.data.get("devices", fingerprint)


@register_logic("trs/v1")
class TrustReputation(LogicContract):
    role = "trs"
    version = 1
    handles = {
        TxKind.TOKEN_STORE: "store_signature",
        TxKind.TOKEN_USE: "use_token",
        TxKind.MISBEHAVIOR: "report",
        TxKind.ADMIN: "admin",
    }

    def setup(self, settings: dict) -> None:
        p: RepParams = settings["rep_params"]
        self.data.put("config", "manager", self.host.manager)
        self.data.put("config", "rep_params", (p.beta_pos, p.beta_neg, p.lam.numerator, p.lam.denominator, p.scale))

    @property
    def params(self) -> RepParams:
        bp, bn, num, den, scale = self.data.get("config", "rep_params")
        return RepParams(bp, bn, Fraction(num, den), scale)

    # -- internal calls ------------------------------------------------------

    def init_subject(self, ctx: ExecutionContext, subject: bytes) -> None:
        if not self.data.has("reputations", subject):
            self.data.put("reputations", subject, ReputationRecord(subject, RepState()))

    def check_reputation(self, ctx: ExecutionContext, subject: bytes) -> Optional[ReputationView]:
        rec = self.data.get("reputations", subject)
        if rec is None:
            return None
        return ReputationView(rep_value(rec.rep_state, self.params), rec.blacklisted)

    def record_interaction(self, ctx: ExecutionContext, subject: bytes, sp: bytes, positive: bool,
                           reason: str = "") -> int:
        rec = self.data.get("reputations", subject)
        if rec is None:
            raise ContractError("unregistered", "interactions require a registered subject")
        params = self.params
        state = rep_step(rec.rep_state, params, positive, sp)
        value = rep_value(state, params)
        self.data.put("reputations", subject, dataclasses.replace(rec, rep_state=state))
        ctx.emit(EventKind.INTERACTION, subject, sp=sp, positive=positive, reputation=value,
                 s_accum=state.s_accum, n=state.n, n_peers=len(state.peers))
        if not positive:
            ctx.emit(EventKind.MISBEHAVIOR, subject, reason=reason, sp=sp, reputation=value)
        return value

    def store_token(self, ctx: ExecutionContext, record: TokenRecord) -> str:
        tid = token_id(record.token, record.subject, record.resource, record.request_digest)
        self.data.put("tokens", tid, record)
        return tid

    # -- transactions --------------------------------------------------------

    def store_signature(self, ctx: ExecutionContext, payload: TokenStore) -> str:
        rec: TokenRecord = self.data.get("tokens", payload.token_id)
        if rec is None:
            raise ContractError("unknown_token")
        if rec.flow != FLOW_SP:
            raise ContractError("not_sp_token", "contract-issued tokens carry no provider signature")
        if ctx.sender != rec.owner:
            raise ContractError("unauthorized", "only the resource owner signs its tokens")
        if rec.token.issuer_sig is not None:
            raise ContractError("already_signed")
        if not ctx.verify(rec.owner, rec.token.signing_bytes(), payload.sigma):
            raise ContractError("bad_signature", "token signature does not verify")
        signed = dataclasses.replace(rec.token, issuer_sig=payload.sigma)
        self.data.put("tokens", payload.token_id, dataclasses.replace(rec, token=signed))
        ctx.emit(EventKind.TOKEN_ISSUED, rec.subject, token_id=payload.token_id, resource=rec.resource,
                 flow=FLOW_SP, issuer=rec.owner)
        return payload.token_id

    def _authenticate(self, ctx: ExecutionContext, p: TokenPresentation) -> None:
        subject = p.subject
        if not ctx.verify(subject, p.signing_bytes(), p.presenter_sig):
            raise ContractError("authentication", "presentation is not signed by the claimed subject")
        if not self.data.has("reputations", subject):
            raise ContractError("unregistered")
        key = (subject, p.nonce)
        if self.data.has("presentations", key):
            raise ContractError("replay", "presentation nonce already used")
        self.data.put("presentations", key, ctx.height)

    def _evaluate(self, ctx: ExecutionContext, p: TokenPresentation):
        req = p.request
        if not ctx.verify(req.requester, req.signing_bytes(), req.requester_sig):
            return "forged", None
        tid = token_id(p.token, p.subject, req.resource, req.digest())
        rec: Optional[TokenRecord] = self.data.get("tokens", tid)
        if rec is None:
            return "forged", None
        if rec.flow == FLOW_SP:
            if rec.token.issuer_sig is None or p.token.issuer_sig != rec.token.issuer_sig:
                return "forged", rec
        if not ctx.now < rec.token.expires_at:
            return "expired", rec
        if not rec.consumed_count < rec.token.limit:
            return "throughput", rec
        return "ok", rec

    def _peer_for(self, ctx: ExecutionContext, p: TokenPresentation, rec: Optional[TokenRecord]) -> bytes:
        if rec is not None:
            return rec.owner
        owner = ctx.call("pol", "owner_of", p.request.resource)
        return owner if owner is not None else ctx.sender

    def use_token(self, ctx: ExecutionContext, payload: TokenUse) -> TokenCheck:
        p = payload.presentation
        self._authenticate(ctx, p)
        reason, rec = self._evaluate(ctx, p)
        tid = token_id(p.token, p.subject, p.request.resource, p.request.digest())
        if reason == "ok":
            consumed = rec.consumed_count + 1
            self.data.put("tokens", tid, dataclasses.replace(rec, consumed_count=consumed))
            rep = self.record_interaction(ctx, p.subject, rec.owner, True)
            return TokenCheck(True, "ok", consumed, rep)
        rep = self.record_interaction(ctx, p.subject, self._peer_for(ctx, p, rec), False, reason=reason)
        return TokenCheck(False, reason, rec.consumed_count if rec else 0, rep)

    def report(self, ctx: ExecutionContext, payload: MisbehaviorReport) -> TokenCheck:
        p = payload.evidence
        self._authenticate(ctx, p)
        reason, rec = self._evaluate(ctx, p)
        if reason == "ok":
            raise ContractError("unfounded_report", "evidence shows a valid token")
        rep = self.record_interaction(ctx, p.subject, self._peer_for(ctx, p, rec), False, reason=reason)
        return TokenCheck(False, reason, rec.consumed_count if rec else 0, rep)

    def admin(self, ctx: ExecutionContext, action: AdminAction) -> ReputationRecord:
        if action.op not in ("blacklist", "unblacklist"):
            raise ContractError("unknown_op", action.op)
        if ctx.sender != self.data.get("config", "manager"):
            raise ContractError("unauthorized", "only the building manager may change the blacklist")
        rec = self.data.get("reputations", action.subject)
        if rec is None:
            raise ContractError("unregistered")
        rec = dataclasses.replace(rec, blacklisted=(action.op == "blacklist"))
        self.data.put("reputations", action.subject, rec)
        return rec

    # -- queries -------------------------------------------------------------

    def reputation_of(self, subject: bytes) -> Optional[int]:
        self.guard()
        rec = self.data.get("reputations", subject)
        return None if rec is None else rep_value(rec.rep_state, self.params)

    def record(self, subject: bytes) -> Optional[ReputationRecord]:
        self.guard()
        return self.data.get("reputations", subject)

    def token(self, tid: str) -> Optional[TokenRecord]:
        self.guard()
        return self.data.get("tokens", tid)

    def reputations(self) -> dict:
        self.guard()
        return dict(self.data.items("reputations"))


@register_logic("pol/v1")
class PolicyContract(LogicContract):
    role = "pol"
    version = 1
    handles = {TxKind.POL: "change_policy", TxKind.REQUEST: "validate"}

    def setup(self, settings: dict) -> None:
        self.data.put("config", "denial_threshold", settings.get("denial_threshold", 3))

    def change_policy(self, ctx: ExecutionContext, change: PolicyChange) -> str:
        existing: Optional[Policy] = self.data.get("policies", change.resource)
        if existing is not None and existing.owner != ctx.sender:
            raise ContractError("unauthorized", "resource is owned by another provider")
        if change.policy is not None and change.policy.owner != ctx.sender:
            raise ContractError("unauthorized", "policy owner must sign the change")
        if change.op == "register" and existing is not None:
            raise ContractError("exists", change.resource)
        if change.op in ("update", "revoke") and existing is None:
            raise ContractError("unknown_resource", change.resource)
        if change.op == "revoke":
            self.data.delete("policies", change.resource)
        else:
            self.data.put("policies", change.resource, change.policy)
        ctx.emit(EventKind.POLICY_REGISTERED, ctx.sender, resource=change.resource, op=change.op)
        return policy_id(change.resource, ctx.sender)

    def owner_of(self, ctx: ExecutionContext, resource: str) -> Optional[bytes]:
        policy = self.data.get("policies", resource)
        return policy.owner if policy else None

    def validate(self, ctx: ExecutionContext, submission: RequestSubmission):
        req = submission.request
        subject = req.requester
        if not ctx.verify(subject, req.signing_bytes(), req.requester_sig):
            raise ContractError("authentication", "request is not signed by its requester")
        if self.data.has("requests", (subject, req.nonce)):
            raise ContractError("replay", "request nonce already used")
        self.data.put("requests", (subject, req.nonce), ctx.height)
        flow = FLOW_CONTRACT if ctx.sender == subject else FLOW_SP

        policy: Optional[Policy] = self.data.get("policies", req.resource)
        if policy is None:
            return Denial("unknown_resource")
        if flow == FLOW_SP and ctx.sender != policy.owner:
            raise ContractError("unauthorized", "only the resource owner may forward requests")

        held = ctx.call("ap", "check_attributes", subject)
        if held is None:
            return Denial("unregistered")
        rep = ctx.call("trs", "check_reputation", subject)

        if rep.blacklisted:
            reason = "blacklisted"
        elif not policy.context.covers(ctx.now):
            reason = "context"
        else:
            reason = access_check(policy, req.action, held, rep.value)
        if reason is not None:
            return self._deny(ctx, subject, policy, reason)

        self.data.delete("denials", (subject, req.resource))
        token = AccessToken(rep.value, ctx.now + policy.token_ttl, policy.context.limit, ctx.now)
        record = TokenRecord(token, subject, req.resource, 0, policy.owner, flow, req.digest())
        tid = ctx.call("trs", "store_token", record)
        if flow == FLOW_CONTRACT:
            ctx.emit(EventKind.TOKEN_ISSUED, subject, token_id=tid, resource=req.resource,
                     flow=FLOW_CONTRACT, issuer=None)
        return Grant(token, tid, flow)

    def _deny(self, ctx: ExecutionContext, subject: bytes, policy: Policy, reason: str) -> Denial:
        if reason not in POLICY_VIOLATIONS:
            return Denial(reason)
        key = (subject, policy.resource)
        count = self.data.get("denials", key, 0) + 1
        if count >= self.data.get("config", "denial_threshold"):
            self.data.delete("denials", key)
            ctx.call("trs", "record_interaction", subject, policy.owner, False, reason="repeated_denial")
            return Denial(reason, reported=True)
        self.data.put("denials", key, count)
        return Denial(reason)

    # queries
    def policy(self, resource: str) -> Optional[Policy]:
        self.guard()
        return self.data.get("policies", resource)


# Second-generation logic used to exercise upgrades; behavior is unchanged.

@register_logic("ap/v2")
class AttributeProviderV2(AttributeProvider):
    version = 2


@register_logic("trs/v2")
class TrustReputationV2(TrustReputation):
    version = 2


@register_logic("pol/v2")
class PolicyContractV2(PolicyContract):
    version = 2


DEFAULT_ROLES = {"ap": "ap/v1", "trs": "trs/v1", "pol": "pol/v1"}


def deploy(backend: CryptoBackend, manager: bytes, aa: bytes, rep_params: Optional[RepParams] = None,
           denial_threshold: int = 3, roles: Optional[dict] = None) -> Ledger:
    """Genesis: the building manager deploys the three contracts."""
    settings = {"aa": aa, "rep_params": rep_params or RepParams(), "denial_threshold": denial_threshold}
    return Ledger(backend, manager, dict(roles or DEFAULT_ROLES), settings)
