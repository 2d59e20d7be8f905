import dataclasses

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from trustgate.agents import SecureChannel, ServiceConsumer, decision_g, step_labels
from trustgate.errors import AuthenticationError, RegistrationRejected
from trustgate.model import (
    AccessToken,
    AdminAction,
    AttributeSet,
    MisbehaviorReport,
    Registration,
    TokenPresentation,
    TxKind,
    signing_bytes_for,
)
from trustgate.trs import TrustParams, trust_value
from trustgate.world import World

SP_STEPS = ["1", "2", "3a", "3b", "4", "5a", "5b", "6", "7", "8"]
CONTRACT_STEPS = ["1", "2a", "2b", "3a", "3b", "4", "5", "6"]


class TestGoldenTraces:
    def test_sp_flow(self, ed_world):
        sc = ed_world.add_sc("alice")
        result = sc.fetch(sc.request_via_sp(ed_world.sps["spA"], "rA"))
        assert result.granted and result.data == b"resource A payload"
        assert step_labels(ed_world.trace, result.flow_id) == SP_STEPS

    def test_contract_flow(self, ed_world):
        sc = ed_world.add_sc("alice")
        result = sc.fetch(sc.request_via_contract("rA"))
        assert result.granted and result.data == b"resource A payload"
        assert step_labels(ed_world.trace, result.flow_id) == CONTRACT_STEPS

    def test_trace_endpoints(self, ed_world):
        sc = ed_world.add_sc("alice")
        result = sc.fetch(sc.request_via_contract("rA"))
        hops = [(t["from"], t["to"]) for t in ed_world.trace if t["flow_id"] == result.flow_id]
        assert hops[0] == ("alice", "pol") and hops[-1] == ("storage", "sc")

    def test_denied_flow_stops_after_contract(self, world):
        sc = world.add_sc("alice", AttributeSet.of(role="actuator"))
        world.sps["spA"].register_policy("rS", required=AttributeSet.of(role="sensor"))
        result = sc.request_via_sp(world.sps["spA"], "rS")
        assert not result.granted and result.reason == "attributes"
        assert step_labels(world.trace, result.flow_id) == ["1", "2", "3a", "3b"]


class TestAttributeAuthority:
    def test_rejections(self, world):
        aa = world.aa
        alice = world.add_sc("alice")
        reg, sig = alice.registration()
        with pytest.raises(RegistrationRejected, match="duplicate_device"):
            aa.countersign(reg, sig)
        stranger = world.keypair("stranger")
        reg = Registration(stranger.public_key, AttributeSet.of(role="sensor"), b"unknown-device", 0)
        msg = signing_bytes_for(TxKind.REG, reg)
        with pytest.raises(RegistrationRejected, match="authentication"):
            aa.countersign(reg, b"\x00" * 32)
        with pytest.raises(RegistrationRejected, match="unknown_device"):
            aa.countersign(reg, world.backend.sign(stranger.secret_key, msg))

    def test_claimed_attributes_must_match_building_spec(self, world):
        sc = world.add_sc("bob", AttributeSet.of(role="sensor"), register=False)
        with pytest.raises(RegistrationRejected) as exc:
            sc.register(world.aa, claimed=AttributeSet.of(role="admin"))
        assert exc.value.reason == "forgery"
        # a subset of the entitled attributes is fine
        assert sc.register(world.aa, claimed=AttributeSet()).ok

    def test_duplicate_subject(self, world):
        sc = world.add_sc("carol")
        world.aa.enroll_device(b"second-device", sc.attrs)
        moved = ServiceConsumer(world, "carol2", sc.keys, sc.attrs, b"second-device")
        with pytest.raises(RegistrationRejected) as exc:
            moved.register(world.aa)
        assert exc.value.reason == "duplicate_subject"


class TestServiceProvider:
    def test_rejects_unsigned_request(self, world):
        sc = world.add_sc("alice")
        req, _ = sc.make_request("rA")
        with pytest.raises(AuthenticationError):
            world.sps["spA"].authorize(dataclasses.replace(req, requester_sig=b"\x00" * 32))

    def test_trust_grows_with_sp_grants(self, world):
        sp = world.sps["spA"]
        sc = world.add_sc("alice")
        assert sp.trust(sc.pk) == 0.0
        values = []
        for _ in range(5):
            sc.fetch(sc.request_via_sp(sp, "rA"))
            values.append(sp.trust(sc.pk))
        assert values == sorted(values) and values[0] > 0
        # the other provider never dealt with alice
        assert sc.pk not in world.sps["spB"].trust_table

    def test_misbehavior_fans_out_to_every_provider(self, world):
        sc = world.add_sc("alice")
        for sp in world.sps.values():
            sc.fetch(sc.request_via_sp(sp, "rA" if sp.name == "spA" else "rB"))
        before = {n: sp.trust(sc.pk) for n, sp in world.sps.items()}
        sc.use_presentation(sc.forged_presentation("rA"))
        for n, sp in world.sps.items():
            assert sp.trust(sc.pk) < before[n]
            assert sp.misbehavior_seen[sc.pk] == 1

    def test_local_blacklist_after_collapse(self, world):
        sp = world.sps["spA"]
        sc = world.add_sc("alice")
        for _ in range(3):
            sc.use_presentation(sc.forged_presentation("rA"))
        assert sc.pk in sp.local_blacklist
        assert sc.request_via_sp(sp, "rA").reason == "local_blacklist"

    def test_decision_threshold_on_trust(self):
        w = World(seed=1, backend="hash", theta_trust=0.5)
        sp = w.add_sp("sp")
        w.add_resource(sp, "r", b"x")
        sc = w.add_sc("alice")
        assert sc.request_via_sp(sp, "r").reason == "decision"

    def test_decision_g(self):
        assert decision_g(0.5, 10, 0.5, 10)
        assert not decision_g(0.49, 10, 0.5, 10)
        assert not decision_g(0.9, 9, 0.5, 10)


def test_secure_channel_routing():
    ch = SecureChannel("a", "b")
    ch.send("a", 1)
    ch.send("b", 2)
    assert ch.recv("b") == 1 and ch.recv("a") == 2
    with pytest.raises(ValueError):
        ch.send("c", 3)


def _sp_trust_matches_replay(w):
    for sp in w.sps.values():
        replayed = w.replay_trust(sp)
        assert set(replayed) == set(sp.trust_table)
        for subject, state in sp.trust_table.items():
            assert replayed[subject].n == state.n
            assert replayed[subject].i_accum == pytest.approx(state.i_accum, rel=1e-12, abs=1e-12)


steps = st.lists(st.tuples(st.integers(0, 2), st.sampled_from(["sp", "contract", "forge", "idle"])),
                 min_size=1, max_size=25)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(steps)
def test_local_trust_is_a_function_of_observed_events(plan):
    w = World(seed=2, backend="hash")
    sps = [w.add_sp("spA"), w.add_sp("spB")]
    w.add_resource(sps[0], "rA", b"a")
    w.add_resource(sps[1], "rB", b"b")
    scs = [w.add_sc(f"sc{i}") for i in range(3)]
    for i, what in plan:
        sc = scs[i]
        if what == "sp":
            sp = sps[i % 2]
            result = sc.request_via_sp(sp, "rA" if sp is sps[0] else "rB")
            if result.granted:
                sc.fetch(result)
        elif what == "contract":
            result = sc.request_via_contract("rA")
            if result.granted:
                sc.fetch(result)
        elif what == "forge":
            sc.use_presentation(sc.forged_presentation("rB"))
        else:
            w.mine()
    _sp_trust_matches_replay(w)
    for sp in sps:
        for subject, state in sp.trust_table.items():
            assert 0 < trust_value(state, TrustParams()) < 1


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(st.tuples(st.integers(0, 3), st.sampled_from(["sp", "contract"])), min_size=1, max_size=30))
def test_honest_consumers_never_trigger_misbehavior(plan):
    w = World(seed=4, backend="hash")
    sps = [w.add_sp("spA"), w.add_sp("spB")]
    w.add_resource(sps[0], "rA", b"a")
    w.add_resource(sps[1], "rB", b"b")
    scs = [w.add_sc(f"sc{i}") for i in range(4)]
    for i, flow in plan:
        sp = sps[i % 2]
        resource = "rA" if sp is sps[0] else "rB"
        result = scs[i].request_via_sp(sp, resource) if flow == "sp" else scs[i].request_via_contract(resource)
        assert result.granted
        assert scs[i].fetch(result).check.valid
    assert w.misbehavior_events() == []
    assert all(not sp.local_blacklist for sp in sps)


attacks = st.lists(st.sampled_from(["forged_evidence", "impersonate", "replay_used", "report_valid",
                                    "blacklist", "stolen_token"]), min_size=1, max_size=12)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(attacks)
def test_bad_mouthing_never_moves_victim_reputation(plan):
    w = World(seed=6, backend="hash")
    sps = [w.add_sp("spA"), w.add_sp("spB")]
    w.add_resource(sps[0], "rA", b"a")
    w.add_resource(sps[1], "rB", b"b")
    victim, attacker = w.add_sc("victim"), w.add_sc("attacker")
    used = victim.fetch(victim.request_via_contract("rA"))
    fresh = victim.request_via_contract("rB")
    baseline = w.ledger.query("trs", "record", victim.pk)
    # the presentation the victim already used is visible on the ledger
    used_p = next(tx.payload.presentation for b in w.ledger.blocks for tx in b.txs
                  if tx.kind == TxKind.TOKEN_USE and tx.payload.presentation.subject == victim.pk)
    for attack in plan:
        if attack == "forged_evidence":
            # a presentation in the victim's name that the victim never signed
            token = AccessToken(10**6, w.now + 100, 5, w.now, b"\x00" * 64)
            p = TokenPresentation(token, used.request, 999, attacker.sign(b"x"))
            assert sps[1].report(p).error == "authentication"
        elif attack == "impersonate":
            p = TokenPresentation(fresh.token, fresh.request, 998, b"\x11" * 32)
            assert attacker.use_presentation(p) is None
        elif attack == "replay_used":
            assert sps[1].report(used_p).error == "replay"
        elif attack == "report_valid":
            p = victim.present(fresh.token, fresh.request)
            assert w.commit(w.sign_tx(sps[0].keys, TxKind.MISBEHAVIOR, MisbehaviorReport(p))).error == "unfounded_report"
        elif attack == "blacklist":
            tx = w.sign_tx(attacker.keys, TxKind.ADMIN, AdminAction("blacklist", subject=victim.pk))
            assert w.commit(tx).error == "unauthorized"
        elif attack == "stolen_token":
            # the attacker presents the victim's token under its own identity
            p = attacker.present(fresh.token, fresh.request)
            assert attacker.use_presentation(p) is None
    assert w.ledger.query("trs", "record", victim.pk) == baseline
    assert w.misbehavior_events(victim.pk) == []
