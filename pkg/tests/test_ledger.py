import dataclasses

import pytest
from hypothesis import HealthCheck, given, settings

import upgrade_harness
from trustgate.errors import AuthenticationError, MalformedTransaction, ObsoleteContract
from trustgate.ledger import EventKind
from trustgate.model import AdminAction, AttributeSet, RequestSubmission, Transaction, TxKind
from trustgate.world import World


def _upgrade(w, role, code_id, keys=None):
    return w.commit(w.sign_tx(keys or w.manager, TxKind.ADMIN, AdminAction("upgrade", role=role, code_id=code_id)))


class TestSubmission:
    def test_bad_signature_rejected_at_submit(self, world):
        tx = world.sign_tx(world.manager, TxKind.ADMIN, AdminAction("blacklist", subject=b"x"))
        forged = Transaction(tx.kind, AdminAction("blacklist", subject=b"y"), tx.signatures)
        with pytest.raises(AuthenticationError):
            world.ledger.submit(forged)
        assert world.ledger.pending() == 0

    def test_malformed_payload_rejected(self, world):
        tx = world.sign_tx(world.manager, TxKind.REQUEST, AdminAction("blacklist"))
        with pytest.raises(MalformedTransaction):
            world.ledger.submit(tx)
        with pytest.raises(MalformedTransaction):
            world.ledger.submit(Transaction(TxKind.ADMIN, AdminAction("blacklist")))

    def test_empty_block(self, world):
        h = world.ledger.height
        block = world.mine()
        assert block.height == h + 1 and block.txs == ()
        assert world.ledger.verify_chain()

    def test_block_time_cannot_go_backwards(self, world):
        with pytest.raises(ValueError):
            world.ledger.produce_block(world.now - 1)

    def test_many_requests_in_one_block_keep_submission_order(self, world):
        scs = [world.add_sc(f"sc{i}") for i in range(15)]
        seqs = []
        for sc in scs:
            req, _ = sc.make_request("rA")
            seqs.append(world.ledger.submit(world.sign_tx(sc.keys, TxKind.REQUEST, RequestSubmission(req))))
        block = world.mine()
        assert len(block.txs) == 15
        assert [tx.sender for tx in block.txs] == [sc.pk for sc in scs]
        receipts = [world.ledger.receipt(s) for s in seqs]
        assert all(r.ok and r.block_height == block.height for r in receipts)


class TestAtomicity:
    def test_failed_tx_leaves_no_writes(self, world):
        sc = world.add_sc("alice")
        req, _ = sc.make_request("rA")
        before = world.ledger.snapshot()
        # spB does not own rA; validation records the nonce and then fails
        receipt = world.commit(world.sign_tx(world.sps["spB"].keys, TxKind.REQUEST, RequestSubmission(req)))
        assert receipt.error == "unauthorized"
        assert receipt.events == ()
        assert world.ledger.snapshot() == before
        # the nonce was rolled back, so the owner can still forward the same request
        again = world.commit(world.sign_tx(world.sps["spA"].keys, TxKind.REQUEST, RequestSubmission(req)))
        assert again.ok

    def test_replayed_request_nonce_fails(self, world):
        sc = world.add_sc("alice")
        req, _ = sc.make_request("rA")
        tx = world.sign_tx(sc.keys, TxKind.REQUEST, RequestSubmission(req))
        assert world.commit(tx).ok
        assert world.commit(tx).error == "replay"


class TestChain:
    def test_integrity_and_tamper_detection(self, world):
        world.add_sc("alice")
        assert world.ledger.verify_chain()
        blocks = world.ledger.blocks
        blocks[2] = dataclasses.replace(blocks[2], timestamp=blocks[2].timestamp + 1)
        assert not world.ledger.verify_chain()

    def test_chain_links_parents(self, world):
        hashes = world.ledger.chain_hashes()
        assert [b.parent_hash for b in world.ledger.blocks[1:]] == hashes[:-1]

    def test_deterministic_across_runs(self):
        def build():
            w = World(seed=5, backend="ed25519")
            sp = w.add_sp("sp")
            w.add_resource(sp, "r", b"data")
            sc = w.add_sc("c")
            sc.fetch(sc.request_via_sp(sp, "r"))
            return w.ledger.chain_hashes(), w.ledger.event_lines()

        assert build() == build()


class TestUpgrade:
    def test_upgrade_keeps_data_and_marks_old_obsolete(self, world):
        sc = world.add_sc("alice")
        old = world.ledger.host.ref("trs")
        receipt = _upgrade(world, "trs", "trs/v2")
        assert receipt.ok
        new = world.ledger.host.ref("trs")
        assert new.logic_version == 2 and new.data_address == old.data_address
        assert [r.obsolete for r in world.ledger.host.refs if r.address == old.address] == [True]
        assert world.ledger.query("trs", "record", sc.pk) is not None
        with pytest.raises(ObsoleteContract):
            world.ledger.query(old.address, "record", sc.pk)
        assert any(e.kind == EventKind.CONTRACT_UPGRADED for e in world.ledger.events)

    def test_tx_addressed_to_obsolete_logic_fails(self, world):
        old = world.ledger.host.ref("pol").address
        assert _upgrade(world, "pol", "pol/v2").ok
        sc = world.add_sc("alice")
        req, _ = sc.make_request("rA")
        tx = world.sign_tx(sc.keys, TxKind.REQUEST, RequestSubmission(req), to=old)
        assert world.commit(tx).error == "obsolete"
        tx = world.sign_tx(sc.keys, TxKind.REQUEST, RequestSubmission(req), to=world.ledger.host.ref("pol").address)
        assert world.commit(tx).ok

    def test_only_manager_upgrades(self, world):
        assert _upgrade(world, "ap", "ap/v2", keys=world.sps["spA"].keys).error == "unauthorized"
        assert world.ledger.host.ref("ap").logic_version == 1

    def test_same_version_and_unknown_code(self, world):
        assert _upgrade(world, "ap", "ap/v1").error == "same_version"
        assert _upgrade(world, "ap", "ap/v9").error == "unknown_code"
        assert _upgrade(world, "ap", "trs/v2").error == "role_mismatch"

    @settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(upgrade_harness.operations)
    def test_reads_after_upgrade_match_control(self, ops):
        assert upgrade_harness.apply(ops, True) == upgrade_harness.apply(ops, False)


class TestSubscriptions:
    def test_poll_filters_by_kind(self, world):
        sub = world.ledger.subscribe([EventKind.ATTRIBUTE_REGISTERED])
        world.add_sc("alice")
        world.add_sc("bob")
        got = sub.poll()
        assert [e.kind for e in got] == [EventKind.ATTRIBUTE_REGISTERED] * 2
        assert sub.poll() == []

    def test_disconnect_then_reconnect_delivers_missed_events_once(self, world):
        seen = []
        sub = world.ledger.subscribe(["attribute_registered"], callback=seen.append)
        world.add_sc("alice")
        sub.disconnect()
        world.add_sc("bob")
        world.add_sc("carol")
        assert len(seen) == 1
        sub.reconnect()
        assert len(seen) == 3
        assert [e.seq for e in seen] == sorted({e.seq for e in seen})

    def test_subscribe_from_start(self, world):
        world.add_sc("alice")
        sub = world.ledger.subscribe([EventKind.POLICY_REGISTERED], from_seq=0)
        assert len(sub.poll()) == 2


def test_state_dump_is_json_ready(world):
    import json

    world.add_sc("alice", AttributeSet.of(role="sensor", fw=2))
    dump = world.ledger.state_dump()
    json.dumps(dump)
    assert set(dump) == {"ap", "trs", "pol", "contracts"}
