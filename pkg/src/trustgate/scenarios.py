"""Reproducible experiments and attack drills.

Every experiment returns a :class:`RunResult` holding metric series, the
checks it asserted, and the artifacts needed for replay (event log, state
dump, chain hashes).  :func:`write_artifacts` turns a result into files whose
names derive from the experiment id and seed.
"""
from __future__ import annotations

import heapq
import json
import logging
import random
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .agents import ServiceConsumer, decision_g
from .config import ScenarioConfig
from .contracts import Denial, Grant
from .errors import AuthenticationError, RegistrationRejected, ScenarioAssertionError
from .ledger import EventKind
from .model import (
    AccessToken,
    AdminAction,
    Context,
    MisbehaviorReport,
    OPEN_CONTEXT_END,
    RequestSubmission,
    TokenPresentation,
    TokenStore,
    Transaction,
    TxKind,
    signing_bytes_for,
)
from .trs import LN_SCALE, decay_fixed, format_fixed, ln_fixed, rep_value
from .world import World

log = logging.getLogger("trustgate.scenarios")


@dataclass
class MetricSeries:
    name: str
    x_label: str
    rows: list = field(default_factory=list)
    kind: str = "real"  # real | fixed | ticks

    def __post_init__(self):
        xs = [x for x, _ in self.rows]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError(f"series {self.name}: x must be strictly increasing")

    @property
    def values(self) -> list:
        return [v for _, v in self.rows]

    def value_at(self, x):
        for rx, v in self.rows:
            if rx == x:
                return v
        raise KeyError(x)

    def render(self, v) -> str:
        if self.kind == "fixed":
            return format_fixed(v)
        if self.kind == "ticks":
            return f"{v:.6f}"
        return f"{v:.12f}"

    def to_csv(self) -> str:
        return "x,value\n" + "".join(f"{x},{self.render(v)}\n" for x, v in self.rows)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class RunResult:
    experiment: str
    seed: int
    series: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    events: list = field(default_factory=list)
    states: list = field(default_factory=list)
    chains: list = field(default_factory=list)
    report: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)

    def check(self, name: str, passed: bool, detail: str = "") -> bool:
        self.checks.append(Check(name, bool(passed), detail))
        return bool(passed)

    @property
    def failed(self) -> list:
        return [c for c in self.checks if not c.passed]

    def series_named(self, name: str) -> MetricSeries:
        return next(s for s in self.series if s.name == name)

    def capture(self, world: World, run: int) -> None:
        self.events.extend(world.ledger.event_lines(run))
        self.states.append({
            "run": run,
            "ledger": world.ledger.state_dump(),
            "sp": world.sp_trust_dump(),
            "trust_params": vars(world.trust_params),
        })
        self.chains.append({"run": run, "verified": world.ledger.verify_chain(),
                            "hashes": world.ledger.chain_hashes()})


def _world(cfg: ScenarioConfig, seed: Optional[int] = None, **overrides) -> World:
    kwargs = dict(
        seed=cfg.seed if seed is None else seed,
        backend=cfg.backend,
        rep_params=cfg.reputation.params(),
        trust_params=cfg.trust.params(),
        denial_threshold=cfg.denial_threshold,
        block_interval=cfg.block_interval,
        theta_trust=cfg.sp.theta_trust,
        blacklist_floor=cfg.sp.blacklist_floor,
    )
    kwargs.update(overrides)
    return World(**kwargs)


def _nondecreasing(values) -> bool:
    return all(b >= a for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# Reputation evolution


def rep_limit_fixed(params, n_peers: int) -> int:
    """beta_pos / (1 - lambda) * ln(N) in fixed point."""
    s_inf = params.beta_pos / (1 - params.lam)
    return int(s_inf * ln_fixed(n_peers) / LN_SCALE)


def run_reputation_evolution(cfg: ScenarioConfig) -> RunResult:
    ec = cfg.reputation_evolution
    res = RunResult("reputation-evolution", cfg.seed)
    finals = {}
    for run, n_peers in enumerate(ec.n_peers):
        w = _world(cfg)
        sps = [w.add_sp(f"sp{k}") for k in range(n_peers)]
        for k, sp in enumerate(sps):
            w.add_resource(sp, f"r{k}", f"payload {k}".encode(), token_ttl=cfg.token_ttl)
        sc = w.add_sc("benign")
        series = MetricSeries(f"npeers{n_peers}", "interaction", kind="fixed")
        for i in range(1, ec.interactions + 1):
            flow = sc.request_via_contract(f"r{(i - 1) % n_peers}")
            if flow.granted:
                sc.fetch(flow)
            series.rows.append((i, w.reputation(sc)))
        res.series.append(series)
        limit = rep_limit_fixed(w.rep_params, n_peers)
        final = series.values[-1]
        finals[n_peers] = final
        res.check(f"npeers{n_peers}.nondecreasing", _nondecreasing(series.values))
        res.check(f"npeers{n_peers}.within_1pct_of_limit", abs(final - limit) <= 0.01 * abs(limit) if n_peers > 1 else final == 0,
                  f"final={format_fixed(final)} limit={format_fixed(limit)}")
        if len(series.rows) > 50 and final > 0:
            gain = final - series.values[-51]
            res.check(f"npeers{n_peers}.saturated", gain < 0.01 * final, f"last-50 gain {format_fixed(gain)}")
        res.check(f"npeers{n_peers}.no_misbehavior", not w.misbehavior_events())
        res.capture(w, run)
    ordered = all(
        all(a <= b for a, b in zip(res.series[j].values, res.series[j + 1].values))
        for j in range(len(res.series) - 1)
    )
    res.check("curves_ordered_by_npeers", ordered)
    res.report = {"final": {str(n): format_fixed(v) for n, v in finals.items()},
                  "limit": {str(n): format_fixed(rep_limit_fixed(cfg.reputation.params(), n)) for n in finals}}
    return res


# ---------------------------------------------------------------------------
# Trust evolution


def run_trust_evolution(cfg: ScenarioConfig) -> RunResult:
    ec = cfg.trust_evolution
    res = RunResult("trust-evolution", cfg.seed)
    w = _world(cfg, blacklist_floor=ec.blacklist_floor)
    sp = w.add_sp("spA")
    w.add_resource(sp, "rA", b"resource A", token_ttl=cfg.token_ttl)
    nodes = {}
    for name in ec.nodes:
        sc = w.add_sc(name)
        sc.malicious_windows = [(e.start, e.end) for e in ec.schedule if e.node == name and e.behavior == "malicious"]
        nodes[name] = sc

    trust = {n: MetricSeries(f"{n}-trust", "interaction", kind="real") for n in nodes}
    s_sum = {n: MetricSeries(f"{n}-repsum", "interaction", kind="fixed") for n in nodes}
    mis_by_interaction = {n: [] for n in nodes}
    for i in range(1, ec.interactions + 1):
        for name, sc in nodes.items():
            before = len(w.misbehavior_events(sc.pk))
            if sc.behavior(i).value == "malicious":
                sc.use_presentation(sc.forged_presentation("rA"))
            else:
                flow = sc.request_via_sp(sp, "rA")
                if flow.granted:
                    sc.fetch(flow)
            mis_by_interaction[name].append(len(w.misbehavior_events(sc.pk)) - before)
            trust[name].rows.append((i, sp.trust(sc.pk)))
            s_sum[name].rows.append((i, w.rep_state(sc).s_accum))
    res.series.extend(trust.values())
    res.series.extend(s_sum.values())

    a = w.trust_params.a
    for name, sc in nodes.items():
        t = trust[name].values
        res.check(f"{name}.below_asymptote", all(0 < v < a for v in t))
        windows = sc.malicious_windows
        if not windows:
            res.check(f"{name}.monotone_nondecreasing", _nondecreasing(t))
        for start, end in windows:
            pre = t[start - 2] if start >= 2 else 0.0
            horizon = t[start - 1:min(start - 1 + 10, end)]
            res.check(f"{name}.drops_half_within_10", pre > 0 and min(horizon) < 0.5 * pre,
                      f"pre={pre:.6f} min10={min(horizon):.6f}")
            after = t[end:]
            res.check(f"{name}.recovers_monotonically", len(after) < 2 or all(b > a_ for a_, b in zip(after, after[1:])))
            s = s_sum[name].values
            res.check(f"{name}.repsum_drops", s[end - 1] < s[start - 2] if start >= 2 else s[end - 1] < 0,
                      f"{format_fixed(s[start - 2] if start >= 2 else 0)} -> {format_fixed(s[end - 1])}")
            in_window = sum(mis_by_interaction[name][start - 1:end])
            res.check(f"{name}.misbehavior_events_in_window", in_window == end - start + 1, f"{in_window} events")
        outside = sum(c for i, c in enumerate(mis_by_interaction[name], 1) if sc.behavior(i).value == "honest")
        res.check(f"{name}.no_events_outside_window", outside == 0)
    honest = [n for n, sc in nodes.items() if not sc.malicious_windows]
    if honest and len(nodes) > 1:
        top = max(nodes, key=lambda n: trust[n].values[-1])
        res.check("honest_node_highest_at_end", top in honest, top)
    if "node2" in nodes and nodes["node2"].malicious_windows:
        start = nodes["node2"].malicious_windows[0][0]
        mid = min(start + 10, ec.interactions)
        if start >= 2:
            res.check("node2.trust_mid_window_below_pre_window",
                      trust["node2"].value_at(mid) < trust["node2"].value_at(start - 1))
    replay = w.replay_trust(sp)
    res.check("sp_trust_matches_event_replay", replay == sp.trust_table)
    res.capture(w, 0)
    res.report = {n: {"final_trust": f"{trust[n].values[-1]:.12f}",
                      "final_repsum": format_fixed(s_sum[n].values[-1]),
                      "final_reputation": format_fixed(w.reputation(sc))} for n, sc in nodes.items()}
    return res


# ---------------------------------------------------------------------------
# Latency


class _EventLoop:
    def __init__(self, start: int):
        self.now = start
        self._heap: list = []
        self._seq = 0

    def at(self, t: int, fn: Callable) -> None:
        heapq.heappush(self._heap, (t, self._seq, fn))
        self._seq += 1

    def run(self) -> None:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.now = t
            fn()


class _Miner:
    """Produces a block at the first slot boundary after a transaction lands in the pool."""

    def __init__(self, loop: _EventLoop, world: World, base: int, interval: int, exec_per_tx: int):
        self.loop = loop
        self.world = world
        self.base = base
        self.interval = interval
        self.exec_per_tx = exec_per_tx
        self.callbacks: dict = {}
        self._scheduled = None

    def submit(self, tx, on_receipt: Callable) -> None:
        seq = self.world.ledger.submit(tx)
        self.callbacks[seq] = on_receipt
        if self._scheduled is None:
            k = (self.loop.now - self.base) // self.interval + 1
            self._scheduled = self.base + k * self.interval
            self.loop.at(self._scheduled, self._block)

    def _block(self) -> None:
        self._scheduled = None
        block = self.world.ledger.produce_block(self.loop.now)
        pending = sorted(s for s in self.callbacks if self.world.ledger.receipt(s).block_height == block.height)
        for i, seq in enumerate(pending, 1):
            receipt = self.world.ledger.receipt(seq)
            cb = self.callbacks.pop(seq)
            self.loop.at(self.loop.now + i * self.exec_per_tx, lambda cb=cb, r=receipt: cb(r))


class _Server:
    """A single sequential processor (the service provider)."""

    def __init__(self, loop: _EventLoop):
        self.loop = loop
        self.busy_until = 0

    def process(self, cost: int, fn: Callable) -> None:
        start = max(self.loop.now, self.busy_until)
        self.busy_until = start + cost
        self.loop.at(self.busy_until, fn)


def _latency_round(w: World, sp, scs: list, path: str, lc, phase: int, rng) -> list:
    """Run ``len(scs)`` concurrent authorizations; returns per-request latency in ticks."""
    t0 = w.now
    loop = _EventLoop(t0)
    miner = _Miner(loop, w, t0 + phase - w.block_interval, w.block_interval, lc.exec_per_tx)
    server = _Server(loop)
    server.busy_until = t0
    done: dict = {}

    # one thread per concurrent requester builds and signs its request
    with ThreadPoolExecutor(max_workers=len(scs)) as pool:
        requests = list(pool.map(lambda sc: sc.make_request("rA")[0], scs))
    delays = [rng.randint(0, lc.jitter) for _ in scs]

    def finish(idx, ok):
        done[idx] = (loop.now - t0, ok)

    def contract_path(idx, sc, req):
        def on_tx_r(r):
            granted = r.ok and isinstance(r.result, Grant)
            loop.at(loop.now + lc.hop, lambda: finish(idx, granted))

        def send():
            miner.submit(w.sign_tx(sc.keys, TxKind.REQUEST, RequestSubmission(req)), on_tx_r)
        return send

    def sp_path(idx, req):
        def on_store(r):
            # receipt back to the provider, then sigma on to the consumer
            loop.at(loop.now + 2 * lc.hop, lambda: finish(idx, r.ok))

        def on_decision(grant):
            policy = w.ledger.query("pol", "policy", "rA")
            if not decision_g(sp.trust(req.requester), grant.token.rep_snapshot, sp.theta_trust, policy.rep_min):
                finish(idx, False)
                return
            sigma = w.backend.sign(sp.keys.secret_key, grant.token.signing_bytes())
            miner.submit(w.sign_tx(sp.keys, TxKind.TOKEN_STORE, TokenStore(grant.token_id, sigma)), on_store)

        def on_tx_r(r):
            def back():
                if not r.ok or isinstance(r.result, Denial):
                    finish(idx, False)
                else:
                    server.process(lc.decision + lc.sp_sign, lambda: on_decision(r.result))
            loop.at(loop.now + lc.hop, back)

        def forward():
            if not w.backend.verify(req.requester, req.signing_bytes(), req.requester_sig):
                finish(idx, False)
                return
            miner.submit(w.sign_tx(sp.keys, TxKind.REQUEST, RequestSubmission(req)), on_tx_r)

        return lambda: server.process(lc.sp_verify, forward)

    for idx, (sc, req, jit) in enumerate(zip(scs, requests, delays)):
        arrive = t0 + lc.sc_sign + lc.hop + jit
        loop.at(arrive, contract_path(idx, sc, req) if path == "contract" else sp_path(idx, req))
    loop.run()
    w.now = max(w.now, w.ledger.last_timestamp)
    if not all(ok for _, ok in done.values()) or len(done) != len(scs):
        raise RuntimeError(f"latency round on {path} path did not authorize every request: {done}")
    return [done[i][0] for i in range(len(scs))]


def _slope(xs, ys) -> float:
    # a single concurrency level has no slope
    return statistics.linear_regression(xs, ys).slope if len(xs) > 1 else 0.0


def run_latency_comparison(cfg: ScenarioConfig) -> RunResult:
    lc = cfg.latency
    res = RunResult("latency", cfg.seed)
    levels = list(range(1, lc.max_concurrency + 1))
    totals = {"sp": {c: 0 for c in levels}, "contract": {c: 0 for c in levels}}
    counts = {c: 0 for c in levels}
    wall = {"sp": 0.0, "contract": 0.0}
    per_rep = []
    for rep in range(lc.repetitions):
        w = _world(cfg, seed=cfg.seed * 1000 + rep)
        rng = random.Random(f"latency/{cfg.seed}/{rep}")
        sp = w.add_sp("spA")
        w.add_resource(sp, "rA", b"resource A", token_ttl=cfg.token_ttl)
        scs = [w.add_sc(f"sc{j}") for j in range(lc.max_concurrency)]
        rep_rows = {}
        for c in levels:
            phase = rng.randint(1, w.block_interval)
            for path in ("contract", "sp"):
                started = time.perf_counter()
                lat = _latency_round(w, sp, scs[:c], path, lc, phase, rng)
                wall[path] += time.perf_counter() - started
                totals[path][c] += sum(lat)
                rep_rows[(path, c)] = sum(lat) / c
            counts[c] += c
        per_rep.append(rep_rows)
        res.capture(w, rep)
    means = {p: [(c, totals[p][c] / counts[c]) for c in levels] for p in totals}
    for p in ("sp", "contract"):
        res.series.append(MetricSeries(f"{p}-latency", "concurrency", means[p], kind="ticks"))
    sp_m, ct_m = dict(means["sp"]), dict(means["contract"])
    res.check("contract_faster_at_every_level", all(ct_m[c] < sp_m[c] for c in levels),
              " ".join(f"{c}:{ct_m[c]:.2f}<{sp_m[c]:.2f}" for c in levels))
    sp_slope = _slope(levels, [sp_m[c] for c in levels])
    ct_slope = _slope(levels, [ct_m[c] for c in levels])
    ratio = sp_slope / ct_slope if ct_slope > 0 else float("inf")
    if len(levels) > 1:
        res.check("slope_ratio_above_one", ratio > 1, f"sp={sp_slope:.4f} contract={ct_slope:.4f} ratio={ratio:.3f}")
    res.check("contract_faster_in_every_repetition",
              all(r[("contract", c)] < r[("sp", c)] for r in per_rep for c in levels))
    res.report = {"sp_slope": round(sp_slope, 6), "contract_slope": round(ct_slope, 6),
                  "slope_ratio": round(ratio, 6) if ratio != float("inf") else None}
    res.wall_clock = {p: wall[p] for p in wall}
    log.info("latency wall-clock seconds: sp=%.3f contract=%.3f", wall["sp"], wall["contract"])
    return res


# ---------------------------------------------------------------------------
# Attack drills


def _expected_negative(rep_params, s_before: int) -> int:
    return decay_fixed(s_before, rep_params.lam) + rep_params.beta_neg


def run_attack_drills(cfg: ScenarioConfig) -> RunResult:
    ac = cfg.attack_drills
    res = RunResult("attack-drills", cfg.seed)
    report: dict = {}

    def setup(seed_offset: int):
        w = _world(cfg, seed=cfg.seed * 100 + seed_offset)
        a, b = w.add_sp("spA"), w.add_sp("spB")
        w.add_resource(a, "rA", b"resource A", token_ttl=cfg.token_ttl,
                       context=Context(0, OPEN_CONTEXT_END, ac.limit))
        w.add_resource(b, "rB", b"resource B", token_ttl=ac.token_ttl,
                       context=Context(0, OPEN_CONTEXT_END, ac.limit))
        return w, a, b

    def warm_up(w, sc):
        # honest history with both providers: nonzero reputation and a local trust entry at each
        for sp, r in ((w.sps["spA"], "rA"), (w.sps["spB"], "rB")):
            sc.fetch(sc.request_via_sp(sp, r))

    # -- honest control --------------------------------------------------
    w, a, b = setup(0)
    for name in ("h1", "h2", "h3"):
        sc = w.add_sc(name)
        warm_up(w, sc)
        flow = sc.request_via_sp(a, "rA")
        sc.fetch(flow)
    report["honest_control"] = {"misbehavior_events": len(w.misbehavior_events())}
    res.check("honest_control.zero_misbehavior", not w.misbehavior_events())
    res.capture(w, 0)

    # -- bad mouthing ------------------------------------------------------
    w, a, b = setup(1)
    victim, attacker = w.add_sc("victim"), w.add_sc("attacker")
    warm_up(w, victim)
    warm_up(w, attacker)
    stolen = victim.request_via_contract("rA")
    victim.fetch(stolen)
    before = w.ledger.query("trs", "record", victim.pk)
    outcomes = {}
    # 1. evidence attributed to the victim but signed by the attacker
    fake = TokenPresentation(stolen.token, stolen.request, 999)
    fake = TokenPresentation(fake.token, fake.request, fake.nonce, attacker.sign(fake.signing_bytes()))
    r = w.commit(w.sign_tx(attacker.keys, TxKind.MISBEHAVIOR, MisbehaviorReport(fake)))
    outcomes["forged_evidence"] = r.error
    # 2. a transaction claiming to be signed by the victim
    payload = MisbehaviorReport(fake)
    bad_tx = Transaction(TxKind.MISBEHAVIOR, payload,
                         ((victim.pk, attacker.sign(signing_bytes_for(TxKind.MISBEHAVIOR, payload))),))
    try:
        w.ledger.submit(bad_tx)
        outcomes["impersonated_tx"] = "accepted"
    except AuthenticationError:
        outcomes["impersonated_tx"] = "rejected_at_signature_check"
    # 3. replaying the victim's genuine, valid presentation as "evidence"
    genuine = victim.present(stolen.token, stolen.request)
    r = w.commit(w.sign_tx(attacker.keys, TxKind.MISBEHAVIOR, MisbehaviorReport(genuine)))
    outcomes["valid_evidence"] = r.error
    # 4. asking the trust contract to blacklist the victim
    r = w.commit(w.sign_tx(attacker.keys, TxKind.ADMIN, AdminAction("blacklist", victim.pk)))
    outcomes["blacklist_attempt"] = r.error
    # 5. using the victim's token under the attacker's own request
    req, _ = attacker.make_request("rA")
    check = attacker.use_presentation(attacker.present(stolen.token, req))
    outcomes["stolen_token_reuse"] = check.reason if check else None
    after = w.ledger.query("trs", "record", victim.pk)
    identical = before == after
    report["bad_mouthing"] = {"outcomes": outcomes, "victim_reputation_before": format_fixed(rep_of(w, before)),
                              "victim_reputation_after": format_fixed(rep_of(w, after)), "bit_identical": identical}
    res.check("bad_mouthing.victim_unchanged", identical)
    res.check("bad_mouthing.impersonation_rejected", outcomes["impersonated_tx"] == "rejected_at_signature_check")
    res.check("bad_mouthing.forged_evidence_rejected", outcomes["forged_evidence"] == "authentication")
    res.check("bad_mouthing.blacklist_unauthorized", outcomes["blacklist_attempt"] == "unauthorized")
    res.capture(w, 1)

    # -- sybil / newcomer --------------------------------------------------
    w, a, b = setup(2)
    bad = w.add_sc("newcomer")
    warm_up(w, bad)
    bad.use_presentation(bad.forged_presentation("rA"))
    rep_before = w.reputation(bad)
    rekeyed = w.add_sc("newcomer-rekeyed", register=False, fingerprint=bad.fingerprint, key_label="newcomer/2")
    try:
        rekeyed.register(w.aa)
        aa_outcome = "accepted"
    except RegistrationRejected as exc:
        aa_outcome = exc.reason
    # bypassing the authority's pre-check: an authority-signed duplicate still fails on the ledger
    reg, sc_sig = rekeyed.registration()
    aa_sig = w.backend.sign(w.aa.keys.secret_key, signing_bytes_for(TxKind.REG, reg))
    r = w.commit(Transaction(TxKind.REG, reg, ((rekeyed.pk, sc_sig), (w.aa.pk, aa_sig))))
    contract_outcome = r.error
    sybils = []
    for k in range(3):
        s = ServiceConsumer(w, f"sybil{k}", w.keypair(f"sybil{k}"), bad.attrs, w.fingerprint(f"fabricated{k}"))
        try:
            s.register(w.aa)
            sybils.append("accepted")
        except RegistrationRejected as exc:
            sybils.append(exc.reason)
    rep_after = w.reputation(bad)
    report["newcomer"] = {"reputation_before": format_fixed(rep_before), "aa_outcome": aa_outcome,
                          "contract_outcome": contract_outcome, "reputation_after": format_fixed(rep_after),
                          "rekeyed_registered": w.ledger.query("ap", "record", rekeyed.pk) is not None}
    report["sybil"] = {"fabricated_identities": sybils}
    res.check("newcomer.negative_before", rep_before < 0, format_fixed(rep_before))
    res.check("newcomer.rejected_by_authority", aa_outcome == "duplicate_device")
    res.check("newcomer.rejected_by_contract", contract_outcome == "duplicate_device")
    res.check("newcomer.reputation_retained", rep_after == rep_before)
    res.check("sybil.all_rejected", all(o == "unknown_device" for o in sybils))
    res.capture(w, 2)

    # -- token forgery, expiry, throughput -------------------------------
    w, a, b = setup(3)
    forger = w.add_sc("forger")
    warm_up(w, forger)
    drills = {}

    def drill(name, presentation_fn, expected_reason):
        s_before = w.rep_state(forger).s_accum
        rep_before = w.reputation(forger)
        trust_before = {n: sp.trust(forger.pk) for n, sp in w.sps.items()}
        events_before = len(w.misbehavior_events(forger.pk))
        check = forger.use_presentation(presentation_fn())
        s_after = w.rep_state(forger).s_accum
        rep_after = w.reputation(forger)
        new_events = len(w.misbehavior_events(forger.pk)) - events_before
        trust_after = {n: sp.trust(forger.pk) for n, sp in w.sps.items()}
        drills[name] = {
            "denied": check is not None and not check.valid, "reason": check.reason if check else None,
            "misbehavior_events": new_events,
            "reputation_before": format_fixed(rep_before), "reputation_after": format_fixed(rep_after),
            "beta_neg_applied": s_after == _expected_negative(w.rep_params, s_before),
            "sp_trust_dropped": all(trust_after[n] < trust_before[n] for n in w.sps),
        }
        d = drills[name]
        res.check(f"{name}.denied", d["denied"] and d["reason"] == expected_reason, str(d["reason"]))
        res.check(f"{name}.one_misbehavior_event", new_events == 1, str(new_events))
        res.check(f"{name}.reputation_strictly_lower", rep_after < rep_before,
                  f"{d['reputation_before']} -> {d['reputation_after']}")
        res.check(f"{name}.beta_neg_contribution", d["beta_neg_applied"])

    # Tokens are obtained while the forger's reputation is still positive; after the first
    # penalty the policies (Rep_min = 0) would refuse new ones.
    to_forge = forger.request_via_contract("rA")
    to_expire = forger.request_via_contract("rB")
    to_exhaust = forger.request_via_contract("rA")
    for _ in range(ac.limit):
        forger.fetch(to_exhaust)

    def mutated():
        tok = to_forge.token
        raised = AccessToken(tok.rep_snapshot + 100_000, tok.expires_at, tok.limit, tok.issued_at)
        return forger.present(raised, to_forge.request)

    def expired():
        w.advance(max(0, to_expire.token.expires_at - w.now))
        return forger.present(to_expire.token, to_expire.request)

    drill("forged", mutated, "forged")
    drill("expired", expired, "expired")
    drill("over_limit", lambda: forger.present(to_exhaust.token, to_exhaust.request), "throughput")

    report["token_drills"] = drills
    res.check("token_drills.all_sps_trust_dropped", all(d["sp_trust_dropped"] for d in drills.values()))
    # the manager's on-ledger blacklist then locks the forger out
    r = w.commit(w.sign_tx(w.manager, TxKind.ADMIN, AdminAction("blacklist", forger.pk)))
    denied = forger.request_via_contract("rA")
    report["manager_blacklist"] = {"admin_ok": r.ok, "subsequent_request": denied.reason}
    res.check("manager_blacklist.denies", r.ok and not denied.granted and denied.reason == "blacklisted")
    r = w.commit(w.sign_tx(w.manager, TxKind.ADMIN, AdminAction("unblacklist", forger.pk)))
    res.check("manager_unblacklist.ok", r.ok)
    res.capture(w, 3)

    res.report = report
    return res


def rep_of(w: World, record) -> int:
    return rep_value(record.rep_state, w.rep_params)


# ---------------------------------------------------------------------------

EXPERIMENTS = {
    "reputation-evolution": run_reputation_evolution,
    "trust-evolution": run_trust_evolution,
    "latency": run_latency_comparison,
    "attack-drills": run_attack_drills,
}


def run_experiment(cfg: ScenarioConfig, strict: bool = True) -> RunResult:
    """Run the configured experiment; with ``strict`` a failed check raises."""
    log.info("running %s (seed %d)", cfg.experiment, cfg.seed)
    result = EXPERIMENTS[cfg.experiment](cfg)
    for c in result.checks:
        log.debug("check %s: %s %s", c.name, "pass" if c.passed else "FAIL", c.detail)
    if strict and result.failed:
        raise ScenarioAssertionError(result.failed)
    return result


def artifact_stem(experiment: str, seed: int) -> str:
    return f"{experiment}-seed{seed}"


def write_artifacts(result: RunResult, outdir) -> list:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    stem = artifact_stem(result.experiment, result.seed)
    written = []

    def emit(name: str, text: str):
        path = out / f"{stem}-{name}"
        path.write_text(text)
        written.append(path)

    for s in result.series:
        emit(f"{s.name}.csv", s.to_csv())
    emit("events.jsonl", "".join(line + "\n" for line in result.events))
    emit("state.json", json.dumps({"runs": result.states}, sort_keys=True, indent=1) + "\n")
    emit("chain.json", json.dumps({"runs": result.chains}, sort_keys=True, indent=1) + "\n")
    checks = [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in result.checks]
    emit("report.json", json.dumps({"experiment": result.experiment, "seed": result.seed,
                                    "checks": checks, "report": result.report}, sort_keys=True, indent=1) + "\n")
    return written
