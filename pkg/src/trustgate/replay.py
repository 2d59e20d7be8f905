"""Recompute reputations and provider trust from an exported event log.

The event log (JSON lines) and the state dump written by
:func:`trustgate.scenarios.write_artifacts` are independent records; replay
rebuilds every reputation sum and every provider trust table from the events
alone and lists each place where the two disagree.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .agents import TrustReplay
from .errors import ReplayError
from .ledger import EventKind
from .trs import RepParams, RepState, TrustParams, rep_step

_REQUIRED = ("run", "seq", "kind", "subject", "payload")


@dataclass
class Divergence:
    run: int
    subject: str
    field: str
    expected: object
    found: object


@dataclass
class ReplayReport:
    runs: int = 0
    events: int = 0
    divergences: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.divergences

    def summary(self) -> str:
        lines = [f"{len(self.divergences)} divergences ({self.events} events, {self.runs} runs)"]
        for d in self.divergences:
            lines.append(f"  run {d.run} subject {d.subject[:16]}: {d.field} replayed={d.expected} dumped={d.found}")
        return "\n".join(lines)


def parse_events(lines) -> list:
    events = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            ev = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayError(f"event log line {lineno}: {exc}") from None
        if not isinstance(ev, dict) or any(k not in ev for k in _REQUIRED):
            raise ReplayError(f"event log line {lineno}: missing fields")
        if not isinstance(ev["payload"], dict):
            raise ReplayError(f"event log line {lineno}: payload must be an object")
        try:
            EventKind(ev["kind"])
            bytes.fromhex(ev["subject"])
        except (ValueError, TypeError):
            raise ReplayError(f"event log line {lineno}: bad kind or subject") from None
        events.append(ev)
    return events


def _rep_params(ledger_state: dict) -> RepParams:
    try:
        bp, bn, num, den, scale = ledger_state["trs"]["config"]["rep_params"]
    except (KeyError, TypeError, ValueError):
        raise ReplayError("state dump lacks reputation parameters") from None
    return RepParams(bp, bn, Fraction(num, den), scale)


def replay(events: list, state_doc: dict) -> ReplayReport:
    if not isinstance(state_doc, dict):
        raise ReplayError("state dump must be a JSON object")
    runs = state_doc.get("runs", [])
    report = ReplayReport(runs=len(runs), events=len(events))
    by_run: dict = {}
    for ev in events:
        by_run.setdefault(ev["run"], []).append(ev)
    for run_state in runs:
        try:
            run = run_state["run"]
            ledger_state = run_state["ledger"]
        except (KeyError, TypeError):
            raise ReplayError("state dump run entry is malformed") from None
        evs = sorted(by_run.get(run, []), key=lambda e: e["seq"])
        _replay_reputation(report, run, evs, ledger_state)
        _replay_trust(report, run, evs, run_state)
    return report


def _replay_reputation(report: ReplayReport, run: int, evs: list, ledger_state: dict) -> None:
    params = _rep_params(ledger_state)
    states: dict = {}
    for ev in evs:
        if ev["kind"] != EventKind.INTERACTION.value:
            continue
        p = ev["payload"]
        try:
            state = rep_step(states.get(ev["subject"], RepState()), params, bool(p["positive"]),
                             bytes.fromhex(p["sp"]))
        except (KeyError, ValueError, TypeError):
            raise ReplayError(f"interaction event {ev['seq']} is malformed") from None
        states[ev["subject"]] = state
        if p.get("s_accum") != state.s_accum:
            report.divergences.append(Divergence(run, ev["subject"], f"event {ev['seq']} s_accum",
                                                 state.s_accum, p.get("s_accum")))
    table = ledger_state.get("trs", {}).get("reputations", {})
    for subject in sorted(set(table) | set(states)):
        replayed = states.get(subject, RepState())
        dumped = table.get(subject)
        if dumped is None:
            report.divergences.append(Divergence(run, subject, "record", "present", None))
            continue
        rs = dumped["rep_state"]
        if rs["s_accum"] != replayed.s_accum:
            report.divergences.append(Divergence(run, subject, "s_accum", replayed.s_accum, rs["s_accum"]))
        if rs["n"] != replayed.n:
            report.divergences.append(Divergence(run, subject, "n", replayed.n, rs["n"]))
        if sorted(rs["peers"]) != sorted(p.hex() for p in replayed.peers):
            report.divergences.append(Divergence(run, subject, "peers", len(replayed.peers), len(rs["peers"])))


def _replay_trust(report: ReplayReport, run: int, evs: list, run_state: dict) -> None:
    tp = run_state.get("trust_params")
    sps = run_state.get("sp", {})
    if not sps:
        return
    try:
        params = TrustParams(**tp)
    except TypeError:
        raise ReplayError("state dump lacks trust parameters") from None
    for name, sp in sorted(sps.items()):
        rep = TrustReplay(sp["pk"], params)
        for ev in evs:
            if ev["seq"] >= sp["subscribed_from"]:
                rep.feed(ev)
        dumped = sp["trust"]
        for subject in sorted(set(dumped) | set(rep.states)):
            replayed = rep.states.get(subject)
            entry = dumped.get(subject)
            if replayed is None or entry is None:
                report.divergences.append(Divergence(run, subject, f"{name} trust entry",
                                                     replayed is not None, entry is not None))
                continue
            if entry["n"] != replayed.n or not math.isclose(entry["i_accum"], replayed.i_accum,
                                                            rel_tol=1e-12, abs_tol=1e-12):
                report.divergences.append(Divergence(run, subject, f"{name} trust", replayed.i_accum,
                                                     entry["i_accum"]))


def replay_files(events_path, state_path) -> ReplayReport:
    try:
        with open(events_path) as fh:
            events = parse_events(fh)
    except OSError as exc:
        raise ReplayError(str(exc)) from None
    try:
        with open(state_path) as fh:
            state_doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ReplayError(f"state dump: {exc}") from None
    return replay(events, state_doc)
