"""Scenario configuration: a versioned YAML document validated with pydantic.

Top-level keys (all optional except ``schema_version`` and ``experiment``)::

    schema_version: 1
    experiment: trust-evolution   # reputation-evolution | trust-evolution | latency | attack-drills
    seed: 7
    backend: ed25519              # or "hash" for fast simulation-only signatures
    block_interval: 12
    denial_threshold: 3
    token_ttl: 300
    trust:      {gamma, delta_pos, delta_neg, a, b, c}
    reputation: {beta_pos, beta_neg, lambda, scale}
    sp:         {theta_trust, blacklist_floor}
    reputation_evolution: {n_peers, interactions}
    trust_evolution: {interactions, nodes, schedule: [{node, start, end, behavior}], blacklist_floor}
    latency: {max_concurrency, repetitions, hop, sc_sign, sp_verify, sp_sign, decision, exec_per_tx, jitter}
    attack_drills: {token_ttl, limit}
    output: {dir}

``b`` and ``c`` may be given with either sign; only their magnitudes are used.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal

import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigError, ValidationError
from .trs import RepParams, TrustParams

SCHEMA_VERSION = 1
EXPERIMENTS = ("reputation-evolution", "trust-evolution", "latency", "attack-drills")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class TrustConfig(_Strict):
    gamma: float = Field(0.95, gt=0, lt=1)
    delta_pos: float = Field(1.0, gt=0)
    delta_neg: float = Field(-2.0, lt=0)
    a: float = Field(1.0, gt=0, le=1)
    b: float = -6.0
    c: float = -0.1

    @model_validator(mode="after")
    def _check(self):
        if not self.delta_pos < abs(self.delta_neg):
            raise ValueError("delta_pos must be smaller than |delta_neg|")
        if self.b == 0 or self.c == 0:
            raise ValueError("b and c must be nonzero")
        return self

    def params(self) -> TrustParams:
        return TrustParams.from_signed(self.gamma, self.delta_pos, self.delta_neg, self.a, self.b, self.c)


class ReputationConfig(_Strict):
    beta_pos: float = Field(10, gt=0)
    beta_neg: float = Field(-20, lt=0)
    lam: float = Field(0.95, gt=0, lt=1, alias="lambda")
    scale: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if not self.beta_pos < abs(self.beta_neg):
            raise ValueError("beta_pos must be smaller than |beta_neg|")
        if 10 ** (len(str(self.scale)) - 1) != self.scale:
            raise ValueError("scale must be a power of ten")
        return self

    def params(self) -> RepParams:
        return RepParams.from_real(self.beta_pos, self.beta_neg, self.lam, self.scale)


class SPConfig(_Strict):
    theta_trust: float = Field(0.0, ge=0, le=1)
    blacklist_floor: float = Field(0.001, ge=0, le=1)


class ScheduleEntry(_Strict):
    node: str
    start: int = Field(ge=1)
    end: int = Field(ge=1)
    behavior: Literal["malicious", "honest"] = "malicious"

    @model_validator(mode="after")
    def _check(self):
        if self.start > self.end:
            raise ValueError("window start must not exceed end")
        return self


class ReputationEvolutionConfig(_Strict):
    n_peers: List[int] = Field(default_factory=lambda: [2, 3, 5, 8], min_length=1)
    interactions: int = Field(400, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if any(n < 1 for n in self.n_peers):
            raise ValueError("n_peers entries must be >= 1")
        if sorted(set(self.n_peers)) != list(self.n_peers):
            raise ValueError("n_peers must be strictly increasing")
        return self


def _default_schedule():
    return [ScheduleEntry(node="node2", start=50, end=70), ScheduleEntry(node="node3", start=100, end=125)]


class TrustEvolutionConfig(_Strict):
    interactions: int = Field(130, ge=1)
    nodes: List[str] = Field(default_factory=lambda: ["node1", "node2", "node3"], min_length=1)
    schedule: List[ScheduleEntry] = Field(default_factory=_default_schedule)
    # 0 disables local blacklisting so recovery after a malicious window is observable
    blacklist_floor: float = Field(0.0, ge=0, le=1)

    @model_validator(mode="after")
    def _check(self):
        unknown = {e.node for e in self.schedule} - set(self.nodes)
        if unknown:
            raise ValueError(f"schedule names unknown nodes: {sorted(unknown)}")
        return self


class LatencyConfig(_Strict):
    max_concurrency: int = Field(15, ge=1)
    repetitions: int = Field(30, ge=1)
    hop: int = Field(2, ge=0)
    sc_sign: int = Field(3, ge=0)
    sp_verify: int = Field(2, ge=0)
    sp_sign: int = Field(3, ge=0)
    decision: int = Field(1, ge=0)
    exec_per_tx: int = Field(1, ge=0)
    jitter: int = Field(2, ge=0)


class AttackDrillConfig(_Strict):
    token_ttl: int = Field(30, ge=1)
    limit: int = Field(2, ge=1)


class OutputConfig(_Strict):
    dir: str = "out"


class ScenarioConfig(_Strict):
    schema_version: Literal[1]
    experiment: Literal["reputation-evolution", "trust-evolution", "latency", "attack-drills"]
    seed: int = 0
    backend: Literal["ed25519", "hash"] = "ed25519"
    block_interval: int = Field(12, ge=1)
    denial_threshold: int = Field(3, ge=1)
    token_ttl: int = Field(300, ge=1)
    trust: TrustConfig = Field(default_factory=TrustConfig)
    reputation: ReputationConfig = Field(default_factory=ReputationConfig)
    sp: SPConfig = Field(default_factory=SPConfig)
    reputation_evolution: ReputationEvolutionConfig = Field(default_factory=ReputationEvolutionConfig)
    trust_evolution: TrustEvolutionConfig = Field(default_factory=TrustEvolutionConfig)
    latency: LatencyConfig = Field(default_factory=LatencyConfig)
    attack_drills: AttackDrillConfig = Field(default_factory=AttackDrillConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)


def _errors(exc: pydantic.ValidationError) -> list:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        out.append((loc, msg))
    return out


def parse_config(data, **overrides) -> ScenarioConfig:
    """Validate a mapping; ``overrides`` replace top-level keys (e.g. seed)."""
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "config must be a mapping")])
    data = dict(data, **{k: v for k, v in overrides.items() if v is not None})
    try:
        return ScenarioConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        raise ConfigError(_errors(exc)) from None
    except ValidationError as exc:
        raise ConfigError([("<root>", str(exc))]) from None


def load_config(path, **overrides) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([("<file>", str(exc))]) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"invalid YAML: {exc}")]) from None
    return parse_config(data, **overrides)
