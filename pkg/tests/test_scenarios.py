import json

import pytest

from trustgate.config import load_config, parse_config
from trustgate.errors import ConfigError, ScenarioAssertionError
from trustgate.replay import replay
from trustgate.scenarios import MetricSeries, RunResult, artifact_stem, run_experiment, write_artifacts


def small(experiment, **extra):
    base = {"schema_version": 1, "experiment": experiment, "seed": 1, "backend": "hash"}
    base.update(extra)
    return parse_config(base)


class TestConfig:
    def test_defaults(self):
        cfg = small("trust-evolution")
        assert cfg.trust.params().gamma == 0.95
        assert cfg.reputation.params().beta_pos == 10_000
        assert [e.node for e in cfg.trust_evolution.schedule] == ["node2", "node3"]

    def test_lambda_alias(self):
        cfg = small("latency", reputation={"lambda": 0.9})
        assert cfg.reputation.lam == 0.9

    @pytest.mark.parametrize("patch, field", [
        ({"trust": {"gamma": 1.5}}, "trust.gamma"),
        ({"unknown": 1}, "unknown"),
        ({"experiment": "nope"}, "experiment"),
        ({"schema_version": 2}, "schema_version"),
        ({"trust": {"delta_pos": 3}}, "trust"),
        ({"reputation": {"scale": 7}}, "reputation"),
        ({"trust_evolution": {"schedule": [{"node": "ghost", "start": 1, "end": 2}]}}, "trust_evolution"),
    ])
    def test_field_level_errors(self, patch, field):
        data = {"schema_version": 1, "experiment": "latency"}
        data.update(patch)
        with pytest.raises(ConfigError) as exc:
            parse_config(data)
        assert any(loc == field for loc, _ in exc.value.errors), exc.value.errors

    def test_overrides(self):
        cfg = parse_config({"schema_version": 1, "experiment": "latency", "seed": 1}, seed=9, experiment=None)
        assert cfg.seed == 9

    def test_shipped_configs_validate(self, pytestconfig):
        for path in sorted((pytestconfig.rootpath / "configs").glob("*.yaml")):
            load_config(path)

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")
        bad = tmp_path / "bad.yaml"
        bad.write_text("schema_version: [")
        with pytest.raises(ConfigError):
            load_config(bad)


def test_metric_series_csv():
    s = MetricSeries("npeers2", "interaction", [(1, 0), (2, 13516)], kind="fixed")
    assert s.to_csv() == "x,value\n1,0.000\n2,13.516\n"
    with pytest.raises(ValueError):
        MetricSeries("bad", "x", [(2, 0), (1, 0)])


def test_strict_mode_raises_on_failed_check(monkeypatch):
    import trustgate.scenarios as sc

    def failing(cfg):
        r = RunResult(cfg.experiment, cfg.seed)
        r.check("always_fails", False)
        return r

    monkeypatch.setitem(sc.EXPERIMENTS, "latency", failing)
    cfg = small("latency")
    with pytest.raises(ScenarioAssertionError):
        run_experiment(cfg)
    assert run_experiment(cfg, strict=False).failed[0].name == "always_fails"


def test_small_reputation_run():
    result = run_experiment(small("reputation-evolution",
                                  reputation_evolution={"n_peers": [1, 2, 3], "interactions": 60}), strict=False)
    assert {s.name for s in result.series} == {"npeers1", "npeers2", "npeers3"}
    assert set(result.series_named("npeers1").values) == {0}
    finals = [result.series_named(f"npeers{n}").values[-1] for n in (1, 2, 3)]
    assert finals == sorted(finals)


def test_small_trust_run_replays_cleanly():
    result = run_experiment(small("trust-evolution"))
    assert {"node1-trust", "node2-trust", "node3-trust"} <= {s.name for s in result.series}
    report = replay([json.loads(line) for line in result.events], {"runs": result.states})
    assert report.ok, report.summary()


def test_small_latency_run():
    cfg = small("latency", latency={"max_concurrency": 4, "repetitions": 3})
    result = run_experiment(cfg, strict=False)
    sp, contract = result.series_named("sp-latency"), result.series_named("contract-latency")
    assert [x for x, _ in sp.rows] == [1, 2, 3, 4]
    assert all(c < s for c, s in zip(contract.values, sp.values))


def test_artifacts(tmp_path):
    result = run_experiment(small("trust-evolution", trust_evolution={"interactions": 20, "schedule": []}))
    paths = write_artifacts(result, tmp_path)
    names = {p.name for p in paths}
    stem = artifact_stem("trust-evolution", 1)
    assert f"{stem}-events.jsonl" in names and f"{stem}-node1-trust.csv" in names
    chain = json.loads((tmp_path / f"{stem}-chain.json").read_text())
    assert all(run["verified"] for run in chain["runs"])
