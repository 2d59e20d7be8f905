import json
import subprocess
import sys

import pytest
import yaml

from trustgate.cli import EXIT_ASSERTION, EXIT_CONFIG, EXIT_CORRUPT, EXIT_OK, main

STEM = "trust-evolution-seed5"


def write_config(tmp_path, **extra):
    data = {"schema_version": 1, "experiment": "trust-evolution", "seed": 5, "backend": "hash"}
    data.update(extra)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture()
def run_dir(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    return out


def test_run_writes_series_and_event_log(run_dir):
    names = {p.name for p in run_dir.iterdir()}
    for node in ("node1", "node2", "node3"):
        assert f"{STEM}-{node}-trust.csv" in names
    assert f"{STEM}-events.jsonl" in names


def test_reruns_are_byte_identical(tmp_path, run_dir):
    cfg = write_config(tmp_path)
    again = tmp_path / "again"
    assert main(["run", "--config", str(cfg), "--out", str(again)]) == EXIT_OK
    for path in run_dir.iterdir():
        assert (again / path.name).read_bytes() == path.read_bytes(), path.name


def test_seed_override_changes_artifact_names(tmp_path):
    cfg = write_config(tmp_path, trust_evolution={"interactions": 10, "schedule": []})
    assert main(["run", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert (tmp_path / "o" / "trust-evolution-seed8-events.jsonl").exists()


def test_invalid_gamma_exits_2_naming_the_field(tmp_path, capsys):
    cfg = write_config(tmp_path, trust={"gamma": 1.5})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config"
    assert err["fields"][0]["field"] == "trust.gamma"
    assert "less than 1" in err["fields"][0]["message"]


def test_unknown_flag_is_an_error(tmp_path):
    cfg = write_config(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", str(cfg), "--turbo"])
    assert exc.value.code == EXIT_CONFIG


def test_validate_config(tmp_path, capsys):
    assert main(["validate-config", "--config", str(write_config(tmp_path))]) == EXIT_OK
    assert capsys.readouterr().out.startswith("ok: trust-evolution")
    assert main(["validate-config", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


def test_failed_check_exits_3(tmp_path, capsys):
    # 5 interactions cannot approach the saturation limit
    cfg = write_config(tmp_path, experiment="reputation-evolution",
                       reputation_evolution={"n_peers": [2], "interactions": 5})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_ASSERTION
    err = capsys.readouterr().err
    assert "FAIL" in err and '"error": "assertion"' in err


def _replay(run_dir, events=None, state=None):
    return main(["replay", "--events", str(events or run_dir / f"{STEM}-events.jsonl"),
                 "--state", str(state or run_dir / f"{STEM}-state.json")])


def test_replay_clean_log(run_dir, capsys):
    assert _replay(run_dir) == EXIT_OK
    assert capsys.readouterr().out.startswith("0 divergences")


def test_replay_detects_edited_event(run_dir, tmp_path, capsys):
    lines = (run_dir / f"{STEM}-events.jsonl").read_text().splitlines()
    idx = next(i for i, line in enumerate(lines) if '"kind": "interaction"' in line)
    ev = json.loads(lines[idx])
    ev["payload"]["positive"] = not ev["payload"]["positive"]
    lines[idx] = json.dumps(ev, sort_keys=True)
    edited = tmp_path / "edited.jsonl"
    edited.write_text("\n".join(lines) + "\n")
    assert _replay(run_dir, events=edited) == EXIT_ASSERTION
    out = capsys.readouterr().out
    assert not out.startswith("0 divergences")
    assert ev["subject"][:16] in out


def test_replay_detects_dropped_misbehavior_via_trust(run_dir, tmp_path, capsys):
    lines = (run_dir / f"{STEM}-events.jsonl").read_text().splitlines()
    idx = next(i for i, line in enumerate(lines) if '"kind": "misbehavior"' in line)
    kept = lines[:idx] + lines[idx + 1:]
    edited = tmp_path / "edited.jsonl"
    edited.write_text("\n".join(kept) + "\n")
    assert _replay(run_dir, events=edited) == EXIT_ASSERTION
    assert "trust" in capsys.readouterr().out


def test_replay_corrupt_log_exits_4(run_dir, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"run": 0, "seq": 0\n')
    assert _replay(run_dir, events=bad) == EXIT_CORRUPT
    assert _replay(run_dir, events=tmp_path / "missing.jsonl") == EXIT_CORRUPT


def test_replay_empty_log_and_state_is_vacuous_pass(tmp_path, capsys):
    events, state = tmp_path / "e.jsonl", tmp_path / "s.json"
    events.write_text("")
    state.write_text('{"runs": []}')
    assert main(["replay", "--events", str(events), "--state", str(state)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("0 divergences")


def test_dump_state(tmp_path, capsys):
    cfg = write_config(tmp_path, trust_evolution={"interactions": 5, "schedule": []})
    assert main(["dump-state", "--config", str(cfg)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["runs"][0]["ledger"]["trs"]["config"]


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "trustgate", "validate-config", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("ok")
