import asyncio
import json
import threading

import pytest

from coma_bench import costmodel
from coma_bench.cli import main
from coma_bench.remote import AuthServer, DeviceRegistry


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _last_json_line(text):
    return json.loads(text.strip().splitlines()[-1])


######################
# activate:
@pytest.mark.parametrize("mode", ["dcc", "lcc"])
def test_activate_and_send(capsys, mode):
    code, out, _ = _run(capsys, "--seed", "1", "--profile", "coma1", "activate", "--mode", mode,
                        "--message-bytes", "300")
    report = json.loads(out)
    assert code == 0
    assert report["success"] is True
    assert report["cycles"] == report["expected_cycles"]
    assert report["message"]["delivered"] is True
    assert report["message"]["cycles"] == report["message"]["expected_cycles"]
    assert len(report["artifacts"]["dal"]) == 4


def test_fixed_seed_gives_identical_reports(capsys):
    argv = ["--seed", "42", "--profile", "coma1", "activate", "--message-bytes", "64"]
    first = _run(capsys, *argv)
    second = _run(capsys, *argv)
    assert first[0] == second[0] == 0
    assert first[1] == second[1]


def test_tampered_dpok_exits_with_auth_failure(capsys):
    code, out, err = _run(capsys, "--seed", "1", "--profile", "coma1", "activate", "--tamper", "frame:3")
    assert code == 3
    assert json.loads(out)["error"]["type"] == "AuthFailure"
    error = _last_json_line(err)["error"]
    assert error["type"] == "AuthFailure" and error["exit_code"] == 3


def test_dropped_dpok_exits_with_unlock_failure(capsys):
    code, out, _ = _run(capsys, "--seed", "1", "--profile", "coma1", "activate", "--drop", "frame:2")
    assert code == 3
    assert json.loads(out)["error"]["type"] == "UnlockFailure"


def test_replayed_license_is_refused(capsys, tmp_path):
    first = tmp_path / "first.json"
    code, _, _ = _run(capsys, "--seed", "5", "--profile", "coma1", "activate", "--out", str(first))
    assert code == 0
    code, out, _ = _run(capsys, "--seed", "5", "--profile", "coma1", "activate", "--replay", str(first))
    report = json.loads(out)
    assert code == 3
    assert report["replay"]["unlocked"] is False
    assert report["error"]["type"] == "UnlockFailure"


def test_missing_replay_source_is_a_config_error(capsys, tmp_path):
    code, _, err = _run(capsys, "activate", "--replay", str(tmp_path / "missing.json"))
    assert code == 2
    assert _last_json_line(err)["error"]["type"] == "ConfigError"


def test_transcript_is_written(capsys, tmp_path):
    path = tmp_path / "frames.jsonl"
    code, _, _ = _run(capsys, "--seed", "2", "--profile", "coma1", "activate", "--transcript", str(path))
    assert code == 0
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["type"] for r in records] == ["TRN_UPDATE"] + ["DPOK"] * 4


@pytest.mark.parametrize("argv", [
    ["activate", "--n", "12"],
    ["activate", "--n", "128"],
    ["activate", "--u", "64"],
    ["--profile", "coma3", "activate"],
    ["activate", "--message-bytes", "-1"],
])
def test_invalid_configuration_touches_nothing(capsys, tmp_path, argv):
    out, transcript = tmp_path / "report.json", tmp_path / "frames.jsonl"
    code, stdout, err = _run(capsys, *argv, "--out", str(out), "--transcript", str(transcript))
    assert code == 2
    assert stdout == ""
    assert _last_json_line(err)["error"]["exit_code"] == 2
    assert not out.exists() and not transcript.exists()


def test_malformed_frame_reference_is_a_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["activate", "--tamper", "3"])
    assert e.value.code == 2


######################
# attack / cost / health:
def test_affine_attack_row(capsys):
    code, out, _ = _run(capsys, "--seed", "1", "attack", "--kind", "affine", "--n", "8")
    lines = out.strip().splitlines()
    assert code == 0
    assert lines[0] == "size,kind,blocks,shift,outcome,errors"
    assert lines[1] == "8,affine,9,False,AffineModel,0"


def test_affine_attack_below_the_bus_width(capsys):
    code, out, _ = _run(capsys, "--seed", "1", "attack", "--kind", "affine", "--blocks", "5", "--n", "4")
    lines = out.strip().splitlines()
    assert code == 0
    assert lines[1] == "4,affine,5,False,AffineModel,0"


def test_activation_below_the_bus_width_is_rejected(capsys):
    code, _, err = _run(capsys, "activate", "--n", "4")
    assert code == 2
    assert "Bus width" in _last_json_line(err)["error"]["message"]


def test_sat_attack_rows(capsys, tmp_path):
    path = tmp_path / "sat.csv"
    code, _, _ = _run(capsys, "--seed", "1", "attack", "--sizes", "4,8", "--kinds", "blk,nonblk",
                      "--timeout", "60", "--out", str(path))
    lines = path.read_text().strip().splitlines()
    assert code == 0
    assert lines[0] == "size,kind,iterations,seconds,outcome"
    assert len(lines) == 5
    assert all(line.endswith(",ok") for line in lines[1:])


def test_unknown_attack_kind(capsys):
    code, _, _ = _run(capsys, "attack", "--kind", "benes")
    assert code == 2


def test_cost_summary(capsys):
    code, out, _ = _run(capsys, "cost", "--summary")
    summary = json.loads(out)
    assert code == 0
    assert summary["crossover"]["computed_bytes"] == 182
    assert summary["crossover"]["discrepancy"] is True
    coma2 = summary["profiles"]["coma2"]
    assert coma2["c_byte_lcc"] == "9/8"
    assert coma2["lcc_init_cycles"] == 20739
    assert coma2["c_prng"] == 15
    assert summary["profiles"]["coma1"]["c_prng"] == 75


def test_cost_table(capsys):
    code, out, _ = _run(capsys, "cost", "--min-bytes", "16", "--max-bytes", "64")
    lines = out.strip().splitlines()
    assert code == 0
    assert lines[0] == "profile,mode,bytes,cycles,energy"
    assert len(lines) == 1 + 2 * 2 * 3
    assert "coma2,dcc,16,20724," in out


def test_cost_profiles_file(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(costmodel, "PROFILES", dict(costmodel.PROFILES))
    path = tmp_path / "profiles.json"
    path.write_text(json.dumps([{"name": "tiny", "base": "coma2", "c_fix": 100, "c_byte": 1}]))
    code, out, _ = _run(capsys, "cost", "--profiles-file", str(path), "--profiles", "tiny", "--summary")
    assert code == 0
    assert json.loads(out)["profiles"]["tiny"]["lcc_init_cycles"] == 100 + 16 + 15


def test_cost_unknown_profile(capsys):
    code, _, _ = _run(capsys, "cost", "--profiles", "coma9")
    assert code == 2


def test_health_detects_stuck_source(capsys):
    code, out, _ = _run(capsys, "--seed", "3", "health", "--inject", "stuck1", "--bits", "4096", "--pairs", "1000")
    report = json.loads(out)
    assert code == 0
    assert report["trng"]["passed"] is False
    assert report["trng"]["alarm"] == "RCT"
    assert report["trng"]["count"] == 21
    assert report["passed"] is False


def test_health_flags_pseudo_puf(capsys):
    code, out, _ = _run(capsys, "--seed", "3", "health", "--bits", "4096", "--puf", "pseudo")
    report = json.loads(out)
    assert code == 0
    assert report["puf"]["verdict"] == "suspected-pseudo-PUF"
    assert report["passed"] is False


######################
# enroll / device:
@pytest.fixture
def enrolled(capsys, tmp_path):
    registry, device = tmp_path / "registry.json", tmp_path / "dev-1.json"
    code, out, _ = _run(capsys, "--seed", "7", "--profile", "coma1", "enroll", "--device-id", "dev-1",
                        "--registry", str(registry), "--device-out", str(device))
    assert code == 0
    assert json.loads(out)["devices"] == 1
    return registry, device


@pytest.fixture
def server(enrolled):
    loop = asyncio.new_event_loop()
    instance = AuthServer(DeviceRegistry.load(str(enrolled[0])), host="127.0.0.1", port=0, source_seed=1)
    loop.run_until_complete(instance.start())
    thread = threading.Thread(target=loop.run_forever, daemon=True)
    thread.start()
    yield instance
    asyncio.run_coroutine_threadsafe(instance.close(), loop).result(5)
    loop.call_soon_threadsafe(loop.stop)
    thread.join(5)
    loop.close()


def test_enroll_writes_registry_and_profile(enrolled):
    registry, device = enrolled
    assert json.loads(registry.read_text())[0]["device_id"] == "dev-1"
    profile = json.loads(device.read_text())
    assert profile["device_id"] == "dev-1" and "sk" not in profile and "ok" not in profile


def test_device_activates_against_the_server(capsys, enrolled, server):
    code, out, _ = _run(capsys, "device", "--device", str(enrolled[1]), "--host", "127.0.0.1",
                        "--port", str(server.port))
    report = json.loads(out)
    assert code == 0
    assert report["success"] is True and report["error"] is None
    assert json.loads(enrolled[0].read_text())[0]["activation_count"] == 1


def test_device_without_server_is_a_network_error(capsys, enrolled):
    code, out, _ = _run(capsys, "device", "--device", str(enrolled[1]), "--host", "127.0.0.1", "--port", "1")
    assert code == 4
    assert json.loads(out)["error"]["type"] == "NetworkError"


def test_missing_device_profile(capsys, tmp_path):
    code, _, _ = _run(capsys, "device", "--device", str(tmp_path / "nope.json"))
    assert code == 2
