import io
import json
from fractions import Fraction

import pytest

from coma_bench import costmodel
from coma_bench.costmodel import COMA1, COMA2, activation_cycles, c_byte_lcc, c_prng, crossover_bytes, \
    dcc_message_cycles, e_lcc, get_profile, lcc_init_cycles, load_profiles, log_sizes, published_crossover_note, \
    for_width, stall_cycles, sweep, t_comm_dcc, t_comm_lcc, trn_bits, write_csv
from coma_bench.exceptions import ConfigError


def test_dcc_latency():
    assert t_comm_dcc(COMA2, 1024) == 37860
    assert t_comm_dcc(COMA1, 0) == 10492
    with pytest.raises(ConfigError):
        t_comm_dcc(COMA1, -1)


def test_prng_and_lcc_initialization():
    assert trn_bits(64) == 960
    assert c_prng(COMA2) == 15
    assert c_prng(COMA1) == 75
    assert lcc_init_cycles(COMA2) == 20739


def test_lcc_cost_per_byte():
    assert c_byte_lcc(COMA2) == Fraction(9, 8)
    assert c_byte_lcc(COMA2.with_overrides(bw=64)) == Fraction(1, 4)
    with pytest.raises(ConfigError):
        c_byte_lcc(COMA2.with_overrides(bw=48))


def test_lcc_latency_without_stalls():
    assert stall_cycles(COMA2) == 0
    assert t_comm_lcc(COMA2, 1024) == 128 * 9 + 20739
    assert t_comm_lcc(COMA2, 1024, include_init=False) == 128 * 9


def test_stall_regime_adds_prng_wait():
    slow = COMA1.with_overrides(u=1)
    assert stall_cycles(slow) == 75 - 9
    assert costmodel.is_stall_regime(slow)
    assert t_comm_lcc(slow, 16, include_init=False) == 2 * 9 + 66


def test_crossover_and_published_note():
    assert crossover_bytes(COMA1, COMA2) == 182
    assert t_comm_dcc(COMA2, 182) <= t_comm_dcc(COMA1, 182)
    assert t_comm_dcc(COMA2, 181) > t_comm_dcc(COMA1, 181)
    note = published_crossover_note()
    assert note["computed_bytes"] == 182
    assert note["published_bytes"] == 128
    assert note["discrepancy"] is True


def test_crossover_of_parallel_lines():
    assert crossover_bytes(COMA2, COMA2) == 0
    assert crossover_bytes(COMA2, COMA2.with_overrides(c_fix=30000)) is None


def test_activation_cycles():
    # one TRN, 120 sealed TRN bytes, four sealed 8-byte DPOKs
    assert activation_cycles(COMA2, 256) == 15 + 22492 + 4 * 20588


def test_dcc_message_cycles_insert_trn_refresh():
    refresh = 15 + t_comm_dcc(COMA2, 120)
    assert dcc_message_cycles(COMA2, 240) == t_comm_dcc(COMA2, 240)
    assert dcc_message_cycles(COMA2, 1024) == 4 * 24532 + 21540 + 4 * refresh
    assert dcc_message_cycles(COMA2, 8, blocks_in_epoch=30) == refresh + t_comm_dcc(COMA2, 8)


def test_lcc_epoch_energy():
    assert e_lcc(COMA2) == 15 * Fraction(254, 1000) + 255 * Fraction(11, 100)
    slow = COMA1.with_overrides(u=1)
    assert e_lcc(slow) == 9 * slow.p_h + 66 * slow.p_l2


def test_sweep_is_monotone_per_profile_and_mode():
    sizes = log_sizes()
    assert sizes[0] == 16 and sizes[-1] == 65536 and len(sizes) == 13
    rows = sweep([COMA1, COMA2], sizes)
    assert len(rows) == 2 * 2 * len(sizes)
    for profile in ("coma1", "coma2"):
        for mode in ("dcc", "lcc"):
            series = [r for r in rows if r["profile"] == profile and r["mode"] == mode]
            assert [r["bytes"] for r in series] == sizes
            assert all(a["cycles"] <= b["cycles"] for a, b in zip(series, series[1:]))
            assert all(a["energy"] <= b["energy"] for a, b in zip(series, series[1:]))


def test_write_csv_renders_fractions():
    handle = io.StringIO()
    write_csv(sweep([COMA2], [16]), handle)
    lines = handle.getvalue().splitlines()
    assert lines[0] == "profile,mode,bytes,cycles,energy"
    assert lines[1].startswith("coma2,dcc,16,20724,")
    assert lines[1].split(",")[-1] == f"{float(20724 * Fraction(254, 1000)):.6f}"


def test_unknown_profile():
    assert get_profile("COMA2") is COMA2
    with pytest.raises(ConfigError):
        get_profile("coma3")


def test_load_profiles(tmp_path):
    path = tmp_path / "profiles.json"
    path.write_text(json.dumps([{"name": "fastaead", "base": "coma2", "c_fix": 1000, "prng_perf": "64/5"}]))
    try:
        loaded = load_profiles(str(path))
        profile = loaded["fastaead"]
        assert profile.c_fix == 1000
        assert profile.c_byte == 17
        assert profile.prng_perf == Fraction(64, 5)
        assert get_profile("fastaead") == profile
    finally:
        costmodel.PROFILES.pop("fastaead", None)


def test_load_profiles_rejects_unknown_fields(tmp_path):
    path = tmp_path / "profiles.json"
    path.write_text(json.dumps([{"name": "x", "voltage": 1}]))
    with pytest.raises(ConfigError):
        load_profiles(str(path))
    path.write_text(json.dumps([{"name": "x", "c_fix": 0}]))
    with pytest.raises(ConfigError):
        load_profiles(str(path))


def test_for_width_caps_the_profile_update_period():
    narrow = for_width(COMA2, 16)
    assert (narrow.n, narrow.u) == (16, 15)
    wide = for_width(COMA2, 64)
    assert (wide.n, wide.u) == (64, COMA2.u)
