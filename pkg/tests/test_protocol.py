import pytest

from coma_bench import costmodel
from coma_bench.exceptions import AuthFailure, ConfigError, Desynchronization, EpochMismatch, ReadoutDisabled, \
    UnlockFailure
from coma_bench.protocol import ActivationArtifacts, Channel, TrustedChip, activate, build_system, dcc_recv, dcc_send, \
    enroll, lcc_init, lcc_recv, lcc_send, replay_dal
from coma_bench._frame_utils import FrameType
from coma_bench.switchnet import build_network


######################
# Activation:
def test_activation_unlocks_and_costs_closed_form(system):
    trusted, untrusted, _ = system
    result = activate(trusted, untrusted)
    assert result.success
    assert untrusted.circuit.key_loaded
    assert untrusted.circuit.self_check()
    assert trusted.segments == 4
    assert result.cycles_spent == costmodel.activation_cycles(trusted.params, trusted.segments * 64)
    assert result.artifacts.ok_bits == 256
    assert len(result.artifacts.dal) == 4


def test_every_activation_uses_a_fresh_trn_and_dal(system):
    trusted, untrusted, _ = system
    first = activate(trusted, untrusted).artifacts
    second = activate(trusted, untrusted).artifacts
    assert second.epoch == first.epoch + 1
    assert second.session_id != first.session_id
    assert second.dal != first.dal


@pytest.mark.parametrize("index", [0, 1, 4])
def test_tampered_frame_fails_authentication(system, index):
    trusted, untrusted, _ = system
    channel = Channel()
    channel.tamper(index, bit=3)
    with pytest.raises(AuthFailure):
        activate(trusted, untrusted, channel)
    assert not untrusted.circuit.key_loaded


def test_dropped_dpok_leaves_circuit_locked(system):
    trusted, untrusted, _ = system
    channel = Channel()
    channel.drop(2)
    with pytest.raises(UnlockFailure) as e:
        activate(trusted, untrusted, channel)
    assert e.value.exit_code == 3
    assert not untrusted.circuit.key_loaded


def test_replayed_dal_never_unlocks(system):
    trusted, untrusted, _ = system
    for _ in range(25):
        captured = activate(trusted, untrusted).artifacts.dal
        with pytest.raises(UnlockFailure):
            replay_dal(trusted, untrusted, captured)
        assert not untrusted.circuit.key_loaded


def test_artifacts_serialize(system):
    trusted, untrusted, _ = system
    artifacts = activate(trusted, untrusted).artifacts
    assert ActivationArtifacts.from_json(artifacts.to_json()) == artifacts


def test_chip_cannot_be_enrolled_twice(system):
    _, untrusted, authority = system
    with pytest.raises(ReadoutDisabled):
        enroll(untrusted, authority)


def test_unprovisioned_trusted_chip_cannot_start():
    trusted, untrusted, _ = build_system(n=16, profile="coma1", seed=8)
    trusted._sk = None
    with pytest.raises(ConfigError):
        activate(trusted, untrusted)


def test_reset_clears_volatile_state(system):
    trusted, untrusted, _ = system
    activate(trusted, untrusted)
    untrusted.reset()
    assert not untrusted.circuit.key_loaded
    assert untrusted.session is None and untrusted.trn is None
    with pytest.raises(AuthFailure):
        dcc_recv(untrusted, dcc_send(trusted, b"after reset"))
    assert activate(trusted, untrusted).success


######################
# DCC:
@pytest.mark.parametrize("size", [0, 5, 8, 240, 1024])
def test_dcc_round_trip_matches_cost_model(system, size):
    trusted, untrusted, _ = system
    activate(trusted, untrusted)
    message = bytes((7 * i + 1) % 256 for i in range(size))
    before, in_epoch = trusted.cycles, trusted.blocks_in_epoch
    frames = dcc_send(trusted, message)
    assert trusted.cycles - before == costmodel.dcc_message_cycles(trusted.params, size, in_epoch)
    if size:
        assert dcc_recv(untrusted, frames) == message


def test_dcc_refreshes_trn_every_u_blocks(system):
    trusted, untrusted, _ = system
    activate(trusted, untrusted)
    epoch = trusted.epoch
    frames = dcc_send(trusted, bytes(8 * 65))
    updates = [f for f in frames if f.type == FrameType.TRN_UPDATE]
    assert len(updates) == 2
    assert trusted.epoch == epoch + 2
    assert dcc_recv(untrusted, frames) == bytes(8 * 65)
    assert untrusted.epoch == trusted.epoch


def test_dropped_trn_update_is_an_epoch_mismatch(system):
    trusted, untrusted, _ = system
    activate(trusted, untrusted)
    channel = Channel()
    channel.drop(1)
    frames = dcc_send(trusted, bytes(8 * 40), channel)
    with pytest.raises(EpochMismatch) as e:
        dcc_recv(untrusted, frames)
    assert e.value.received == e.value.expected + 1


def test_dropped_data_frame_is_detected(system):
    trusted, untrusted, _ = system
    activate(trusted, untrusted)
    channel = Channel()
    channel.drop(0)
    frames = dcc_send(trusted, bytes(8 * 40), channel)
    with pytest.raises((Desynchronization, EpochMismatch)):
        dcc_recv(untrusted, frames)


def test_dcc_needs_an_activated_trusted_sender(system):
    trusted, untrusted, _ = system
    with pytest.raises(ConfigError):
        dcc_send(trusted, b"x")
    activate(trusted, untrusted)
    with pytest.raises(ConfigError):
        dcc_send(untrusted, b"x")


######################
# LCC:
def test_lcc_both_directions(system):
    trusted, untrusted, _ = system
    activate(trusted, untrusted)
    assert lcc_init(trusted, untrusted) == costmodel.lcc_init_cycles(trusted.params)
    down = bytes(range(256)) * 2
    before = trusted.cycles
    assert lcc_recv(untrusted, lcc_send(trusted, down)) == down
    assert trusted.cycles - before == costmodel.t_comm_lcc(trusted.params, len(down), include_init=False)
    up = b"status: ok"
    assert lcc_recv(trusted, lcc_send(untrusted, up)) == up
    assert trusted.lcc.epoch == untrusted.lcc.epoch
    assert trusted.lcc.counter == untrusted.lcc.counter == 64 + 2


def test_lcc_frames_are_not_sealed(system):
    trusted, untrusted, _ = system
    activate(trusted, untrusted)
    lcc_init(trusted, untrusted)
    frames = lcc_send(trusted, bytes(16))
    assert [f.type for f in frames] == [FrameType.DATA_LCC] * 2
    assert all(len(f.payload) == 8 + 8 for f in frames)


def test_lcc_lost_block_desynchronizes(system):
    trusted, untrusted, _ = system
    activate(trusted, untrusted)
    lcc_init(trusted, untrusted)
    frames = lcc_send(trusted, bytes(32))
    with pytest.raises(Desynchronization):
        lcc_recv(untrusted, frames[1:])


def test_lcc_seed_loss_and_missing_init(system):
    trusted, untrusted, _ = system
    with pytest.raises(ConfigError):
        lcc_send(trusted, b"x")
    activate(trusted, untrusted)
    channel = Channel()
    channel.drop(0)
    with pytest.raises(Desynchronization):
        lcc_init(trusted, untrusted, channel)


def test_lcc_with_short_update_period():
    trusted, untrusted, _ = build_system(n=16, profile="coma1", seed=5, u=2)
    activate(trusted, untrusted)
    lcc_init(trusted, untrusted)
    data = bytes(range(40))
    assert lcc_recv(untrusted, lcc_send(trusted, data)) == data
    assert trusted.lcc.epoch == 9


######################
# Configuration and transcripts:
@pytest.mark.parametrize("u", [0, 64, -3])
def test_update_period_bounds(system, u):
    trusted, _, _ = system
    with pytest.raises(ConfigError):
        trusted.set_update_period(u)


def test_short_update_period_is_accepted(system):
    trusted, _, _ = system
    trusted.set_update_period(1)
    assert trusted.params.u == 1


def test_oversized_update_period_is_rejected_not_capped():
    topology = build_network("blk", 16)
    with pytest.raises(ConfigError):
        TrustedChip(topology, costmodel.COMA2.with_overrides(u=16))
    with pytest.raises(ConfigError):
        TrustedChip(topology, costmodel.COMA2)
    with pytest.raises(ConfigError):
        build_system(n=16, profile="coma1", seed=8, u=16)
    assert TrustedChip(topology, costmodel.for_width(costmodel.COMA2, 16)).params.u == 15


def test_transcript_dump_and_load(system, tmp_path):
    trusted, untrusted, _ = system
    channel = Channel()
    activate(trusted, untrusted, channel)
    path = str(tmp_path / "transcript.jsonl")
    channel.dump(path)
    frames = Channel.load(path)
    assert [f.type for f in frames] == [FrameType.TRN_UPDATE] + [FrameType.DPOK] * 4
    assert all(r["direction"] == "t2u" and not r["dropped"] for r in channel.records)
    assert channel.dumps().count("\n") == 5


def test_acorn_profile_activates(acorn_system):
    trusted, untrusted, _ = acorn_system
    assert trusted.params.aead == "acorn128"
    assert activate(trusted, untrusted).success


@pytest.mark.slow
def test_replayed_dal_fails_a_thousand_times(system):
    trusted, untrusted, _ = system
    captured = activate(trusted, untrusted).artifacts.dal
    for _ in range(1000):
        with pytest.raises(UnlockFailure):
            replay_dal(trusted, untrusted, captured)
