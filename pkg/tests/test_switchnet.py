import numpy as np
import pytest
from hypothesis import given, strategies as st

from coma_bench.exceptions import ConfigError, TopologyError, TrnLengthError
from coma_bench.switchnet import NetworkKind, Netlist, Trn, build_network, configure, csn_forward, \
    csn_forward_batch, enumerate_permutations, rcsn_backward, rcsn_backward_batch, shift_trn, to_netlist
from coma_bench._utils import bit_matrix_to_words, words_to_bit_matrix

WIDTHS = [4, 8, 16, 64]
KINDS = list(NetworkKind)


def naive_forward(topology, trn, x):
    """Stage-by-stage interpreter: move every line along its wiring, then apply each RRB."""
    n = topology.n
    lines = [(x >> i) & 1 for i in range(n)]
    for s, stage in enumerate(topology.stages):
        moved = [0] * n
        for i, target in enumerate(stage.wiring):
            moved[target] = lines[i]
        for r in range(n // 2):
            base = 3 * (s * (n // 2) + r)
            swap, inv0, inv1 = trn.bit(base), trn.bit(base + 1), trn.bit(base + 2)
            upper, lower = moved[2 * r], moved[2 * r + 1]
            if swap:
                upper, lower = lower, upper
            moved[2 * r], moved[2 * r + 1] = upper ^ inv0, lower ^ inv1
        lines = moved
    out = [0] * n
    for i, target in enumerate(topology.output_wiring):
        out[target] = lines[i]
    return sum(bit << j for j, bit in enumerate(out))


@st.composite
def network_case(draw):
    kind = draw(st.sampled_from(KINDS))
    n = draw(st.sampled_from(WIDTHS))
    topology = build_network(kind, n)
    trn = Trn(draw(st.integers(0, (1 << topology.config_bits) - 1)), topology.config_bits)
    x = draw(st.integers(0, (1 << n) - 1))
    return topology, trn, x


@pytest.mark.parametrize("kind,n,stages,bits", [
    (NetworkKind.OMEGA, 8, 3, 36),
    (NetworkKind.LOG_NM, 8, 4, 48),
    (NetworkKind.OMEGA, 64, 6, 576),
    (NetworkKind.LOG_NM, 64, 10, 960),
])
def test_topology_sizes(kind, n, stages, bits):
    topology = build_network(kind, n)
    assert topology.stage_count == stages
    assert topology.config_bits == bits


def test_near_nonblocking_width_4_matches_omega():
    assert build_network("nonblk", 4).stages == build_network("blk", 4).stages


@pytest.mark.parametrize("n", [0, 2, 3, 6, 12])
def test_rejects_bad_widths(n):
    with pytest.raises(TopologyError):
        build_network("nonblk", n)


def test_rejects_unknown_kind():
    with pytest.raises(TopologyError):
        build_network("benes", 8)


@given(network_case())
def test_forward_matches_stage_interpreter(case):
    topology, trn, x = case
    assert csn_forward(topology, trn, x) == naive_forward(topology, trn, x)


@given(network_case())
def test_backward_inverts_forward(case):
    topology, trn, x = case
    assert rcsn_backward(topology, trn, csn_forward(topology, trn, x)) == x
    assert csn_forward(topology, trn, rcsn_backward(topology, trn, x)) == x


@given(network_case(), st.integers(0, (1 << 64) - 1))
def test_forward_is_affine(case, other):
    topology, trn, x = case
    x2 = other & ((1 << topology.n) - 1)
    f = lambda v: csn_forward(topology, trn, v)
    assert f(x ^ x2) == f(x) ^ f(x2) ^ f(0)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", WIDTHS)
def test_zero_trn_is_identity(kind, n, rng):
    topology = build_network(kind, n)
    trn = Trn.zero(topology.config_bits)
    for _ in range(20):
        x = int(rng.integers(0, 1 << min(n, 62)))
        assert csn_forward(topology, trn, x) == x


@pytest.mark.parametrize("kind", KINDS)
def test_round_trip_bulk(kind, rng):
    topology = build_network(kind, 16)
    for _ in range(200):
        trn = Trn.random(topology.config_bits, rng)
        x = int(rng.integers(0, 1 << 16))
        assert rcsn_backward(topology, trn, csn_forward(topology, trn, x)) == x


def test_configured_network_is_a_bit_permutation(rng):
    topology = build_network("nonblk", 32)
    config = configure(topology, Trn.random(topology.config_bits, rng))
    assert sorted(config.source.tolist()) == list(range(32))


def test_batch_matches_scalar(rng):
    topology = build_network("nonblk", 16)
    trn = Trn.random(topology.config_bits, rng)
    words = [int(w) for w in rng.integers(0, 1 << 16, size=50)]
    out = bit_matrix_to_words(csn_forward_batch(topology, trn, words_to_bit_matrix(words, 16)))
    assert out == [csn_forward(topology, trn, w) for w in words]
    back = rcsn_backward_batch(topology, trn, words_to_bit_matrix(out, 16))
    assert bit_matrix_to_words(back) == words


def test_wrong_trn_length_is_rejected():
    topology = build_network("nonblk", 8)
    with pytest.raises(TrnLengthError) as e:
        csn_forward(topology, Trn.zero(topology.config_bits - 1), 0)
    assert e.value.exit_code == 2


def test_word_must_fit_width():
    topology = build_network("blk", 8)
    with pytest.raises(ConfigError):
        csn_forward(topology, Trn.zero(topology.config_bits), 256)


def test_trn_serialization():
    trn = Trn(0b1000_0000_0001, 12)
    assert trn.to_bytes() == b"\x01\x08"
    assert Trn.from_hex(trn.to_hex(), 12) == trn
    assert Trn.from_bits([1, 0, 1]) == Trn(0b101, 3)
    with pytest.raises(TrnLengthError):
        Trn.from_bytes(b"\x00", 12)
    with pytest.raises(ConfigError):
        Trn(1 << 12, 12)


def test_shift_trn_moves_bit_down():
    trn = Trn(0b0100, 4)
    assert shift_trn(trn, 1) == Trn(0b0010, 4)
    assert shift_trn(Trn(0b0001, 4), 1) == Trn(0b1000, 4)
    assert shift_trn(trn, 4) == trn


def test_near_nonblocking_realizes_more_permutations():
    omega = enumerate_permutations(build_network("blk", 8))
    near = enumerate_permutations(build_network("nonblk", 8))
    assert omega == 2 ** 12
    assert near > omega
    assert omega < 40320


def test_enumeration_is_limited():
    with pytest.raises(TopologyError):
        enumerate_permutations(build_network("blk", 16))


@pytest.mark.parametrize("kind", KINDS)
def test_netlist_matches_network(kind, rng):
    topology = build_network(kind, 8)
    netlist = to_netlist(topology)
    assert len(netlist.keys) == topology.config_bits
    for _ in range(30):
        trn = Trn.random(topology.config_bits, rng)
        x = int(rng.integers(0, 256))
        assert netlist.evaluate(x, trn.bits) == csn_forward(topology, trn, x)


def test_netlist_text_format(rng):
    netlist = to_netlist(build_network("nonblk", 4))
    text = netlist.to_text()
    assert text.startswith("# csn netlist n=4\n")
    assert "s0_r0_m0 = MUX(k0, " in text
    parsed = Netlist.from_text(text)
    assert parsed == netlist
    key = int(rng.integers(0, 1 << 24))
    assert parsed.evaluate(9, key) == netlist.evaluate(9, key)


def test_gather_is_inverse_wiring():
    topology = build_network("blk", 8)
    stage = topology.stages[0]
    assert all(stage.wiring[stage.gather[p]] == p for p in range(8))
    assert np.array_equal(np.sort(stage.gather), np.arange(8))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", WIDTHS)
def test_ten_thousand_round_trips_and_affine_pairs(kind, n, rng):
    topology = build_network(kind, n)
    for _ in range(10):
        trn = Trn.random(topology.config_bits, rng)
        x = rng.integers(0, 2, size=(1000, n), dtype=np.uint8)
        x2 = rng.integers(0, 2, size=(1000, n), dtype=np.uint8)
        y = csn_forward_batch(topology, trn, x)
        assert np.array_equal(rcsn_backward_batch(topology, trn, y), x)
        f0 = csn_forward_batch(topology, trn, np.zeros((1, n), dtype=np.uint8))
        assert np.array_equal(csn_forward_batch(topology, trn, x ^ x2), y ^ csn_forward_batch(topology, trn, x2) ^ f0)
