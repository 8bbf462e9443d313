"""Configurable switching network (CSN) and its reverse (RCSN).

This module builds logarithmic switching networks out of re-routing blocks
(RRBs), configures them with a true random number (TRN), evaluates them in
both directions, and exports them as gate-level netlists for the attacks.

Two network kinds are supported:
- Omega (blocking): ``log2(n)`` stages, each a perfect shuffle followed by a
  column of ``n/2`` RRBs.
- LOG(n, log2(n) - 2, 1) (near non-blocking): the Omega network followed by
  ``log2(n) - 2`` mirrored stages (inverse shuffle, then an RRB column).

Each RRB takes three configuration bits: swap, invert output 0 and invert
output 1. TRN bit ``3 * (stage * n/2 + rrb) + field`` configures ``field``
(0 swap, 1 invert_out0, 2 invert_out1) of block ``rrb`` in ``stage``. A fixed
output relabeling makes the all-zero TRN the identity network.

Example:
    ```python
    from coma_bench import switchnet

    topology = switchnet.build_near_nonblocking(64)
    trn = switchnet.Trn.random(topology.config_bits, rng)
    y = switchnet.csn_forward(topology, trn, 0x0123456789ABCDEF)
    assert switchnet.rcsn_backward(topology, trn, y) == 0x0123456789ABCDEF

    # Next block under the shifted TRN
    trn = switchnet.shift_trn(trn, switchnet.DEFAULT_SHIFT)
    ```
"""
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from logging import getLogger, DEBUG
from typing import Iterable, Optional

import numpy as np

from ._logging import _log_message
from ._utils import bits_to_int, int_to_bits, is_power_of_two, log2, mask, rotate_left
from .exceptions import ConfigError, TopologyError, TrnLengthError

logger = getLogger(__name__)

RRB_CONFIG_BITS = 3
"""int: Configuration bits per re-routing block (swap, invert_out0, invert_out1)."""

DEFAULT_SHIFT = 1
"""int: TRN rotation applied per encrypted block in LCC mode."""

ENUMERATION_LIMIT = 8
"""int: Largest network width whose permutations are enumerated exhaustively."""


class NetworkKind(str, Enum):
    """Network families, named after the columns of the SAT attack table."""
    OMEGA = "blk"
    LOG_NM = "nonblk"


@dataclass(frozen=True)
class RrbConfig:
    """Configuration of one re-routing block.

    Attributes:
        swap: Route crossed instead of straight
        invert_out0: Invert the upper output
        invert_out1: Invert the lower output
    """
    swap: int = 0
    invert_out0: int = 0
    invert_out1: int = 0

    @classmethod
    def from_bits(cls, bits: int) -> "RrbConfig":
        return cls(bits & 1, (bits >> 1) & 1, (bits >> 2) & 1)

    def to_bits(self) -> int:
        return self.swap | (self.invert_out0 << 1) | (self.invert_out1 << 2)


@dataclass(frozen=True)
class Stage:
    """One network stage: an inter-stage wiring followed by a column of n/2 RRBs.

    Attributes:
        wiring: ``wiring[i]`` is the line that input line ``i`` is moved to
    """
    wiring: tuple[int, ...]

    @property
    def gather(self) -> tuple[int, ...]:
        """``gather[p]`` is the line whose signal arrives at line ``p``."""
        return _invert_permutation(self.wiring)


@dataclass(frozen=True)
class NetworkTopology:
    """Wiring of a CSN/RCSN pair.

    Attributes:
        n: Number of inlets/outlets (power of two, at least 4)
        kind: Network family
        stages: Ordered stages, first stage nearest the CSN input
        output_wiring: Fixed relabeling after the last RRB column
        extra_stages: ``m`` of LOG(n, m, p)
        copies: ``p`` of LOG(n, m, p)
    """
    n: int
    kind: NetworkKind
    stages: tuple[Stage, ...]
    output_wiring: tuple[int, ...]
    extra_stages: int = 0
    copies: int = 1

    @property
    def stage_count(self) -> int:
        return len(self.stages)

    @property
    def rrbs_per_stage(self) -> int:
        return self.n // 2

    @property
    def rrb_count(self) -> int:
        return self.stage_count * self.rrbs_per_stage

    @property
    def config_bits(self) -> int:
        return RRB_CONFIG_BITS * self.rrb_count

    @property
    def name(self) -> str:
        if self.kind is NetworkKind.OMEGA:
            return f"OMEGA_{self.n}"
        return f"LOG_{{{self.n},{self.extra_stages},{self.copies}}}"

    def config_index(self, stage: int, rrb: int, field: int = 0) -> int:
        """Position of a configuration bit inside the TRN."""
        return RRB_CONFIG_BITS * (stage * self.rrbs_per_stage + rrb) + field


@dataclass(frozen=True)
class Trn:
    """True random number configuring a CSN/RCSN pair.

    Attributes:
        bits: Configuration bits, bit ``i`` of the integer is TRN bit ``i``
        length: Number of bits
    """
    bits: int
    length: int

    def __post_init__(self) -> None:
        if self.length < 0 or self.bits < 0 or self.bits >> self.length:
            raise ConfigError(f"TRN value does not fit in {self.length} bits")

    def __len__(self) -> int:
        return self.length

    def bit(self, index: int) -> int:
        return (self.bits >> index) & 1

    def to_bytes(self) -> bytes:
        return self.bits.to_bytes((self.length + 7) // 8, "little")

    def to_hex(self) -> str:
        """Hex of the little-endian byte serialization (TRN bit i = byte i//8, bit i%8)."""
        return self.to_bytes().hex()

    @classmethod
    def from_bytes(cls, data: bytes, length: int) -> "Trn":
        if len(data) != (length + 7) // 8:
            raise TrnLengthError(length, len(data) * 8)
        return cls(int.from_bytes(data, "little"), length)

    @classmethod
    def from_hex(cls, text: str, length: int) -> "Trn":
        return cls.from_bytes(bytes.fromhex(text), length)

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "Trn":
        bits = list(bits)
        return cls(bits_to_int(np.asarray(bits, dtype=np.uint8)) if bits else 0, len(bits))

    @classmethod
    def zero(cls, length: int) -> "Trn":
        return cls(0, length)

    @classmethod
    def random(cls, length: int, rng: Optional[np.random.Generator] = None) -> "Trn":
        """Draw a TRN from a numpy generator (tests and attacks; protocol TRNs come from ``rng``)."""
        rng = rng if rng is not None else np.random.default_rng()
        return cls.from_bits(rng.integers(0, 2, size=length, dtype=np.uint8))


@dataclass(frozen=True)
class SwitchConfig:
    """A network compiled under one TRN.

    A configured CSN routes every input bit to exactly one output and may
    invert it, so it reduces to a source table and an inversion mask.

    Attributes:
        n: Network width
        source: ``source[j]`` is the input line routed to output ``j``
        invert: ``invert[j]`` is 1 when output ``j`` is inverted
    """
    n: int
    source: np.ndarray
    invert: np.ndarray

    @property
    def invert_mask(self) -> int:
        return bits_to_int(self.invert)

    def forward(self, x: int) -> int:
        xb = int_to_bits(x, self.n)
        return bits_to_int(xb[self.source] ^ self.invert)

    def backward(self, y: int) -> int:
        xb = np.empty(self.n, dtype=np.uint8)
        xb[self.source] = int_to_bits(y, self.n) ^ self.invert
        return bits_to_int(xb)

    def forward_batch(self, x_bits: np.ndarray) -> np.ndarray:
        """Evaluate many words at once; ``x_bits`` has shape (count, n)."""
        return x_bits[:, self.source] ^ self.invert

    def backward_batch(self, y_bits: np.ndarray) -> np.ndarray:
        x_bits = np.empty_like(y_bits)
        x_bits[:, self.source] = y_bits ^ self.invert
        return x_bits


######################
# Building:
def _invert_permutation(perm: Iterable[int]) -> tuple[int, ...]:
    perm = tuple(perm)
    inverse = [0] * len(perm)
    for i, target in enumerate(perm):
        inverse[target] = i
    return tuple(inverse)


def _compose(first: tuple[int, ...], second: tuple[int, ...]) -> tuple[int, ...]:
    """Wiring that applies ``first`` then ``second``."""
    return tuple(second[first[i]] for i in range(len(first)))


def _shuffle_wiring(n: int) -> tuple[int, ...]:
    """Perfect shuffle: rotate the line index left by one bit."""
    stages = log2(n)
    return tuple(((i << 1) & (n - 1)) | (i >> (stages - 1)) for i in range(n))


def _unshuffle_wiring(n: int) -> tuple[int, ...]:
    return _invert_permutation(_shuffle_wiring(n))


def _validate_width(n: int) -> None:
    if not isinstance(n, int) or n < 4 or not is_power_of_two(n):
        raise TopologyError(f"Network width must be a power of two >= 4, got {n!r}", n=n)


def _finish(n: int, kind: NetworkKind, wirings: list[tuple[int, ...]], extra: int) -> NetworkTopology:
    total = tuple(range(n))
    for wiring in wirings:
        total = _compose(total, wiring)
    topology = NetworkTopology(n=n, kind=kind, stages=tuple(Stage(w) for w in wirings),
                               output_wiring=_invert_permutation(total), extra_stages=extra)
    _log_message(logger, DEBUG, f"Built {topology.name}: {topology.stage_count} stages, "
                                f"{topology.rrb_count} RRBs, {topology.config_bits} config bits")
    return topology


def build_omega(n: int) -> NetworkTopology:
    """Build the blocking Omega network.

    Args:
        n: Number of inlets (power of two, at least 4)

    Returns:
        Topology with log2(n) stages and (n/2)·log2(n) RRBs

    Raises:
        TopologyError: If n is not a power of two or is smaller than 4
    """
    _validate_width(n)
    return _finish(n, NetworkKind.OMEGA, [_shuffle_wiring(n)] * log2(n), 0)


def build_near_nonblocking(n: int) -> NetworkTopology:
    """Build the near non-blocking LOG(n, log2(n) - 2, 1) network.

    The Omega network is followed by its mirror image sharing the centre
    column, truncated to ``log2(n) - 2`` extra stages. For n = 4 no extra
    stage exists and the result has the same stages as ``build_omega(4)``.

    Args:
        n: Number of inlets (power of two, at least 4)

    Returns:
        Topology with 2·log2(n) - 2 stages and n·(log2(n) - 1) RRBs

    Raises:
        TopologyError: If n is not a power of two or is smaller than 4
    """
    _validate_width(n)
    extra = log2(n) - 2
    wirings = [_shuffle_wiring(n)] * log2(n) + [_unshuffle_wiring(n)] * extra
    return _finish(n, NetworkKind.LOG_NM, wirings, extra)


def build_network(kind: NetworkKind | str, n: int) -> NetworkTopology:
    """Build a network by kind name ("blk" or "nonblk")."""
    try:
        kind = NetworkKind(kind)
    except ValueError:
        raise TopologyError(f"Unknown network kind {kind!r}; expected 'blk' or 'nonblk'") from None
    if kind is NetworkKind.OMEGA:
        return build_omega(n)
    return build_near_nonblocking(n)


######################
# Evaluation:
def _check_trn(topology: NetworkTopology, trn: Trn) -> None:
    if trn.length != topology.config_bits:
        raise TrnLengthError(topology.config_bits, trn.length)


def _check_word(topology: NetworkTopology, word: int) -> None:
    if word < 0 or word >> topology.n:
        raise ConfigError(f"Word does not fit in {topology.n} bits")


@lru_cache(maxsize=4096)
def configure(topology: NetworkTopology, trn: Trn) -> SwitchConfig:
    """Compile a topology under a TRN into a source table and inversion mask.

    Raises:
        TrnLengthError: If the TRN length does not match the topology
    """
    _check_trn(topology, trn)
    n = topology.n
    config = int_to_bits(trn.bits, trn.length).reshape(topology.stage_count, n // 2, RRB_CONFIG_BITS)
    source = np.arange(n)
    invert = np.zeros(n, dtype=np.uint8)
    for index, stage in enumerate(topology.stages):
        gather = np.asarray(stage.gather)
        source, invert = source[gather], invert[gather]
        swap = config[index, :, 0].astype(bool)
        upper_src, lower_src = source[0::2], source[1::2]
        upper_inv, lower_inv = invert[0::2], invert[1::2]
        source = np.empty_like(source)
        source[0::2] = np.where(swap, lower_src, upper_src)
        source[1::2] = np.where(swap, upper_src, lower_src)
        new_invert = np.empty_like(invert)
        new_invert[0::2] = np.where(swap, lower_inv, upper_inv) ^ config[index, :, 1]
        new_invert[1::2] = np.where(swap, upper_inv, lower_inv) ^ config[index, :, 2]
        invert = new_invert
    gather = np.asarray(_invert_permutation(topology.output_wiring))
    return SwitchConfig(n=n, source=source[gather], invert=invert[gather])


def csn_forward(topology: NetworkTopology, trn: Trn, x: int) -> int:
    """Pass an n-bit word through the CSN.

    Args:
        topology: Network wiring
        trn: Configuration, exactly ``topology.config_bits`` long
        x: Input word, bit i on line i

    Returns:
        Output word

    Raises:
        TrnLengthError: If the TRN length does not match the topology
        ConfigError: If x does not fit in n bits
    """
    _check_word(topology, x)
    return configure(topology, trn).forward(x)


def rcsn_backward(topology: NetworkTopology, trn: Trn, y: int) -> int:
    """Pass an n-bit word through the RCSN, the exact inverse of ``csn_forward``.

    Raises:
        TrnLengthError: If the TRN length does not match the topology
        ConfigError: If y does not fit in n bits
    """
    _check_word(topology, y)
    return configure(topology, trn).backward(y)


def csn_forward_batch(topology: NetworkTopology, trn: Trn, x_bits: np.ndarray) -> np.ndarray:
    return configure(topology, trn).forward_batch(x_bits)


def rcsn_backward_batch(topology: NetworkTopology, trn: Trn, y_bits: np.ndarray) -> np.ndarray:
    return configure(topology, trn).backward_batch(y_bits)


def shift_trn(trn: Trn, k: int) -> Trn:
    """Rotate a TRN left by ``k`` positions (bit i takes the value of bit i + k)."""
    return Trn(rotate_left(trn.bits, k, trn.length), trn.length)


######################
# Analysis:
def enumerate_permutations(topology: NetworkTopology) -> int:
    """Count the distinct permutations the network realizes with inversions off.

    The reachable routings are expanded one stage at a time; identical partial
    routings are merged, which keeps the search at most n! wide per stage.

    Args:
        topology: Network of width at most ``ENUMERATION_LIMIT``

    Returns:
        Number of distinct input-to-output permutations over all swap settings

    Raises:
        TopologyError: If the network is too wide for exhaustive search
    """
    if topology.n > ENUMERATION_LIMIT:
        raise TopologyError(f"Exhaustive enumeration is limited to n <= {ENUMERATION_LIMIT}", n=topology.n)
    half = topology.n // 2
    reachable = {tuple(range(topology.n))}
    for stage in topology.stages:
        gather = stage.gather
        expanded = set()
        for routing in reachable:
            wired = [routing[g] for g in gather]
            for swaps in range(1 << half):
                lines = list(wired)
                for block in range(half):
                    if (swaps >> block) & 1:
                        lines[2 * block], lines[2 * block + 1] = lines[2 * block + 1], lines[2 * block]
                expanded.add(tuple(lines))
        reachable = expanded
    _log_message(logger, DEBUG, f"{topology.name} realizes {len(reachable)} permutations")
    return len(reachable)


######################
# Netlist export:
@dataclass(frozen=True)
class Gate:
    """One gate of an exported netlist.

    MUX fan-ins are (select, in0, in1) and the gate outputs in1 when select is 1.
    """
    gate_id: str
    kind: str
    fanins: tuple[str, ...]


@dataclass(frozen=True)
class Netlist:
    """Gate-level view of a CSN whose key inputs are the TRN bits.

    Attributes:
        n: Network width
        inputs: Data input nets x0..x{n-1}
        keys: Key input nets k0..k{3R-1}, key net i is TRN bit i
        outputs: Output nets y0..y{n-1}
        gates: Gates in topological order
    """
    n: int
    inputs: tuple[str, ...]
    keys: tuple[str, ...]
    outputs: tuple[str, ...]
    gates: tuple[Gate, ...]

    def evaluate(self, x: int, key: int) -> int:
        values = {net: (x >> i) & 1 for i, net in enumerate(self.inputs)}
        values.update({net: (key >> i) & 1 for i, net in enumerate(self.keys)})
        for gate in self.gates:
            ins = [values[f] for f in gate.fanins]
            if gate.kind == "MUX":
                values[gate.gate_id] = ins[2] if ins[0] else ins[1]
            elif gate.kind == "XOR":
                values[gate.gate_id] = ins[0] ^ ins[1]
            else:
                values[gate.gate_id] = ins[0]
        return sum(values[net] << i for i, net in enumerate(self.outputs))

    def to_text(self) -> str:
        """Serialize as a line-oriented gate list."""
        lines = [f"# csn netlist n={self.n}"]
        lines += [f"INPUT {net}" for net in self.inputs]
        lines += [f"KEY {net}" for net in self.keys]
        lines += [f"{g.gate_id} = {g.kind}({', '.join(g.fanins)})" for g in self.gates]
        lines += [f"OUTPUT {net}" for net in self.outputs]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Netlist":
        n = 0
        inputs, keys, outputs, gates = [], [], [], []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "n=" in line:
                    n = int(line.split("n=")[1].split()[0])
            elif line.startswith("INPUT "):
                inputs.append(line[6:])
            elif line.startswith("KEY "):
                keys.append(line[4:])
            elif line.startswith("OUTPUT "):
                outputs.append(line[7:])
            else:
                gate_id, expression = (part.strip() for part in line.split("=", 1))
                kind, args = expression.split("(", 1)
                fanins = tuple(a.strip() for a in args.rstrip(")").split(","))
                gates.append(Gate(gate_id, kind.strip(), fanins))
        return cls(n or len(inputs), tuple(inputs), tuple(keys), tuple(outputs), tuple(gates))


def to_netlist(topology: NetworkTopology) -> Netlist:
    """Export the CSN as MUX pairs per RRB plus XOR gates for inversion.

    Evaluating the netlist with key = TRN equals ``csn_forward`` for every input.
    """
    n = topology.n
    inputs = tuple(f"x{i}" for i in range(n))
    keys = tuple(f"k{i}" for i in range(topology.config_bits))
    gates: list[Gate] = []
    lines = list(inputs)
    for s, stage in enumerate(topology.stages):
        lines = [lines[g] for g in stage.gather]
        for r in range(n // 2):
            upper, lower = lines[2 * r], lines[2 * r + 1]
            swap, inv0, inv1 = (keys[topology.config_index(s, r, f)] for f in range(RRB_CONFIG_BITS))
            prefix = f"s{s}_r{r}"
            gates.append(Gate(f"{prefix}_m0", "MUX", (swap, upper, lower)))
            gates.append(Gate(f"{prefix}_m1", "MUX", (swap, lower, upper)))
            gates.append(Gate(f"{prefix}_o0", "XOR", (f"{prefix}_m0", inv0)))
            gates.append(Gate(f"{prefix}_o1", "XOR", (f"{prefix}_m1", inv1)))
            lines[2 * r], lines[2 * r + 1] = f"{prefix}_o0", f"{prefix}_o1"
    lines = [lines[g] for g in _invert_permutation(topology.output_wiring)]
    outputs = tuple(f"y{j}" for j in range(n))
    gates += [Gate(out, "BUF", (net,)) for out, net in zip(outputs, lines)]
    return Netlist(n, inputs, keys, outputs, tuple(gates))


def random_word(n: int, rng: np.random.Generator) -> int:
    """Draw a uniformly random n-bit word."""
    return bits_to_int(rng.integers(0, 2, size=n, dtype=np.uint8)) & mask(n)
