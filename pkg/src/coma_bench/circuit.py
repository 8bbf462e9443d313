"""Logic-locked combinational circuit unlocked by the obfuscation key (OK).

A random AND/OR/XOR/NAND netlist stands in for the protected design. Key
gates are XOR or XNOR gates inserted on internal nets; with the correct OK
every key gate is transparent, with any other key a share of the nets is
inverted and the outputs go wrong.

The key register is volatile: ``clear`` (power-down) empties it and the
circuit fails its self-check until the next activation.

Evaluation is bit-sliced: every net value is a Python integer whose bit v
belongs to test vector v.

Example:
    ```python
    from coma_bench.circuit import ObfuscatedCircuit

    circuit, ok = ObfuscatedCircuit.random(seed=5)
    circuit.load_key(ok)
    assert circuit.self_check()
    circuit.clear()
    assert not circuit.self_check()
    ```
"""
from dataclasses import dataclass
from logging import getLogger, DEBUG
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._logging import _log_message
from ._utils import bit_matrix_to_words, mask, words_to_bit_matrix
from .exceptions import ConfigError

logger = getLogger(__name__)

GATE_KINDS = ("AND", "OR", "XOR", "NAND")
SELF_CHECK_VECTORS = 64


@dataclass(frozen=True)
class CircuitGate:
    """Two-input gate driving net ``out`` from nets ``a`` and ``b``."""
    out: int
    kind: str
    a: int
    b: int


@dataclass(frozen=True)
class KeyGate:
    """Key gate on ``net``: the net is XORed with key bit ``key_index`` and ``polarity``."""
    net: int
    key_index: int
    polarity: int


class ObfuscatedCircuit:
    """Locked netlist with a volatile key register and embedded self-check vectors.

    Args:
        inputs: Number of primary inputs
        outputs: Output net indices
        gates: Gates in topological order; gate i drives net ``inputs + i``
        key_gates: Key gates by net
        check_inputs: Self-check input vectors
        check_outputs: Reference outputs of the self-check vectors (computed when omitted)
    """

    def __init__(self, inputs: int, outputs: Sequence[int], gates: Sequence[CircuitGate],
                 key_gates: Sequence[KeyGate], check_inputs: Sequence[int] = (),
                 check_outputs: Optional[Sequence[int]] = None) -> None:
        self._logger = getLogger(__name__)
        self.inputs = inputs
        self.outputs = tuple(outputs)
        self.gates = tuple(gates)
        self.key_gates = {kg.net: kg for kg in key_gates}
        self.key_bits = len(self.key_gates)
        self._key: Optional[int] = None
        self.check_inputs = tuple(check_inputs)
        self.check_outputs = tuple(check_outputs) if check_outputs is not None else \
            tuple(self.reference(self.check_inputs))

    @classmethod
    def random(cls, inputs: int = 32, outputs: int = 32, gates: int = 384, key_bits: int = 256,
               seed: Optional[int] = None) -> Tuple["ObfuscatedCircuit", int]:
        """Build a random locked circuit.

        Args:
            inputs: Primary inputs
            outputs: Primary outputs (the last ``outputs`` gate nets)
            gates: Gate count
            key_bits: Key gates inserted, one per distinct gate net
            seed: Seed for structure, key and self-check vectors

        Returns:
            The locked circuit and its correct obfuscation key

        Raises:
            ConfigError: If the sizes are inconsistent
        """
        if key_bits > gates or outputs > gates or inputs < 2:
            raise ConfigError("Circuit needs inputs >= 2, outputs <= gates and key_bits <= gates")
        rng = np.random.default_rng(seed)
        kinds = rng.choice(len(GATE_KINDS), size=gates, p=[0.2, 0.2, 0.4, 0.2])
        netlist = []
        for i in range(gates):
            net = inputs + i
            a, b = rng.choice(net, size=2, replace=False)
            netlist.append(CircuitGate(net, GATE_KINDS[kinds[i]], int(a), int(b)))
        key = int.from_bytes(rng.bytes((key_bits + 7) // 8), "little") & mask(key_bits)
        locked = sorted(int(n) for n in rng.choice(np.arange(inputs, inputs + gates), size=key_bits, replace=False))
        key_gates = [KeyGate(net, index, (key >> index) & 1) for index, net in enumerate(locked)]
        vectors = [int.from_bytes(rng.bytes((inputs + 7) // 8), "little") & mask(inputs)
                   for _ in range(SELF_CHECK_VECTORS)]
        output_nets = range(inputs + gates - outputs, inputs + gates)
        circuit = cls(inputs, output_nets, netlist, key_gates, vectors)
        _log_message(logger, DEBUG, f"Built locked circuit: {inputs} inputs, {outputs} outputs, "
                                    f"{gates} gates, {key_bits} key gates")
        return circuit, key

    ######################
    # Key register:
    @property
    def key_loaded(self) -> bool:
        return self._key is not None

    def load_key(self, key: int) -> None:
        self._key = key & mask(self.key_bits)

    def clear(self) -> None:
        """Drop the key register contents, as on power-down."""
        self._key = None

    ######################
    # Evaluation:
    def _run(self, vectors: Sequence[int], key: Optional[int], bypass: bool) -> List[int]:
        count = len(vectors)
        if count == 0:
            return []
        full = mask(count)
        columns = words_to_bit_matrix(list(vectors), self.inputs).T
        nets = [int.from_bytes(np.packbits(col, bitorder="little").tobytes(), "little") for col in columns]
        key = key or 0
        for gate in self.gates:
            a, b = nets[gate.a], nets[gate.b]
            if gate.kind == "AND":
                value = a & b
            elif gate.kind == "OR":
                value = a | b
            elif gate.kind == "XOR":
                value = a ^ b
            else:
                value = ~(a & b) & full
            key_gate = self.key_gates.get(gate.out)
            if key_gate is not None and not bypass:
                if ((key >> key_gate.key_index) & 1) ^ key_gate.polarity:
                    value ^= full
            nets.append(value)
        out_bits = np.array([[(nets[o] >> v) & 1 for o in self.outputs] for v in range(count)], dtype=np.uint8)
        return bit_matrix_to_words(out_bits)

    def reference(self, vectors: Sequence[int]) -> List[int]:
        """Outputs of the unlocked reference design."""
        return self._run(vectors, None, bypass=True)

    def evaluate(self, vectors: Sequence[int], key: Optional[int] = None) -> List[int]:
        """Outputs under ``key``, or under the key register when ``key`` is None."""
        return self._run(vectors, self._key if key is None else key, bypass=False)

    def self_check(self) -> bool:
        """Compare the embedded vectors against their reference outputs."""
        if not self.key_loaded:
            return False
        return list(self.evaluate(self.check_inputs)) == list(self.check_outputs)
