"""Key-recovery attacks against the CSN.

This module provides:
- An oracle-guided SAT attack: two key copies of the CSN netlist form a
  miter, each distinguishing input found by the solver is sent to the
  oracle, and the answer constrains both copies until no two consistent
  keys disagree on any input
- Algebraic recovery of the affine map ``y = A x ^ b`` a fixed TRN realizes
- The safe TRN update period derived from the attack cost

Environment Variables:
    COMA_SAT_SOLVER (str): Solver backend name for python-sat (default: glucose4)
    COMA_SAT_TIMEOUT (float): Seconds per SAT attack instance (default: 600)

Example:
    ```python
    import numpy as np
    from coma_bench import attacks, switchnet

    topology = switchnet.build_omega(16)
    trn = switchnet.Trn.random(topology.config_bits, np.random.default_rng(1))
    result = attacks.sat_extract_key(switchnet.to_netlist(topology),
                                     lambda x: switchnet.csn_forward(topology, trn, x))
    print(result.iterations, result.elapsed)
    ```
"""
import csv
import os
import threading
import time
from dataclasses import dataclass, field
from logging import getLogger, DEBUG, INFO, WARNING
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pysat.formula import IDPool
from pysat.solvers import Solver

from ._logging import _log_event, _log_message
from ._utils import bits_to_int, int_to_bits, words_to_bit_matrix
from .exceptions import AttackTimeout, ConfigError
from .switchnet import DEFAULT_SHIFT, NetworkKind, NetworkTopology, Netlist, Trn, build_network, csn_forward, \
    random_word, shift_trn, to_netlist

logger = getLogger(__name__)

Oracle = Callable[[int], int]

OUTCOME_OK = "ok"
OUTCOME_TIMEOUT = "TO"


######################
# CNF encoding:
class _CnfBuilder:
    """Tseitin encoding of netlist copies into one clause database."""

    def __init__(self, solver: Solver) -> None:
        self.solver = solver
        self.pool = IDPool()

    def var(self, name: str) -> int:
        return self.pool.id(name)

    def encode(self, netlist: Netlist, copy: str, inputs: Dict[str, int], keys: Dict[str, int]) -> List[int]:
        """Add one copy of ``netlist`` and return its output variables.

        Args:
            netlist: CSN netlist (MUX, XOR and BUF gates)
            copy: Name prefix of the copy's internal nets
            inputs: Variable per data input net
            keys: Variable per key net
        """
        nets: Dict[str, int] = {**inputs, **keys}
        for gate in netlist.gates:
            fanins = [nets[f] for f in gate.fanins]
            if gate.kind == "BUF":
                nets[gate.gate_id] = fanins[0]
                continue
            out = self.var(f"{copy}:{gate.gate_id}")
            nets[gate.gate_id] = out
            if gate.kind == "MUX":
                s, a, b = fanins
                self.solver.append_formula([[-s, -b, out], [-s, b, -out], [s, -a, out], [s, a, -out],
                                            [-a, -b, out], [a, b, -out]])
            elif gate.kind == "XOR":
                a, b = fanins
                self.solver.append_formula([[-a, -b, -out], [a, b, -out], [a, -b, out], [-a, b, out]])
            else:
                raise ConfigError(f"Cannot encode gate kind {gate.kind!r}")
        return [nets[o] for o in netlist.outputs]

    def xor(self, a: int, b: int, name: str) -> int:
        out = self.var(name)
        self.solver.append_formula([[-a, -b, -out], [a, b, -out], [a, -b, out], [-a, b, out]])
        return out


######################
# SAT attack:
@dataclass
class AttackResult:
    """Outcome of a SAT attack.

    Attributes:
        key: Recovered TRN (functionally equivalent to the hidden one)
        iterations: Distinguishing inputs queried
        elapsed: Wall-clock seconds
        distinguishing_inputs: Queried inputs with the oracle's answers
    """
    key: Trn
    iterations: int
    elapsed: float
    distinguishing_inputs: List[Tuple[int, int]] = field(default_factory=list)

    def equivalent(self, netlist: Netlist, oracle: Oracle, trials: int = 1000,
                   rng: Optional[np.random.Generator] = None) -> bool:
        """Check the key against the oracle on the history and on random inputs."""
        rng = rng or np.random.default_rng()
        probes = [x for x, _ in self.distinguishing_inputs] + [random_word(netlist.n, rng) for _ in range(trials)]
        return all(netlist.evaluate(x, self.key.bits) == oracle(x) for x in probes)


class SatAttack:
    """Oracle-guided SAT attack on one CSN netlist.

    Attributes:
        _solver_name (str): python-sat backend (COMA_SAT_SOLVER, default glucose4)
        _timeout (float): Seconds before giving up (COMA_SAT_TIMEOUT, default 600)

    Args:
        netlist: Netlist exported by ``switchnet.to_netlist``
        oracle: Configured CSN, ``x -> y``
        timeout: Overrides ``_timeout``
        solver_name: Overrides ``_solver_name``
    """
    _solver_name: str = os.getenv("COMA_SAT_SOLVER", "glucose4")
    _timeout: float = float(os.getenv("COMA_SAT_TIMEOUT", "600"))

    def __init__(self, netlist: Netlist, oracle: Oracle, timeout: Optional[float] = None,
                 solver_name: Optional[str] = None) -> None:
        self._logger = getLogger(__name__)
        self.netlist = netlist
        self.oracle = oracle
        if timeout is not None:
            self._timeout = timeout
        if solver_name is not None:
            self._solver_name = solver_name
        self.iterations = 0
        self.history: List[Tuple[int, int]] = []

    def _copy_keys(self, builder: _CnfBuilder, name: str) -> Dict[str, int]:
        return {k: builder.var(f"{name}:{k}") for k in self.netlist.keys}

    def _constrain(self, builder: _CnfBuilder, keys: Dict[str, int], label: str, x: int, y: int) -> None:
        tag = f"io{self.iterations}{label}"
        inputs = {net: builder.var(f"{tag}:{net}") for net in self.netlist.inputs}
        for i, net in enumerate(self.netlist.inputs):
            builder.solver.add_clause([inputs[net] if (x >> i) & 1 else -inputs[net]])
        outputs = builder.encode(self.netlist, tag, inputs, keys)
        for j, var in enumerate(outputs):
            builder.solver.add_clause([var if (y >> j) & 1 else -var])

    def _solve(self, solver: Solver, assumptions: List[int], deadline: float) -> Optional[bool]:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return None
        timer = threading.Timer(remaining, solver.interrupt)
        timer.start()
        try:
            return solver.solve_limited(assumptions=assumptions, expect_interrupt=True)
        finally:
            timer.cancel()
            solver.clear_interrupt()

    def run(self) -> AttackResult:
        """Iterate until the miter is unsatisfiable.

        Raises:
            AttackTimeout: If the time limit runs out (carries iterations so far)
            ConfigError: If the solver backend is unknown
        """
        message = f"Start SAT attack on a {self.netlist.n}-bit CSN with {len(self.netlist.keys)} key bits"
        _log_message(self._logger, DEBUG, message)
        start = time.monotonic()
        deadline = start + self._timeout
        try:
            solver = Solver(name=self._solver_name)
        except Exception as e:
            raise ConfigError(f"Cannot start SAT solver {self._solver_name!r}: {e}") from None
        with solver:
            builder = _CnfBuilder(solver)
            inputs = {net: builder.var(f"x:{net}") for net in self.netlist.inputs}
            keys_a = self._copy_keys(builder, "ka")
            keys_b = self._copy_keys(builder, "kb")
            out_a = builder.encode(self.netlist, "a", inputs, keys_a)
            out_b = builder.encode(self.netlist, "b", inputs, keys_b)
            diffs = [builder.xor(a, b, f"diff{j}") for j, (a, b) in enumerate(zip(out_a, out_b))]
            miter = builder.var("miter")
            solver.add_clause([-miter] + diffs)

            while True:
                status = self._solve(solver, [miter], deadline)
                if status is None:
                    elapsed = time.monotonic() - start
                    _log_message(self._logger, WARNING, f"SAT attack timed out after {self.iterations} iterations")
                    raise AttackTimeout(self.iterations, elapsed)
                if not status:
                    break
                model = set(lit for lit in solver.get_model() if lit > 0)
                x = sum(1 << i for i, net in enumerate(self.netlist.inputs) if inputs[net] in model)
                y = self.oracle(x)
                self.history.append((x, y))
                self.iterations += 1
                self._constrain(builder, keys_a, "a", x, y)
                self._constrain(builder, keys_b, "b", x, y)
                _log_message(self._logger, DEBUG, f"Iteration {self.iterations}: distinguishing input {x:x}")

            if self._solve(solver, [-miter], deadline) is not True:
                raise AttackTimeout(self.iterations, time.monotonic() - start)
            model = set(lit for lit in solver.get_model() if lit > 0)
        key = Trn(sum(1 << i for i, net in enumerate(self.netlist.keys) if keys_a[net] in model),
                  len(self.netlist.keys))
        elapsed = time.monotonic() - start
        _log_message(self._logger, DEBUG, f"Finish SAT attack in {self.iterations} iterations, {elapsed:.3f} s",
                     key.to_hex())
        return AttackResult(key, self.iterations, elapsed, list(self.history))


def sat_extract_key(netlist: Netlist, oracle: Oracle, timeout: Optional[float] = None,
                    solver_name: Optional[str] = None) -> AttackResult:
    """Recover a key equivalent to the oracle's TRN.

    Args:
        netlist: CSN netlist
        oracle: Configured CSN
        timeout: Seconds (COMA_SAT_TIMEOUT when omitted)
        solver_name: python-sat backend (COMA_SAT_SOLVER when omitted)

    Raises:
        AttackTimeout: On timeout
    """
    return SatAttack(netlist, oracle, timeout, solver_name).run()


######################
# GF(2) algebra:
def _eliminate(matrix: np.ndarray, columns: int) -> Tuple[np.ndarray, List[int]]:
    """Reduced row echelon form over GF(2) on the first ``columns`` columns."""
    m = matrix.copy() & 1
    pivots: List[int] = []
    row = 0
    for col in range(columns):
        hits = np.flatnonzero(m[row:, col]) + row if row < m.shape[0] else np.array([], dtype=int)
        if hits.size == 0:
            continue
        pivot = hits[0]
        if pivot != row:
            m[[row, pivot]] = m[[pivot, row]]
        others = np.flatnonzero(m[:, col])
        others = others[others != row]
        m[others] ^= m[row]
        pivots.append(col)
        row += 1
        if row == m.shape[0]:
            break
    return m, pivots


def gf2_rank(matrix: np.ndarray) -> int:
    return len(_eliminate(np.asarray(matrix, dtype=np.uint8), matrix.shape[1])[1])


def gf2_solve(lhs: np.ndarray, rhs: np.ndarray) -> Optional[np.ndarray]:
    """Solve ``lhs @ X = rhs`` over GF(2) for a unique X.

    Returns:
        X, or None when the system is inconsistent or rank-deficient
    """
    lhs = np.asarray(lhs, dtype=np.uint8)
    rhs = np.asarray(rhs, dtype=np.uint8).reshape(lhs.shape[0], -1)
    unknowns = lhs.shape[1]
    reduced, pivots = _eliminate(np.hstack([lhs, rhs]), unknowns)
    if reduced[len(pivots):, unknowns:].any() or len(pivots) < unknowns:
        return None
    return reduced[:unknowns, unknowns:]


def gf2_inverse(matrix: np.ndarray) -> Optional[np.ndarray]:
    n = matrix.shape[0]
    return gf2_solve(matrix, np.eye(n, dtype=np.uint8))


######################
# Affine recovery:
@dataclass
class AffineModel:
    """``y = A x ^ b`` over GF(2).

    Attributes:
        a: n x n matrix, ``a[j, i]`` is the weight of input bit i in output bit j
        b: Constant output mask
    """
    a: np.ndarray
    b: int

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def apply(self, x: int) -> int:
        y_bits = (self.a @ int_to_bits(x, self.n).astype(np.int64)) & 1
        return bits_to_int(y_bits.astype(np.uint8)) ^ self.b

    def invert(self, y: int) -> int:
        """Decrypt one block.

        Raises:
            ConfigError: If A is singular
        """
        inverse = gf2_inverse(self.a)
        if inverse is None:
            raise ConfigError("Affine map is not invertible")
        x_bits = (inverse.astype(np.int64) @ int_to_bits(y ^ self.b, self.n).astype(np.int64)) & 1
        return bits_to_int(x_bits.astype(np.uint8))


@dataclass
class Underdetermined:
    """Too few independent pairs; ``rank`` of the augmented input matrix out of ``needed``."""
    rank: int
    needed: int


@dataclass
class Inconsistent:
    """No single affine map fits every pair."""
    pairs: int


AffineOutcome = Union[AffineModel, Underdetermined, Inconsistent]


def _fits(model: AffineModel, pairs: Sequence[Tuple[int, int]]) -> bool:
    return all(model.apply(x) == y for x, y in pairs)


def affine_recover(pairs: Sequence[Tuple[int, int]], n: int) -> AffineOutcome:
    """Recover the affine map behind plaintext/ciphertext pairs.

    With the chosen inputs ``0`` and every unit vector present, ``b = f(0)``
    and column i is ``f(e_i) ^ b``. Otherwise the pairs are solved as a
    linear system in the unknowns (A, b).

    Args:
        pairs: ``(x, y)`` blocks claimed to share one TRN
        n: Block width

    Returns:
        AffineModel, Inconsistent (checked first) or Underdetermined
    """
    pairs = list(pairs)
    lookup: Dict[int, int] = {}
    for x, y in pairs:
        if lookup.setdefault(x, y) != y:
            return Inconsistent(len(pairs))
    if 0 in lookup and all((1 << i) in lookup for i in range(n)):
        b = lookup[0]
        columns = [lookup[1 << i] ^ b for i in range(n)]
        model = AffineModel(words_to_bit_matrix(columns, n).T.copy(), b)
        return model if _fits(model, pairs) else Inconsistent(len(pairs))
    if not pairs:
        return Underdetermined(0, n + 1)
    xs = np.hstack([words_to_bit_matrix([x for x, _ in pairs], n), np.ones((len(pairs), 1), dtype=np.uint8)])
    ys = words_to_bit_matrix([y for _, y in pairs], n)
    reduced, pivots = _eliminate(np.hstack([xs, ys]), n + 1)
    if reduced[len(pivots):, n + 1:].any():
        return Inconsistent(len(pairs))
    if len(pivots) < n + 1:
        return Underdetermined(len(pivots), n + 1)
    solution = reduced[:n + 1, n + 1:]
    model = AffineModel(solution[:n].T.copy(), bits_to_int(solution[n]))
    _log_message(logger, DEBUG, f"Recovered affine map from {len(pairs)} pairs")
    return model


def observe_blocks(topology: NetworkTopology, trn: Trn, inputs: Sequence[int],
                   shift: bool = False) -> List[Tuple[int, int]]:
    """Encrypt blocks under ``trn``, optionally rotating the TRN after each block."""
    pairs = []
    for x in inputs:
        pairs.append((x, csn_forward(topology, trn, x)))
        if shift:
            trn = shift_trn(trn, DEFAULT_SHIFT)
    return pairs


def chosen_inputs(n: int) -> List[int]:
    """Zero followed by the n unit vectors."""
    return [0] + [1 << i for i in range(n)]


######################
# Update period:
@dataclass
class UpdateRange:
    """Admissible TRN update periods ``low <= U <= high``.

    Attributes:
        low: PRNG refill time P
        high: ``min(n, sat_iterations) - 1``
        note: Explanation when the range is empty
    """
    low: int
    high: int
    note: str = ""

    @property
    def feasible(self) -> bool:
        return self.low <= self.high


def safe_update_period(n: int, p: int, sat_iterations: Optional[int] = None) -> UpdateRange:
    """Range of U that keeps every TRN below both the width and the SAT iteration bound.

    Args:
        n: CSN width
        p: PRNG refill cycles
        sat_iterations: Measured iterations (None when the attack timed out)
    """
    bound = n if sat_iterations is None else min(n, sat_iterations)
    result = UpdateRange(max(0, p), bound - 1)
    if not result.feasible:
        result.note = (f"infeasible: the attack needs only {sat_iterations} iterations but the PRNG needs "
                       f"{p} cycles per TRN; use near-non-blocking")
    return result


######################
# Sweeps:
def attack_once(kind: Union[NetworkKind, str], n: int, timeout: Optional[float] = None,
                seed: Optional[int] = None, check_trials: int = 1000) -> Dict[str, Any]:
    """One table row: attack a random TRN on one topology."""
    topology = build_network(kind, n)
    rng = np.random.default_rng(seed)
    trn = Trn.random(topology.config_bits, rng)
    netlist = to_netlist(topology)

    def oracle(x: int) -> int:
        return csn_forward(topology, trn, x)

    row: Dict[str, Any] = {"size": n, "kind": NetworkKind(kind).value}
    try:
        result = sat_extract_key(netlist, oracle, timeout)
    except AttackTimeout as e:
        row.update(iterations=e.iterations, seconds=round(e.elapsed, 3), outcome=OUTCOME_TIMEOUT)
    else:
        equivalent = result.equivalent(netlist, oracle, check_trials, rng)
        row.update(iterations=result.iterations, seconds=round(result.elapsed, 3),
                   outcome=OUTCOME_OK if equivalent else "mismatch")
    _log_event(logger, INFO, "sat_attack", **row)
    return row


def sweep(sizes: Iterable[int], kinds: Iterable[Union[NetworkKind, str]], timeout: Optional[float] = None,
          seed: Optional[int] = None) -> List[Dict[str, Any]]:
    """Rows (size, kind, iterations, seconds, outcome) for every size and kind."""
    kinds = list(kinds)
    return [attack_once(kind, n, timeout, None if seed is None else seed + i)
            for i, (n, kind) in enumerate((n, k) for n in sizes for k in kinds)]


def affine_trial(n: int, blocks: int, shift: bool = False, seed: Optional[int] = None,
                 fresh: int = 1000) -> Dict[str, Any]:
    """Observe ``blocks`` chosen blocks under one TRN and try to decrypt fresh ones."""
    topology = build_network(NetworkKind.LOG_NM, n)
    rng = np.random.default_rng(seed)
    trn = Trn.random(topology.config_bits, rng)
    inputs = (chosen_inputs(n) + [random_word(n, rng) for _ in range(max(0, blocks - n - 1))])[:blocks]
    outcome = affine_recover(observe_blocks(topology, trn, inputs, shift), n)
    row: Dict[str, Any] = {"size": n, "kind": "affine", "blocks": blocks, "shift": shift,
                           "outcome": type(outcome).__name__, "errors": None}
    if isinstance(outcome, AffineModel):
        samples = [random_word(n, rng) for _ in range(fresh)]
        row["errors"] = sum(outcome.invert(csn_forward(topology, trn, x)) != x for x in samples)
    _log_event(logger, INFO, "affine_attack", **row)
    return row


def write_csv(rows: List[Dict[str, Any]], handle) -> None:
    """Write sweep rows with the union of their columns, in first-seen order."""
    columns: List[str] = []
    for row in rows:
        columns += [k for k in row if k not in columns]
    writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
