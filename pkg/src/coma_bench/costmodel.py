"""Closed-form latency and energy models for the DCC and LCC modes.

All quantities are in clock cycles (latency) and mW·cycles (energy).
Arithmetic is exact: throughputs and power levels are Fractions, and every
real-valued cycle ratio is rounded up, since cycle counts are integral.

Profiles:
- COMA1: C_fix 10492, C_byte 72, AES-CTR PRNG at 12.8 bits/cycle, AES-GCM AEAD
- COMA2: C_fix 20452, C_byte 17, Trivium PRNG at 64 bits/cycle, ACORN AEAD

Example:
    ```python
    from coma_bench import costmodel

    coma2 = costmodel.get_profile("coma2")
    costmodel.t_comm_dcc(coma2, 1024)         # 37860
    costmodel.lcc_init_cycles(coma2)          # 20739
    costmodel.c_byte_lcc(coma2)               # Fraction(9, 8)
    costmodel.crossover_bytes(costmodel.get_profile("coma1"), coma2)   # 182
    ```
"""
import csv
import json
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from logging import getLogger, DEBUG
from typing import Any, Dict, Iterable, List, Optional

from ._logging import _log_message
from ._utils import ceil_div, create_data_with_kwargs, log2
from .exceptions import ConfigError

logger = getLogger(__name__)

LCC_SEED_BYTES = 16
PUBLISHED_CROSSOVER_BYTES = 128
"""int: Crossover message size quoted in the published evaluation."""


@dataclass(frozen=True)
class CostParams:
    """Cost-model constants of one profile.

    Attributes:
        name: Profile name
        c_fix: AEAD initialization and finalization cycles
        c_byte: AEAD cycles per byte
        prng_perf: PRNG throughput, bits per cycle
        bw: Bus width, bits
        n: CSN width
        u: Blocks per TRN epoch
        p_h: Power while CSN and PRNG are both active (mW)
        p_l1: Power of the CSN alone (mW)
        p_l2: Power of the PRNG alone (mW)
        prng: PRNG profile name
        aead: AEAD name
    """
    name: str
    c_fix: int
    c_byte: int
    prng_perf: Fraction
    bw: int = 8
    n: int = 64
    u: int = 30
    p_h: Fraction = Fraction(254, 1000)
    p_l1: Fraction = Fraction(11, 100)
    p_l2: Fraction = Fraction(144, 1000)
    prng: str = "trivium"
    aead: str = "acorn128"

    def validate(self) -> "CostParams":
        """Check that every constant is positive.

        Raises:
            ConfigError: On a non-positive constant
        """
        for name in ("c_fix", "prng_perf", "bw", "n", "u"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"Cost parameter {name} must be positive, got {getattr(self, name)}")
        for name in ("c_byte", "p_h", "p_l1", "p_l2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"Cost parameter {name} must not be negative, got {getattr(self, name)}")
        return self

    def with_overrides(self, **kwargs: Any) -> "CostParams":
        """Copy with fields replaced; None values are ignored."""
        return replace(self, **create_data_with_kwargs(None, **kwargs)).validate()


COMA1 = CostParams(name="coma1", c_fix=10492, c_byte=72, prng_perf=Fraction(64, 5),
                   p_h=Fraction(11, 100) + Fraction(431, 1000), p_l1=Fraction(11, 100), p_l2=Fraction(431, 1000),
                   prng="aes-ctr", aead="aes-gcm")
COMA2 = CostParams(name="coma2", c_fix=20452, c_byte=17, prng_perf=Fraction(64))

PROFILES: Dict[str, CostParams] = {COMA1.name: COMA1, COMA2.name: COMA2}


def get_profile(name: str) -> CostParams:
    try:
        return PROFILES[name.lower()]
    except KeyError:
        raise ConfigError(f"Unknown profile {name!r}; expected one of {sorted(PROFILES)}") from None


def for_width(params: CostParams, n: int) -> CostParams:
    """Profile sized for an n-bit CSN; the profile U is capped at n - 1."""
    return params.with_overrides(n=n, u=min(params.u, n - 1))


def load_profiles(path: str) -> Dict[str, CostParams]:
    """Load extra profiles from JSON.

    Each entry is ``{"name": ..., "base": "coma1"|"coma2", <field>: <value>, ...}``;
    numeric values may be strings such as "64/5".

    Raises:
        ConfigError: On unknown fields or bases
    """
    with open(path, encoding="utf-8") as handle:
        entries = json.load(handle)
    known = {f.name for f in fields(CostParams)}
    loaded = {}
    for entry in entries:
        entry = dict(entry)
        base = get_profile(entry.pop("base", "coma2"))
        unknown = set(entry) - known
        if unknown:
            raise ConfigError(f"Unknown cost parameters {sorted(unknown)} in {path}")
        values = {k: (Fraction(v) if isinstance(v, str) and k != "name" and k not in ("prng", "aead") else v)
                  for k, v in entry.items()}
        profile = replace(base, **values).validate()
        loaded[profile.name] = profile
    PROFILES.update(loaded)
    _log_message(logger, DEBUG, f"Loaded profiles {sorted(loaded)} from {path}")
    return loaded


######################
# Latency:
def trn_bits(n: int) -> int:
    """Configuration bits of the near non-blocking CSN, 3n(log2 n - 1)."""
    return 3 * n * (log2(n) - 1)


def t_comm_dcc(params: CostParams, message_bytes: int) -> int:
    """DCC transfer cycles, ``C_fix + bytes * C_byte``."""
    if message_bytes < 0:
        raise ConfigError("Message size must not be negative")
    return params.c_fix + message_bytes * params.c_byte


def c_prng(params: CostParams) -> int:
    """Cycles to generate one TRN, ``ceil(3n(log2 n - 1) / PRNG_perf)``."""
    return ceil_div(trn_bits(params.n), params.prng_perf)


def lcc_init_cycles(params: CostParams) -> int:
    """LCC initialization, ``C_fix + C_ENC + C_PRNG`` with a 16-byte seed."""
    return params.c_fix + LCC_SEED_BYTES * params.c_byte + c_prng(params)


def block_cycles(params: CostParams) -> int:
    """Cycles to encrypt and transfer one n-bit block, ``n/BW + 1``."""
    if params.n % params.bw:
        raise ConfigError(f"Bus width {params.bw} does not divide CSN width {params.n}")
    return params.n // params.bw + 1


def c_byte_lcc(params: CostParams) -> Fraction:
    """LCC cycles per byte, ``(8/n)(n/BW + 1)``.

    Raises:
        ConfigError: If BW does not divide n
    """
    return Fraction(8, params.n) * block_cycles(params)


def epoch_cycles(params: CostParams) -> int:
    return params.u * block_cycles(params)


def stall_cycles(params: CostParams) -> int:
    """Cycles the data path waits per epoch when the PRNG is slower than U blocks."""
    return max(0, c_prng(params) - epoch_cycles(params))


def is_stall_regime(params: CostParams) -> bool:
    return stall_cycles(params) > 0


def t_comm_lcc(params: CostParams, message_bytes: int, include_init: bool = True) -> int:
    """LCC transfer cycles: initialization, blocks, and PRNG stalls between epochs."""
    if message_bytes < 0:
        raise ConfigError("Message size must not be negative")
    blocks = ceil_div(8 * message_bytes, params.n)
    refills = max(0, ceil_div(blocks, params.u) - 1)
    total = blocks * block_cycles(params) + refills * stall_cycles(params)
    return total + (lcc_init_cycles(params) if include_init else 0)


def trn_bytes(params: CostParams) -> int:
    return ceil_div(trn_bits(params.n), 8)


def activation_cycles(params: CostParams, ok_bits: int) -> int:
    """Activation cycles: one TRN, its sealed transfer and one sealed DPOK per n-bit OK segment."""
    segments = ceil_div(ok_bits, params.n)
    return c_prng(params) + t_comm_dcc(params, trn_bytes(params)) + segments * t_comm_dcc(params, params.n // 8)


def dcc_message_cycles(params: CostParams, message_bytes: int, blocks_in_epoch: int = 0) -> int:
    """Cycles of one DCC message as the protocol frames it.

    Blocks under one TRN share a sealed frame; a TRN refresh (generation and
    sealed transfer) is inserted whenever U blocks were sent under a TRN.

    Args:
        params: Cost profile
        message_bytes: Message size before padding
        blocks_in_epoch: Blocks already sent under the current TRN
    """
    blocks = ceil_div(8 * message_bytes, params.n)
    block_bytes = params.n // 8
    refresh = c_prng(params) + t_comm_dcc(params, trn_bytes(params))
    cycles = 0
    while blocks > 0:
        if blocks_in_epoch >= params.u:
            cycles += refresh
            blocks_in_epoch = 0
        take = min(params.u - blocks_in_epoch, blocks)
        cycles += t_comm_dcc(params, take * block_bytes)
        blocks_in_epoch += take
        blocks -= take
    return cycles


def crossover_bytes(first: CostParams, second: CostParams) -> Optional[int]:
    """Smallest message size from which ``second`` is at least as fast as ``first`` in DCC mode.

    Returns None when the lines never cross (``second`` never catches up).
    """
    if first.c_byte == second.c_byte:
        return 0 if second.c_fix <= first.c_fix else None
    size = Fraction(second.c_fix - first.c_fix, first.c_byte - second.c_byte)
    if size < 0:
        return 0 if second.c_byte < first.c_byte else None
    return ceil_div(size, 1)


def published_crossover_note(first: CostParams = COMA1, second: CostParams = COMA2) -> Dict[str, Any]:
    """Computed crossover next to the published statement, with a discrepancy flag."""
    computed = crossover_bytes(first, second)
    return {
        "computed_bytes": computed,
        "published_bytes": PUBLISHED_CROSSOVER_BYTES,
        "discrepancy": computed != PUBLISHED_CROSSOVER_BYTES,
        "note": (f"{second.name} overtakes {first.name} at {computed} B from the DCC latency model; "
                 f"the published comparison quotes {PUBLISHED_CROSSOVER_BYTES} B"),
    }


######################
# Energy:
def e_lcc(params: CostParams) -> Fraction:
    """Energy per U-block epoch in LCC mode.

    Both units are busy for C_PRNG cycles, then the CSN runs alone for the
    rest of the epoch. In the stall regime the PRNG runs alone while the
    data path waits.
    """
    prng_cycles = c_prng(params)
    busy = epoch_cycles(params)
    if busy >= prng_cycles:
        return prng_cycles * params.p_h + (busy - prng_cycles) * params.p_l1
    return busy * params.p_h + (prng_cycles - busy) * params.p_l2


def energy_dcc(params: CostParams, message_bytes: int) -> Fraction:
    """DCC energy, all units at P_H for the full transfer."""
    return t_comm_dcc(params, message_bytes) * params.p_h


######################
# Sweeps:
def log_sizes(start: int = 16, stop: int = 64 * 1024) -> List[int]:
    sizes = []
    size = start
    while size <= stop:
        sizes.append(size)
        size *= 2
    return sizes


def sweep(profiles: Iterable[CostParams], sizes: Iterable[int]) -> List[Dict[str, Any]]:
    """Rows (profile, mode, bytes, cycles, energy) for every profile, mode and size."""
    rows = []
    sizes = list(sizes)
    for params in profiles:
        per_epoch = e_lcc(params)
        for size in sizes:
            blocks = ceil_div(8 * size, params.n)
            epochs = max(1, ceil_div(blocks, params.u))
            rows.append({"profile": params.name, "mode": "dcc", "bytes": size,
                         "cycles": t_comm_dcc(params, size), "energy": energy_dcc(params, size)})
            rows.append({"profile": params.name, "mode": "lcc", "bytes": size,
                         "cycles": t_comm_lcc(params, size),
                         "energy": lcc_init_cycles(params) * params.p_h + epochs * per_epoch})
    return rows


def write_csv(rows: List[Dict[str, Any]], handle) -> None:
    """Write sweep rows; Fractions are rendered as decimals with 6 places."""
    writer = csv.DictWriter(handle, fieldnames=["profile", "mode", "bytes", "cycles", "energy"], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{float(v):.6f}" if isinstance(v, Fraction) else v) for k, v in row.items()})
