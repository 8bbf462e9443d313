"""Random number generation: entropy source, health tests and PRNGs.

The trusted chip draws a 128-bit seed from a slow true entropy source,
checks every sample with the continuous repetition count (RCT) and adaptive
proportion (APT) health tests, and expands the seed with a fast PRNG that
supplies TRNs and nonces. The PRNG is reseeded exactly once per activation.

Two PRNG profiles exist:
- ``trivium``: Trivium keystream, 64 bits per cycle (COMA2).
- ``aes-ctr``: AES-128 in counter mode, 12.8 bits per cycle (COMA1).

Cycle counters feed the cost model; they advance by ``ceil(k / perf)`` for
every k-bit request.

Example:
    ```python
    from coma_bench.rng import EntropySource, HealthTests, Prng, trng_next

    source = EntropySource(seed=1)
    health = HealthTests(min_entropy=1.0)
    bit = trng_next(source, health)

    prng = Prng("trivium")
    prng.seed(bytes(16))
    trn_bits = prng.next_bits(960)     # 15 cycles
    ```
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction
from logging import getLogger, DEBUG, WARNING
from typing import Dict, Optional

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from scipy.stats import binom

from ._logging import _log_event, _log_message
from ._utils import bits_to_int, ceil_div, mask
from .exceptions import ConfigError, HealthAlarm, ReseedError, UnseededError
from .switchnet import Trn

logger = getLogger(__name__)

SEED_BYTES = 16
DEFAULT_CYCLES_PER_BIT = 20000
DEFAULT_ALPHA = 2.0 ** -20
APT_WINDOW = 512


######################
# Entropy source:
class Fault:
    NONE = "none"
    STUCK0 = "stuck0"
    STUCK1 = "stuck1"
    BIAS = "bias"

    ALL = (NONE, STUCK0, STUCK1, BIAS)


@dataclass
class EntropySource:
    """Statistical model of the true entropy source.

    Attributes:
        p_one: Probability of drawing a 1 when no fault is injected
        fault: One of ``Fault.ALL``
        fault_p: Probability of a 1 under bias injection
        cycles_per_bit: Clock cycles spent per sample
        seed: Seed for the underlying numpy generator (None for fresh entropy)
        cycles: Clock cycles spent so far
    """
    p_one: float = 0.5
    fault: str = Fault.NONE
    fault_p: float = 0.9
    cycles_per_bit: int = DEFAULT_CYCLES_PER_BIT
    seed: Optional[int] = None
    cycles: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_one <= 1.0 or not 0.0 <= self.fault_p <= 1.0:
            raise ConfigError("Entropy source probabilities must lie in [0, 1]")
        if self.fault not in Fault.ALL:
            raise ConfigError(f"Unknown fault {self.fault!r}; expected one of {Fault.ALL}")
        self._rng = np.random.default_rng(self.seed)

    @property
    def effective_p(self) -> float:
        if self.fault == Fault.STUCK0:
            return 0.0
        if self.fault == Fault.STUCK1:
            return 1.0
        if self.fault == Fault.BIAS:
            return self.fault_p
        return self.p_one

    def inject(self, fault: str, fault_p: Optional[float] = None) -> None:
        if fault not in Fault.ALL:
            raise ConfigError(f"Unknown fault {fault!r}; expected one of {Fault.ALL}")
        self.fault = fault
        if fault_p is not None:
            self.fault_p = fault_p

    def sample(self, k: int) -> np.ndarray:
        """Draw ``k`` raw samples as a uint8 array."""
        self.cycles += k * self.cycles_per_bit
        return (self._rng.random(k) < self.effective_p).astype(np.uint8)


######################
# Health tests:
def rct_cutoff(min_entropy: float, alpha: float = DEFAULT_ALPHA) -> int:
    """Repetition count cutoff ``1 + ceil(-log2(alpha) / H)``."""
    return 1 + math.ceil(-math.log2(alpha) / min_entropy)


def apt_cutoff(min_entropy: float, window: int = APT_WINDOW, alpha: float = DEFAULT_ALPHA) -> int:
    """Adaptive proportion cutoff from the binomial tail.

    The cutoff is ``1 + k`` for the smallest ``k`` with ``P(X > k) <= alpha``,
    where X ~ Binomial(window, 2**-H) counts reference-sample occurrences.
    """
    p = 2.0 ** -min_entropy
    k = int(binom.isf(alpha, window, p))
    while k > 0 and binom.sf(k - 1, window, p) <= alpha:
        k -= 1
    while binom.sf(k, window, p) > alpha:
        k += 1
    return min(1 + k, window)


class HealthTests:
    """Continuous RCT and APT over a binary sample stream.

    Alarms latch: once either test fails, every further sample raises until
    ``reset`` is called.

    Args:
        min_entropy: Assessed min-entropy H per sample (bits)
        window: APT window size W
        alpha: False-alarm probability per test
    """

    def __init__(self, min_entropy: float = 1.0, window: int = APT_WINDOW, alpha: float = DEFAULT_ALPHA) -> None:
        if not 0.0 < min_entropy <= 1.0:
            raise ConfigError(f"Binary source min-entropy must lie in (0, 1], got {min_entropy}")
        self._logger = getLogger(__name__)
        self.min_entropy = min_entropy
        self.window = window
        self.rct_cutoff: int = rct_cutoff(min_entropy, alpha)
        """int: RCT cutoff C."""
        self.apt_cutoff: int = apt_cutoff(min_entropy, window, alpha)
        """int: APT cutoff."""
        self.alarms: int = 0
        """int: Alarms raised since construction (survives reset)."""
        self.samples: int = 0
        """int: Samples tested since construction."""
        self.reset()

    def reset(self) -> None:
        self.alarm: Optional[HealthAlarm] = None
        self._last: Optional[int] = None
        self._repeat = 0
        self._reference: Optional[int] = None
        self._occurrences = 0
        self._position = 0

    def _raise(self, kind: str, count: int, cutoff: int) -> None:
        self.alarm = HealthAlarm(kind, count, cutoff)
        self.alarms += 1
        _log_event(self._logger, WARNING, "health_alarm", kind=kind, count=count, cutoff=cutoff)
        raise self.alarm

    def update(self, bit: int) -> None:
        """Feed one sample through both tests.

        Raises:
            HealthAlarm: On a cutoff breach, and on every sample after one
        """
        if self.alarm is not None:
            raise self.alarm
        self.samples += 1
        if bit == self._last:
            self._repeat += 1
        else:
            self._last, self._repeat = bit, 1
        if self._repeat >= self.rct_cutoff:
            self._raise("RCT", self._repeat, self.rct_cutoff)

        if self._position == 0:
            self._reference, self._occurrences = bit, 1
        elif bit == self._reference:
            self._occurrences += 1
        self._position += 1
        if self._occurrences >= self.apt_cutoff:
            self._raise("APT", self._occurrences, self.apt_cutoff)
        if self._position == self.window:
            self._position = 0

    def feed(self, bits: np.ndarray) -> None:
        for bit in bits.tolist():
            self.update(bit)


def trng_next(source: EntropySource, health: HealthTests) -> int:
    """Draw one health-checked bit.

    Raises:
        HealthAlarm: If the RCT or APT cutoff is breached
    """
    bit = int(source.sample(1)[0])
    health.update(bit)
    return bit


def trng_bits(source: EntropySource, health: HealthTests, k: int) -> int:
    """Draw ``k`` health-checked bits packed into an integer (bit i = sample i)."""
    samples = source.sample(k)
    health.feed(samples)
    return bits_to_int(samples) if k else 0


@dataclass
class SourceReport:
    """Outcome of a continuous health run over one source.

    Attributes:
        passed: No alarm fired
        samples: Samples tested (up to and including the failing one)
        alarm: "RCT", "APT" or None
        count: Counter value at the alarm
        rct_cutoff: RCT cutoff in force
        apt_cutoff: APT cutoff in force
    """
    passed: bool
    samples: int
    alarm: Optional[str]
    count: Optional[int]
    rct_cutoff: int
    apt_cutoff: int


def check_source(source: EntropySource, bits: int = 1_000_000, min_entropy: float = 1.0,
                 chunk: int = 1 << 16) -> SourceReport:
    """Run both health tests over ``bits`` samples, stopping at the first alarm."""
    health = HealthTests(min_entropy)
    alarm: Optional[HealthAlarm] = None
    remaining = bits
    while remaining > 0 and alarm is None:
        take = min(chunk, remaining)
        try:
            health.feed(source.sample(take))
        except HealthAlarm as e:
            alarm = e
        remaining -= take
    return SourceReport(alarm is None, health.samples, alarm.kind if alarm else None,
                        alarm.count if alarm else None, health.rct_cutoff, health.apt_cutoff)


######################
# Trivium:
_M64 = mask(64)
_LEN_A, _LEN_B, _LEN_C = 93, 84, 111
_WARMUP_STEPS = 4 * 288


def _tap(register: int, length: int, k: int) -> int:
    """64 successive values of cell ``k`` (bit j = value at step j)."""
    return (register >> (length - k)) & _M64


class Trivium:
    """Trivium keystream generator, 64 steps per call.

    Register cells are stored so that cell k of a register of length L sits at
    integer bit L - k; freshly shifted-in values occupy the bits above L. Key
    and IV load most significant bit first within each byte and keystream
    bytes fill least significant bit first, which reproduces the eSTREAM
    reference vectors.

    Args:
        key: 80-bit key (10 bytes, K_1 is the top bit of byte 0)
        iv: 80-bit IV (10 bytes, same bit order)
    """

    def __init__(self, key: bytes, iv: bytes) -> None:
        if len(key) != 10 or len(iv) != 10:
            raise ConfigError("Trivium takes an 80-bit key and an 80-bit IV")
        self._a = int.from_bytes(key, "big") << (_LEN_A - 80)
        self._b = int.from_bytes(iv, "big") << (_LEN_B - 80)
        self._c = 0b111
        self._leftover = b""
        for _ in range(_WARMUP_STEPS // 64):
            self._clock()

    def _clock(self) -> int:
        a, b, c = self._a, self._b, self._c
        a66, a93, a69 = _tap(a, _LEN_A, 66), _tap(a, _LEN_A, 93), _tap(a, _LEN_A, 69)
        b69, b84, b78 = _tap(b, _LEN_B, 69), _tap(b, _LEN_B, 84), _tap(b, _LEN_B, 78)
        c66, c111, c87 = _tap(c, _LEN_C, 66), _tap(c, _LEN_C, 111), _tap(c, _LEN_C, 87)
        z = a66 ^ a93 ^ b69 ^ b84 ^ c66 ^ c111
        t1 = a66 ^ a93 ^ (_tap(a, _LEN_A, 91) & _tap(a, _LEN_A, 92)) ^ b78
        t2 = b69 ^ b84 ^ (_tap(b, _LEN_B, 82) & _tap(b, _LEN_B, 83)) ^ c87
        t3 = c66 ^ c111 ^ (_tap(c, _LEN_C, 109) & _tap(c, _LEN_C, 110)) ^ a69
        self._a = (a >> 64) | (t3 << (_LEN_A - 64))
        self._b = (b >> 64) | (t1 << (_LEN_B - 64))
        self._c = (c >> 64) | (t2 << (_LEN_C - 64))
        return z

    def keystream(self, nbytes: int) -> bytes:
        """Next ``nbytes`` keystream bytes; stream bit i is byte i//8, bit i%8.

        Unused bytes of the last 64-step word are kept for the next call.
        """
        words = ceil_div(max(nbytes - len(self._leftover), 0), 8)
        out = self._leftover + b"".join(self._clock().to_bytes(8, "little") for _ in range(words))
        self._leftover = out[nbytes:]
        return out[:nbytes]


class _AesCtrStream:
    """AES-128-CTR keystream from ``cryptography``."""

    def __init__(self, seed: bytes) -> None:
        self._encryptor = Cipher(algorithms.AES(seed), modes.CTR(bytes(16))).encryptor()

    def keystream(self, nbytes: int) -> bytes:
        return self._encryptor.update(bytes(nbytes))


PRNG_PROFILES: Dict[str, Fraction] = {
    "trivium": Fraction(64),
    "aes-ctr": Fraction(64, 5),
}
"""Dict[str, Fraction]: PRNG throughput in bits per cycle."""


def _make_stream(profile: str, seed: bytes):
    if profile == "trivium":
        return Trivium(seed[:10], seed[10:].ljust(10, b"\x00"))
    return _AesCtrStream(seed)


class Prng:
    """Seeded keystream PRNG with simulated cycle accounting.

    Args:
        profile: "trivium" or "aes-ctr"
        buffer_bits: Output buffer size B; refilling it takes ``refill_cycles``
    """

    def __init__(self, profile: str = "trivium", buffer_bits: Optional[int] = None) -> None:
        if profile not in PRNG_PROFILES:
            raise ConfigError(f"Unknown PRNG profile {profile!r}; expected one of {sorted(PRNG_PROFILES)}")
        self._logger = getLogger(__name__)
        self.profile = profile
        self.perf: Fraction = PRNG_PROFILES[profile]
        self.buffer_bits = buffer_bits
        self.cycles: int = 0
        """int: Simulated cycles spent generating output."""
        self.bits_out: int = 0
        """int: Bits handed out since the last seed."""
        self._stream = None
        self._seeded_this_activation = False
        self._pending = 0
        self._pending_bits = 0

    @property
    def seeded(self) -> bool:
        return self._stream is not None

    @property
    def refill_cycles(self) -> int:
        """Cycles P needed to refill the output buffer."""
        return ceil_div(self.buffer_bits or 0, self.perf)

    def begin_activation(self) -> None:
        """Allow one reseed for the next activation."""
        self._seeded_this_activation = False

    def seed(self, seed: bytes) -> None:
        """Seed the PRNG from 128 bits of entropy.

        Raises:
            ReseedError: If the PRNG was already seeded in this activation
            ConfigError: If the seed is not 16 bytes
        """
        if len(seed) != SEED_BYTES:
            raise ConfigError(f"PRNG seed must be {SEED_BYTES} bytes, got {len(seed)}")
        if self._seeded_this_activation:
            raise ReseedError("PRNG may only be reseeded once per activation")
        self._stream = _make_stream(self.profile, seed)
        self._seeded_this_activation = True
        self._pending, self._pending_bits = 0, 0
        self.bits_out = 0
        _log_message(self._logger, DEBUG, f"Seeded {self.profile} PRNG", seed.hex())

    def next_bits(self, k: int) -> int:
        """Return the next ``k`` stream bits as an integer (bit i = stream bit i).

        Raises:
            UnseededError: If the PRNG was never seeded
        """
        if self._stream is None:
            raise UnseededError("PRNG output requested before seeding")
        if k <= 0:
            return 0
        if self._pending_bits < k:
            fresh = self._stream.keystream(ceil_div(k - self._pending_bits, 8))
            self._pending |= int.from_bytes(fresh, "little") << self._pending_bits
            self._pending_bits += len(fresh) * 8
        out = self._pending & mask(k)
        self._pending >>= k
        self._pending_bits -= k
        self.cycles += ceil_div(k, self.perf)
        self.bits_out += k
        return out

    def next_bytes(self, nbytes: int) -> bytes:
        return self.next_bits(8 * nbytes).to_bytes(nbytes, "little")

    def next_trn(self, length: int) -> Trn:
        return Trn(self.next_bits(length), length)


def prng_seed(state: Prng, seed: bytes) -> Prng:
    state.seed(seed)
    return state


def prng_next(state: Prng, k: int) -> int:
    return state.next_bits(k)


######################
# Random unit:
class RandomUnit:
    """Entropy source, health tests and PRNG as one trusted-side unit.

    Args:
        source: Entropy source model (a fresh unbiased one by default)
        profile: PRNG profile
        min_entropy: Assessed min-entropy of the source
        buffer_bits: PRNG output buffer size
    """

    def __init__(self, source: Optional[EntropySource] = None, profile: str = "trivium",
                 min_entropy: float = 1.0, buffer_bits: Optional[int] = None) -> None:
        self._logger = getLogger(__name__)
        self.source = source or EntropySource()
        self.health = HealthTests(min_entropy)
        self.prng = Prng(profile, buffer_bits)

    def trng_bytes(self, nbytes: int) -> bytes:
        """Health-checked raw entropy.

        Raises:
            HealthAlarm: If the source fails a health test
        """
        return trng_bits(self.source, self.health, 8 * nbytes).to_bytes(nbytes, "little")

    def begin_activation(self) -> None:
        """Reseed the PRNG from 128 fresh health-checked bits."""
        message = "Start to reseed PRNG for a new activation"
        _log_message(self._logger, DEBUG, message)
        seed = self.trng_bytes(SEED_BYTES)
        self.prng.begin_activation()
        self.prng.seed(seed)
        _log_message(self._logger, DEBUG, "Finish PRNG reseed")
