"""Arbiter PUF simulation, key derivation, one-time readout and health check.

The arbiter PUF follows the linear additive delay model: a challenge c of
64 bits is mapped to parity features ``phi_i = prod_{j >= i} (1 - 2 c_j)``
plus a constant bias feature, and the response is the sign of the
weighted sum, disturbed by Gaussian jitter of deviation ``noise``.

Enrollment reads PUF responses out exactly once, encrypted to the
enrollment authority (EA) with X25519 + HKDF + AES-GCM. The EA picks the
most stable candidate challenge, which is then hardwired on the chip, and
records the derived secret key SK.

Example:
    ```python
    from coma_bench.puf import ArbiterPuf, PufDevice, EnrollmentAuthority, puf_health_check

    device = PufDevice("chip-1", ArbiterPuf(noise=0.1, seed=3))
    authority = EnrollmentAuthority()
    record = authority.enroll(device)
    assert device.derive_key() == record.sk

    report = puf_health_check(device.puf, pairs=10_000)
    print(report.verdict)             # "genuine"
    ```
"""
import json
import os
from dataclasses import dataclass, field
from logging import getLogger, DEBUG, INFO, WARNING
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ._logging import _log_event, _log_message
from ._utils import bits_to_int, words_to_bit_matrix
from .cipher import AeadKey
from .exceptions import ConfigError, KeyInstability, ReadoutDecryptError, ReadoutDisabled

logger = getLogger(__name__)

CHALLENGE_BITS = 64
KEY_BITS = 128
DEFAULT_VOTES = 15
DEFAULT_CANDIDATES = 8
READOUT_INFO = b"coma-puf-readout"

GENUINE = "genuine"
SUSPECTED = "suspected-pseudo-PUF"


######################
# Arbiter model:
def parity_features(challenges: np.ndarray, stages: int = CHALLENGE_BITS) -> np.ndarray:
    """Map challenges to the (count, stages + 1) feature matrix of the additive delay model."""
    bits = words_to_bit_matrix([int(c) for c in challenges], stages).astype(np.int8)
    signs = 1 - 2 * bits
    phi = np.cumprod(signs[:, ::-1], axis=1)[:, ::-1]
    return np.hstack([phi, np.ones((phi.shape[0], 1), dtype=np.int8)]).astype(np.float64)


class ArbiterPuf:
    """Arbiter PUF with per-device Gaussian stage delays.

    Args:
        stages: Challenge width
        noise: Standard deviation of the per-evaluation jitter
        seed: Seed of the device's manufacturing variation and jitter
    """

    def __init__(self, stages: int = CHALLENGE_BITS, noise: float = 0.0, seed: Optional[int] = None) -> None:
        if noise < 0:
            raise ConfigError("PUF noise must be non-negative")
        self._rng = np.random.default_rng(seed)
        self.stages = stages
        self.noise = noise
        self.weights: np.ndarray = self._rng.normal(0.0, 1.0, stages + 1)
        """np.ndarray: Stage delay differences followed by the arbiter bias."""

    def delay(self, challenges: np.ndarray) -> np.ndarray:
        """Noiseless delay difference per challenge."""
        return parity_features(challenges, self.stages) @ self.weights

    def eval_many(self, challenges: Union[np.ndarray, List[int]]) -> np.ndarray:
        delta = self.delay(np.asarray(challenges, dtype=np.uint64))
        if self.noise > 0:
            delta = delta + self._rng.normal(0.0, self.noise, delta.shape)
        return (delta > 0).astype(np.uint8)

    def __call__(self, challenge: int) -> int:
        return int(self.eval_many([challenge])[0])


def random_challenges(rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw uniformly random 64-bit challenges."""
    return rng.integers(0, 2 ** 64 - 1, size=count, dtype=np.uint64, endpoint=True)


def puf_eval(puf: ArbiterPuf, challenge: int) -> int:
    """Evaluate one challenge."""
    return puf(challenge)


def expansion_challenges(base_challenge: int) -> List[int]:
    """Challenges for the 128 key bits: ``base_challenge XOR i``."""
    return [base_challenge ^ i for i in range(KEY_BITS)]


def expansion_votes(puf: ArbiterPuf, base_challenge: int, votes: int = DEFAULT_VOTES) -> np.ndarray:
    """Count of 1-responses per key bit over ``votes`` repeated evaluations."""
    challenges = np.repeat(np.asarray(expansion_challenges(base_challenge), dtype=np.uint64), votes)
    return puf.eval_many(challenges).reshape(KEY_BITS, votes).sum(axis=1)


def _key_from_votes(ones: np.ndarray, votes: int) -> AeadKey:
    ties = np.flatnonzero(2 * ones == votes)
    if ties.size:
        raise KeyInstability(f"Key bit {int(ties[0])} has no majority over {votes} votes", bit_index=int(ties[0]))
    return AeadKey.from_int(bits_to_int((2 * ones > votes).astype(np.uint8)))


def derive_key(puf: ArbiterPuf, base_challenge: int, votes: int = DEFAULT_VOTES) -> AeadKey:
    """Derive the 128-bit secret key SK by majority vote.

    Args:
        puf: Device PUF
        base_challenge: Enrolled (hardwired) challenge
        votes: Evaluations per key bit

    Returns:
        The secret key

    Raises:
        KeyInstability: If a key bit has as many 1-votes as 0-votes
    """
    return _key_from_votes(expansion_votes(puf, base_challenge, votes), votes)


######################
# Device and readout:
class PufDevice:
    """PUF as embedded in an untrusted chip, with the one-time readout fuse.

    Args:
        device_id: Identifier registered with the enrollment authority
        puf: The chip's arbiter PUF
    """

    def __init__(self, device_id: str, puf: ArbiterPuf) -> None:
        self._logger = getLogger(__name__)
        self.device_id = device_id
        self.puf = puf
        self.readout_enabled: bool = True
        """bool: Cleared permanently by the first readout."""
        self.hardwired_challenge: Optional[int] = None
        """Optional[int]: Base challenge fixed at enrollment."""

    def hardwire(self, challenge: int) -> None:
        self.hardwired_challenge = challenge

    def derive_key(self, votes: int = DEFAULT_VOTES) -> AeadKey:
        if self.hardwired_challenge is None:
            raise ConfigError(f"Device {self.device_id} has no hardwired challenge")
        return derive_key(self.puf, self.hardwired_challenge, votes)


def _readout_key(shared: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=16, salt=None, info=READOUT_INFO).derive(shared)


def secure_readout(device: PufDevice, ea_public_key: X25519PublicKey, challenges: List[int],
                   votes: int = DEFAULT_VOTES) -> bytes:
    """Read PUF responses out once, encrypted to the enrollment authority.

    For every candidate challenge the plaintext carries the challenge
    (8 bytes little-endian) and the 1-vote count of each of its 128
    expansion challenges (one byte each).

    Args:
        device: Device whose fuse is still intact
        ea_public_key: Enrollment authority X25519 public key
        challenges: Candidate base challenges
        votes: Evaluations per expansion challenge

    Returns:
        Ephemeral public key (32 bytes) followed by the AES-GCM ciphertext

    Raises:
        ReadoutDisabled: If the readout already happened
    """
    if not device.readout_enabled:
        raise ReadoutDisabled(f"PUF readout of device {device.device_id} is disabled")
    device.readout_enabled = False
    plaintext = b"".join(
        challenge.to_bytes(8, "little") + bytes(expansion_votes(device.puf, challenge, votes).astype(np.uint8).tolist())
        for challenge in challenges)
    ephemeral = X25519PrivateKey.generate()
    key = _readout_key(ephemeral.exchange(ea_public_key))
    ciphertext = AESGCM(key).encrypt(bytes(12), plaintext, device.device_id.encode())
    ephemeral_raw = ephemeral.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    _log_message(logger, INFO, f"PUF readout of device {device.device_id} done, fuse blown")
    return ephemeral_raw + ciphertext


def open_readout(private_key: X25519PrivateKey, device_id: str, blob: bytes) -> Dict[int, np.ndarray]:
    """Decrypt a readout; the AES-GCM tag serves as the embedded checksum.

    Returns:
        Vote counts per candidate challenge

    Raises:
        ReadoutDecryptError: If the blob was not encrypted to this key or was altered
    """
    if len(blob) < 32 + 16:
        raise ReadoutDecryptError("Readout blob is truncated")
    peer = X25519PublicKey.from_public_bytes(blob[:32])
    key = _readout_key(private_key.exchange(peer))
    try:
        plaintext = AESGCM(key).decrypt(bytes(12), blob[32:], device_id.encode())
    except InvalidTag:
        raise ReadoutDecryptError(f"Readout of device {device_id} failed its checksum") from None
    entry = 8 + KEY_BITS
    return {int.from_bytes(plaintext[i:i + 8], "little"): np.frombuffer(plaintext[i + 8:i + entry], dtype=np.uint8)
            for i in range(0, len(plaintext), entry)}


######################
# Enrollment:
@dataclass
class EnrollmentRecord:
    """What the trusted side keeps about one enrolled device.

    Attributes:
        device_id: Device identifier
        challenge: Hardwired base challenge
        sk: Derived secret key
        ea_public_key: Hex of the EA public key used for the readout
        encrypted_at_rest: Whether ``sk`` is stored encrypted
    """
    device_id: str
    challenge: int
    sk: AeadKey = field(repr=False)
    ea_public_key: str = ""
    encrypted_at_rest: bool = False

    def to_json(self) -> Dict[str, Any]:
        return {
            "device_id": self.device_id,
            "challenge": f"{self.challenge:016x}",
            "sk": self.sk.to_hex(),
            "ea_public_key": self.ea_public_key,
            "encrypted_at_rest": self.encrypted_at_rest,
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "EnrollmentRecord":
        return cls(device_id=data["device_id"], challenge=int(data["challenge"], 16),
                   sk=AeadKey(bytes.fromhex(data["sk"])), ea_public_key=data.get("ea_public_key", ""),
                   encrypted_at_rest=bool(data.get("encrypted_at_rest", False)))


def save_records(records: List[EnrollmentRecord], path: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump([r.to_json() for r in records], handle, indent=2, sort_keys=True)
    os.replace(tmp, path)


def load_records(path: str) -> List[EnrollmentRecord]:
    with open(path, encoding="utf-8") as handle:
        return [EnrollmentRecord.from_json(item) for item in json.load(handle)]


class EnrollmentAuthority:
    """Holds the readout private key and enrolls devices.

    Args:
        private_key: X25519 key (generated when omitted)
        seed: Seed for drawing candidate challenges
    """

    def __init__(self, private_key: Optional[X25519PrivateKey] = None, seed: Optional[int] = None) -> None:
        self._logger = getLogger(__name__)
        self._private_key = private_key or X25519PrivateKey.generate()
        self._rng = np.random.default_rng(seed)

    @property
    def public_key(self) -> X25519PublicKey:
        return self._private_key.public_key()

    @property
    def public_key_hex(self) -> str:
        return self.public_key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw).hex()

    def candidate_challenges(self, count: int = DEFAULT_CANDIDATES) -> List[int]:
        return [int(c) for c in random_challenges(self._rng, count)]

    def open_readout(self, device_id: str, blob: bytes) -> Dict[int, np.ndarray]:
        return open_readout(self._private_key, device_id, blob)

    def enroll(self, device: PufDevice, candidates: int = DEFAULT_CANDIDATES,
               votes: int = DEFAULT_VOTES) -> EnrollmentRecord:
        """Read the device out once, pick the most stable challenge and record SK.

        Raises:
            ReadoutDisabled: If the device was already enrolled
        """
        message = f"Start to enroll device {device.device_id}"
        _log_message(self._logger, DEBUG, message)
        blob = secure_readout(device, self.public_key, self.candidate_challenges(candidates), votes)
        readout = self.open_readout(device.device_id, blob)
        # Margin of a key bit = distance of its vote count from a tie; the weakest bit decides.
        scored = [(int(np.abs(2 * v.astype(np.int32) - votes).min()), challenge) for challenge, v in readout.items()]
        _, challenge = max(scored)
        sk = _key_from_votes(readout[challenge].astype(np.int32), votes)
        device.hardwire(challenge)
        record = EnrollmentRecord(device.device_id, challenge, sk, self.public_key_hex)
        _log_message(self._logger, DEBUG, f"Finish enrollment of device {device.device_id}", sk.to_hex())
        return record


######################
# Health check:
class CipherPseudoPuf:
    """Keyed block cipher masquerading as a PUF: low bit of AES-128(key, challenge)."""

    def __init__(self, key: Optional[bytes] = None) -> None:
        self._key = key or os.urandom(16)

    def eval_many(self, challenges: Union[np.ndarray, List[int]]) -> np.ndarray:
        blocks = b"".join(int(c).to_bytes(16, "little") for c in challenges)
        encrypted = Cipher(algorithms.AES(self._key), modes.ECB()).encryptor().update(blocks)
        return (np.frombuffer(encrypted, dtype=np.uint8)[::16] & 1).astype(np.uint8)

    def __call__(self, challenge: int) -> int:
        return int(self.eval_many([challenge])[0])


class ConstantOracle:
    def __init__(self, value: int = 0) -> None:
        self.value = value

    def eval_many(self, challenges: Union[np.ndarray, List[int]]) -> np.ndarray:
        return np.full(len(challenges), self.value, dtype=np.uint8)

    def __call__(self, challenge: int) -> int:
        return self.value


@dataclass(frozen=True)
class HealthReport:
    """Outcome of a pseudo-PUF screening.

    Attributes:
        verdict: ``GENUINE`` or ``SUSPECTED``
        agreement: Response agreement rate over one-bit-flip pairs
        threshold: Minimal ``|agreement - 0.5|`` accepted as genuine
        ones_rate: Fraction of 1-responses
        complement_agreement: Agreement rate over complementary challenge pairs
        pairs: Number of pairs queried
        degenerate: Whether the response bias alone disqualified the oracle
    """
    verdict: str
    agreement: float
    threshold: float
    ones_rate: float
    complement_agreement: float
    pairs: int
    degenerate: bool


Oracle = Union[Callable[[int], int], ArbiterPuf, CipherPseudoPuf, ConstantOracle]


def _query(oracle: Oracle, challenges: np.ndarray) -> np.ndarray:
    if hasattr(oracle, "eval_many"):
        return np.asarray(oracle.eval_many(challenges), dtype=np.uint8)
    return np.fromiter((oracle(int(c)) for c in challenges), dtype=np.uint8, count=len(challenges))


def puf_health_check(oracle: Oracle, pairs: int = 10_000, flip_positions: int = 8, sigmas: float = 5.0,
                     max_bias: float = 0.4, seed: Optional[int] = None) -> HealthReport:
    """Screen a challenge-response oracle for pseudo-PUF behaviour.

    An arbiter PUF answers challenges that differ in one low-order bit alike
    far more often than half the time. A keyed cipher does not. The bit to
    flip is drawn from the lowest ``flip_positions`` positions.

    Args:
        oracle: Callable challenge -> bit, or an object with ``eval_many``
        pairs: Number of one-bit-flip pairs (and complement pairs)
        flip_positions: Flipped bit drawn uniformly from [0, flip_positions)
        sigmas: Genuine when ``|agreement - 0.5|`` exceeds this many binomial deviations
        max_bias: Oracles whose 1-rate is further than this from 0.5 are flagged
        seed: Seed for challenge selection

    Returns:
        HealthReport with verdict and statistics
    """
    rng = np.random.default_rng(seed)
    base = random_challenges(rng, pairs)
    flips = np.left_shift(np.uint64(1), rng.integers(0, flip_positions, size=pairs).astype(np.uint64))
    complement = np.uint64(2 ** 64 - 1)
    r_base = _query(oracle, base)
    r_flip = _query(oracle, base ^ flips)
    r_comp = _query(oracle, base ^ complement)
    agreement = float(np.mean(r_base == r_flip))
    ones_rate = float(np.mean(r_base))
    threshold = sigmas * 0.5 / np.sqrt(pairs)
    degenerate = abs(ones_rate - 0.5) > max_bias
    verdict = GENUINE if abs(agreement - 0.5) > threshold and not degenerate else SUSPECTED
    report = HealthReport(verdict, agreement, float(threshold), ones_rate,
                          float(np.mean(r_base == r_comp)), pairs, degenerate)
    _log_event(logger, INFO if verdict == GENUINE else WARNING, "puf_health", verdict=verdict,
               agreement=round(agreement, 4), ones_rate=round(ones_rate, 4))
    return report
