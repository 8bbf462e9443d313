"""Authenticated encryption with associated data (AEAD).

Two instantiations sit behind one interface:
- ``acorn128``: ACORN-128 (v3), implemented here bit-serially. This is the
  lightweight cipher of the COMA2 profile.
- ``aes-gcm``: AES-128-GCM from the ``cryptography`` package with a 128-bit
  nonce. This is the cipher of the COMA1 profile.

``AeadSession`` wraps either one with the public message number (npub)
discipline used on the wire: npub = 64-bit session id followed by a 64-bit
message counter, both little-endian. A session refuses to seal twice under
one npub and refuses to open an npub it has already accepted.

Example:
    ```python
    from coma_bench.cipher import AeadKey, AeadSession, aead_encrypt, aead_decrypt

    key = AeadKey.random()
    sealed = aead_encrypt(key, bytes(16), b"header", b"payload")
    assert aead_decrypt(key, bytes(16), b"header", sealed.ct, sealed.tag) == b"payload"

    sender = AeadSession(key, session_id=7)
    receiver = AeadSession(key, session_id=7)
    npub, sealed = sender.seal(b"ad", b"message")
    assert receiver.open(npub, b"ad", sealed) == b"message"
    ```
"""
import hmac
import os
from dataclasses import dataclass
from logging import getLogger, DEBUG, WARNING
from typing import Dict, Optional, Protocol, Tuple

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ._logging import _log_message
from .exceptions import AuthFailure, ConfigError, NonceReuse

logger = getLogger(__name__)

KEY_BYTES = 16
NPUB_BYTES = 16
TAG_BYTES = 16


@dataclass(frozen=True)
class AeadKey:
    """128-bit secret key (SK).

    Attributes:
        secret: 16 key bytes
    """
    secret: bytes

    def __post_init__(self) -> None:
        if len(self.secret) != KEY_BYTES:
            raise ConfigError(f"AEAD key must be {KEY_BYTES} bytes, got {len(self.secret)}")

    def __repr__(self) -> str:
        return "AeadKey(<hidden>)"

    @classmethod
    def random(cls) -> "AeadKey":
        return cls(os.urandom(KEY_BYTES))

    @classmethod
    def from_int(cls, value: int) -> "AeadKey":
        """Key whose bit i is bit i of ``value`` (LSB-first, little-endian bytes)."""
        return cls(value.to_bytes(KEY_BYTES, "little"))

    def to_hex(self) -> str:
        return self.secret.hex()


@dataclass(frozen=True)
class Ciphertext:
    """AEAD output.

    Attributes:
        ct: Encrypted message, same length as the plaintext
        tag: 128-bit authentication tag
    """
    ct: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.ct + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        if len(data) < TAG_BYTES:
            raise AuthFailure("Sealed payload shorter than an authentication tag")
        return cls(data[:-TAG_BYTES], data[-TAG_BYTES:])


class Aead(Protocol):
    """Interface shared by the AEAD instantiations."""
    name: str

    def encrypt(self, key: AeadKey, npub: bytes, ad: bytes, msg: bytes) -> Ciphertext:
        ...

    def decrypt(self, key: AeadKey, npub: bytes, ad: bytes, ct: bytes, tag: bytes) -> bytes:
        ...


def _check_npub(npub: bytes) -> None:
    if len(npub) != NPUB_BYTES:
        raise ConfigError(f"Public message number must be {NPUB_BYTES} bytes, got {len(npub)}")


######################
# ACORN-128:
_STATE_BITS = 293
_TOP = _STATE_BITS - 1


def _bits_lsb_first(data: bytes):
    for byte in data:
        for i in range(8):
            yield (byte >> i) & 1


def _pack_lsb_first(bits: list[int]) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, bit in enumerate(bits):
        out[i >> 3] |= bit << (i & 7)
    return bytes(out)


class _AcornState:
    """ACORN-128 state held as an integer, bit i is state bit S_i."""

    def __init__(self) -> None:
        self.s = 0

    def _bit(self, i: int) -> int:
        return (self.s >> i) & 1

    def step(self, m: int, ca: int, cb: int) -> int:
        """Run one state update with input bit ``m`` and return the keystream bit."""
        ks, f = self._keystream_and_feedback(ca, cb)
        self.s = (self.s >> 1) | ((f ^ m) << _TOP)
        return ks

    def step_ciphertext(self, c: int) -> int:
        """Run one message-phase update from a ciphertext bit and return the plaintext bit."""
        ks, f = self._keystream_and_feedback(1, 0)
        m = c ^ ks
        self.s = (self.s >> 1) | ((f ^ m) << _TOP)
        return m

    def _keystream_and_feedback(self, ca: int, cb: int) -> Tuple[int, int]:
        b = self._bit
        s = self.s
        s ^= (b(235) ^ b(230)) << 289
        s ^= (b(196) ^ b(193)) << 230
        s ^= (b(160) ^ b(154)) << 193
        s ^= (b(111) ^ b(107)) << 154
        s ^= (b(66) ^ b(61)) << 107
        s ^= (b(23) ^ b(0)) << 61
        self.s = s
        s235, s61, s193 = b(235), b(61), b(193)
        s230, s111, s66 = b(230), b(111), b(66)
        ks = b(12) ^ b(154) ^ ((s235 & s61) ^ (s235 & s193) ^ (s61 & s193)) ^ ((s230 & s111) ^ ((s230 ^ 1) & s66))
        s244, s23, s160 = b(244), b(23), b(160)
        f = (b(0) ^ b(107) ^ 1 ^ ((s244 & s23) ^ (s244 & s160) ^ (s23 & s160))
             ^ (ca & b(196)) ^ (cb & ks))
        return ks, f

    def pad(self, cb: int) -> None:
        """Absorb the 256-bit separator after the associated data or the message."""
        for i in range(256):
            self.step(1 if i == 0 else 0, 1 if i < 128 else 0, cb)


class Acorn128:
    """ACORN-128 authenticated cipher (128-bit key, 128-bit npub, 128-bit tag)."""
    name = "acorn128"

    @staticmethod
    def _initialize(key: AeadKey, npub: bytes) -> _AcornState:
        state = _AcornState()
        key_bits = list(_bits_lsb_first(key.secret))
        for bit in key_bits:
            state.step(bit, 1, 1)
        for bit in _bits_lsb_first(npub):
            state.step(bit, 1, 1)
        for i in range(1536):
            bit = key_bits[i % 128]
            state.step(bit ^ 1 if i == 0 else bit, 1, 1)
        return state

    @staticmethod
    def _absorb_ad(state: _AcornState, ad: bytes) -> None:
        for bit in _bits_lsb_first(ad):
            state.step(bit, 1, 1)
        state.pad(1)

    @staticmethod
    def _finalize(state: _AcornState) -> bytes:
        tag_bits = [state.step(0, 1, 1) for _ in range(768)][-128:]
        return _pack_lsb_first(tag_bits)

    def encrypt(self, key: AeadKey, npub: bytes, ad: bytes, msg: bytes) -> Ciphertext:
        _check_npub(npub)
        state = self._initialize(key, npub)
        self._absorb_ad(state, ad)
        ct_bits = []
        for bit in _bits_lsb_first(msg):
            ct_bits.append(bit ^ state.step(bit, 1, 0))
        state.pad(0)
        return Ciphertext(_pack_lsb_first(ct_bits), self._finalize(state))

    def decrypt(self, key: AeadKey, npub: bytes, ad: bytes, ct: bytes, tag: bytes) -> bytes:
        _check_npub(npub)
        state = self._initialize(key, npub)
        self._absorb_ad(state, ad)
        pt_bits = [state.step_ciphertext(bit) for bit in _bits_lsb_first(ct)]
        state.pad(0)
        expected = self._finalize(state)
        if not hmac.compare_digest(expected, bytes(tag)):
            raise AuthFailure("ACORN-128 tag verification failed")
        return _pack_lsb_first(pt_bits)


######################
# AES-GCM:
class AesGcm:
    """AES-128-GCM from ``cryptography`` with a 128-bit nonce."""
    name = "aes-gcm"

    def encrypt(self, key: AeadKey, npub: bytes, ad: bytes, msg: bytes) -> Ciphertext:
        _check_npub(npub)
        sealed = AESGCM(key.secret).encrypt(npub, msg, ad)
        return Ciphertext.from_bytes(sealed)

    def decrypt(self, key: AeadKey, npub: bytes, ad: bytes, ct: bytes, tag: bytes) -> bytes:
        _check_npub(npub)
        try:
            return AESGCM(key.secret).decrypt(npub, bytes(ct) + bytes(tag), ad)
        except InvalidTag:
            raise AuthFailure("AES-GCM tag verification failed") from None


AEAD_REGISTRY: Dict[str, Aead] = {
    Acorn128.name: Acorn128(),
    AesGcm.name: AesGcm(),
}
"""Dict[str, Aead]: AEAD instantiations by name."""

DEFAULT_AEAD = Acorn128.name


def get_aead(name: str = DEFAULT_AEAD) -> Aead:
    """Look up an AEAD instantiation by name.

    Raises:
        ConfigError: If the name is unknown
    """
    try:
        return AEAD_REGISTRY[name]
    except KeyError:
        raise ConfigError(f"Unknown AEAD {name!r}; expected one of {sorted(AEAD_REGISTRY)}") from None


def aead_encrypt(key: AeadKey, npub: bytes, ad: bytes, msg: bytes, algorithm: str = DEFAULT_AEAD) -> Ciphertext:
    """Encrypt and authenticate a message.

    Args:
        key: 128-bit secret key
        npub: 128-bit public message number
        ad: Associated data (authenticated, not encrypted)
        msg: Message to encrypt
        algorithm: "acorn128" or "aes-gcm"

    Returns:
        Ciphertext with ``len(ct) == len(msg)`` and a 128-bit tag

    Raises:
        ConfigError: On wrong npub width or unknown algorithm
    """
    return get_aead(algorithm).encrypt(key, npub, ad, msg)


def aead_decrypt(key: AeadKey, npub: bytes, ad: bytes, ct: bytes, tag: bytes, algorithm: str = DEFAULT_AEAD) -> bytes:
    """Verify and decrypt a message. No plaintext is released when the tag fails.

    Raises:
        AuthFailure: If any of key, npub, ad, ct or tag was altered
    """
    return get_aead(algorithm).decrypt(key, npub, ad, ct, tag)


######################
# Sessions:
def make_npub(session_id: int, counter: int) -> bytes:
    return session_id.to_bytes(8, "little") + counter.to_bytes(8, "little")


def split_npub(npub: bytes) -> Tuple[int, int]:
    _check_npub(npub)
    return int.from_bytes(npub[:8], "little"), int.from_bytes(npub[8:], "little")


def reply_session_id(session_id: int) -> int:
    """Session id for the opposite direction of a session (top bit flipped)."""
    return session_id ^ (1 << 63)


class AeadSession:
    """AEAD bound to one key and one session id, with npub bookkeeping.

    Args:
        key: Session secret key
        session_id: 64-bit id sealed into every outgoing npub
        algorithm: AEAD name
        peer_session_id: Id expected in incoming npubs (defaults to ``session_id``)
    """

    def __init__(self, key: AeadKey, session_id: int, algorithm: str = DEFAULT_AEAD,
                 peer_session_id: Optional[int] = None) -> None:
        self._logger = getLogger(__name__)
        self._key = key
        self._aead = get_aead(algorithm)
        self.session_id: int = session_id
        """64-bit session id, the upper half of every npub."""
        self.peer_session_id: int = session_id if peer_session_id is None else peer_session_id
        self.counter: int = 0
        """Next message counter to seal with."""
        self._sealed: set[bytes] = set()
        self._opened: set[bytes] = set()

    @property
    def algorithm(self) -> str:
        return self._aead.name

    def seal(self, ad: bytes, msg: bytes, npub: Optional[bytes] = None) -> Tuple[bytes, Ciphertext]:
        """Encrypt under the next npub (or an explicit one).

        Raises:
            NonceReuse: If the npub was already used for sealing in this session
        """
        if npub is None:
            npub = make_npub(self.session_id, self.counter)
            self.counter += 1
        if npub in self._sealed:
            _log_message(self._logger, WARNING, f"Refusing npub reuse in session {self.session_id}")
            raise NonceReuse(f"npub {npub.hex()} already used under this key", npub=npub)
        self._sealed.add(npub)
        return npub, self._aead.encrypt(self._key, npub, ad, msg)

    def open(self, npub: bytes, ad: bytes, sealed: Ciphertext) -> bytes:
        """Verify and decrypt a frame sealed by the peer session.

        Raises:
            AuthFailure: If the npub belongs to another session or the tag fails
            NonceReuse: If this npub was already accepted (replay)
        """
        session_id, _ = split_npub(npub)
        if session_id != self.peer_session_id:
            raise AuthFailure(f"npub belongs to session {session_id}, expected {self.peer_session_id}")
        if npub in self._opened:
            raise NonceReuse(f"Replayed npub {npub.hex()}", npub=npub)
        msg = self._aead.decrypt(self._key, npub, ad, sealed.ct, sealed.tag)
        self._opened.add(npub)
        _log_message(self._logger, DEBUG, f"Opened {len(msg)} bytes in session {self.session_id}")
        return msg
