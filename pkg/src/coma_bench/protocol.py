"""Trusted-side and untrusted-side state machines.

The trusted chip holds the obfuscation key (OK) and the PUF-derived secret
key (SK) in its secure store. The untrusted chip holds neither: it
re-derives SK from its PUF when an activation starts and keeps SK and OK in
volatile registers only.

Activation:
    1. The trusted chip reseeds its PRNG from the health-checked TRNG and
       draws a session id and a fresh TRN.
    2. The TRN travels in an AEAD-sealed TRN_UPDATE frame.
    3. OK is cut into n-bit segments (POKs). Each POK passes the CSN, giving
       a DPOK that travels in a sealed DPOK frame. The DPOK sequence is the
       dynamic activation license (DAL).
    4. The untrusted chip stages every DPOK, and only when all segments
       verified it applies the RCSN, assembles OK and loads the key register
       (atomic commit). The circuit self-check decides success.

Data channels:
- DCC: message blocks pass the CSN, then the AEAD. The TRN is replaced by a
  sealed TRN_UPDATE every U blocks.
- LCC: a 16-byte seed is sealed once (``lcc_init``). Both PRNGs then produce
  the same TRN stream; blocks pass the CSN only, the TRN rotates by one bit
  per block and is refilled every U blocks.

All frames pass a ``Channel`` that encodes them with the wire codec, keeps
a transcript and can tamper with or drop frames.

Example:
    ```python
    from coma_bench import protocol

    trusted, untrusted, _ = protocol.build_system(n=64, profile="coma2", seed=1)
    result = protocol.activate(trusted, untrusted)
    assert result.success

    frames = protocol.dcc_send(trusted, b"hello")
    assert protocol.dcc_recv(untrusted, frames) == b"hello"

    protocol.lcc_init(trusted, untrusted)
    frames = protocol.lcc_send(trusted, bytes(1024))
    assert protocol.lcc_recv(untrusted, frames) == bytes(1024)
    ```
"""
import json
from dataclasses import dataclass, field
from logging import getLogger, DEBUG, INFO, WARNING, ERROR
from typing import Any, Dict, List, Optional, Tuple

from . import costmodel
from ._frame_utils import EPOCH_MODULUS, Frame, FrameType, decode_frame, encode_frame, open_frame, seal_frame, \
    unpack_sealed
from ._logging import _log_event, _log_message
from ._utils import ceil_div
from .cipher import AeadKey, AeadSession, reply_session_id
from .circuit import ObfuscatedCircuit
from .costmodel import CostParams
from .exceptions import AuthFailure, ConfigError, Desynchronization, EpochMismatch, UnlockFailure
from .puf import ArbiterPuf, EnrollmentAuthority, EnrollmentRecord, PufDevice
from .rng import EntropySource, Prng, RandomUnit, SEED_BYTES
from .switchnet import DEFAULT_SHIFT, NetworkKind, NetworkTopology, Trn, build_network, csn_forward, \
    rcsn_backward, shift_trn

logger = getLogger(__name__)

TRUSTED_TO_UNTRUSTED = "t2u"
UNTRUSTED_TO_TRUSTED = "u2t"

_ACTIVATION_TRN = b"\x00"
_REFRESH_TRN = b"\x01"


######################
# Channel:
class Channel:
    """In-process frame transport with a transcript and fault injection.

    Every frame is encoded to wire bytes, optionally altered, and decoded
    again, so in-process runs and network runs exercise the same codec.
    Faults are keyed by the frame's position in the transcript.
    """

    def __init__(self) -> None:
        self._logger = getLogger(__name__)
        self.records: List[Dict[str, Any]] = []
        self._tamper: Dict[int, int] = {}
        self._drop: set[int] = set()

    def tamper(self, index: int, bit: int = 0) -> None:
        """Flip payload bit ``bit`` (counted from the end of the payload) of frame ``index``."""
        self._tamper[index] = bit

    def drop(self, index: int) -> None:
        self._drop.add(index)

    def carry(self, frame: Frame, direction: str = TRUSTED_TO_UNTRUSTED) -> Optional[Frame]:
        """Transport one frame; return what arrives, or None if it was dropped."""
        index = len(self.records)
        wire = bytearray(encode_frame(frame))
        if index in self._tamper and frame.payload:
            bit = self._tamper[index] % (8 * len(frame.payload))
            wire[len(wire) - 1 - bit // 8] ^= 1 << (bit % 8)
            _log_message(self._logger, WARNING, f"Tampered with frame {index} ({frame.type.name})")
        dropped = index in self._drop
        self.records.append({"index": index, "direction": direction, "type": frame.type.name,
                             "epoch": frame.epoch, "wire": bytes(wire).hex(), "dropped": dropped})
        if dropped:
            _log_message(self._logger, WARNING, f"Dropped frame {index} ({frame.type.name})")
            return None
        return decode_frame(bytes(wire))

    def carry_all(self, frames: List[Frame], direction: str = TRUSTED_TO_UNTRUSTED) -> List[Frame]:
        delivered = (self.carry(frame, direction) for frame in frames)
        return [frame for frame in delivered if frame is not None]

    def dumps(self) -> str:
        """Transcript as JSON lines."""
        return "".join(json.dumps(record, sort_keys=True) + "\n" for record in self.records)

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.dumps())

    @staticmethod
    def load(path: str) -> List[Frame]:
        """Frames of a JSON-lines transcript, in order."""
        with open(path, encoding="utf-8") as handle:
            return [decode_frame(bytes.fromhex(json.loads(line)["wire"])) for line in handle if line.strip()]


######################
# Endpoint state:
@dataclass
class LccState:
    """Shared-schedule state of one LCC endpoint."""
    prng: Prng
    trn: Trn
    epoch: int = 0
    blocks_in_epoch: int = 0
    counter: int = 0


@dataclass
class ActivationArtifacts:
    """What an activation put on the wire.

    Attributes:
        epoch: TRN epoch of the activation
        session_id: Session id of the activation
        dal: DPOK sequence (dynamic activation license)
        ok_bits: Length of OK before padding
    """
    epoch: int
    session_id: int
    dal: List[int]
    ok_bits: int

    def to_json(self) -> Dict[str, Any]:
        return {"epoch": self.epoch, "session_id": self.session_id, "ok_bits": self.ok_bits,
                "dal": [f"{d:x}" for d in self.dal]}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "ActivationArtifacts":
        return cls(data["epoch"], data["session_id"], [int(d, 16) for d in data["dal"]], data["ok_bits"])


@dataclass
class UnlockResult:
    """Outcome of an activation.

    Attributes:
        success: Whether the circuit passed its self-check
        cycles_spent: Simulated cycles (TRN generation plus every sealed frame)
        artifacts: Activation artifacts
    """
    success: bool
    cycles_spent: int
    artifacts: Optional[ActivationArtifacts] = None


class _Endpoint:
    """State shared by both chips: CSN topology, TRN epoch, AEAD session, LCC schedule."""

    def __init__(self, topology: NetworkTopology, params: CostParams, name: str) -> None:
        self._logger = getLogger(__name__)
        self.name = name
        self.topology = topology
        if params.n != topology.n:
            params = params.with_overrides(n=topology.n)
        if not 1 <= params.u < topology.n:
            raise ConfigError(f"TRN update period U={params.u} must satisfy 1 <= U < n={topology.n}")
        self.params = params
        self.trn: Optional[Trn] = None
        self.epoch: int = 0
        self.blocks_in_epoch: int = 0
        self.session: Optional[AeadSession] = None
        self.session_id: Optional[int] = None
        self.lcc: Optional[LccState] = None
        self.cycles: int = 0
        """int: Simulated cycles spent by this endpoint."""
        self._dcc_messages = 0

    @property
    def block_bytes(self) -> int:
        return self.topology.n // 8

    def set_update_period(self, u: int) -> None:
        """Set U, the number of blocks per TRN.

        Raises:
            ConfigError: If U is not in [1, n)
        """
        if not 1 <= u < self.topology.n:
            raise ConfigError(f"TRN update period U={u} must satisfy 1 <= U < n={self.topology.n}")
        self.params = self.params.with_overrides(u=u)
        prng_cycles = costmodel.c_prng(self.params)
        if u < prng_cycles:
            _log_message(self._logger, WARNING, f"U={u} is below the PRNG refill time P={prng_cycles}; "
                                                f"the data path will stall between epochs")

    def _install_trn(self, trn: Trn, epoch: int) -> None:
        self.trn = trn
        self.epoch = epoch % EPOCH_MODULUS
        self.blocks_in_epoch = 0

    def _require_session(self) -> AeadSession:
        if self.session is None:
            raise AuthFailure(f"{self.name} has no session to verify frames with")
        return self.session

    def _seal(self, frame_type: FrameType, context: bytes, msg: bytes) -> Frame:
        self.cycles += costmodel.t_comm_dcc(self.params, len(msg))
        return seal_frame(self.session, frame_type, self.epoch, context, msg)

    def _start_lcc(self, seed: bytes) -> None:
        prng = Prng(self.params.prng)
        prng.seed(seed)
        self.lcc = LccState(prng, prng.next_trn(self.topology.config_bits))
        self.cycles += costmodel.c_prng(self.params)


class TrustedChip(_Endpoint):
    """Trusted chip with secure store, TRNG-seeded PRNG and the CSN.

    Args:
        topology: CSN topology shared with the untrusted chip
        params: Cost profile (also selects the AEAD and PRNG)
        random_unit: Entropy source, health tests and PRNG
        name: Label for logs
    """

    def __init__(self, topology: NetworkTopology, params: CostParams = costmodel.COMA2,
                 random_unit: Optional[RandomUnit] = None, name: str = "trusted") -> None:
        super().__init__(topology, params, name)
        self.random = random_unit or RandomUnit(profile=self.params.prng)
        self.record: Optional[EnrollmentRecord] = None
        self._sk: Optional[AeadKey] = None
        self._ok: Optional[int] = None
        self._ok_bits: int = 0
        self.last_artifacts: Optional[ActivationArtifacts] = None

    def provision(self, record: EnrollmentRecord, ok: int, ok_bits: int) -> None:
        """Store the enrollment record and OK in the secure store."""
        self.record = record
        self._sk = record.sk
        self._ok = ok
        self._ok_bits = ok_bits
        _log_message(self._logger, DEBUG, f"Provisioned {self.name} for device {record.device_id}", f"OK={ok:x}")

    @property
    def segments(self) -> int:
        return ceil_div(self._ok_bits, self.topology.n)

    def poks(self) -> List[int]:
        """OK cut into n-bit segments; the last one is zero-padded."""
        n = self.topology.n
        return [(self._ok >> (i * n)) & ((1 << n) - 1) for i in range(self.segments)]

    def _new_trn(self) -> Trn:
        trn = self.random.prng.next_trn(self.topology.config_bits)
        self.cycles += costmodel.c_prng(self.params)
        self._install_trn(trn, self.epoch + 1)
        return trn

    def start_session(self) -> int:
        """Reseed the PRNG and open a new AEAD session.

        Raises:
            ConfigError: If the chip was never provisioned
            HealthAlarm: If the entropy source fails a health test
        """
        if self._sk is None:
            raise ConfigError(f"{self.name} has no enrollment record")
        self.random.begin_activation()
        self.session_id = self.random.prng.next_bits(64) & ~(1 << 63)
        self.session = AeadSession(self._sk, self.session_id, self.params.aead,
                                   peer_session_id=reply_session_id(self.session_id))
        return self.session_id

    def activation_frames(self) -> Tuple[Frame, List[Frame]]:
        """Fresh TRN frame plus the DPOK frames of the DAL."""
        trn = self._new_trn()
        trn_frame = self._seal(FrameType.TRN_UPDATE, _ACTIVATION_TRN + self.session_id.to_bytes(8, "little"),
                               trn.to_bytes())
        _log_message(self._logger, DEBUG, f"Issued TRN for epoch {self.epoch}", trn.to_hex())
        dal = [csn_forward(self.topology, trn, pok) for pok in self.poks()]
        count = len(dal)
        frames = [self._seal(FrameType.DPOK, i.to_bytes(2, "little") + count.to_bytes(2, "little"),
                             dpok.to_bytes(self.block_bytes, "little"))
                  for i, dpok in enumerate(dal)]
        self.last_artifacts = ActivationArtifacts(self.epoch, self.session_id, dal, self._ok_bits)
        return trn_frame, frames


class UntrustedChip(_Endpoint):
    """Untrusted chip: PUF, RCSN, locked circuit, and nothing persistent.

    Args:
        device: PUF device with its hardwired challenge
        circuit: Locked circuit
        topology: CSN topology shared with the trusted chip
        params: Cost profile
        name: Label for logs
    """

    def __init__(self, device: PufDevice, circuit: ObfuscatedCircuit, topology: NetworkTopology,
                 params: CostParams = costmodel.COMA2, name: str = "untrusted") -> None:
        super().__init__(topology, params, name)
        self.device = device
        self.circuit = circuit
        self._staged: Dict[int, int] = {}
        self._expected_segments: Optional[int] = None

    def reset(self) -> None:
        """Power-down: every volatile register is cleared."""
        self.session = None
        self.session_id = None
        self.trn = None
        self.lcc = None
        self._staged.clear()
        self._expected_segments = None
        self.circuit.clear()
        _log_message(self._logger, INFO, f"{self.name} reset, volatile keys cleared")

    def open_session(self, session_id: int) -> None:
        """Re-derive SK from the PUF and open the AEAD session ``session_id``."""
        sk = self.device.derive_key()
        self.session_id = session_id
        self.session = AeadSession(sk, reply_session_id(session_id), self.params.aead, peer_session_id=session_id)

    def receive_trn(self, frame: Frame) -> None:
        """Accept an activation TRN, re-deriving SK for the announced session.

        Raises:
            AuthFailure: If the frame does not verify
            FrameError: If the frame is malformed
        """
        context, _, _ = unpack_sealed(frame)
        announced = int.from_bytes(context[1:], "little") if len(context) == 9 else None
        if context[:1] == _ACTIVATION_TRN and announced is not None:
            if announced != self.session_id:
                self.open_session(announced)
            self._staged.clear()
            self._expected_segments = None
        _, payload = open_frame(self._require_session(), frame, FrameType.TRN_UPDATE)
        self._install_trn(Trn.from_bytes(payload, self.topology.config_bits), frame.epoch)

    def receive_dpok(self, frame: Frame) -> None:
        """Stage one DPOK. Nothing reaches the key register before ``commit``.

        Raises:
            AuthFailure: If the frame does not verify
            EpochMismatch: If the frame was produced under another TRN epoch
        """
        context, payload = open_frame(self._require_session(), frame, FrameType.DPOK, self.epoch)
        index = int.from_bytes(context[:2], "little")
        self._expected_segments = int.from_bytes(context[2:4], "little")
        self._staged[index] = int.from_bytes(payload, "little")

    def install_dal(self, dal: List[int]) -> None:
        """Stage a DAL directly at the RCSN input, bypassing the AEAD."""
        self._staged = dict(enumerate(dal))
        self._expected_segments = len(dal)

    def commit(self) -> None:
        """Assemble OK from the staged DPOKs, load it and run the self-check.

        Raises:
            UnlockFailure: If segments are missing or the circuit fails its self-check
        """
        expected = self._expected_segments
        staged, self._staged = self._staged, {}
        if expected is None or sorted(staged) != list(range(expected)):
            self.circuit.clear()
            raise UnlockFailure(f"Incomplete DAL: got segments {sorted(staged)}, expected {expected}")
        n = self.topology.n
        ok = 0
        for index in range(expected):
            ok |= rcsn_backward(self.topology, self.trn, staged[index]) << (index * n)
        self.circuit.load_key(ok)
        if not self.circuit.self_check():
            self.circuit.clear()
            raise UnlockFailure(f"{self.name} circuit failed its self-check")


######################
# Enrollment and activation:
def enroll(untrusted: UntrustedChip, authority: EnrollmentAuthority) -> EnrollmentRecord:
    """Enroll the untrusted chip's PUF.

    Raises:
        ReadoutDisabled: If the chip was already enrolled
    """
    return authority.enroll(untrusted.device)


def activate(trusted: TrustedChip, untrusted: UntrustedChip, channel: Optional[Channel] = None) -> UnlockResult:
    """Run one activation.

    Args:
        trusted: Provisioned trusted chip
        untrusted: Enrolled untrusted chip
        channel: Transport (a fresh in-process channel when omitted)

    Returns:
        UnlockResult with success and the simulated cycle count

    Raises:
        AuthFailure: If a frame was tampered with
        UnlockFailure: If the circuit fails its self-check or the DAL is incomplete
        HealthAlarm: If the entropy source fails during reseeding
    """
    channel = channel or Channel()
    message = f"Start to activate {untrusted.name}"
    _log_message(logger, DEBUG, message)
    start = trusted.cycles
    trusted.start_session()
    trn_frame, dpok_frames = trusted.activation_frames()
    delivered = channel.carry(trn_frame)
    if delivered is not None:
        untrusted.receive_trn(delivered)
    try:
        for frame in channel.carry_all(dpok_frames):
            untrusted.receive_dpok(frame)
        untrusted.commit()
    except Exception as e:
        untrusted.circuit.clear()
        _log_event(logger, ERROR, "activation", device=untrusted.device.device_id, success=False,
                   error=type(e).__name__)
        raise
    result = UnlockResult(True, trusted.cycles - start, trusted.last_artifacts)
    _log_event(logger, INFO, "activation", device=untrusted.device.device_id, success=True,
               cycles=result.cycles_spent, epoch=trusted.epoch)
    return result


def replay_dal(trusted: TrustedChip, untrusted: UntrustedChip, dal: List[int],
               channel: Optional[Channel] = None) -> None:
    """Apply a captured DAL after a fresh TRN was delivered.

    The untrusted chip receives a genuine new TRN, then the captured DPOKs
    are injected at its RCSN input in place of the new DAL.

    Raises:
        UnlockFailure: Always, unless the new TRN reproduces the old routing
    """
    channel = channel or Channel()
    trusted.start_session()
    trn_frame, _ = trusted.activation_frames()
    delivered = channel.carry(trn_frame)
    if delivered is not None:
        untrusted.receive_trn(delivered)
    untrusted.install_dal(dal)
    untrusted.commit()


######################
# DCC:
def dcc_send(sender: TrustedChip, msg: bytes, channel: Optional[Channel] = None) -> List[Frame]:
    """Send a message over the double-cipher channel.

    The message is zero-padded to n-bit blocks. Blocks under one TRN share a
    DATA_DCC frame; when U blocks were sent under a TRN a sealed TRN_UPDATE
    frame carries the next one.

    Args:
        sender: Activated trusted chip (the TRN source)
        msg: Message bytes
        channel: Transport; frames are returned as delivered

    Returns:
        Frames in wire order
    """
    if not isinstance(sender, TrustedChip):
        raise ConfigError("Only the trusted chip can issue TRNs for the double-cipher channel")
    if sender.session is None or sender.trn is None:
        raise ConfigError(f"{sender.name} is not activated")
    n_bytes = sender.block_bytes
    blocks = [int.from_bytes(msg[i:i + n_bytes].ljust(n_bytes, b"\x00"), "little")
              for i in range(0, len(msg), n_bytes)]
    msg_id = sender._dcc_messages
    sender._dcc_messages += 1
    frames = []
    index = 0
    while index < len(blocks):
        if sender.blocks_in_epoch >= sender.params.u:
            trn = sender._new_trn()
            frames.append(sender._seal(FrameType.TRN_UPDATE, _REFRESH_TRN + msg_id.to_bytes(4, "little")
                                       + index.to_bytes(4, "little"), trn.to_bytes()))
        take = min(sender.params.u - sender.blocks_in_epoch, len(blocks) - index)
        body = b"".join(csn_forward(sender.topology, sender.trn, x).to_bytes(n_bytes, "little")
                        for x in blocks[index:index + take])
        context = b"".join(v.to_bytes(4, "little") for v in (msg_id, index, len(blocks), len(msg)))
        frames.append(sender._seal(FrameType.DATA_DCC, context, body))
        sender.blocks_in_epoch += take
        index += take
    _log_message(sender._logger, DEBUG, f"DCC message {msg_id}: {len(blocks)} blocks in {len(frames)} frames")
    return channel.carry_all(frames) if channel is not None else frames


def dcc_recv(receiver: UntrustedChip, frames: List[Frame]) -> bytes:
    """Receive one DCC message.

    Raises:
        AuthFailure: If a frame does not verify
        EpochMismatch: If a frame belongs to another TRN epoch
        Desynchronization: If blocks arrive out of order or the message is incomplete
    """
    n_bytes = receiver.block_bytes
    blocks: List[int] = []
    total, length = None, 0
    for frame in frames:
        if frame.type == FrameType.TRN_UPDATE:
            expected = (receiver.epoch + 1) % EPOCH_MODULUS
            if frame.epoch != expected:
                raise EpochMismatch(expected, frame.epoch)
            _, payload = open_frame(receiver._require_session(), frame, FrameType.TRN_UPDATE)
            receiver._install_trn(Trn.from_bytes(payload, receiver.topology.config_bits), frame.epoch)
            continue
        context, body = open_frame(receiver._require_session(), frame, FrameType.DATA_DCC, receiver.epoch)
        _, index, total, length = (int.from_bytes(context[i:i + 4], "little") for i in range(0, 16, 4))
        if index != len(blocks):
            raise Desynchronization(f"DCC block {index} arrived, expected {len(blocks)}")
        for offset in range(0, len(body), n_bytes):
            y = int.from_bytes(body[offset:offset + n_bytes], "little")
            blocks.append(rcsn_backward(receiver.topology, receiver.trn, y))
        receiver.blocks_in_epoch += len(body) // n_bytes
    if total is None or len(blocks) != total:
        raise Desynchronization(f"DCC message incomplete: {len(blocks)} of {total} blocks")
    return b"".join(b.to_bytes(n_bytes, "little") for b in blocks)[:length]


######################
# LCC:
def lcc_seed_frame(trusted: TrustedChip) -> Frame:
    """Draw a 16-byte LCC seed from the TRNG, seed the trusted PRNG and seal the seed.

    Raises:
        HealthAlarm: If the entropy source fails a health test
    """
    if trusted.session is None:
        raise ConfigError("LCC initialization needs an activated session")
    seed = trusted.random.trng_bytes(SEED_BYTES)
    frame = trusted._seal(FrameType.SEED, b"", seed)
    trusted._start_lcc(seed)
    return frame


def lcc_accept_seed(untrusted: UntrustedChip, frame: Frame) -> None:
    """Open a SEED frame and seed the untrusted PRNG with it.

    Raises:
        AuthFailure: If the seed frame does not verify
    """
    _, seed = open_frame(untrusted._require_session(), frame, FrameType.SEED, untrusted.epoch)
    untrusted._start_lcc(seed)


def lcc_init(trusted: TrustedChip, untrusted: UntrustedChip, channel: Optional[Channel] = None) -> int:
    """Synchronize the LCC PRNGs of both chips.

    The trusted chip draws a 16-byte seed from its TRNG and seals it in a
    SEED frame. Both chips seed a dedicated PRNG and draw the first TRN.

    Returns:
        Initialization cycles, ``C_fix + 16 * C_byte + C_PRNG``

    Raises:
        AuthFailure: If the seed frame does not verify
        Desynchronization: If the seed frame was dropped
    """
    channel = channel or Channel()
    start = trusted.cycles
    frame = channel.carry(lcc_seed_frame(trusted))
    if frame is None:
        raise Desynchronization("SEED frame lost")
    lcc_accept_seed(untrusted, frame)
    cycles = trusted.cycles - start
    _log_message(logger, DEBUG, f"LCC initialized in {cycles} cycles")
    return cycles


def _lcc_state(endpoint: _Endpoint) -> LccState:
    if endpoint.lcc is None:
        raise ConfigError(f"{endpoint.name} has no LCC epoch; run lcc_init first")
    return endpoint.lcc


def _lcc_advance(endpoint: _Endpoint, state: LccState) -> Trn:
    """TRN for the next block, refilling from the PRNG every U blocks."""
    if state.blocks_in_epoch >= endpoint.params.u:
        state.trn = state.prng.next_trn(endpoint.topology.config_bits)
        state.epoch = (state.epoch + 1) % EPOCH_MODULUS
        state.blocks_in_epoch = 0
        endpoint.cycles += costmodel.stall_cycles(endpoint.params)
    return state.trn


def _lcc_consume(endpoint: _Endpoint, state: LccState) -> None:
    state.trn = shift_trn(state.trn, DEFAULT_SHIFT)
    state.blocks_in_epoch += 1
    state.counter += 1
    endpoint.cycles += costmodel.block_cycles(endpoint.params)


def lcc_send(endpoint: _Endpoint, data: bytes, channel: Optional[Channel] = None) -> List[Frame]:
    """Send data over the leaky-cipher channel, one DATA_LCC frame per block.

    Frame payload: block counter (4 B LE), message length (4 B LE), CSN output.
    """
    state = _lcc_state(endpoint)
    n_bytes = endpoint.block_bytes
    frames = []
    for offset in range(0, len(data), n_bytes):
        x = int.from_bytes(data[offset:offset + n_bytes].ljust(n_bytes, b"\x00"), "little")
        trn = _lcc_advance(endpoint, state)
        y = csn_forward(endpoint.topology, trn, x)
        payload = state.counter.to_bytes(4, "little") + len(data).to_bytes(4, "little") + \
            y.to_bytes(n_bytes, "little")
        frames.append(Frame(FrameType.DATA_LCC, state.epoch, payload))
        _lcc_consume(endpoint, state)
    return channel.carry_all(frames) if channel is not None else frames


def lcc_recv(endpoint: _Endpoint, frames: List[Frame]) -> bytes:
    """Receive one LCC message.

    Raises:
        Desynchronization: If a block counter does not match the local schedule
    """
    state = _lcc_state(endpoint)
    n_bytes = endpoint.block_bytes
    out = bytearray()
    length = 0
    for frame in frames:
        counter = int.from_bytes(frame.payload[:4], "little")
        if frame.type != FrameType.DATA_LCC or counter != state.counter:
            raise Desynchronization(f"LCC block counter {counter} arrived, expected {state.counter}")
        length = int.from_bytes(frame.payload[4:8], "little")
        trn = _lcc_advance(endpoint, state)
        if frame.epoch != state.epoch:
            raise EpochMismatch(state.epoch, frame.epoch)
        y = int.from_bytes(frame.payload[8:8 + n_bytes], "little")
        out += rcsn_backward(endpoint.topology, trn, y).to_bytes(n_bytes, "little")
        _lcc_consume(endpoint, state)
    return bytes(out[:length])


######################
# Assembly:
def build_system(n: int = 64, profile: str = "coma2", u: Optional[int] = None, seed: Optional[int] = None,
                 kind: NetworkKind | str = NetworkKind.LOG_NM,
                 noise: float = 0.05, source: Optional[EntropySource] = None, device_id: str = "device-0",
                 circuit_seed: Optional[int] = None, puf_seed: Optional[int] = None
                 ) -> Tuple[TrustedChip, UntrustedChip, EnrollmentAuthority]:
    """Manufacture, enroll and provision a trusted/untrusted pair.

    Args:
        n: CSN width
        kind: CSN topology ("nonblk" by default)
        profile: Cost profile name ("coma1" or "coma2")
        u: TRN update period (profile default, capped at n - 1, when omitted)
        seed: Master seed for every random choice (fresh entropy when None)
        noise: PUF jitter
        source: Entropy source model (unbiased by default)
        device_id: Untrusted chip identifier
        circuit_seed: Seed of the locked circuit (derived from ``seed`` when omitted)
        puf_seed: Seed of the PUF (derived from ``seed`` when omitted)

    Returns:
        (trusted, untrusted, enrollment authority)
    """
    params = costmodel.for_width(costmodel.get_profile(profile), n)
    topology = build_network(kind, n)

    def derive(k: int) -> Optional[int]:
        return None if seed is None else seed * 1000 + k

    circuit, ok = ObfuscatedCircuit.random(seed=circuit_seed if circuit_seed is not None else derive(1))
    device = PufDevice(device_id, ArbiterPuf(noise=noise, seed=puf_seed if puf_seed is not None else derive(2)))
    source = source or EntropySource(seed=derive(3))
    trusted = TrustedChip(topology, params, RandomUnit(source, profile=params.prng))
    untrusted = UntrustedChip(device, circuit, topology, params)
    if u is not None:
        trusted.set_update_period(u)
        untrusted.set_update_period(u)
    authority = EnrollmentAuthority(seed=derive(4))
    record = enroll(untrusted, authority)
    trusted.provision(record, ok, circuit.key_bits)
    return trusted, untrusted, authority
