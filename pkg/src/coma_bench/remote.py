"""Remote activation: authentication server (AS) and device client over framed TCP.

Session flow (device on the left, AS on the right)::

    HELLO(device id)                  ->
                                      <-  CHALLENGE(session id, aux challenges)
    AUTH(sealed PUF responses)        ->
                                      <-  TRN_UPDATE(sealed TRN)
                                      <-  DPOK x segments
    ACK(sealed requested mode)        ->     (sent after the key commit)
                                      <-  ACK(sealed granted mode)
                                      <-  SEED (LCC mode only)

The device proves its identity by sealing the responses to fresh auxiliary
challenges under the PUF-derived SK; the AS holds SK from enrollment and
only a correct SK produces a valid tag. Every failure on the AS side is
answered with an ERROR frame naming the error class before the connection
closes.

Environment Variables:
    COMA_HOST (str): Address the AS binds to and the device connects to (default: 127.0.0.1)
    COMA_PORT (int): TCP port (default: 7465)
    COMA_REGISTRY (str): Registry file (default: registry.json)

Example:
    ```python
    import asyncio
    from coma_bench import remote

    registry = remote.DeviceRegistry.load("registry.json")
    asyncio.run(remote.as_serve(registry))

    # In another process:
    profile = remote.DeviceProfile.load("device-0.json")
    result = remote.device_run(profile.build_untrusted(), "127.0.0.1", 7465)
    ```
"""
import asyncio
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from logging import getLogger, DEBUG, INFO, WARNING, ERROR
from typing import Any, Coroutine, Dict, List, Optional, Union

import numpy as np

from . import costmodel, protocol
from ._frame_utils import Frame, FrameStream, FrameType, open_frame
from ._logging import _log_event, _log_message
from .cipher import AeadKey
from .circuit import ObfuscatedCircuit
from .exceptions import AuthFailure, ComaError, ConfigError, NetworkError, ProtocolError, UnknownDevice, \
    UnlockFailure
from .puf import DEFAULT_VOTES, ArbiterPuf, EnrollmentAuthority, EnrollmentRecord, PufDevice
from .rng import EntropySource, RandomUnit
from .switchnet import NetworkKind, build_network

logger = getLogger(__name__)

AUX_CHALLENGES = 4
MODES = ("dcc", "lcc")


def _atomic_write_json(path: str, data: Any) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2, sort_keys=True)
    os.replace(tmp, path)


######################
# Registry:
@dataclass
class RegistryEntry:
    """What the AS knows about one device.

    Attributes:
        device_id: Device identifier
        challenge: Hardwired PUF challenge
        sk: PUF-derived secret key
        ok: Obfuscation key
        ok_bits: Obfuscation key length
        n: CSN width
        kind: CSN topology
        profile: Cost profile (selects AEAD and PRNG)
        activation_count: Successful activations so far
        last_activation: Unix time of the last success
    """
    device_id: str
    challenge: int
    sk: AeadKey = field(repr=False)
    ok: int = field(repr=False)
    ok_bits: int
    n: int = 64
    kind: str = NetworkKind.LOG_NM.value
    profile: str = "coma2"
    activation_count: int = 0
    last_activation: Optional[float] = None

    def to_json(self) -> Dict[str, Any]:
        data = asdict(self)
        data.update(challenge=f"{self.challenge:016x}", sk=self.sk.to_hex(), ok=f"{self.ok:x}")
        return data

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "RegistryEntry":
        data = dict(data)
        data.update(challenge=int(data["challenge"], 16), sk=AeadKey(bytes.fromhex(data["sk"])),
                    ok=int(data["ok"], 16))
        return cls(**data)

    def record(self) -> EnrollmentRecord:
        return EnrollmentRecord(self.device_id, self.challenge, self.sk)


class DeviceRegistry:
    """Device database of the AS, persisted as JSON with atomic rewrites.

    Reads are lock-free; writes are serialized by an asyncio lock.

    Args:
        path: Backing file (in-memory only when None)
    """

    def __init__(self, path: Optional[str] = None) -> None:
        self._logger = getLogger(__name__)
        self.path = path
        self._entries: Dict[str, RegistryEntry] = {}
        self._lock: Optional[asyncio.Lock] = None

    @classmethod
    def load(cls, path: str) -> "DeviceRegistry":
        """Load a registry; a missing file gives an empty registry bound to ``path``.

        Raises:
            ConfigError: If the file is not a valid registry
        """
        registry = cls(path)
        if os.path.exists(path):
            try:
                with open(path, encoding="utf-8") as handle:
                    entries = json.load(handle)
                registry._entries = {e["device_id"]: RegistryEntry.from_json(e) for e in entries}
            except (ValueError, KeyError, TypeError) as e:
                raise ConfigError(f"Registry {path} is invalid: {e}") from None
        return registry

    def save(self) -> None:
        if self.path:
            _atomic_write_json(self.path, [e.to_json() for e in self._entries.values()])

    async def save_async(self) -> None:
        """Persist from a worker thread so the server loop keeps serving."""
        if self.path:
            snapshot = [e.to_json() for e in self._entries.values()]
            await asyncio.to_thread(_atomic_write_json, self.path, snapshot)

    def register(self, entry: RegistryEntry) -> None:
        self._entries[entry.device_id] = entry
        self.save()
        _log_message(self._logger, INFO, f"Registered device {entry.device_id}")

    def get(self, device_id: str) -> RegistryEntry:
        """Look a device up.

        Raises:
            UnknownDevice: If the id was never registered
        """
        try:
            return self._entries[device_id]
        except KeyError:
            raise UnknownDevice(f"Device {device_id!r} is not registered", device_id=device_id) from None

    def __contains__(self, device_id: str) -> bool:
        return device_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    async def record_activation(self, device_id: str) -> int:
        """Increment the activation count and persist; return the new count."""
        if self._lock is None:
            self._lock = asyncio.Lock()
        async with self._lock:
            entry = self.get(device_id)
            entry.activation_count += 1
            entry.last_activation = time.time()
            await self.save_async()
            return entry.activation_count


######################
# Device profile:
@dataclass
class DeviceProfile:
    """Manufacturing parameters from which a device process rebuilds its chip.

    Only public or physical properties live here: the PUF seed stands in for
    the silicon, the circuit seed for the fabricated netlist. The hardwired
    challenge is set at enrollment. No key material is stored.
    """
    device_id: str
    puf_seed: int
    circuit_seed: int
    challenge: int
    noise: float = 0.05
    n: int = 64
    kind: str = NetworkKind.LOG_NM.value
    profile: str = "coma2"

    def to_json(self) -> Dict[str, Any]:
        data = asdict(self)
        data["challenge"] = f"{self.challenge:016x}"
        return data

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "DeviceProfile":
        data = dict(data)
        data["challenge"] = int(data["challenge"], 16)
        return cls(**data)

    def save(self, path: str) -> None:
        _atomic_write_json(path, self.to_json())

    @classmethod
    def load(cls, path: str) -> "DeviceProfile":
        with open(path, encoding="utf-8") as handle:
            return cls.from_json(json.load(handle))

    def build_untrusted(self) -> protocol.UntrustedChip:
        params = costmodel.for_width(costmodel.get_profile(self.profile), self.n)
        circuit, _ = ObfuscatedCircuit.random(seed=self.circuit_seed)
        device = PufDevice(self.device_id, ArbiterPuf(noise=self.noise, seed=self.puf_seed))
        device.hardwire(self.challenge)
        device.readout_enabled = False
        return protocol.UntrustedChip(device, circuit, build_network(self.kind, self.n), params, self.device_id)


def enroll_device(registry: DeviceRegistry, device_id: str, seed: int, n: int = 64,
                  kind: Union[NetworkKind, str] = NetworkKind.LOG_NM, profile: str = "coma2",
                  noise: float = 0.05) -> DeviceProfile:
    """Manufacture and enroll one device; register it and return its profile.

    The circuit and PUF seeds are derived from ``seed`` so the device process
    can rebuild the same chip from its profile.
    """
    circuit_seed, puf_seed = seed * 1000 + 1, seed * 1000 + 2
    circuit, ok = ObfuscatedCircuit.random(seed=circuit_seed)
    device = PufDevice(device_id, ArbiterPuf(noise=noise, seed=puf_seed))
    record = EnrollmentAuthority(seed=seed * 1000 + 4).enroll(device)
    kind = NetworkKind(kind).value
    registry.register(RegistryEntry(device_id, record.challenge, record.sk, ok, circuit.key_bits,
                                    n=n, kind=kind, profile=profile))
    return DeviceProfile(device_id, puf_seed=puf_seed, circuit_seed=circuit_seed, challenge=record.challenge,
                         noise=noise, n=n, kind=kind, profile=profile)


######################
# Helpers:
def _error_frame(error: Exception) -> Frame:
    return Frame(FrameType.ERROR, 0, f"{type(error).__name__}: {error}".encode())


def _raise_error_frame(frame: Frame) -> None:
    """Map an ERROR frame from the peer to the matching exception."""
    text = frame.payload.decode(errors="replace")
    name = text.partition(": ")[0]
    mapped = {"UnknownDevice": UnknownDevice, "AuthFailure": AuthFailure, "UnlockFailure": UnlockFailure}
    raise mapped.get(name, ProtocolError)(f"Peer reported {text}")


def _auth_responses(device: PufDevice, challenges: List[int], votes: int = DEFAULT_VOTES) -> bytes:
    """Majority-voted PUF responses to the auxiliary challenges, one byte each."""
    ones = device.puf.eval_many(np.repeat(np.asarray(challenges, dtype=np.uint64), votes))
    majority = ones.reshape(len(challenges), votes).sum(axis=1) * 2 > votes
    return bytes(majority.astype(np.uint8).tolist())


def trn_fingerprint(trn) -> str:
    return hashlib.sha256(trn.to_bytes()).hexdigest()[:16]


######################
# Server:
@dataclass
class SessionSummary:
    """Outcome of one AS session (no key material)."""
    device_id: str
    success: bool
    error: Optional[str] = None
    session_id: Optional[int] = None
    trn_fingerprint: Optional[str] = None
    mode: Optional[str] = None


class AuthServer:
    """Authentication server handling concurrent device sessions.

    Attributes:
        _host (str): Bind address (COMA_HOST, default 127.0.0.1)
        _port (int): TCP port (COMA_PORT, default 7465)

    Args:
        registry: Device registry
        host: Overrides ``_host``
        port: Overrides ``_port`` (0 picks a free port)
        source_seed: Seed for the entropy source models (fresh entropy when None)
    """
    _host: str = os.getenv("COMA_HOST", "127.0.0.1")
    _port: int = int(os.getenv("COMA_PORT", "7465"))

    def __init__(self, registry: DeviceRegistry, host: Optional[str] = None, port: Optional[int] = None,
                 source_seed: Optional[int] = None) -> None:
        self._logger = getLogger(__name__)
        self.registry = registry
        if host is not None:
            self._host = host
        if port is not None:
            self._port = port
        self._source_seed = source_seed
        self._accepted = 0
        self._server: Optional[asyncio.AbstractServer] = None
        self.sessions: List[SessionSummary] = []

    @property
    def port(self) -> int:
        """Bound port (the configured one before ``start``)."""
        if self._server is not None and self._server.sockets:
            return self._server.sockets[0].getsockname()[1]
        return self._port

    async def start(self) -> None:
        try:
            self._server = await asyncio.start_server(self._handle, self._host, self._port)
        except OSError as e:
            raise NetworkError(f"Cannot listen on {self._host}:{self._port}: {e}") from None
        _log_message(self._logger, INFO, f"AS listening on {self._host}:{self.port}")

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    def _trusted_for(self, entry: RegistryEntry) -> protocol.TrustedChip:
        params = costmodel.for_width(costmodel.get_profile(entry.profile), entry.n)
        seed = None if self._source_seed is None else self._source_seed + self._accepted
        self._accepted += 1
        unit = RandomUnit(EntropySource(seed=seed), profile=params.prng)
        trusted = protocol.TrustedChip(build_network(entry.kind, entry.n), params, unit, f"as:{entry.device_id}")
        trusted.provision(entry.record(), entry.ok, entry.ok_bits)
        return trusted

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        stream = FrameStream(reader, writer, f"{peer[0]}:{peer[1]}" if peer else "device")
        summary = SessionSummary(device_id="?", success=False)
        try:
            await self._session(stream, summary)
        except ProtocolError as e:
            summary.error = type(e).__name__
            _log_message(self._logger, WARNING, f"Session with {summary.device_id} failed: {e}")
            try:
                await stream.send(_error_frame(e))
            except NetworkError:
                pass
        except NetworkError as e:
            summary.error = type(e).__name__
            _log_message(self._logger, ERROR, f"Session with {summary.device_id} lost: {e}")
        except ComaError as e:
            summary.error = type(e).__name__
            _log_message(self._logger, ERROR, f"Session with {summary.device_id} aborted: {e}")
            try:
                await stream.send(_error_frame(e))
            except NetworkError:
                pass
        finally:
            await stream.close()
            self.sessions.append(summary)
            _log_event(self._logger, INFO if summary.success else ERROR, "as_session", **asdict(summary))

    async def _session(self, stream: FrameStream, summary: SessionSummary) -> None:
        hello = await stream.recv()
        if hello.type != FrameType.HELLO:
            raise AuthFailure(f"Expected HELLO, got {hello.type.name}")
        summary.device_id = hello.payload.decode(errors="replace")
        entry = self.registry.get(summary.device_id)
        trusted = self._trusted_for(entry)

        session_id = trusted.start_session()
        summary.session_id = session_id
        challenges = [trusted.random.prng.next_bits(64) for _ in range(AUX_CHALLENGES)]
        context = b"".join(c.to_bytes(8, "little") for c in challenges)
        await stream.send(Frame(FrameType.CHALLENGE, trusted.epoch,
                                session_id.to_bytes(8, "little") + bytes([AUX_CHALLENGES]) + context))

        auth = await stream.recv()
        if auth.type == FrameType.ERROR:
            _raise_error_frame(auth)
        auth_context, responses = open_frame(trusted.session, auth, FrameType.AUTH)
        if auth_context != context or len(responses) != AUX_CHALLENGES:
            raise AuthFailure("AUTH frame does not answer the issued challenges")
        _log_message(self._logger, DEBUG, f"Device {summary.device_id} authenticated")

        trn_frame, dpok_frames = trusted.activation_frames()
        summary.trn_fingerprint = trn_fingerprint(trusted.trn)
        for frame in [trn_frame] + dpok_frames:
            await stream.send(frame)

        ack = await stream.recv()
        if ack.type == FrameType.ERROR:
            _raise_error_frame(ack)
        _, requested = open_frame(trusted.session, ack, FrameType.ACK, trusted.epoch)
        mode = requested.decode(errors="replace")
        if mode not in MODES:
            raise ConfigError(f"Unsupported mode {mode!r}")
        await self.registry.record_activation(summary.device_id)
        summary.success = True
        summary.mode = mode
        await stream.send(trusted._seal(FrameType.ACK, b"", mode.encode()))
        if mode == "lcc":
            await stream.send(protocol.lcc_seed_frame(trusted))


async def as_serve(registry: DeviceRegistry, host: Optional[str] = None, port: Optional[int] = None,
                   source_seed: Optional[int] = None) -> None:
    """Run the AS until cancelled."""
    server = AuthServer(registry, host, port, source_seed=source_seed)
    try:
        await server.serve_forever()
    finally:
        await server.close()


######################
# Device:
class DeviceClient:
    """Device side of a remote activation.

    Args:
        untrusted: Enrolled untrusted chip
        host: AS address (COMA_HOST by default)
        port: AS port (COMA_PORT by default)
        async_mode: Overrides the async detection logic (None: auto-detect)
    """

    def __init__(self, untrusted: protocol.UntrustedChip, host: Optional[str] = None, port: Optional[int] = None,
                 async_mode: Optional[bool] = None) -> None:
        self._logger = getLogger(__name__)
        self.untrusted = untrusted
        self.host = host or AuthServer._host
        self.port = port or AuthServer._port
        self._override_async_mode = async_mode
        self.transcript: List[Frame] = []
        """Frames sent by this client, in order."""

    def _detect_async_mode(self) -> bool:
        try:
            asyncio.get_running_loop()
            return True
        except RuntimeError:
            return False

    @property
    def _do_async(self) -> bool:
        if self._override_async_mode is not None:
            return self._override_async_mode
        return self._detect_async_mode()

    async def _send(self, stream: FrameStream, frame: Frame) -> None:
        self.transcript.append(frame)
        await stream.send(frame)

    async def _recv(self, stream: FrameStream, expected: FrameType) -> Frame:
        frame = await stream.recv()
        if frame.type == FrameType.ERROR:
            _raise_error_frame(frame)
        if frame.type != expected:
            raise AuthFailure(f"Expected {expected.name}, got {frame.type.name}")
        return frame

    async def _a_run(self, mode: str = "dcc") -> protocol.UnlockResult:
        if mode not in MODES:
            raise ConfigError(f"Unsupported mode {mode!r}; expected one of {MODES}")
        chip = self.untrusted
        device_id = chip.device.device_id
        message = f"Start remote activation of {device_id} via {self.host}:{self.port}"
        _log_message(self._logger, DEBUG, message)
        stream = await FrameStream.connect(self.host, self.port)
        try:
            await self._send(stream, Frame(FrameType.HELLO, 0, device_id.encode()))
            challenge = await self._recv(stream, FrameType.CHALLENGE)
            session_id = int.from_bytes(challenge.payload[:8], "little")
            count = challenge.payload[8] if len(challenge.payload) > 8 else 0
            context = challenge.payload[9:9 + 8 * count]
            challenges = [int.from_bytes(context[i:i + 8], "little") for i in range(0, len(context), 8)]
            chip.reset()
            chip.open_session(session_id)
            await self._send(stream, chip._seal(FrameType.AUTH, context, _auth_responses(chip.device, challenges)))

            chip.receive_trn(await self._recv(stream, FrameType.TRN_UPDATE))
            first = await self._recv(stream, FrameType.DPOK)
            chip.receive_dpok(first)
            while len(chip._staged) < (chip._expected_segments or 0):
                chip.receive_dpok(await self._recv(stream, FrameType.DPOK))
            segments = chip._expected_segments
            chip.commit()

            await self._send(stream, chip._seal(FrameType.ACK, b"", mode.encode()))
            _, granted = open_frame(chip.session, await self._recv(stream, FrameType.ACK), FrameType.ACK, chip.epoch)
            if granted.decode(errors="replace") == "lcc":
                protocol.lcc_accept_seed(chip, await self._recv(stream, FrameType.SEED))
        except Exception:
            chip.circuit.clear()
            raise
        finally:
            await stream.close()
        cycles = costmodel.activation_cycles(chip.params, segments * chip.topology.n)
        result = protocol.UnlockResult(True, cycles)
        _log_event(self._logger, INFO, "remote_activation", device=device_id, success=True, mode=mode,
                   epoch=chip.epoch, cycles=cycles)
        return result

    def run(self, mode: str = "dcc") -> Union[protocol.UnlockResult, Coroutine[Any, Any, protocol.UnlockResult]]:
        """Activate over the network.

        Returns a coroutine when called inside a running event loop, the result otherwise.

        Raises:
            NetworkError: On transport failures (the circuit stays locked)
            UnknownDevice: If the AS does not know this device
            AuthFailure: If authentication fails
            UnlockFailure: If the delivered key fails the self-check
        """
        if self._do_async:
            return self._a_run(mode)
        return asyncio.run(self._a_run(mode))


def device_run(untrusted: protocol.UntrustedChip, host: Optional[str] = None, port: Optional[int] = None,
               mode: str = "dcc", async_mode: Optional[bool] = None
               ) -> Union[protocol.UnlockResult, Coroutine[Any, Any, protocol.UnlockResult]]:
    """Run one remote activation; see ``DeviceClient.run``."""
    return DeviceClient(untrusted, host, port, async_mode).run(mode)
