"""Wire frame utilities shared by the in-process channel and the remote service.

This module provides:
- The frame codec (length-prefixed, bit-exact)
- Sealed frames: AEAD-protected payloads whose associated data binds the
  frame type, the TRN epoch and a cleartext context
- An asyncio stream wrapper with I/O timeouts

Wire format (all header integers big-endian)::

    length : u32   = len(payload) + 3
    type   : u8    FrameType
    epoch  : u16   TRN epoch the frame was produced under
    payload: bytes

Sealed payload layout::

    ctx_len: u8 | context | npub (16) | ct | tag (16)

Environment Variables:
    COMA_IO_TIMEOUT (float): Seconds to wait for a frame before giving up (default: 10)

Example:
    ```python
    from coma_bench._frame_utils import Frame, FrameType, encode_frame, decode_frame

    wire = encode_frame(Frame(FrameType.HELLO, 0, b"chip-1"))
    assert decode_frame(wire) == Frame(FrameType.HELLO, 0, b"chip-1")
    ```
"""
import asyncio
import os
import struct
from dataclasses import dataclass
from enum import IntEnum
from logging import getLogger, DEBUG, ERROR
from typing import List, Optional, Tuple

from ._logging import _log_message
from .cipher import AeadSession, Ciphertext, NPUB_BYTES, TAG_BYTES
from .exceptions import AuthFailure, EpochMismatch, FrameError, NetworkError

logger = getLogger(__name__)

HEADER = struct.Struct(">IBH")
HEADER_SIZE = HEADER.size
LENGTH_SIZE = 4
MAX_FRAME = 64 * 1024
"""int: Largest frame on the wire, header included."""
MAX_PAYLOAD = MAX_FRAME - HEADER_SIZE
EPOCH_MODULUS = 1 << 16


class FrameType(IntEnum):
    HELLO = 1
    CHALLENGE = 2
    AUTH = 3
    TRN_UPDATE = 4
    DPOK = 5
    SEED = 6
    DATA_DCC = 7
    DATA_LCC = 8
    ACK = 9
    ERROR = 255


@dataclass(frozen=True)
class Frame:
    """One frame.

    Attributes:
        type: Frame type
        epoch: 16-bit TRN epoch
        payload: Frame body
    """
    type: FrameType
    epoch: int
    payload: bytes = b""


######################
# Codec:
def encode_frame(frame: Frame) -> bytes:
    """Serialize a frame.

    Raises:
        FrameError: If the payload is too large or the epoch does not fit 16 bits
    """
    if len(frame.payload) > MAX_PAYLOAD:
        raise FrameError(f"Payload of {len(frame.payload)} bytes exceeds {MAX_PAYLOAD}")
    if not 0 <= frame.epoch < EPOCH_MODULUS:
        raise FrameError(f"Epoch {frame.epoch} does not fit 16 bits")
    return HEADER.pack(len(frame.payload) + 3, int(frame.type), frame.epoch) + bytes(frame.payload)


def _parse_header(header: bytes) -> Tuple[int, FrameType, int]:
    length, raw_type, epoch = HEADER.unpack(header)
    if length < 3 or length + LENGTH_SIZE > MAX_FRAME:
        raise FrameError(f"Invalid frame length {length}")
    try:
        frame_type = FrameType(raw_type)
    except ValueError:
        raise FrameError(f"Unknown frame type {raw_type}") from None
    return length - 3, frame_type, epoch


def decode_frame(data: bytes) -> Frame:
    """Parse exactly one frame. Any malformed input raises FrameError and nothing else.

    Raises:
        FrameError: On truncation, trailing bytes, bad length or unknown type
    """
    if len(data) < HEADER_SIZE:
        raise FrameError(f"Frame of {len(data)} bytes is shorter than the header")
    payload_len, frame_type, epoch = _parse_header(data[:HEADER_SIZE])
    if len(data) != HEADER_SIZE + payload_len:
        raise FrameError(f"Frame declares {payload_len} payload bytes, carries {len(data) - HEADER_SIZE}")
    return Frame(frame_type, epoch, bytes(data[HEADER_SIZE:]))


def split_frames(buffer: bytes) -> Tuple[List[Frame], bytes]:
    """Decode every complete frame at the head of ``buffer``; return them and the remainder."""
    frames = []
    offset = 0
    while len(buffer) - offset >= HEADER_SIZE:
        payload_len, _, _ = _parse_header(buffer[offset:offset + HEADER_SIZE])
        end = offset + HEADER_SIZE + payload_len
        if end > len(buffer):
            break
        frames.append(decode_frame(buffer[offset:end]))
        offset = end
    return frames, buffer[offset:]


######################
# Sealed frames:
def frame_ad(frame_type: FrameType, epoch: int, context: bytes) -> bytes:
    """Associated data binding a sealed payload to its header and context."""
    return bytes([int(frame_type)]) + epoch.to_bytes(2, "big") + context


def seal_frame(session: AeadSession, frame_type: FrameType, epoch: int, context: bytes, msg: bytes) -> Frame:
    if len(context) > 255:
        raise FrameError("Sealed frame context exceeds 255 bytes")
    npub, sealed = session.seal(frame_ad(frame_type, epoch, context), msg)
    return Frame(frame_type, epoch, bytes([len(context)]) + context + npub + sealed.to_bytes())


def unpack_sealed(frame: Frame) -> Tuple[bytes, bytes, Ciphertext]:
    """Split a sealed payload into (context, npub, ciphertext).

    Raises:
        FrameError: If the payload is too short for its declared layout
    """
    payload = frame.payload
    if not payload:
        raise FrameError("Empty sealed payload")
    ctx_len = payload[0]
    npub_end = 1 + ctx_len + NPUB_BYTES
    if len(payload) < npub_end + TAG_BYTES:
        raise FrameError("Sealed payload is truncated")
    return payload[1:1 + ctx_len], payload[1 + ctx_len:npub_end], Ciphertext.from_bytes(payload[npub_end:])


def open_frame(session: AeadSession, frame: Frame, expected_type: FrameType,
               expected_epoch: Optional[int] = None) -> Tuple[bytes, bytes]:
    """Verify and decrypt a sealed frame.

    Args:
        session: Receiving AEAD session
        frame: Received frame
        expected_type: Type the receiver is waiting for
        expected_epoch: Epoch the receiver holds (unchecked when None)

    Returns:
        (context, plaintext)

    Raises:
        AuthFailure: If the frame type is unexpected or the tag fails
        EpochMismatch: If the frame was produced under another epoch
        FrameError: If the payload layout is broken
    """
    if frame.type != expected_type:
        raise AuthFailure(f"Expected {expected_type.name} frame, got {frame.type.name}")
    if expected_epoch is not None and frame.epoch != expected_epoch:
        raise EpochMismatch(expected_epoch, frame.epoch)
    context, npub, sealed = unpack_sealed(frame)
    return context, session.open(npub, frame_ad(frame.type, frame.epoch, context), sealed)


######################
# Streams:
class FrameStream:
    """Frame transport over an asyncio stream pair.

    Transport failures (reset, refused, closed mid-frame, timeout) surface as
    NetworkError, never as protocol errors.

    Attributes:
        _timeout (float): Seconds to wait for a read (COMA_IO_TIMEOUT, default 10)

    Args:
        reader: Stream reader
        writer: Stream writer
        peer: Peer label for logs
    """
    _timeout: float = float(os.getenv("COMA_IO_TIMEOUT", "10"))
    _logger = getLogger(__name__)

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, peer: str = "peer",
                 timeout: Optional[float] = None) -> None:
        self._reader = reader
        self._writer = writer
        self.peer = peer
        if timeout is not None:
            self._timeout = timeout

    @classmethod
    async def connect(cls, host: str, port: int, timeout: Optional[float] = None) -> "FrameStream":
        try:
            reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port),
                                                    timeout if timeout is not None else cls._timeout)
        except (OSError, asyncio.TimeoutError) as e:
            _log_message(cls._logger, ERROR, f"Connection to {host}:{port} failed: {e}")
            raise NetworkError(f"Cannot connect to {host}:{port}: {e}") from None
        return cls(reader, writer, f"{host}:{port}", timeout)

    async def send(self, frame: Frame) -> None:
        try:
            self._writer.write(encode_frame(frame))
            await self._writer.drain()
        except (OSError, ConnectionError) as e:
            raise NetworkError(f"Sending {frame.type.name} to {self.peer} failed: {e}") from None
        _log_message(self._logger, DEBUG, f"Sent {frame.type.name} ({len(frame.payload)} B) to {self.peer}")

    async def recv(self) -> Frame:
        """Read one frame.

        Raises:
            NetworkError: On timeout, reset or a stream closed mid-frame
            FrameError: If the bytes do not form a valid frame
        """
        try:
            header = await asyncio.wait_for(self._reader.readexactly(HEADER_SIZE), self._timeout)
            payload_len, _, _ = _parse_header(header)
            payload = await asyncio.wait_for(self._reader.readexactly(payload_len), self._timeout)
        except asyncio.IncompleteReadError:
            raise NetworkError(f"Stream from {self.peer} closed mid-frame") from None
        except asyncio.TimeoutError:
            raise NetworkError(f"Timed out waiting for a frame from {self.peer}") from None
        except (OSError, ConnectionError) as e:
            raise NetworkError(f"Reading from {self.peer} failed: {e}") from None
        frame = decode_frame(header + payload)
        _log_message(self._logger, DEBUG, f"Received {frame.type.name} ({payload_len} B) from {self.peer}")
        return frame

    async def close(self) -> None:
        try:
            self._writer.close()
            await self._writer.wait_closed()
        except (OSError, ConnectionError):
            pass
