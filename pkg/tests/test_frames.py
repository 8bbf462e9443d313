import asyncio

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coma_bench._frame_utils import EPOCH_MODULUS, HEADER_SIZE, MAX_PAYLOAD, Frame, FrameStream, FrameType, \
    decode_frame, encode_frame, frame_ad, open_frame, seal_frame, split_frames, unpack_sealed
from coma_bench.cipher import AeadKey, AeadSession
from coma_bench.exceptions import AuthFailure, EpochMismatch, FrameError, NetworkError

KEY = AeadKey(bytes(16))


def test_header_layout_is_big_endian():
    wire = encode_frame(Frame(FrameType.DPOK, 0x0102, b"ab"))
    assert wire == b"\x00\x00\x00\x05" + b"\x05" + b"\x01\x02" + b"ab"
    assert HEADER_SIZE == 7


@given(st.sampled_from(list(FrameType)), st.integers(0, EPOCH_MODULUS - 1), st.binary(max_size=300))
def test_decode_inverts_encode(frame_type, epoch, payload):
    frame = Frame(frame_type, epoch, payload)
    assert decode_frame(encode_frame(frame)) == frame


def test_encode_rejects_oversized_fields():
    with pytest.raises(FrameError):
        encode_frame(Frame(FrameType.HELLO, EPOCH_MODULUS))
    with pytest.raises(FrameError):
        encode_frame(Frame(FrameType.HELLO, 0, bytes(MAX_PAYLOAD + 1)))


@pytest.mark.parametrize("wire", [
    b"",
    b"\x00\x00\x00",
    b"\x00\x00\x00\x02\x01\x00\x00",
    b"\x00\x00\x00\x03\x0a\x00\x00",
    b"\x00\x00\x00\x05\x01\x00\x00a",
    b"\x00\x00\x00\x03\x01\x00\x00extra",
    b"\xff\xff\xff\xff\x01\x00\x00",
])
def test_malformed_frames_raise_frame_error(wire):
    with pytest.raises(FrameError):
        decode_frame(wire)


def test_random_bytes_never_crash_the_decoder():
    rng = np.random.default_rng(0)
    for i in range(100_000):
        data = rng.bytes(int(rng.integers(0, 24)))
        if i % 4 == 0 and len(data) >= HEADER_SIZE:
            data = (len(data) - 4).to_bytes(4, "big") + data[4:]
        try:
            frame = decode_frame(data)
        except FrameError:
            continue
        assert encode_frame(frame) == data


def test_split_frames_keeps_partial_tail():
    first = encode_frame(Frame(FrameType.HELLO, 0, b"one"))
    second = encode_frame(Frame(FrameType.ACK, 1, b"two"))
    frames, rest = split_frames(first + second[:5])
    assert frames == [Frame(FrameType.HELLO, 0, b"one")]
    assert rest == second[:5]


def test_sealed_frame_binds_type_epoch_and_context():
    sender = AeadSession(KEY, 1, "aes-gcm")
    frame = seal_frame(sender, FrameType.DPOK, 3, b"\x00\x01", b"secret")
    context, npub, _ = unpack_sealed(frame)
    assert context == b"\x00\x01" and len(npub) == 16
    assert open_frame(AeadSession(KEY, 1, "aes-gcm"), frame, FrameType.DPOK, 3) == (b"\x00\x01", b"secret")
    with pytest.raises(EpochMismatch):
        open_frame(AeadSession(KEY, 1, "aes-gcm"), frame, FrameType.DPOK, 4)
    with pytest.raises(AuthFailure):
        open_frame(AeadSession(KEY, 1, "aes-gcm"), frame, FrameType.SEED)
    relabeled = Frame(frame.type, 4, frame.payload)
    with pytest.raises(AuthFailure):
        open_frame(AeadSession(KEY, 1, "aes-gcm"), relabeled, FrameType.DPOK)
    moved = Frame(frame.type, 3, frame.payload[:1] + b"\x00\x02" + frame.payload[3:])
    with pytest.raises(AuthFailure):
        open_frame(AeadSession(KEY, 1, "aes-gcm"), moved, FrameType.DPOK)


def test_frame_ad_layout():
    assert frame_ad(FrameType.TRN_UPDATE, 0x0203, b"x") == b"\x04\x02\x03x"


def test_unpack_rejects_short_payloads():
    with pytest.raises(FrameError):
        unpack_sealed(Frame(FrameType.DPOK, 0, b""))
    with pytest.raises(FrameError):
        unpack_sealed(Frame(FrameType.DPOK, 0, b"\x00" + bytes(20)))


def test_stream_round_trip_and_mid_frame_close():
    async def scenario():
        received = []

        async def handle(reader, writer):
            stream = FrameStream(reader, writer, "client")
            received.append(await stream.recv())
            await stream.send(Frame(FrameType.ACK, 0, b"ok"))
            writer.write(encode_frame(Frame(FrameType.ACK, 0, b"truncated"))[:6])
            await writer.drain()
            await stream.close()

        server = await asyncio.start_server(handle, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        client = await FrameStream.connect("127.0.0.1", port, timeout=5)
        await client.send(Frame(FrameType.HELLO, 0, b"dev"))
        reply = await client.recv()
        with pytest.raises(NetworkError):
            await client.recv()
        await client.close()
        server.close()
        await server.wait_closed()
        return received, reply

    received, reply = asyncio.run(scenario())
    assert received == [Frame(FrameType.HELLO, 0, b"dev")]
    assert reply == Frame(FrameType.ACK, 0, b"ok")


def test_connect_failure_is_a_network_error():
    async def scenario():
        server = await asyncio.start_server(lambda r, w: None, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        server.close()
        await server.wait_closed()
        await FrameStream.connect("127.0.0.1", port, timeout=2)

    with pytest.raises(NetworkError) as e:
        asyncio.run(scenario())
    assert e.value.exit_code == 4
