import numpy as np
import pytest

from qotmpc.wire import (
    FrameError,
    Tag,
    WireMessage,
    decode_bits,
    decode_blobs,
    decode_frame,
    decode_u32s,
    decode_uints,
    encode_bits,
    encode_blobs,
    encode_frame,
    encode_u32s,
    encode_uints,
    read_frame,
)


def test_frame_layout():
    frame = WireMessage(Tag.TEST_VERDICT, b"\x01").encode()
    assert frame == b"\x00\x00\x00\x01\x06\x01"


def test_frames_split_off_a_stream():
    a = WireMessage(Tag.NO_CLICK_REPORT, b"abc")
    b = WireMessage(Tag.ABORT, b"")
    msg, rest = decode_frame(encode_frame(a) + encode_frame(b))
    assert msg == a
    msg, rest = decode_frame(rest)
    assert msg == b
    assert rest == b""


def test_truncated_frames():
    frame = encode_frame(WireMessage(Tag.BASIS_REVEAL, bytes(10)))
    with pytest.raises(FrameError):
        decode_frame(frame[:3])
    with pytest.raises(FrameError, match="Truncated frame"):
        decode_frame(frame[:-1])


def test_unknown_tag():
    with pytest.raises(FrameError, match="Unknown message tag"):
        decode_frame(b"\x00\x00\x00\x00\x63")


def test_read_frame_from_reader():
    data = encode_frame(WireMessage(Tag.INDEX_SETS, b"xyz"))
    pos = 0

    def read_exact(n):
        nonlocal pos
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    assert read_frame(read_exact) == WireMessage(Tag.INDEX_SETS, b"xyz")
    with pytest.raises(FrameError):
        read_frame(read_exact)


def test_bit_codec():
    bits = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1], dtype=np.uint8)
    data = encode_bits(bits)
    assert len(data) == 4 + 2
    np.testing.assert_array_equal(decode_bits(data, expected=9), bits)
    with pytest.raises(FrameError):
        decode_bits(data, expected=8)
    with pytest.raises(FrameError):
        decode_bits(data[:-1])
    assert len(decode_bits(encode_bits([]))) == 0


def test_index_codec():
    values = [0, 5, 2**32 - 1]
    np.testing.assert_array_equal(decode_u32s(encode_u32s(values)), values)
    with pytest.raises(ValueError):
        encode_u32s([2**32])
    with pytest.raises(FrameError):
        decode_u32s(encode_u32s(values)[:-2])


def test_blob_codec():
    blobs = [b"", b"a", bytes(300)]
    assert decode_blobs(encode_blobs(blobs), expected=3) == blobs
    with pytest.raises(FrameError):
        decode_blobs(encode_blobs(blobs), expected=2)
    with pytest.raises(FrameError):
        decode_blobs(encode_blobs(blobs) + b"\x00")
    with pytest.raises(FrameError):
        decode_blobs(encode_blobs(blobs)[:-1])


def test_uint_codec():
    values = [0, 1, 2**72 - 1]
    assert decode_uints(encode_uints(values, 9), 9) == values
    with pytest.raises(FrameError):
        decode_uints(encode_uints(values, 9), 8)
