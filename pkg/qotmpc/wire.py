"""Framing and payload codecs for every message the two parties exchange.

A frame is `u32 payload length (big endian) ‖ u8 tag ‖ payload`. The same
framing is used over sockets and between in-process queues, so transcripts
recorded either way are byte-identical.
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import IntEnum
import struct

import numpy as np

HEADER = struct.Struct(">IB")
MAX_PAYLOAD = 1 << 28


class FrameError(ValueError):
    pass


class Tag(IntEnum):
    # Oblivious transfer, in protocol order
    NO_CLICK_REPORT = 1
    ROUND_SELECTION = 2
    COMMITMENT_BATCH = 3
    TEST_CHALLENGE = 4
    TEST_OPENINGS = 5
    TEST_VERDICT = 6
    BASIS_REVEAL = 7
    INDEX_SETS = 8
    MASKED_PAYLOAD = 9
    ABORT = 15
    # Oblivious PRF
    OPRF_HEADER = 20
    OT_COLUMNS = 21
    # Set intersection
    PSI_SETUP = 30
    PSI_QUERY_SETS = 31
    PSI_RESULT = 32


@dataclass(frozen=True)
class WireMessage:
    tag: Tag
    payload: bytes = b""

    def encode(self) -> bytes:
        return encode_frame(self)

    def __repr__(self):
        return f"WireMessage({self.tag.name}, {len(self.payload)} bytes)"


@dataclass(frozen=True)
class TranscriptEntry:
    seq: int
    sender: str
    tag: Tag
    payload: bytes


def encode_frame(msg: WireMessage) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise FrameError(f"Payload of {len(msg.payload)} bytes exceeds the frame limit")
    return HEADER.pack(len(msg.payload), int(msg.tag)) + msg.payload


def _parse_tag(value: int) -> Tag:
    try:
        return Tag(value)
    except ValueError:
        raise FrameError(f"Unknown message tag {value}") from None


def decode_frame(buf: bytes) -> tuple[WireMessage, bytes]:
    """Split one frame off the front of buf. Returns the message and the rest."""
    if len(buf) < HEADER.size:
        raise FrameError(f"Truncated frame header: {len(buf)} bytes")
    length, tag = HEADER.unpack_from(buf)
    if length > MAX_PAYLOAD:
        raise FrameError(f"Frame announces {length} bytes, above the frame limit")
    end = HEADER.size + length
    if len(buf) < end:
        raise FrameError(f"Truncated frame: expected {length} payload bytes, got {len(buf) - HEADER.size}")
    return WireMessage(_parse_tag(tag), bytes(buf[HEADER.size : end])), bytes(buf[end:])


def read_frame(read_exact: Callable[[int], bytes]) -> WireMessage:
    """Read one frame using a function that returns exactly the requested number of bytes,
    or fewer if the stream ended."""
    head = read_exact(HEADER.size)
    if len(head) < HEADER.size:
        raise FrameError(f"Truncated frame header: {len(head)} bytes")
    length, tag = HEADER.unpack(head)
    if length > MAX_PAYLOAD:
        raise FrameError(f"Frame announces {length} bytes, above the frame limit")
    payload = read_exact(length) if length else b""
    if len(payload) < length:
        raise FrameError(f"Truncated frame: expected {length} payload bytes, got {len(payload)}")
    return WireMessage(_parse_tag(tag), payload)


################################################################################
# Payload codecs
################################################################################


def encode_bits(bits) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    return struct.pack(">I", len(bits)) + np.packbits(bits).tobytes()


def decode_bits(data: bytes, expected: int | None = None) -> np.ndarray:
    if len(data) < 4:
        raise FrameError("Bit string is missing its length prefix")
    (count,) = struct.unpack_from(">I", data)
    body = data[4:]
    if len(body) != (count + 7) // 8:
        raise FrameError(f"Bit string of {count} bits has {len(body)} payload bytes")
    if expected is not None and count != expected:
        raise FrameError(f"Expected {expected} bits, got {count}")
    return np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=count)


def encode_u32s(values) -> bytes:
    values = np.asarray(values, dtype=np.int64)
    if len(values) and (values.min() < 0 or values.max() >= 2**32):
        raise ValueError("Values do not fit in u32")
    return struct.pack(">I", len(values)) + values.astype(">u4").tobytes()


def decode_u32s(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise FrameError("Index list is missing its length prefix")
    (count,) = struct.unpack_from(">I", data)
    if len(data) != 4 + 4 * count:
        raise FrameError(f"Index list of {count} entries has {len(data) - 4} payload bytes")
    return np.frombuffer(data, dtype=">u4", offset=4, count=count).astype(np.int64)


def encode_blobs(blobs: Sequence[bytes]) -> bytes:
    out = [struct.pack(">I", len(blobs))]
    for blob in blobs:
        out.append(struct.pack(">I", len(blob)))
        out.append(blob)
    return b"".join(out)


def decode_blobs(data: bytes, expected: int | None = None) -> list[bytes]:
    try:
        (count,) = struct.unpack_from(">I", data)
        pos, blobs = 4, []
        for _ in range(count):
            (size,) = struct.unpack_from(">I", data, pos)
            pos += 4
            if pos + size > len(data):
                raise FrameError("Blob runs past the end of the payload")
            blobs.append(bytes(data[pos : pos + size]))
            pos += size
    except struct.error as e:
        raise FrameError(f"Malformed blob list: {e}") from None
    if pos != len(data):
        raise FrameError(f"{len(data) - pos} trailing bytes after blob list")
    if expected is not None and count != expected:
        raise FrameError(f"Expected {expected} blobs, got {count}")
    return blobs


def encode_uints(values, width: int) -> bytes:
    """Fixed-width big-endian unsigned integers, width in bytes."""
    out = [struct.pack(">I", len(values))]
    out.extend(int(v).to_bytes(width, "big") for v in values)
    return b"".join(out)


def decode_uints(data: bytes, width: int) -> list[int]:
    if len(data) < 4:
        raise FrameError("Integer list is missing its length prefix")
    (count,) = struct.unpack_from(">I", data)
    if len(data) != 4 + width * count:
        raise FrameError(f"Integer list of {count} x {width} bytes has {len(data) - 4} payload bytes")
    return [int.from_bytes(data[4 + i * width : 4 + (i + 1) * width], "big") for i in range(count)]
