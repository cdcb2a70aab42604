"""Batched oblivious PRF built from k base oblivious transfers.

The receiver holds inputs r_0 .. r_{m-1}. It draws a random m × k bit matrix
T0 and sets T1 = T0 ⊕ C(r_j) row by row, where C is a pseudorandom code.
The sender picks a secret s ∈ {0,1}^k and, through k base OTs, receives
column i of T_{s_i}. Row j of what it gets is q_j = t0_j ⊕ (C(r_j) AND s), so

    F(j, r) = H(j, q_j ⊕ (C(r) AND s))

equals the receiver's H(j, t0_j) exactly when r = r_j.
"""

from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass
import hashlib
import logging
import math
import struct

import numpy as np

from qotmpc.primitives import CRH_TAG, DUMMY_TAG, PRC_TAG
from qotmpc.qot_engine import ProtocolParams, SessionStatus, run_alice, run_bob, run_session
from qotmpc.sim_optics import OpticalConfig
from qotmpc.transport import Channel
from qotmpc.utils import RandomStreams, check_bits, random_bits
from qotmpc.wire import Tag, WireMessage, decode_bits, decode_blobs, encode_bits, encode_blobs

logger = logging.getLogger(__name__)

KAPPA = 128
CODE_SEED_SIZE = 16
HEADER = struct.Struct(">IIH")


class OprfAbort(RuntimeError):
    pass


def output_bits(m: int) -> int:
    """PRF output length v = 64 + 2⌈log2 m⌉."""
    return 64 + 2 * math.ceil(math.log2(max(m, 2)))


################################################################################
# Pseudorandom code and correlation-robust hash
################################################################################


@dataclass(frozen=True)
class PrcSpec:
    code_seed: bytes
    k_width: int = 512

    def __post_init__(self):
        if self.k_width < 2 * KAPPA or self.k_width % 8:
            raise ValueError(f"k_width must be a multiple of 8 and at least {2 * KAPPA}, got {self.k_width}")

    @classmethod
    def random(cls, rng: np.random.Generator, k_width: int = 512) -> "PrcSpec":
        return cls(rng.bytes(CODE_SEED_SIZE), k_width)


def _prc_packed(spec: PrcSpec, data: bytes | None) -> bytes:
    prefix = hashlib.sha256(PRC_TAG)
    prefix.update(struct.pack(">H", len(spec.code_seed)) + spec.code_seed)
    # Dummies take a separate branch so no real input can ever encode like one.
    body = b"\x01" + DUMMY_TAG if data is None else b"\x00" + struct.pack(">I", len(data)) + data
    size = spec.k_width // 8
    out = bytearray()
    counter = 0
    while len(out) < size:
        h = prefix.copy()
        h.update(struct.pack(">I", counter))
        h.update(body)
        out += h.digest()
        counter += 1
    return bytes(out[:size])


def prc_encode(spec: PrcSpec, data: bytes | None) -> np.ndarray:
    """The k-bit codeword C(data). None stands for a dummy input."""
    return np.unpackbits(np.frombuffer(_prc_packed(spec, data), dtype=np.uint8))


def prc_encode_packed(spec: PrcSpec, inputs: Sequence[bytes | None]) -> np.ndarray:
    """Codewords for many inputs as a (len(inputs), k/8) byte array."""
    buf = b"".join(_prc_packed(spec, d) for d in inputs)
    return np.frombuffer(buf, dtype=np.uint8).reshape(len(inputs), spec.k_width // 8)


def crh(j: int, row_packed: bytes, v: int) -> int:
    """H(j, row) truncated to v bits."""
    if not 1 <= v <= 256:
        raise ValueError(f"v must be in [1, 256], got {v}")
    h = hashlib.sha256(CRH_TAG)
    h.update(struct.pack(">I", j))
    h.update(row_packed)
    digest = h.digest()[: (v + 7) // 8]
    return int.from_bytes(digest, "big") >> (-v % 8)


################################################################################
# Keys and outputs
################################################################################


@dataclass(frozen=True, eq=False)
class OprfMatrices:
    t0: np.ndarray
    t1: np.ndarray

    @property
    def m(self) -> int:
        return self.t0.shape[0]

    def column_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.t0[:, i], self.t1[:, i]) for i in range(self.t0.shape[1])]


@dataclass(frozen=True, eq=False)
class OprfSenderKey:
    code: PrcSpec
    s: np.ndarray
    q: np.ndarray

    @property
    def m(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True, eq=False)
class OprfReceiverOutput:
    code: PrcSpec
    j: int
    t0_row: np.ndarray

    def __post_init__(self):
        check_bits(self.t0_row, self.code.k_width, "t0 row")


def receiver_matrices(spec: PrcSpec, inputs: Sequence[bytes | None], rng: np.random.Generator) -> OprfMatrices:
    codes = np.unpackbits(prc_encode_packed(spec, inputs), axis=1)
    t0 = rng.integers(0, 2, size=codes.shape, dtype=np.uint8)
    return OprfMatrices(t0, t0 ^ codes)


def sender_eval(key: OprfSenderKey, j: int, candidate: bytes | None, v: int) -> int:
    if not 0 <= j < key.m:
        raise ValueError(f"Row {j} is outside [0, {key.m})")
    row = key.q[j] ^ (prc_encode(key.code, candidate) & key.s)
    return crh(j, np.packbits(row).tobytes(), v)


def sender_eval_many(key: OprfSenderKey, rows: Sequence[int], candidates: Sequence[bytes | None], v: int) -> list[int]:
    if len(rows) != len(candidates):
        raise ValueError(f"Got {len(rows)} rows for {len(candidates)} candidates")
    if not len(rows):
        return []
    q_packed = np.packbits(key.q, axis=1)
    s_packed = np.packbits(key.s)
    masked = q_packed[np.asarray(rows)] ^ (prc_encode_packed(key.code, candidates) & s_packed)
    return [crh(int(j), masked[i].tobytes(), v) for i, j in enumerate(rows)]


def receiver_output_eval(out: OprfReceiverOutput, v: int) -> int:
    return crh(out.j, np.packbits(out.t0_row).tobytes(), v)


################################################################################
# Base OTs
################################################################################


class OtBackend(ABC):
    """k independent 1-out-of-2 transfers of equal-length bit strings."""

    name = ""

    @abstractmethod
    def transfer(self, pairs, choices, rng: np.random.Generator) -> list[np.ndarray]:
        """Both roles in this process."""

    @abstractmethod
    def send_over(self, channel: Channel, pairs, rng: np.random.Generator):
        """The OT sender's half over a channel."""

    @abstractmethod
    def receive_over(self, channel: Channel, choices, width: int, rng: np.random.Generator) -> list[np.ndarray]:
        """The OT receiver's half over a channel, for strings of width bits."""


class IdealOt(OtBackend):
    """A trusted-dealer stand-in. Over a channel both strings of every pair
    cross the wire and the receiver keeps only its choice, so this backend is
    for tests and benchmarks only."""

    name = "ideal"

    def transfer(self, pairs, choices, rng):
        return [np.asarray(pair[int(c)], dtype=np.uint8) for pair, c in zip(pairs, choices)]

    def send_over(self, channel, pairs, rng):
        logger.warning("Ideal OT over a channel: the peer receives both strings of all %d pairs", len(pairs))
        channel.send(WireMessage(Tag.OT_COLUMNS, encode_blobs([encode_bits(b) for pair in pairs for b in pair])))

    def receive_over(self, channel, choices, width, rng):
        msg = channel.recv()
        if msg.tag != Tag.OT_COLUMNS:
            raise OprfAbort(f"Expected OT columns, got {msg.tag.name}")
        blobs = decode_blobs(msg.payload, expected=2 * len(choices))
        return [decode_bits(blobs[2 * i + int(c)], expected=width) for i, c in enumerate(choices)]


class QotOt(OtBackend):
    """Each string is cut into λ-bit chunks and every chunk moves through its own
    quantum OT session. Both ends must be built with the same seed."""

    name = "qot"

    def __init__(self, params: ProtocolParams, optical: OpticalConfig, seed: int):
        self.params = params
        self.optical = optical
        self.seed = seed
        self.sessions = 0

    def _session_seed(self, i: int, chunk: int) -> int:
        return int(RandomStreams(self.seed)[f"ot:{i}:{chunk}"].integers(0, 2**63))

    def _chunks(self, bits) -> list[np.ndarray]:
        lam = self.params.lam
        bits = np.asarray(bits, dtype=np.uint8)
        padded = np.zeros(-(-len(bits) // lam) * lam, dtype=np.uint8)
        padded[: len(bits)] = bits
        return [padded[k : k + lam] for k in range(0, len(padded), lam)]

    def transfer(self, pairs, choices, rng):
        received = []
        for i, ((a, b), c) in enumerate(zip(pairs, choices)):
            parts = []
            for k, (ca, cb) in enumerate(zip(self._chunks(a), self._chunks(b))):
                result = run_session(self.params, self.optical, ca, cb, int(c), self._session_seed(i, k))
                self.sessions += 1
                if not result.ok:
                    raise OprfAbort(f"Base OT {i} chunk {k}: {result.status.value} ({result.reason.value})")
                parts.append(result.recovered)
            received.append(np.concatenate(parts)[: len(a)])
        return received

    def send_over(self, channel, pairs, rng):
        for i, (a, b) in enumerate(pairs):
            for k, (ca, cb) in enumerate(zip(self._chunks(a), self._chunks(b))):
                result = run_alice(channel, self.params, self.optical, ca, cb, self._session_seed(i, k))
                self.sessions += 1
                if not result.ok:
                    raise OprfAbort(f"Base OT {i} chunk {k}: {result.status.value} ({result.reason.value})")

    def receive_over(self, channel, choices, width, rng):
        received = []
        for i, c in enumerate(choices):
            parts = []
            for k in range(-(-width // self.params.lam)):
                result = run_bob(channel, self.params, self.optical, int(c), self._session_seed(i, k))
                self.sessions += 1
                if not result.ok:
                    if result.status == SessionStatus.FAILED:
                        # Alice has finished her half; stop her before the next session starts.
                        channel.send(WireMessage(Tag.ABORT, encode_blobs([b"decode", b"base OT failed"])))
                    raise OprfAbort(f"Base OT {i} chunk {k}: {result.status.value} ({result.reason.value})")
                parts.append(result.recovered)
            received.append(np.concatenate(parts)[:width])
        return received


def run_base_ots(
    k: int, m: int, s_bits, columns, ot_backend: OtBackend, rng: np.random.Generator
) -> list[np.ndarray]:
    s_bits = check_bits(s_bits, k, "Choice bits")
    if len(columns) != k:
        raise ValueError(f"Expected {k} column pairs, got {len(columns)}")
    for a, b in columns:
        check_bits(a, m, "Column")
        check_bits(b, m, "Column")
    received = ot_backend.transfer(columns, s_bits, rng)
    return [np.asarray(col[:m], dtype=np.uint8) for col in received]


################################################################################
# Protocol
################################################################################


@dataclass(frozen=True, eq=False)
class OprfRun:
    key: OprfSenderKey
    outputs: list[OprfReceiverOutput]
    matrices: OprfMatrices
    v: int


def run_oprf(
    inputs: Sequence[bytes | None],
    backend: OtBackend,
    rng: np.random.Generator,
    k_width: int = 512,
    v: int | None = None,
) -> OprfRun:
    """Both roles in this process."""
    spec = PrcSpec.random(rng, k_width)
    matrices = receiver_matrices(spec, inputs, rng)
    s = random_bits(rng, k_width)
    columns = run_base_ots(k_width, len(inputs), s, matrices.column_pairs(), backend, rng)
    key = OprfSenderKey(spec, s, np.stack(columns, axis=1))
    outputs = [OprfReceiverOutput(spec, j, matrices.t0[j]) for j in range(len(inputs))]
    return OprfRun(key, outputs, matrices, v or output_bits(len(inputs)))


def oprf_receiver(
    channel: Channel,
    inputs: Sequence[bytes | None],
    backend: OtBackend,
    rng: np.random.Generator,
    k_width: int = 512,
    v: int | None = None,
) -> tuple[list[OprfReceiverOutput], OprfMatrices, int]:
    spec = PrcSpec.random(rng, k_width)
    v = v or output_bits(len(inputs))
    channel.send(WireMessage(Tag.OPRF_HEADER, HEADER.pack(len(inputs), k_width, v) + spec.code_seed))
    matrices = receiver_matrices(spec, inputs, rng)
    backend.send_over(channel, matrices.column_pairs(), rng)
    logger.debug("OPRF receiver: %d rows of %d bits transferred", len(inputs), k_width)
    return [OprfReceiverOutput(spec, j, matrices.t0[j]) for j in range(len(inputs))], matrices, v


def oprf_sender(channel: Channel, backend: OtBackend, rng: np.random.Generator) -> tuple[OprfSenderKey, int]:
    msg = channel.recv()
    if msg.tag != Tag.OPRF_HEADER or len(msg.payload) != HEADER.size + CODE_SEED_SIZE:
        raise OprfAbort(f"Expected an OPRF header, got {msg}")
    m, k_width, v = HEADER.unpack_from(msg.payload)
    spec = PrcSpec(msg.payload[HEADER.size :], k_width)
    s = random_bits(rng, k_width)
    columns = backend.receive_over(channel, s, m, rng)
    if len(columns) != k_width or any(len(col) < m for col in columns):
        raise OprfAbort(f"Base OTs returned {len(columns)} columns, expected {k_width} of {m} bits")
    q = np.stack([np.asarray(col[:m], dtype=np.uint8) for col in columns], axis=1)
    return OprfSenderKey(spec, s, q), v
