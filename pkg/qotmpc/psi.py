"""Private set intersection from the batched OPRF.

The receiver hashes its set Y into ⌈1.2n⌉ bins with three hash functions and
a stash of s slots, and runs one OPRF instance per bin and per stash slot.
The sender, holding X, answers with the OPRF values of every x under every
key it could have landed on, each set in random order. The receiver keeps the
items whose own OPRF value shows up, and sends the result back.
"""

from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import hashlib
import logging
import math
from pathlib import Path
import struct
import time

import numpy as np

from qotmpc.oprf import (
    IdealOt,
    OprfReceiverOutput,
    OprfSenderKey,
    OtBackend,
    oprf_receiver,
    oprf_sender,
    output_bits,
    receiver_output_eval,
    sender_eval_many,
)
from qotmpc.primitives import CUCKOO_TAG
from qotmpc.transport import Channel, LocalChannel, TransportError
from qotmpc.utils import RandomStreams
from qotmpc.wire import Tag, TranscriptEntry, WireMessage, decode_blobs, decode_uints, encode_blobs, encode_uints

logger = logging.getLogger(__name__)

N_HASHES = 3
HASH_SEED_SIZE = 16
SETUP = struct.Struct(">IHH")


class CuckooBuildError(ValueError):
    pass


class PsiError(RuntimeError):
    pass


@dataclass(frozen=True)
class PsiConfig:
    n: int
    # Stash slots
    s: int = 6
    # PRF output bits. None picks the OPRF default for n_bins + s rows.
    v: int | None = None
    eviction_limit: int = 500
    k_width: int = 512

    def __post_init__(self):
        if self.n < 1 or self.s < 0 or self.eviction_limit < 0:
            raise ValueError(f"Need n ≥ 1, s ≥ 0 and eviction_limit ≥ 0, got {self}")
        if self.v is None:
            object.__setattr__(self, "v", output_bits(self.n_bins + self.s))
        if not self.min_v <= self.v <= 256:
            raise ValueError(f"v={self.v} must be in [{self.min_v}, 256] for n={self.n}")

    @property
    def n_bins(self) -> int:
        return -(-6 * self.n // 5)

    @property
    def min_v(self) -> int:
        return 40 + 2 * math.ceil(math.log2(max(self.n, 2)))

    @property
    def oprf_rows(self) -> int:
        return self.n_bins + self.s


################################################################################
# Cuckoo hashing
################################################################################


@dataclass(frozen=True)
class CuckooHashes:
    """h_1, h_2, h_3 for one hash seed."""

    seed: bytes
    n_bins: int

    def bin(self, i: int, y: bytes) -> int:
        h = hashlib.sha256(CUCKOO_TAG)
        h.update(self.seed)
        h.update(bytes([i]))
        h.update(y)
        return int.from_bytes(h.digest()[:8], "big") % self.n_bins

    def candidates(self, y: bytes) -> tuple[int, ...]:
        return tuple(self.bin(i, y) for i in range(1, N_HASHES + 1))


@dataclass(eq=False)
class CuckooTable:
    config: PsiConfig
    hashes: CuckooHashes
    bins: list[bytes | None] = field(default_factory=list)
    # Which hash placed the item in each bin, 0 for an empty bin.
    hash_choice: list[int] = field(default_factory=list)
    stash: list[bytes] = field(default_factory=list)

    def __post_init__(self):
        if not self.bins:
            self.bins = [None] * self.config.n_bins
            self.hash_choice = [0] * self.config.n_bins

    def __len__(self):
        return sum(y is not None for y in self.bins) + len(self.stash)

    def placement(self, y: bytes) -> int | None:
        """z(y): the hash index that placed y, None for a stashed item."""
        for i, b in enumerate(self.hashes.candidates(y), 1):
            if self.bins[b] == y and self.hash_choice[b] == i:
                return i
        if y in self.stash:
            return None
        raise KeyError(y)

    def check(self):
        if len(self.stash) > self.config.s:
            raise ValueError(f"Stash holds {len(self.stash)} items, bound is {self.config.s}")
        for b, (y, i) in enumerate(zip(self.bins, self.hash_choice)):
            if (y is None) != (i == 0):
                raise ValueError(f"Bin {b} has item {y!r} with hash choice {i}")
            if y is not None and self.hashes.bin(i, y) != b:
                raise ValueError(f"Item {y!r} sits in bin {b}, but h_{i} maps it to {self.hashes.bin(i, y)}")


def cuckoo_build(
    items: Iterable[bytes], config: PsiConfig, rng: np.random.Generator, hash_seed: bytes | None = None
) -> CuckooTable:
    items = list(items)
    if len(set(items)) != len(items):
        raise ValueError(f"Items must be distinct, got {len(items) - len(set(items))} duplicates")
    if len(items) > config.n:
        raise ValueError(f"{len(items)} items exceed the set size bound n={config.n}")
    hashes = CuckooHashes(hash_seed or rng.bytes(HASH_SEED_SIZE), config.n_bins)
    table = CuckooTable(config, hashes)
    candidates = {}

    for y in items:
        cur, last = y, None
        for _ in range(config.eviction_limit + 1):
            if cur not in candidates:
                candidates[cur] = hashes.candidates(cur)
            cands = candidates[cur]
            free = next((i for i, b in enumerate(cands, 1) if table.bins[b] is None), None)
            if free is not None:
                table.bins[cands[free - 1]] = cur
                table.hash_choice[cands[free - 1]] = free
                cur = None
                break
            # Random walk, never straight back into the bin we were just evicted from.
            options = [i for i, b in enumerate(cands, 1) if b != last] or list(range(1, N_HASHES + 1))
            i = options[rng.integers(len(options))]
            last = cands[i - 1]
            cur, table.bins[last] = table.bins[last], cur
            table.hash_choice[last] = i
        if cur is not None:
            table.stash.append(cur)
            if len(table.stash) > config.s:
                raise CuckooBuildError(f"Stash overflow: more than {config.s} items after {len(items)} inserts")
    logger.debug("Cuckoo table: %d items, %d in stash", len(items), len(table.stash))
    return table


def cuckoo_build_retrying(
    items: Iterable[bytes], config: PsiConfig, rng: np.random.Generator, attempts: int = 8
) -> CuckooTable:
    items = list(items)
    for attempt in range(attempts):
        try:
            return cuckoo_build(items, config, rng)
        except CuckooBuildError as e:
            logger.info("Cuckoo attempt %d failed (%s), resampling hash functions", attempt + 1, e)
    raise CuckooBuildError(f"No stash of size {config.s} was enough in {attempts} attempts")


def receiver_oprf_inputs(table: CuckooTable) -> list[bytes | None]:
    """One OPRF input per bin and stash slot; None marks a dummy."""
    inputs = [None if y is None else y + bytes([i]) for y, i in zip(table.bins, table.hash_choice)]
    inputs += table.stash + [None] * (table.config.s - len(table.stash))
    return inputs


################################################################################
# Query sets
################################################################################


@dataclass(eq=False)
class QuerySets:
    h: list[list[int]]
    stash: list[list[int]]

    def encode(self, v: int) -> bytes:
        width = (v + 7) // 8
        return encode_blobs([encode_uints(values, width) for values in self.h + self.stash])

    @classmethod
    def decode(cls, data: bytes, v: int, s: int) -> "QuerySets":
        width = (v + 7) // 8
        sets = [decode_uints(blob, width) for blob in decode_blobs(data, expected=N_HASHES + s)]
        return cls(sets[:N_HASHES], sets[N_HASHES:])


def sender_build_query_sets(
    key: OprfSenderKey,
    X: Sequence[bytes],
    config: PsiConfig,
    hashes: CuckooHashes,
    rng: np.random.Generator,
) -> QuerySets:
    X = list(X)

    def shuffled(values):
        return [values[k] for k in rng.permutation(len(values))]

    h = []
    for i in range(1, N_HASHES + 1):
        rows = [hashes.bin(i, x) for x in X]
        h.append(shuffled(sender_eval_many(key, rows, [x + bytes([i]) for x in X], config.v)))
    stash = [
        shuffled(sender_eval_many(key, [config.n_bins + j] * len(X), X, config.v)) for j in range(config.s)
    ]
    return QuerySets(h, stash)


def receiver_match(
    table: CuckooTable, outputs: Sequence[OprfReceiverOutput], query_sets: QuerySets, v: int
) -> set[bytes]:
    h = [set(values) for values in query_sets.h]
    found = set()
    for b, (y, i) in enumerate(zip(table.bins, table.hash_choice)):
        if y is not None and receiver_output_eval(outputs[b], v) in h[i - 1]:
            found.add(y)
    for j, y in enumerate(table.stash):
        if receiver_output_eval(outputs[table.config.n_bins + j], v) in set(query_sets.stash[j]):
            found.add(y)
    return found


################################################################################
# Protocol
################################################################################


def _expect(channel: Channel, tag: Tag) -> bytes:
    msg = channel.recv()
    if msg.tag == Tag.ABORT:
        raise PsiError(f"{channel.peer} aborted the run")
    if msg.tag != tag:
        raise PsiError(f"{channel.role} expected {tag.name}, got {msg.tag.name}")
    return msg.payload


def psi_receiver(
    channel: Channel, Y: Sequence[bytes], config: PsiConfig, backend: OtBackend, rng: np.random.Generator
) -> list[bytes]:
    table = cuckoo_build_retrying(Y, config, rng)
    channel.send(WireMessage(Tag.PSI_SETUP, SETUP.pack(config.n, config.s, config.v) + table.hashes.seed))
    outputs, _, v = oprf_receiver(channel, receiver_oprf_inputs(table), backend, rng, config.k_width, config.v)
    query_sets = QuerySets.decode(_expect(channel, Tag.PSI_QUERY_SETS), v, config.s)
    intersection = sorted(receiver_match(table, outputs, query_sets, v))
    channel.send(WireMessage(Tag.PSI_RESULT, encode_blobs(intersection)))
    return intersection


def psi_sender(channel: Channel, X: Sequence[bytes], backend: OtBackend, rng: np.random.Generator) -> list[bytes]:
    payload = _expect(channel, Tag.PSI_SETUP)
    if len(payload) != SETUP.size + HASH_SEED_SIZE:
        raise PsiError(f"Setup message of {len(payload)} bytes")
    n, s, v = SETUP.unpack_from(payload)
    config = PsiConfig(n, s, v)
    hashes = CuckooHashes(payload[SETUP.size :], config.n_bins)
    key, oprf_v = oprf_sender(channel, backend, rng)
    if oprf_v != v or key.m != config.oprf_rows:
        raise PsiError(f"OPRF batch of {key.m} rows × {oprf_v} bits does not match the setup")
    query_sets = sender_build_query_sets(key, X, config, hashes, rng)
    channel.send(WireMessage(Tag.PSI_QUERY_SETS, query_sets.encode(v)))
    return decode_blobs(_expect(channel, Tag.PSI_RESULT))


@dataclass
class PsiMetrics:
    bytes_sent_receiver: int
    bytes_sent_sender: int
    wall_ms: float
    # Receiver set bound, sender set size
    n: int
    m: int
    s: int
    v: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class PsiResult:
    intersection: list[bytes]
    metrics: PsiMetrics
    transcript: list[TranscriptEntry] = field(default_factory=list, repr=False)


def _closing(role, channel, *args):
    try:
        return role(channel, *args)
    finally:
        channel.close()


def run_psi(
    X: Sequence[bytes],
    Y: Sequence[bytes],
    config: PsiConfig | None = None,
    backend: OtBackend | None = None,
    seed: int = 0,
) -> PsiResult:
    """Sender (holding X) and receiver (holding Y) on two threads over a local channel pair.

    The default IdealOt backend hands the sender both base-OT strings, and with
    them the receiver's encoded inputs. Only QotOt keeps the receiver's set private.
    """
    config = config or PsiConfig(max(len(Y), 1))
    backend = backend or IdealOt()
    streams = RandomStreams(seed)
    r_ch, s_ch = LocalChannel.pair("receiver", "sender")
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=2) as pool:
        receiving = pool.submit(_closing, psi_receiver, r_ch, Y, config, backend, streams["psi-receiver"])
        sending = pool.submit(_closing, psi_sender, s_ch, X, backend, streams["psi-sender"])
        errors = [e for e in (receiving.exception(), sending.exception()) if e is not None]
    if errors:
        # The side that failed first is the interesting one; the other only saw the channel close.
        errors.sort(key=lambda e: isinstance(e, TransportError))
        raise errors[0]
    wall_ms = (time.perf_counter() - start) * 1000
    if receiving.result() != sending.result():
        raise PsiError("The two parties output different intersections")
    metrics = PsiMetrics(r_ch.bytes_sent, s_ch.bytes_sent, wall_ms, config.n, len(X), config.s, config.v)
    logger.info("PSI: |X|=%d |Y|=%d |O|=%d in %.0f ms", len(X), len(Y), len(receiving.result()), wall_ms)
    return PsiResult(receiving.result(), metrics, r_ch.transcript)


def read_items(path) -> list[bytes]:
    """Newline-delimited UTF-8 items, whitespace trimmed, empty lines and repeats dropped."""
    items = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line := line.strip():
            items[line.encode()] = None
    return list(items)


def write_items(path, items: Iterable[bytes]):
    Path(path).write_text("".join(y.decode() + "\n" for y in items), encoding="utf-8")
