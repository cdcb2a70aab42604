from fractions import Fraction
import zlib

import numpy as np
import sympy


class RandomStreams:
    """Named, independent randomness streams derived from one 64-bit seed.

    Every stream is a counter-based Philox generator. The stream for a given
    (seed, name) pair is always the same, no matter in which order or in which
    process the streams are requested, so two processes that agree on a seed
    can each rebuild exactly their own half of a simulation.
    """

    def __init__(self, seed: int):
        if not 0 <= seed < 2**64:
            raise ValueError(f"Seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._streams = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            key = zlib.crc32(name.encode())
            ss = np.random.SeedSequence(self.seed, spawn_key=(key,))
            self._streams[name] = np.random.Generator(np.random.Philox(ss))
        return self._streams[name]

    def child(self, name: str) -> "RandomStreams":
        """A fresh family of streams, e.g. one per session of a batch."""
        sub = int(self[f"child:{name}"].integers(0, 2**63))
        return RandomStreams(sub)


def random_bits(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def to_bits(data: bytes, n_bits: int | None = None) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if n_bits is not None:
        if n_bits > len(bits):
            raise ValueError(f"Asked for {n_bits} bits from {len(data)} bytes")
        bits = bits[:n_bits]
    return bits


def from_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.count_nonzero(np.asarray(a) != np.asarray(b)))


def check_bits(bits, length: int, what: str) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape[-1:] != (length,):
        raise ValueError(f"{what} must have {length} bits, got shape {bits.shape}")
    if np.any(bits > 1):
        raise ValueError(f"{what} must only contain 0/1 entries")
    return bits


def as_fraction(value) -> Fraction:
    """Exact rational from an int, Fraction, decimal string, "p/q" string or float.

    Floats are read through their shortest decimal representation, so 0.95
    becomes 19/20 rather than the nearest binary fraction.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return Fraction(int(value))
    if isinstance(value, float):
        value = repr(value)
    if not isinstance(value, str):
        raise ValueError(f"Cannot read {value!r} as a rational number")
    try:
        r = sympy.Rational(value.strip())
    except (TypeError, ValueError, sympy.SympifyError):
        raise ValueError(f"Cannot read {value!r} as a rational number") from None
    return Fraction(int(r.p), int(r.q))
