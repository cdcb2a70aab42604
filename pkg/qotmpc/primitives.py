"""Commitments, the BCH code and privacy amplification."""

from dataclasses import dataclass
from functools import lru_cache
import hashlib
import hmac
import logging

import galois
import numpy as np
from scipy.linalg import toeplitz

from qotmpc.utils import check_bits, random_bits

logger = logging.getLogger(__name__)

GF2 = galois.GF(2)

DIGEST_SIZE = 32
NONCE_SIZE = 16

# Domain separation for every use of SHA-256 in the package.
COMMIT_TAG = b"qotmpc/commit/v1"
PRC_TAG = b"qotmpc/prc/v1"
CRH_TAG = b"qotmpc/crh/v1"
CUCKOO_TAG = b"qotmpc/cuckoo/v1"
DUMMY_TAG = b"qotmpc/dummy/v1"


################################################################################
# Commitments
################################################################################


@dataclass(frozen=True)
class Commitment:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != DIGEST_SIZE:
            raise ValueError(f"Commitment digest must be {DIGEST_SIZE} bytes, got {len(self.digest)}")


@dataclass(frozen=True)
class Opening:
    x_tilde: int
    theta_tilde: int
    nonce: bytes

    def __post_init__(self):
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError(f"Nonce must be {NONCE_SIZE} bytes, got {len(self.nonce)}")
        if self.x_tilde not in (0, 1) or self.theta_tilde not in (0, 1):
            raise ValueError(f"Opening values must be bits, got {self.x_tilde}, {self.theta_tilde}")


def new_nonce(rng: np.random.Generator) -> bytes:
    return rng.bytes(NONCE_SIZE)


def commit(x_tilde: int, theta_tilde: int, nonce: bytes) -> Commitment:
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"Nonce must be {NONCE_SIZE} bytes, got {len(nonce)}")
    if x_tilde not in (0, 1) or theta_tilde not in (0, 1):
        raise ValueError(f"Can only commit to bits, got x={x_tilde}, theta={theta_tilde}")
    h = hashlib.sha256(COMMIT_TAG)
    h.update(bytes([x_tilde, theta_tilde]))
    h.update(nonce)
    return Commitment(h.digest())


def verify_open(c: Commitment, o: Opening) -> bool:
    return hmac.compare_digest(commit(o.x_tilde, o.theta_tilde, o.nonce).digest, c.digest)


################################################################################
# BCH
################################################################################


@dataclass(frozen=True, eq=False)
class BchSpec:
    """A narrow-sense binary BCH code.

    Use `BchSpec.build` rather than the constructor; it caches the (expensive)
    galois code object per (n, t).
    """

    n_code: int
    k_msg: int
    t_corr: int
    generator: galois.Poly
    code: galois.BCH

    @staticmethod
    def build(n_code: int = 511, t_corr: int = 30, min_k: int = 0) -> "BchSpec":
        return _build_bch(n_code, t_corr, min_k)

    def check(self):
        x_n_minus_1 = galois.Poly.Degrees([self.n_code, 0], field=GF2)
        if x_n_minus_1 % self.generator != 0:
            raise ValueError(f"Generator does not divide x^{self.n_code} - 1")
        if self.code.d < 2 * self.t_corr + 1:
            raise ValueError(f"Designed distance {self.code.d} cannot correct {self.t_corr} errors")
        if self.k_msg != self.n_code - self.generator.degree:
            raise ValueError(f"k={self.k_msg} does not match generator degree {self.generator.degree}")


@lru_cache(maxsize=None)
def _build_bch(n_code: int, t_corr: int, min_k: int) -> BchSpec:
    d = 2 * t_corr + 1
    code = galois.BCH(n_code, d=d)
    if code.k < min_k:
        raise ValueError(f"BCH({n_code}) with t={t_corr} only has k={code.k} < {min_k} message bits")
    spec = BchSpec(n_code, code.k, t_corr, code.generator_poly, code)
    spec.check()
    logger.debug("Built BCH(%d, %d) correcting %d errors", n_code, code.k, t_corr)
    return spec


def bch_encode(spec: BchSpec, msg) -> np.ndarray:
    msg = check_bits(msg, spec.k_msg, "BCH message")
    return spec.code.encode(GF2(msg)).view(np.ndarray).astype(np.uint8)


def bch_decode(spec: BchSpec, word) -> np.ndarray | None:
    """Bounded-distance decoding. Returns the message, or None if the decoder gives up.

    A 2-D batch of words returns a list with one entry per row.
    """
    word = check_bits(word, spec.n_code, "BCH word")
    msgs, n_errors = spec.code.decode(GF2(word), errors=True)
    msgs = msgs.view(np.ndarray).astype(np.uint8)
    if word.ndim == 1:
        return None if int(n_errors) < 0 else msgs
    return [None if int(e) < 0 else m for m, e in zip(msgs, n_errors)]


################################################################################
# Privacy amplification
################################################################################


@dataclass(frozen=True, eq=False)
class AmplifierSeed:
    """Seed of a λ × k Toeplitz matrix: entry (i, j) is seed_bits[k - 1 + i - j]."""

    seed_bits: np.ndarray
    out_len: int
    in_len: int

    def __post_init__(self):
        check_bits(self.seed_bits, self.out_len + self.in_len - 1, "Toeplitz seed")

    @classmethod
    def random(cls, out_len: int, in_len: int, rng: np.random.Generator) -> "AmplifierSeed":
        return cls(random_bits(rng, out_len + in_len - 1), out_len, in_len)

    def matrix(self) -> np.ndarray:
        k = self.in_len
        first_col = self.seed_bits[k - 1 :]
        first_row = self.seed_bits[k - 1 :: -1]
        return toeplitz(first_col, first_row)


def amplify(seed: AmplifierSeed, key) -> np.ndarray:
    key = check_bits(key, seed.in_len, "Amplifier key")
    return (seed.matrix().astype(np.int64) @ key.astype(np.int64) % 2).astype(np.uint8)
