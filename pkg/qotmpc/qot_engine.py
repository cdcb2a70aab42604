"""1-out-of-2 oblivious transfer from BB84 states and hash commitments.

Alice (the sender) holds two λ-bit messages m0, m1. Bob (the receiver) holds
a choice bit c and ends up with m_c. Message flow:

    Bob   -> Alice  NoClickReport     which pulses clicked
    Alice -> Bob    RoundSelection    the n retained signal rounds
    Bob   -> Alice  CommitmentBatch   h(x̃, θ̃, r) for every retained round
    Alice -> Bob    TestChallenge     test subset T, |T| = αn
    Bob   -> Alice  TestOpenings      (x̃, θ̃, r) on T
    Alice -> Bob    TestVerdict, BasisReveal
    Bob   -> Alice  IndexSets         (I0, I1), the good set at position c
    Alice -> Bob    MaskedPayload     hash seeds, y_b = Enc(r̃_b) ⊕ x_{I_b}, z_b = m_b ⊕ f_b(r̃_b)

Any message may be replaced by Abort, after which the session is over.

The quantum link is emulated: both parties rebuild the same pulse train and
detector record from the shared session seed, and each only ever reads its
own half of it.
"""

from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from fractions import Fraction
import logging

import numpy as np

from qotmpc.analysis import epsilon_min
from qotmpc.primitives import (
    DIGEST_SIZE,
    NONCE_SIZE,
    AmplifierSeed,
    BchSpec,
    Commitment,
    Opening,
    amplify,
    bch_decode,
    bch_encode,
    commit,
    new_nonce,
    verify_open,
)
from qotmpc.sim_optics import (
    CLASS_ORDER,
    DetectionTrain,
    IntensityClass,
    OpticalConfig,
    PulseTrain,
    click_ratio_stats,
    emit_pulses,
    expected_click_ratios,
    pulses_for_clicks,
    transmit_and_detect_batch,
)
from qotmpc.transport import Channel, LocalChannel, TransportError
from qotmpc.utils import RandomStreams, as_fraction, check_bits, random_bits
from qotmpc.wire import (
    FrameError,
    Tag,
    TranscriptEntry,
    WireMessage,
    decode_bits,
    decode_blobs,
    decode_u32s,
    encode_bits,
    encode_blobs,
    encode_u32s,
)

logger = logging.getLogger(__name__)

FILL_POLICIES = ("pad", "strict")


class AbortReason(str, Enum):
    CLICK_STATISTICS = "click_statistics"
    INSUFFICIENT_CLICKS = "insufficient_clicks"
    COMMITMENT_MISMATCH = "commitment_mismatch"
    TEST_RATIO = "test_ratio"
    INSUFFICIENT_INDICES = "insufficient_indices"
    PEER_ABORT = "peer_abort"
    TRANSPORT = "transport"
    PROTOCOL_VIOLATION = "protocol_violation"
    # Not an abort: Bob finished the protocol but could not decode.
    DECODE = "decode"


class ProtocolAbort(Exception):
    def __init__(self, reason: AbortReason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason
        self.detail = detail


class SessionStatus(str, Enum):
    OK = "ok"
    ABORTED = "aborted"
    FAILED = "failed"


class Phase(IntEnum):
    """What a party waits for next. Phases only ever increase."""

    CLICK_REPORT = 1
    ROUND_SELECTION = 2
    COMMITMENTS = 3
    CHALLENGE = 4
    OPENINGS = 5
    VERDICT = 6
    BASIS_REVEAL = 7
    INDEX_SETS = 8
    PAYLOAD = 9
    DONE = 10
    ABORTED = 11


@dataclass(frozen=True)
class ProtocolParams:
    lam: int = 256
    n: int = 2044
    alpha: Fraction = Fraction(1, 2)
    beta: Fraction = Fraction(19, 20)
    n_code: int = 511
    t_corr: int = 30
    # Click-ratio tolerance. None derives it per intensity class from delta.
    epsilon: float | None = None
    delta: float = 1e-9
    # Pulses emitted per session. None sizes the train from the optics.
    total_pulses: int | None = None
    fill_policy: str = "pad"

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_fraction(self.alpha))
        object.__setattr__(self, "beta", as_fraction(self.beta))
        if min(self.lam, self.n, self.n_code) < 1 or self.t_corr < 0:
            raise ValueError(f"Invalid sizes lam={self.lam}, n={self.n}, n_code={self.n_code}, t={self.t_corr}")
        if not Fraction(1, 2) < self.beta < 1:
            raise ValueError(f"beta must be in (1/2, 1), got {self.beta}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if (self.alpha * self.n).denominator != 1:
            raise ValueError(f"alpha * n = {self.alpha * self.n} is not an integer")
        if self.n - self.n_test < 2 * self.n_code:
            raise ValueError(f"{self.n - self.n_test} untested rounds cannot fill two codewords of {self.n_code}")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must be in (0, 1], got {self.delta}")
        if self.total_pulses is not None and self.total_pulses < self.n:
            raise ValueError(f"total_pulses={self.total_pulses} is below n={self.n}")
        if self.fill_policy not in FILL_POLICIES:
            raise ValueError(f"fill_policy must be one of {FILL_POLICIES}, got {self.fill_policy!r}")

    @property
    def n_test(self) -> int:
        return int(self.alpha * self.n)

    def bch(self) -> BchSpec:
        return BchSpec.build(self.n_code, self.t_corr, min_k=self.lam)

    def pulses_for(self, optical: OpticalConfig) -> int:
        if self.total_pulses is not None:
            return self.total_pulses
        return pulses_for_clicks(optical, self.n)


################################################################################
# Quantum phase
################################################################################


@dataclass
class QuantumPhase:
    pulses: PulseTrain
    detections: DetectionTrain
    retained: np.ndarray
    stats: dict[IntensityClass, Fraction | None]

    @property
    def alice_x(self):
        return self.pulses.x[self.retained]

    @property
    def alice_theta(self):
        return self.pulses.theta[self.retained]

    @property
    def bob_x(self):
        return self.detections.x_tilde[self.retained]

    @property
    def bob_theta(self):
        return self.detections.theta_tilde[self.retained]


def emulate_link(
    params: ProtocolParams, optical: OpticalConfig, rng: np.random.Generator
) -> tuple[PulseTrain, DetectionTrain]:
    pulses = emit_pulses(optical, params.pulses_for(optical), rng)
    return pulses, transmit_and_detect_batch(pulses, optical, rng)


def retained_rounds(clicked: np.ndarray, classes: np.ndarray, n: int) -> np.ndarray:
    """The first n clicked signal rounds."""
    signal = CLASS_ORDER.index(IntensityClass.SIGNAL)
    candidates = np.flatnonzero(np.asarray(clicked, dtype=bool) & (classes == signal))
    if len(candidates) < n:
        raise ProtocolAbort(
            AbortReason.INSUFFICIENT_CLICKS, f"{len(candidates)} clicked signal rounds, need {n}"
        )
    return candidates[:n]


def run_quantum_phase(params: ProtocolParams, optical: OpticalConfig, rng: np.random.Generator) -> QuantumPhase:
    pulses, detections = emulate_link(params, optical, rng)
    retained = retained_rounds(detections.clicked, pulses.classes, params.n)
    return QuantumPhase(pulses, detections, retained, click_ratio_stats(detections.clicked, pulses.classes))


def class_rounds(classes: np.ndarray) -> dict[IntensityClass, int]:
    counts = np.bincount(classes, minlength=len(CLASS_ORDER))
    return {cls: int(counts[i]) for i, cls in enumerate(CLASS_ORDER)}


def alice_check_click_stats(
    stats: dict[IntensityClass, Fraction | None],
    params: ProtocolParams,
    expected: dict[IntensityClass, float],
    rounds: dict[IntensityClass, int] | None = None,
) -> bool:
    """Every class's click ratio must lie within ε of what Alice expects.

    Without a fixed params.epsilon, ε is derived per class from the number of
    rounds of that class. Classes that were never sent are skipped.
    """
    for cls, ratio in stats.items():
        if ratio is None:
            continue
        if params.epsilon is not None:
            eps = params.epsilon
        elif rounds is not None:
            eps = epsilon_min(rounds[cls], params.delta)
        else:
            raise ValueError("Need either params.epsilon or the per-class round counts")
        if abs(ratio - Fraction(expected[cls])) > Fraction(eps):
            logger.info("Click ratio %.5f of %s is outside %.5f ± %.5f", ratio, cls.value, expected[cls], eps)
            return False
    return True


################################################################################
# Commitment and test
################################################################################


def bob_commit_all(
    x_tilde, theta_tilde, rng: np.random.Generator
) -> tuple[list[Commitment], list[Opening]]:
    openings = [Opening(int(x), int(th), new_nonce(rng)) for x, th in zip(x_tilde, theta_tilde)]
    return [commit(o.x_tilde, o.theta_tilde, o.nonce) for o in openings], openings


def alice_select_test(params: ProtocolParams, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.choice(params.n, size=params.n_test, replace=False)).astype(np.int64)


def check_text(T, openings: Sequence[Opening], x, theta, beta: Fraction) -> bool:
    """Among test rounds where Bob's basis matches Alice's, at least a β fraction of outcomes agree.

    Fails when no test round has matching bases.
    """
    matched = agree = 0
    for i, o in zip(T, openings):
        if o.theta_tilde == theta[i]:
            matched += 1
            agree += o.x_tilde == x[i]
    return matched > 0 and agree >= beta * matched


def check_formula(x_test, x_tilde_test, beta: Fraction):
    """Over all test bits regardless of basis, at most (1 − β)·|T| are wrong.

    The rows of 2-D inputs are scored separately and give a boolean array.
    """
    x_test, x_tilde_test = np.asarray(x_test), np.asarray(x_tilde_test)
    wrong = np.count_nonzero(x_test != x_tilde_test, axis=-1)
    slack = (1 - as_fraction(beta)) * x_test.shape[-1]
    passed = wrong * slack.denominator <= slack.numerator
    return bool(passed) if x_test.ndim == 1 else passed


def alice_verify_test(
    T, commitments: Sequence[Commitment], openings: Sequence[Opening], x, theta, params: ProtocolParams
):
    """Raises ProtocolAbort unless every opening matches and the test ratio holds."""
    if len(openings) != len(T):
        raise ProtocolAbort(AbortReason.PROTOCOL_VIOLATION, f"{len(openings)} openings for {len(T)} test rounds")
    for i, o in zip(T, openings):
        if not verify_open(commitments[i], o):
            raise ProtocolAbort(AbortReason.COMMITMENT_MISMATCH, f"opening of round {i} does not match")
    if not check_text(T, openings, x, theta, params.beta):
        raise ProtocolAbort(AbortReason.TEST_RATIO, f"match ratio below {params.beta}")


################################################################################
# Partition, masking and recovery
################################################################################


def bob_partition(
    theta, theta_tilde, T, c: int, params: ProtocolParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Split the untested rounds into the good set (matching bases) at position c and the bad set.

    Under the "pad" policy a side with fewer than N rounds is filled with
    rounds drawn uniformly from the other side; "strict" aborts instead.
    Both sets are then cut to N by dropping their highest indices.
    """
    N = params.n_code
    untested = np.setdiff1d(np.arange(params.n), T)
    if len(untested) < 2 * N:
        raise ProtocolAbort(AbortReason.INSUFFICIENT_INDICES, f"{len(untested)} untested rounds, need {2 * N}")
    theta, theta_tilde = np.asarray(theta), np.asarray(theta_tilde)
    same = theta[untested] == theta_tilde[untested]
    good, bad = untested[same], untested[~same]
    if len(good) < N or len(bad) < N:
        if params.fill_policy == "strict":
            raise ProtocolAbort(
                AbortReason.INSUFFICIENT_INDICES, f"{len(good)} matched and {len(bad)} mismatched rounds"
            )
        if len(good) < N:
            moved = rng.choice(bad, size=N - len(good), replace=False)
            good, bad = np.union1d(good, moved), np.setdiff1d(bad, moved)
        else:
            moved = rng.choice(good, size=N - len(bad), replace=False)
            good, bad = np.setdiff1d(good, moved), np.union1d(bad, moved)
    good, bad = np.sort(good)[:N], np.sort(bad)[:N]
    return (good, bad) if c == 0 else (bad, good)


@dataclass(frozen=True, eq=False)
class MaskedPayload:
    seeds: tuple[AmplifierSeed, AmplifierSeed]
    y: tuple[np.ndarray, np.ndarray]
    z: tuple[np.ndarray, np.ndarray]

    def encode(self) -> bytes:
        parts = [s.seed_bits for s in self.seeds] + list(self.y) + list(self.z)
        return encode_blobs([encode_bits(p) for p in parts])

    @classmethod
    def decode(cls, data: bytes, lam: int, bch: BchSpec) -> "MaskedPayload":
        blobs = decode_blobs(data, expected=6)
        seed_len = lam + bch.k_msg - 1
        s0, s1 = (AmplifierSeed(decode_bits(b, seed_len), lam, bch.k_msg) for b in blobs[:2])
        y0, y1 = (decode_bits(b, bch.n_code) for b in blobs[2:4])
        z0, z1 = (decode_bits(b, lam) for b in blobs[4:])
        return cls((s0, s1), (y0, y1), (z0, z1))


def alice_mask(
    x, I0, I1, m0, m1, bch: BchSpec, rng: np.random.Generator, seeds=None
) -> tuple[MaskedPayload, tuple[np.ndarray, np.ndarray]]:
    """Returns the payload and the two fresh keys r̃0, r̃1."""
    lam = len(m0)
    check_bits(m1, lam, "m1")
    if len(I0) != bch.n_code or len(I1) != bch.n_code:
        raise ValueError(f"Index sets must have {bch.n_code} entries, got {len(I0)} and {len(I1)}")
    if seeds is None:
        seeds = (AmplifierSeed.random(lam, bch.k_msg, rng), AmplifierSeed.random(lam, bch.k_msg, rng))
    x = np.asarray(x, dtype=np.uint8)
    keys = (random_bits(rng, bch.k_msg), random_bits(rng, bch.k_msg))
    y = tuple(bch_encode(bch, keys[b]) ^ x[idx] for b, idx in enumerate((I0, I1)))
    z = tuple(np.asarray(m, dtype=np.uint8) ^ amplify(seeds[b], keys[b]) for b, m in enumerate((m0, m1)))
    return MaskedPayload(tuple(seeds), y, z), keys


def bob_recover(payload: MaskedPayload, x_tilde_ic, c: int, bch: BchSpec) -> np.ndarray | None:
    """m_c = z_c ⊕ f_c(Decode(y_c ⊕ x̃_{I_c})), or None if decoding fails."""
    word = payload.y[c] ^ check_bits(x_tilde_ic, bch.n_code, "x_tilde on I_c")
    key = bch_decode(bch, word)
    if key is None:
        return None
    return payload.z[c] ^ amplify(payload.seeds[c], key)


################################################################################
# State machines
################################################################################


def _abort_message(e: ProtocolAbort) -> WireMessage:
    return WireMessage(Tag.ABORT, encode_blobs([e.reason.value.encode(), e.detail.encode()]))


class _Party:
    role = ""
    expects: dict[Phase, Tag] = {}

    def __init__(self, params: ProtocolParams, rng: np.random.Generator):
        self.params = params
        self.bch = params.bch()
        self.rng = rng
        self.phase = Phase.CLICK_REPORT
        self.abort: ProtocolAbort | None = None

    @property
    def active(self) -> bool:
        return self.phase < Phase.DONE

    def _advance(self, phase: Phase):
        assert phase > self.phase, f"{self.role} cannot go from {self.phase.name} to {phase.name}"
        self.phase = phase

    def start(self) -> list[WireMessage]:
        return []

    def fail(self, e: ProtocolAbort):
        self.abort = e
        self.phase = Phase.ABORTED

    def handle(self, msg: WireMessage) -> list[WireMessage]:
        try:
            if not self.active:
                raise ProtocolAbort(AbortReason.PROTOCOL_VIOLATION, f"{msg.tag.name} after the session ended")
            if msg.tag == Tag.ABORT:
                reason, detail = (b.decode(errors="replace") for b in decode_blobs(msg.payload, expected=2))
                raise ProtocolAbort(AbortReason.PEER_ABORT, f"{reason}: {detail}")
            expected = self.expects.get(self.phase)
            if msg.tag != expected:
                raise ProtocolAbort(
                    AbortReason.PROTOCOL_VIOLATION,
                    f"{self.role} expected {expected.name if expected else 'nothing'}, got {msg.tag.name}",
                )
            return getattr(self, f"_on_{msg.tag.name.lower()}")(msg.payload)
        except FrameError as e:
            self.fail(ProtocolAbort(AbortReason.PROTOCOL_VIOLATION, str(e)))
            raise self.abort from e
        except ProtocolAbort as e:
            self.fail(e)
            raise


class Alice(_Party):
    role = "alice"
    expects = {
        Phase.CLICK_REPORT: Tag.NO_CLICK_REPORT,
        Phase.COMMITMENTS: Tag.COMMITMENT_BATCH,
        Phase.OPENINGS: Tag.TEST_OPENINGS,
        Phase.INDEX_SETS: Tag.INDEX_SETS,
    }

    def __init__(
        self, params: ProtocolParams, optical: OpticalConfig, m0, m1, pulses: PulseTrain, rng: np.random.Generator
    ):
        super().__init__(params, rng)
        self.optical = optical
        self.m = (check_bits(m0, params.lam, "m0"), check_bits(m1, params.lam, "m1"))
        self.pulses = pulses
        self.keys = None

    def _on_no_click_report(self, payload):
        clicked = decode_bits(payload, expected=len(self.pulses)).astype(bool)
        self.stats = click_ratio_stats(clicked, self.pulses.classes)
        rounds = class_rounds(self.pulses.classes)
        if not alice_check_click_stats(self.stats, self.params, expected_click_ratios(self.optical), rounds):
            raise ProtocolAbort(AbortReason.CLICK_STATISTICS, "reported click ratios are outside tolerance")
        self.retained = retained_rounds(clicked, self.pulses.classes, self.params.n)
        self.x = self.pulses.x[self.retained]
        self.theta = self.pulses.theta[self.retained]
        self._advance(Phase.COMMITMENTS)
        return [WireMessage(Tag.ROUND_SELECTION, encode_u32s(self.retained))]

    def _on_commitment_batch(self, payload):
        if len(payload) != self.params.n * DIGEST_SIZE:
            raise ProtocolAbort(AbortReason.PROTOCOL_VIOLATION, f"commitment batch of {len(payload)} bytes")
        self.commitments = [
            Commitment(payload[i * DIGEST_SIZE : (i + 1) * DIGEST_SIZE]) for i in range(self.params.n)
        ]
        self.T = alice_select_test(self.params, self.rng)
        self._advance(Phase.OPENINGS)
        return [WireMessage(Tag.TEST_CHALLENGE, encode_u32s(self.T))]

    def _on_test_openings(self, payload):
        self.openings = decode_openings(payload)
        alice_verify_test(self.T, self.commitments, self.openings, self.x, self.theta, self.params)
        self._advance(Phase.INDEX_SETS)
        return [WireMessage(Tag.TEST_VERDICT, b"\x01"), WireMessage(Tag.BASIS_REVEAL, encode_bits(self.theta))]

    def _on_index_sets(self, payload):
        I0, I1 = (decode_u32s(b) for b in decode_blobs(payload, expected=2))
        self._check_index_sets(I0, I1)
        self.index_sets = (I0, I1)
        payload, self.keys = alice_mask(self.x, I0, I1, *self.m, self.bch, self.rng)
        self._advance(Phase.DONE)
        return [WireMessage(Tag.MASKED_PAYLOAD, payload.encode())]

    def _check_index_sets(self, I0, I1):
        N = self.params.n_code
        for name, I in (("I0", I0), ("I1", I1)):
            if len(I) != N or np.any(np.diff(I) <= 0) or (len(I) and I[-1] >= self.params.n):
                raise ProtocolAbort(AbortReason.PROTOCOL_VIOLATION, f"{name} is not {N} sorted round indices")
        if np.intersect1d(I0, I1).size or np.intersect1d(np.union1d(I0, I1), self.T).size:
            raise ProtocolAbort(AbortReason.PROTOCOL_VIOLATION, "index sets overlap each other or the test set")


class Bob(_Party):
    role = "bob"
    expects = {
        Phase.ROUND_SELECTION: Tag.ROUND_SELECTION,
        Phase.CHALLENGE: Tag.TEST_CHALLENGE,
        Phase.VERDICT: Tag.TEST_VERDICT,
        Phase.BASIS_REVEAL: Tag.BASIS_REVEAL,
        Phase.PAYLOAD: Tag.MASKED_PAYLOAD,
    }

    def __init__(self, params: ProtocolParams, c: int, detections: DetectionTrain, rng: np.random.Generator):
        super().__init__(params, rng)
        if c not in (0, 1):
            raise ValueError(f"Choice bit must be 0 or 1, got {c}")
        self.c = c
        self.detections = detections
        self.recovered = None

    def start(self):
        self._advance(Phase.ROUND_SELECTION)
        return [WireMessage(Tag.NO_CLICK_REPORT, encode_bits(self.detections.clicked))]

    def _on_round_selection(self, payload):
        rounds = decode_u32s(payload)
        if (
            len(rounds) != self.params.n
            or np.any(np.diff(rounds) <= 0)
            or rounds[-1] >= len(self.detections)
            or not self.detections.clicked[rounds].all()
        ):
            raise ProtocolAbort(AbortReason.PROTOCOL_VIOLATION, "round selection is not n clicked rounds")
        self.x_tilde = self.detections.x_tilde[rounds]
        self.theta_tilde = self.detections.theta_tilde[rounds]
        self.commitments, self.openings = bob_commit_all(self.x_tilde, self.theta_tilde, self.rng)
        self._advance(Phase.CHALLENGE)
        return [WireMessage(Tag.COMMITMENT_BATCH, b"".join(c.digest for c in self.commitments))]

    def _on_test_challenge(self, payload):
        self.T = decode_u32s(payload)
        if len(self.T) != self.params.n_test or np.any(np.diff(self.T) <= 0) or self.T[-1] >= self.params.n:
            raise ProtocolAbort(AbortReason.PROTOCOL_VIOLATION, "test challenge is not αn sorted rounds")
        self._advance(Phase.VERDICT)
        return [WireMessage(Tag.TEST_OPENINGS, encode_openings([self.openings[i] for i in self.T]))]

    def _on_test_verdict(self, payload):
        if payload != b"\x01":
            raise ProtocolAbort(AbortReason.PROTOCOL_VIOLATION, f"unexpected verdict {payload!r}")
        self._advance(Phase.BASIS_REVEAL)
        return []

    def _on_basis_reveal(self, payload):
        self.theta = decode_bits(payload, expected=self.params.n)
        self.index_sets = bob_partition(self.theta, self.theta_tilde, self.T, self.c, self.params, self.rng)
        self._advance(Phase.PAYLOAD)
        return [WireMessage(Tag.INDEX_SETS, encode_blobs([encode_u32s(I) for I in self.index_sets]))]

    def _on_masked_payload(self, payload):
        self.payload = MaskedPayload.decode(payload, self.params.lam, self.bch)
        self.recovered = self.recover(self.c)
        self._advance(Phase.DONE)
        return []

    def recover(self, branch: int) -> np.ndarray | None:
        """Run recovery on either branch. Only branch c is expected to succeed."""
        return bob_recover(self.payload, self.x_tilde[self.index_sets[branch]], branch, self.bch)


def encode_openings(openings: Sequence[Opening]) -> bytes:
    return b"".join(bytes([o.x_tilde, o.theta_tilde]) + o.nonce for o in openings)


def decode_openings(payload: bytes) -> list[Opening]:
    size = 2 + NONCE_SIZE
    if len(payload) % size:
        raise FrameError(f"Openings payload of {len(payload)} bytes is not a multiple of {size}")
    try:
        return [
            Opening(payload[k], payload[k + 1], payload[k + 2 : k + size]) for k in range(0, len(payload), size)
        ]
    except ValueError as e:
        raise FrameError(str(e)) from None


################################################################################
# Drivers
################################################################################


@dataclass
class SessionResult:
    status: SessionStatus
    reason: AbortReason | None = None
    detail: str = ""
    recovered: np.ndarray | None = None
    transcript: list[TranscriptEntry] = field(default_factory=list, repr=False)
    alice: Alice | None = field(default=None, repr=False)
    bob: Bob | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == SessionStatus.OK


def _parties(params, optical, seed, m0=None, m1=None, c=None):
    streams = RandomStreams(seed)
    pulses, detections = emulate_link(params, optical, streams["quantum"])
    alice = Alice(params, optical, m0, m1, pulses, streams["alice"]) if m0 is not None else None
    bob = Bob(params, c, detections, streams["bob"]) if c is not None else None
    return alice, bob


def _deliver(party: _Party, channel: Channel, msg: WireMessage):
    try:
        outgoing = party.handle(msg)
    except ProtocolAbort as e:
        logger.warning("%s aborts: %s", party.role, e)
        if e.reason != AbortReason.PEER_ABORT:
            channel.send(_abort_message(e))
        return
    for out in outgoing:
        channel.send(out)


def _result(parties: Sequence[_Party], transcript) -> SessionResult:
    alice = next((p for p in parties if isinstance(p, Alice)), None)
    bob = next((p for p in parties if isinstance(p, Bob)), None)
    aborts = [p.abort for p in parties if p.abort is not None]
    # Prefer the party that started the abort over the one that was told about it.
    aborts.sort(key=lambda e: e.reason == AbortReason.PEER_ABORT)
    if aborts:
        e = aborts[0]
        return SessionResult(SessionStatus.ABORTED, e.reason, e.detail, None, transcript, alice, bob)
    if bob is not None and bob.phase == Phase.DONE and bob.recovered is None:
        return SessionResult(SessionStatus.FAILED, AbortReason.DECODE, "BCH decoding failed", None, transcript,
                             alice, bob)
    recovered = bob.recovered if bob is not None else None
    return SessionResult(SessionStatus.OK, None, "", recovered, transcript, alice, bob)


def _drive(party: _Party, channel: Channel, timeout: float | None) -> SessionResult:
    try:
        for out in party.start():
            channel.send(out)
        while party.active:
            _deliver(party, channel, channel.recv(timeout))
    except (TransportError, FrameError) as e:
        logger.warning("%s: transport failure: %s", party.role, e)
        if party.abort is None:
            party.fail(ProtocolAbort(AbortReason.TRANSPORT, str(e)))
    return _result([party], channel.transcript)


def run_alice(channel: Channel, params, optical, m0, m1, seed: int, timeout: float | None = 60.0) -> SessionResult:
    alice, _ = _parties(params, optical, seed, m0=m0, m1=m1)
    return _drive(alice, channel, timeout)


def run_bob(channel: Channel, params, optical, c: int, seed: int, timeout: float | None = 60.0) -> SessionResult:
    _, bob = _parties(params, optical, seed, c=c)
    return _drive(bob, channel, timeout)


def run_session(params: ProtocolParams, optical: OpticalConfig, m0, m1, c: int, seed: int) -> SessionResult:
    """Run both parties in this thread, delivering messages in the order they were sent."""
    alice, bob = _parties(params, optical, seed, m0=m0, m1=m1, c=c)
    a_ch, b_ch = LocalChannel.pair(alice.role, bob.role)
    for out in bob.start():
        b_ch.send(out)
    moved = True
    while moved:
        moved = False
        for party, channel in ((alice, a_ch), (bob, b_ch)):
            while party.active and channel.pending():
                _deliver(party, channel, channel.recv(timeout=0))
                moved = True
    result = _result([alice, bob], a_ch.transcript)
    logger.debug("Session %d finished: %s", seed, result.status.value)
    return result


@dataclass
class BatchReport:
    sessions: int
    correct: int = 0
    aborted: int = 0
    # Completed sessions whose output was missing or not m_c.
    failed: int = 0
    # Sessions where the other branch also decoded to m_{1-c}.
    other_branch: int = 0
    abort_reasons: Counter = field(default_factory=Counter)

    @property
    def failure_rate(self) -> float:
        return (self.aborted + self.failed) / self.sessions

    def as_dict(self) -> dict:
        return {
            "sessions": self.sessions,
            "correct": self.correct,
            "aborted": self.aborted,
            "failed": self.failed,
            "other_branch": self.other_branch,
            "failure_rate": self.failure_rate,
            "abort_reasons": dict(self.abort_reasons),
        }


def run_batch(params: ProtocolParams, optical: OpticalConfig, sessions: int, seed: int) -> BatchReport:
    """Independent local sessions with alternating choice bits, each under a seed derived from `seed`."""
    if sessions < 1:
        raise ValueError(f"Need at least one session, got {sessions}")
    streams = RandomStreams(seed)
    report = BatchReport(sessions)
    for k in range(sessions):
        c = k % 2
        child = streams.child(f"session:{k}")
        rng = child["messages"]
        m = (random_bits(rng, params.lam), random_bits(rng, params.lam))
        result = run_session(params, optical, m[0], m[1], c, child.seed)
        if result.status == SessionStatus.ABORTED:
            report.aborted += 1
            report.abort_reasons[result.reason.value] += 1
            continue
        if result.ok and np.array_equal(result.recovered, m[c]):
            report.correct += 1
        else:
            report.failed += 1
        other = result.bob.recover(1 - c)
        if other is not None and np.array_equal(other, m[1 - c]):
            report.other_branch += 1
    logger.info("Batch of %d sessions: %d correct, %d aborted, %d failed", sessions, report.correct,
                report.aborted, report.failed)
    return report


PROTOCOL_STEPS = (
    ("bob", Tag.NO_CLICK_REPORT),
    ("alice", Tag.ROUND_SELECTION),
    ("bob", Tag.COMMITMENT_BATCH),
    ("alice", Tag.TEST_CHALLENGE),
    ("bob", Tag.TEST_OPENINGS),
    ("alice", Tag.TEST_VERDICT),
    ("alice", Tag.BASIS_REVEAL),
    ("bob", Tag.INDEX_SETS),
    ("alice", Tag.MASKED_PAYLOAD),
)


def validate_transcript(entries: Sequence[TranscriptEntry]):
    """Raises ValueError unless entries are a prefix of the protocol, optionally ended by one Abort."""
    for k, entry in enumerate(entries):
        if entry.seq != k:
            raise ValueError(f"Entry {k} has sequence number {entry.seq}")
        if entry.tag == Tag.ABORT:
            if k != len(entries) - 1:
                raise ValueError(f"Abort at entry {k} is followed by {len(entries) - k - 1} more messages")
            return
        if k >= len(PROTOCOL_STEPS):
            raise ValueError(f"Message {entry.tag.name} after the protocol finished")
        if (entry.sender, entry.tag) != PROTOCOL_STEPS[k]:
            sender, tag = PROTOCOL_STEPS[k]
            raise ValueError(f"Entry {k} is {entry.sender}:{entry.tag.name}, expected {sender}:{tag.name}")
