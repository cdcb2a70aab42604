"""Cheating receivers, simulated to check the security bounds empirically."""

from dataclasses import dataclass
import logging

import numpy as np

from qotmpc.qot_engine import ProtocolParams, alice_check_click_stats, check_formula, class_rounds
from qotmpc.sim_optics import (
    CLASS_ORDER,
    DetectionTrain,
    IntensityClass,
    OpticalConfig,
    click_ratio_stats,
    emit_pulses,
    expected_click_ratios,
    transmit_and_detect_batch,
)

logger = logging.getLogger(__name__)

BATCH_CELLS = 1 << 22


@dataclass(frozen=True)
class UnderreportPolicy:
    # Fraction of single-photon clicks Bob reports as no-click.
    discard_single: float = 0.0
    # Probability of reporting a click on a round where nothing clicked.
    fake_click: float = 0.0

    def __post_init__(self):
        if not 0 <= self.discard_single <= 1 or not 0 <= self.fake_click <= 1:
            raise ValueError(f"Policy rates must be probabilities: {self}")


@dataclass(frozen=True)
class CheatStrategy:
    s1: int = 0
    s2: int = 0
    underreport_policy: UnderreportPolicy | None = None

    def __post_init__(self):
        if self.s1 < 0 or self.s2 < 0:
            raise ValueError(f"s1={self.s1} and s2={self.s2} must be non-negative")


@dataclass
class AttackReport:
    trials: int
    bypassed: int
    both_messages: int

    @property
    def bypass_rate(self) -> float:
        return self.bypassed / self.trials

    @property
    def success_rate(self) -> float:
        return self.both_messages / self.trials


def _random_subsets(rng: np.random.Generator, rows: int, n: int, k: int) -> np.ndarray:
    """A (rows, n) boolean mask with exactly k uniformly placed True entries per row."""
    order = rng.random((rows, n)).argsort(axis=1)
    mask = np.zeros((rows, n), dtype=bool)
    np.put_along_axis(mask, order[:, :k], True, axis=1)
    return mask


def _attack_batch(params: ProtocolParams, strategy: CheatStrategy, rows: int, rng, check: str):
    n, a, N = params.n, params.n_test, params.n_code
    x = rng.integers(0, 2, (rows, n), dtype=np.uint8)
    theta = rng.integers(0, 2, (rows, n), dtype=np.uint8)
    delayed = _random_subsets(rng, rows, n, strategy.s1)
    test = _random_subsets(rng, rows, n, a)

    # Honest rounds are measured on arrival with p_e = 0.
    theta_m = rng.integers(0, 2, (rows, n), dtype=np.uint8)
    x_m = np.where(theta_m == theta, x, rng.integers(0, 2, (rows, n), dtype=np.uint8))
    # Delayed rounds are committed to a blind guess of (x̃, θ̃).
    x_c = np.where(delayed, rng.integers(0, 2, (rows, n), dtype=np.uint8), x_m)
    theta_c = np.where(delayed, rng.integers(0, 2, (rows, n), dtype=np.uint8), theta_m)

    beta = params.beta
    if check == "formula":
        # Only delayed rounds can miss; every other test bit is scored as right.
        claimed = np.where(delayed, x_c, x)
        passed = check_formula(x[test].reshape(rows, a), claimed[test].reshape(rows, a), beta)
    elif check == "text":
        matched = test & (theta_c == theta)
        n_matched = np.count_nonzero(matched, axis=1)
        agree = np.count_nonzero(matched & (x_c == x), axis=1)
        passed = (n_matched > 0) & (agree * beta.denominator >= beta.numerator * n_matched)
    else:
        raise ValueError(f"check must be 'formula' or 'text', got {check!r}")

    # After the basis reveal Bob knows x on untested matched rounds and, with
    # ideal memory, on every untested delayed round. Of the bits he still
    # lacks he guesses s2, each right with probability 1/2, and counts the rest
    # as wrong.
    untested = ~test
    known = np.count_nonzero(untested & ((theta_m == theta) | delayed), axis=1)
    placed = np.minimum(known, 2 * N)
    guessed = np.minimum(strategy.s2, 2 * N - placed)
    correct = placed + rng.binomial(guessed, 0.5)
    both = passed & (correct >= 2 * (N - params.t_corr))
    return passed, both


def run_delayed_measurement_attack(
    params: ProtocolParams, strategy: CheatStrategy, trials: int, rng: np.random.Generator, check: str = "formula"
) -> AttackReport:
    """Bob delays the measurement of s1 uniformly chosen rounds until the bases are revealed,
    then guesses s2 of the bits he is still missing.

    check="formula" scores the test over all test bits, as the bypass
    probability does; check="text" uses the protocol's basis-matched check.
    """
    if strategy.s1 > params.n_test:
        raise ValueError(f"s1={strategy.s1} exceeds the test size {params.n_test}")
    rows = max(1, BATCH_CELLS // params.n)
    bypassed = both = 0
    done = 0
    while done < trials:
        size = min(rows, trials - done)
        passed, success = _attack_batch(params, strategy, size, rng, check)
        bypassed += int(passed.sum())
        both += int(success.sum())
        done += size
    report = AttackReport(trials, bypassed, both)
    logger.info("Delayed measurement s1=%d, s2=%d: bypass %.4f, both messages %.4g", strategy.s1,
                strategy.s2, report.bypass_rate, report.success_rate)
    return report


################################################################################
# Photon number splitting
################################################################################


def underreport(detections: DetectionTrain, policy: UnderreportPolicy, rng: np.random.Generator) -> np.ndarray:
    """The click bitmap a cheating Bob reports."""
    n = len(detections)
    single = detections.arrived == 1
    dropped = single & (rng.random(n) < policy.discard_single)
    faked = ~detections.clicked & (rng.random(n) < policy.fake_click)
    return (detections.clicked & ~dropped) | faked


def _multi_photon_share(reported: np.ndarray, detections: DetectionTrain, classes: np.ndarray) -> float:
    signal = reported & (classes == CLASS_ORDER.index(IntensityClass.SIGNAL))
    total = int(signal.sum())
    return int((signal & (detections.arrived >= 2)).sum()) / total if total else 0.0


@dataclass
class PnsReport:
    trials: int
    detected: int
    # Share of reported signal clicks that carried two or more photons.
    multi_photon_share_honest: float
    multi_photon_share_attack: float

    @property
    def detection_rate(self) -> float:
        return self.detected / self.trials


def run_pns_attack(
    optical: OpticalConfig,
    params: ProtocolParams,
    strategy: CheatStrategy,
    trials: int,
    rng: np.random.Generator,
    n_pulses: int | None = None,
) -> PnsReport:
    """Bob keeps multi-photon pulses and hides single-photon clicks. Returns how often
    Alice's click-ratio check catches him."""
    policy = strategy.underreport_policy or UnderreportPolicy()
    n_pulses = n_pulses or params.pulses_for(optical)
    expected = expected_click_ratios(optical)
    detected = 0
    honest_share = attack_share = 0.0
    for _ in range(trials):
        pulses = emit_pulses(optical, n_pulses, rng)
        detections = transmit_and_detect_batch(pulses, optical, rng)
        reported = underreport(detections, policy, rng)
        stats = click_ratio_stats(reported, pulses.classes)
        if not alice_check_click_stats(stats, params, expected, class_rounds(pulses.classes)):
            detected += 1
        honest_share += _multi_photon_share(detections.clicked, detections, pulses.classes)
        attack_share += _multi_photon_share(reported, detections, pulses.classes)
    report = PnsReport(trials, detected, honest_share / trials, attack_share / trials)
    logger.info("PNS policy %s: detected in %d of %d sessions", policy, detected, trials)
    return report
