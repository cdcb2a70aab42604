"""Decoy-state BB84 physical layer.

Alice's weak coherent source emits pulses whose mean photon number is drawn
among three intensity classes (signal μ, decoy ν, vacuum 0). Each photon
survives the channel independently with probability η = 10^(-attenuation/10),
and Bob's threshold detector clicks when at least one photon arrives or on a
dark count. Detector efficiency is folded into the attenuation.
"""

from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
import math

import numpy as np


class IntensityClass(str, Enum):
    SIGNAL = "signal"
    DECOY = "decoy"
    VACUUM = "vacuum"


CLASS_ORDER = (IntensityClass.SIGNAL, IntensityClass.DECOY, IntensityClass.VACUUM)


@dataclass(frozen=True)
class OpticalConfig:
    mu: float = 0.5
    nu: float = 0.1
    p1: float = 0.7
    p2: float = 0.2
    attenuation_db: float = 10.0
    p_dark: float = 1e-6
    p_e: float = 0.01
    # Only used to turn sessions per pulse into a rate. The default is illustrative.
    pulse_rate_hz: float = 100e6

    def __post_init__(self):
        if not (0 <= self.p1 <= 1 and 0 <= self.p2 <= 1 and self.p1 + self.p2 <= 1):
            raise ValueError(f"Invalid emission probabilities p1={self.p1}, p2={self.p2}")
        if not self.mu > self.nu >= 0:
            raise ValueError(f"Need mu > nu >= 0, got mu={self.mu}, nu={self.nu}")
        if not (0 <= self.p_dark <= 1 and 0 <= self.p_e <= 1):
            raise ValueError(f"p_dark={self.p_dark} and p_e={self.p_e} must be probabilities")
        if self.attenuation_db < 0:
            raise ValueError(f"attenuation_db must be >= 0, got {self.attenuation_db}")
        if self.pulse_rate_hz <= 0:
            raise ValueError(f"pulse_rate_hz must be positive, got {self.pulse_rate_hz}")

    @property
    def eta(self) -> float:
        return 10 ** (-self.attenuation_db / 10)

    def mean_photons(self, cls: IntensityClass) -> float:
        return {IntensityClass.SIGNAL: self.mu, IntensityClass.DECOY: self.nu, IntensityClass.VACUUM: 0.0}[
            IntensityClass(cls)
        ]

    @property
    def class_probabilities(self) -> tuple[float, float, float]:
        return self.p1, self.p2, max(0.0, 1 - self.p1 - self.p2)


@dataclass(frozen=True)
class PulseRecord:
    round_index: int
    intensity_class: IntensityClass
    x: int
    theta: int
    photon_count: int


@dataclass(frozen=True)
class DetectionEvent:
    round_index: int
    clicked: bool
    theta_tilde: int
    x_tilde: int | None = None

    def __post_init__(self):
        if not self.clicked and self.x_tilde is not None:
            raise ValueError(f"Round {self.round_index} has no click but carries x_tilde={self.x_tilde}")


def emit_pulse(
    config: OpticalConfig,
    x: int,
    theta: int,
    rng: np.random.Generator,
    round_index: int = 0,
    intensity_class: IntensityClass | None = None,
) -> PulseRecord:
    """Emit one pulse encoding |x⟩_θ. The intensity class is drawn unless forced."""
    if intensity_class is None:
        intensity_class = CLASS_ORDER[rng.choice(3, p=config.class_probabilities)]
    intensity_class = IntensityClass(intensity_class)
    photons = int(rng.poisson(config.mean_photons(intensity_class)))
    return PulseRecord(round_index, intensity_class, int(x), int(theta), photons)


def transmit_and_detect(
    pulse: PulseRecord, theta_tilde: int, config: OpticalConfig, rng: np.random.Generator
) -> DetectionEvent:
    survivors = int(rng.binomial(pulse.photon_count, config.eta))
    dark = bool(rng.random() < config.p_dark)
    if survivors == 0 and not dark:
        return DetectionEvent(pulse.round_index, False, int(theta_tilde))
    if survivors > 0 and theta_tilde == pulse.theta:
        x_tilde = pulse.x ^ int(rng.random() < config.p_e)
    else:
        # Mismatched basis or a dark count alone: the outcome is a fair coin.
        x_tilde = int(rng.integers(2))
    return DetectionEvent(pulse.round_index, True, int(theta_tilde), x_tilde)


################################################################################
# Vectorised pulse trains
################################################################################


@dataclass
class PulseTrain:
    classes: np.ndarray  # int8 index into CLASS_ORDER
    x: np.ndarray
    theta: np.ndarray
    photon_count: np.ndarray

    def __len__(self):
        return len(self.x)

    def records(self) -> Iterator[PulseRecord]:
        for i in range(len(self)):
            yield PulseRecord(
                i, CLASS_ORDER[self.classes[i]], int(self.x[i]), int(self.theta[i]), int(self.photon_count[i])
            )


@dataclass
class DetectionTrain:
    clicked: np.ndarray
    theta_tilde: np.ndarray
    x_tilde: np.ndarray  # meaningless where clicked is False
    # Photons that reached Bob. Only an adversarial receiver looks at this.
    arrived: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.clicked)

    def events(self) -> Iterator[DetectionEvent]:
        for i in range(len(self)):
            clicked = bool(self.clicked[i])
            yield DetectionEvent(
                i, clicked, int(self.theta_tilde[i]), int(self.x_tilde[i]) if clicked else None
            )


def emit_pulses(config: OpticalConfig, n_pulses: int, rng: np.random.Generator) -> PulseTrain:
    classes = rng.choice(3, size=n_pulses, p=config.class_probabilities).astype(np.int8)
    means = np.array([config.mean_photons(c) for c in CLASS_ORDER])[classes]
    return PulseTrain(
        classes=classes,
        x=rng.integers(0, 2, size=n_pulses, dtype=np.uint8),
        theta=rng.integers(0, 2, size=n_pulses, dtype=np.uint8),
        photon_count=rng.poisson(means),
    )


def transmit_and_detect_batch(
    pulses: PulseTrain, config: OpticalConfig, rng: np.random.Generator, theta_tilde: np.ndarray | None = None
) -> DetectionTrain:
    n = len(pulses)
    if theta_tilde is None:
        theta_tilde = rng.integers(0, 2, size=n, dtype=np.uint8)
    arrived = rng.binomial(pulses.photon_count, config.eta)
    dark = rng.random(n) < config.p_dark
    flips = (rng.random(n) < config.p_e).astype(np.uint8)
    coins = rng.integers(0, 2, size=n, dtype=np.uint8)
    genuine_match = (arrived > 0) & (theta_tilde == pulses.theta)
    x_tilde = np.where(genuine_match, pulses.x ^ flips, coins).astype(np.uint8)
    return DetectionTrain(
        clicked=(arrived > 0) | dark, theta_tilde=np.asarray(theta_tilde, dtype=np.uint8), x_tilde=x_tilde,
        arrived=arrived,
    )


def click_ratio_stats(
    events: Sequence[DetectionEvent] | np.ndarray, classes: Sequence[IntensityClass] | np.ndarray
) -> dict[IntensityClass, Fraction | None]:
    """Exact clicks/rounds per intensity class. A class with no rounds maps to None."""
    if isinstance(events, np.ndarray):
        clicked = events.astype(bool)
    else:
        clicked = np.array([e.clicked for e in events], dtype=bool)
    if len(clicked) != len(classes):
        raise ValueError(f"Got {len(clicked)} events for {len(classes)} class labels")
    if isinstance(classes, np.ndarray) and classes.dtype.kind in "iu":
        idx = classes
    else:
        idx = np.array([CLASS_ORDER.index(IntensityClass(c)) for c in classes], dtype=np.int8)
    stats = {}
    for i, cls in enumerate(CLASS_ORDER):
        mask = idx == i
        rounds = int(np.count_nonzero(mask))
        stats[cls] = Fraction(int(np.count_nonzero(clicked & mask)), rounds) if rounds else None
    return stats


def expected_click_ratios(config: OpticalConfig) -> dict[IntensityClass, float]:
    return {
        cls: 1 - (1 - config.p_dark) * math.exp(-config.mean_photons(cls) * config.eta) for cls in CLASS_ORDER
    }


def pulses_for_clicks(config: OpticalConfig, n: int, margin: float = 6.0) -> int:
    """Pulse budget that yields at least n signal clicks except with ~margin-sigma bad luck."""
    p = config.p1 * expected_click_ratios(config)[IntensityClass.SIGNAL]
    if p <= 0:
        raise ValueError("Signal pulses can never click with this configuration")
    # Solve N p - margin sqrt(N p (1-p)) >= n for N.
    root = (margin * math.sqrt(1 - p) + math.sqrt(margin**2 * (1 - p) + 4 * n)) / 2
    return math.ceil(root**2 / p) + 1
