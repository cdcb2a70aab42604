from fractions import Fraction
import math

import numpy as np
import pytest

from qotmpc.sim_optics import (
    CLASS_ORDER,
    DetectionEvent,
    IntensityClass,
    OpticalConfig,
    click_ratio_stats,
    emit_pulse,
    emit_pulses,
    expected_click_ratios,
    pulses_for_clicks,
    transmit_and_detect,
    transmit_and_detect_batch,
)


def test_config_validation():
    with pytest.raises(ValueError):
        OpticalConfig(p1=0.8, p2=0.3)
    with pytest.raises(ValueError):
        OpticalConfig(mu=0.1, nu=0.5)
    with pytest.raises(ValueError):
        OpticalConfig(attenuation_db=-1)
    with pytest.raises(ValueError):
        OpticalConfig(p_e=1.5)


def test_eta_from_attenuation():
    assert OpticalConfig(attenuation_db=0).eta == 1
    assert OpticalConfig(attenuation_db=10).eta == pytest.approx(0.1)
    assert OpticalConfig(attenuation_db=30).eta == pytest.approx(1e-3)


def test_vacuum_pulse_without_dark_counts_never_clicks():
    config = OpticalConfig(p_dark=0.0)
    rng = np.random.default_rng(0)
    for i in range(200):
        pulse = emit_pulse(config, 1, 0, rng, round_index=i, intensity_class=IntensityClass.VACUUM)
        assert pulse.photon_count == 0
        event = transmit_and_detect(pulse, 0, config, rng)
        assert not event.clicked
        assert event.x_tilde is None


def test_lossless_noiseless_matching_basis_is_exact():
    config = OpticalConfig(attenuation_db=0, p_e=0, p_dark=0)
    rng = np.random.default_rng(1)
    seen = 0
    for i in range(500):
        x, theta = int(rng.integers(2)), int(rng.integers(2))
        pulse = emit_pulse(config, x, theta, rng, round_index=i, intensity_class=IntensityClass.SIGNAL)
        event = transmit_and_detect(pulse, theta, config, rng)
        assert event.clicked == (pulse.photon_count > 0)
        if event.clicked:
            seen += 1
            assert event.x_tilde == x
    assert seen > 100


def test_no_click_event_cannot_carry_outcome():
    with pytest.raises(ValueError):
        DetectionEvent(0, False, 1, x_tilde=0)


def test_batch_mismatched_basis_is_a_coin():
    config = OpticalConfig(attenuation_db=0, p_e=0, p_dark=0, p1=1.0, p2=0.0, mu=2.0)
    rng = np.random.default_rng(2)
    pulses = emit_pulses(config, 20_000, rng)
    detections = transmit_and_detect_batch(pulses, config, rng, theta_tilde=1 - pulses.theta)
    clicked = detections.clicked
    agree = np.mean(detections.x_tilde[clicked] == pulses.x[clicked])
    assert abs(agree - 0.5) < 0.02


def test_batch_error_rate_on_matched_rounds():
    config = OpticalConfig(attenuation_db=0, p_e=0.05, p_dark=0, p1=1.0, p2=0.0, mu=2.0)
    rng = np.random.default_rng(3)
    pulses = emit_pulses(config, 50_000, rng)
    detections = transmit_and_detect_batch(pulses, config, rng, theta_tilde=pulses.theta)
    clicked = detections.clicked
    errors = np.mean(detections.x_tilde[clicked] != pulses.x[clicked])
    assert abs(errors - 0.05) < 0.005


def test_click_ratio_stats_exact():
    classes = np.array([0, 0, 1, 1, 1, 0], dtype=np.int8)
    clicked = np.array([1, 0, 1, 1, 0, 1], dtype=bool)
    stats = click_ratio_stats(clicked, classes)
    assert stats[IntensityClass.SIGNAL] == Fraction(2, 3)
    assert stats[IntensityClass.DECOY] == Fraction(2, 3)
    assert stats[IntensityClass.VACUUM] is None


def test_click_ratio_stats_from_events():
    events = [DetectionEvent(0, True, 0, 1), DetectionEvent(1, False, 0)]
    stats = click_ratio_stats(events, [IntensityClass.DECOY, IntensityClass.DECOY])
    assert stats[IntensityClass.DECOY] == Fraction(1, 2)
    with pytest.raises(ValueError):
        click_ratio_stats(events, [IntensityClass.DECOY])


def test_observed_ratios_match_expected():
    config = OpticalConfig(attenuation_db=3, p_dark=1e-3)
    rng = np.random.default_rng(4)
    pulses = emit_pulses(config, 200_000, rng)
    detections = transmit_and_detect_batch(pulses, config, rng)
    stats = click_ratio_stats(detections.clicked, pulses.classes)
    expected = expected_click_ratios(config)
    for i, cls in enumerate(CLASS_ORDER):
        rounds = int(np.count_nonzero(pulses.classes == i))
        p = expected[cls]
        sigma = math.sqrt(p * (1 - p) / rounds) + 1e-9
        assert abs(float(stats[cls]) - p) < 5 * sigma


def test_expected_click_ratios_are_ordered():
    ratios = expected_click_ratios(OpticalConfig())
    assert ratios[IntensityClass.SIGNAL] > ratios[IntensityClass.DECOY] > ratios[IntensityClass.VACUUM]
    assert ratios[IntensityClass.VACUUM] == pytest.approx(1e-6)


def test_pulse_budget_collects_enough_clicks():
    config = OpticalConfig()
    n = 400
    budget = pulses_for_clicks(config, n)
    rng = np.random.default_rng(5)
    for _ in range(20):
        pulses = emit_pulses(config, budget, rng)
        detections = transmit_and_detect_batch(pulses, config, rng)
        signal_clicks = np.count_nonzero(detections.clicked & (pulses.classes == 0))
        assert signal_clicks >= n


def test_pulse_budget_grows_with_loss():
    assert pulses_for_clicks(OpticalConfig(attenuation_db=20), 100) > pulses_for_clicks(OpticalConfig(), 100)


def test_records_and_events_views():
    config = OpticalConfig()
    rng = np.random.default_rng(6)
    pulses = emit_pulses(config, 50, rng)
    detections = transmit_and_detect_batch(pulses, config, rng)
    records = list(pulses.records())
    events = list(detections.events())
    assert len(records) == len(events) == 50
    assert [r.round_index for r in records] == list(range(50))
    assert all((e.x_tilde is None) == (not e.clicked) for e in events)


def test_photon_counts_follow_the_class_means():
    config = OpticalConfig()
    pulses = emit_pulses(config, 300_000, np.random.default_rng(7))
    for i, cls in enumerate(CLASS_ORDER):
        counts = pulses.photon_count[pulses.classes == i]
        mean = config.mean_photons(cls)
        if mean == 0:
            assert not counts.any()
        else:
            assert abs(counts.mean() - mean) < 5 * math.sqrt(mean / len(counts))


def test_same_seed_same_trains():
    config = OpticalConfig(attenuation_db=3, p_dark=1e-3, p_e=0.02)
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(8)
        pulses = emit_pulses(config, 5000, rng)
        runs.append((pulses, transmit_and_detect_batch(pulses, config, rng)))
    (p, d), (q, e) = runs
    for name in ("classes", "x", "theta", "photon_count"):
        np.testing.assert_array_equal(getattr(p, name), getattr(q, name))
    for name in ("clicked", "theta_tilde", "x_tilde", "arrived"):
        np.testing.assert_array_equal(getattr(d, name), getattr(e, name))
    other = emit_pulses(config, 5000, np.random.default_rng(9))
    assert not np.array_equal(other.x, p.x)
