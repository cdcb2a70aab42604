from fractions import Fraction
import math

import numpy as np
import pytest

from qotmpc.adversary import (
    CheatStrategy,
    UnderreportPolicy,
    run_delayed_measurement_attack,
    run_pns_attack,
    underreport,
)
from qotmpc.analysis import AnalysisParams, p_bypass
from qotmpc.qot_engine import ProtocolParams
from qotmpc.sim_optics import OpticalConfig, emit_pulses, transmit_and_detect_batch
from qotmpc.testutils import small_params

TINY = ProtocolParams(n=8, alpha=Fraction(1, 2), beta=Fraction(9, 10), n_code=2, t_corr=0)


@pytest.mark.parametrize("s1", [0, 1, 2, 3, 4])
def test_delayed_attack_matches_bypass_probability(s1):
    trials = 20000
    report = run_delayed_measurement_attack(TINY, CheatStrategy(s1=s1), trials, np.random.default_rng(s1))
    expected = float(p_bypass(AnalysisParams.from_protocol(TINY), s1))
    sigma = math.sqrt(expected * (1 - expected) / trials)
    assert abs(report.bypass_rate - expected) <= 4 * sigma + 1e-9
    assert report.both_messages <= report.bypassed


def test_delayed_attack_text_check_runs():
    report = run_delayed_measurement_attack(TINY, CheatStrategy(s1=2), 5000, np.random.default_rng(9), check="text")
    assert 0 < report.bypassed < report.trials
    with pytest.raises(ValueError):
        run_delayed_measurement_attack(TINY, CheatStrategy(s1=2), 10, np.random.default_rng(0), check="loose")


def test_delayed_attack_rejects_oversized_delay():
    with pytest.raises(ValueError):
        run_delayed_measurement_attack(TINY, CheatStrategy(s1=5), 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        CheatStrategy(s1=-1)


def test_guessing_more_bits_raises_the_success_rate():
    trials = 20000
    reports = [
        run_delayed_measurement_attack(TINY, CheatStrategy(s1=1, s2=s2), trials, np.random.default_rng(11))
        for s2 in (0, 2, 4)
    ]
    # The test is over before Bob guesses anything.
    assert len({r.bypassed for r in reports}) == 1
    rates = [r.success_rate for r in reports]
    assert rates[0] < rates[1] < rates[2]
    assert rates[2] - rates[0] > 0.1


@pytest.mark.parametrize("s1", [0, 200, 400])
def test_full_size_attack_never_gets_both_messages(s1):
    report = run_delayed_measurement_attack(ProtocolParams(), CheatStrategy(s1=s1), 2000, np.random.default_rng(s1))
    assert report.both_messages == 0


def test_underreport_policy():
    optical = OpticalConfig(attenuation_db=0.0)
    rng = np.random.default_rng(1)
    pulses = emit_pulses(optical, 20000, rng)
    detections = transmit_and_detect_batch(pulses, optical, rng)
    honest = underreport(detections, UnderreportPolicy(), rng)
    np.testing.assert_array_equal(honest, detections.clicked)
    hidden = underreport(detections, UnderreportPolicy(discard_single=1.0), rng)
    assert not hidden[detections.arrived == 1].any()
    assert not (hidden & ~detections.clicked).any()
    with pytest.raises(ValueError):
        UnderreportPolicy(discard_single=1.5)


def test_pns_attack_is_caught_by_click_statistics():
    optical = OpticalConfig()
    params = small_params()
    rng = np.random.default_rng(2)
    honest = run_pns_attack(optical, params, CheatStrategy(), 3, rng, n_pulses=10**6)
    assert honest.detected == 0
    strategy = CheatStrategy(underreport_policy=UnderreportPolicy(discard_single=0.5))
    attack = run_pns_attack(optical, params, strategy, 3, rng, n_pulses=10**6)
    assert attack.detection_rate == 1.0
    assert attack.multi_photon_share_attack > attack.multi_photon_share_honest
