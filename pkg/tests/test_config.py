from fractions import Fraction
import json

import pytest

from qotmpc.config import (
    DEFAULT_ATTENUATIONS_DB,
    RunConfig,
    SweepConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    with_overrides,
)
from qotmpc.psi import PsiConfig


def test_minimal_document_takes_defaults():
    config = config_from_dict({"schema": 1, "seed": 5})
    assert config.seed == 5
    assert config.mode == "qot"
    assert config.params.n == 2044 and config.params.beta == Fraction(19, 20)
    assert config.optical.attenuation_db == 10.0
    assert config.sweep.attenuations_db == DEFAULT_ATTENUATIONS_DB
    assert config.psi is None


@pytest.mark.parametrize(
    "doc",
    [
        {"seed": 1},
        {"schema": 2, "seed": 1},
        {"schema": 1},
        {"schema": 1, "seed": 1, "colour": "blue"},
        {"schema": 1, "seed": 1, "params": {"beta": "19/20", "gamma": 1}},
        {"schema": 1, "seed": 1, "optical": [1, 2]},
        {"schema": 1, "seed": -1},
        {"schema": 1, "seed": 1, "mode": "teleport"},
        {"schema": 1, "seed": 1, "transport": "tcp"},
        {"schema": 1, "seed": 1, "transport": "tcp", "role": "sender", "listen": ":1", "connect": ":2"},
        {"schema": 1, "seed": 1, "sender_items": "/nonexistent/items.txt"},
        {"schema": 1, "seed": 1, "sweep": {"attenuations_db": [3, 1]}},
    ],
)
def test_invalid_documents(doc):
    with pytest.raises(ValueError):
        config_from_dict(doc)


def test_load_and_round_trip(tmp_path):
    items = tmp_path / "y.txt"
    items.write_text("a\nb\n", encoding="utf-8")
    doc = {
        "schema": 1,
        "seed": 42,
        "mode": "psi",
        "params": {"lam": 32, "n": 400, "n_code": 63, "t_corr": 5, "beta": "0.95"},
        "optical": {"attenuation_db": 3.0, "p_e": 0.0},
        "psi": {"n": 10, "s": 4},
        "sweep": {"attenuations_db": [1, 2.5], "sessions_per_point": 3},
        "receiver_items": str(items),
        "ot_backend": "qot",
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    config = load_config(path)
    assert config.params.beta == Fraction(19, 20)
    assert config.psi.v == PsiConfig(10, 4).v
    assert config.sweep.attenuations_db == (1.0, 2.5)
    again = config_from_dict(json.loads(json.dumps(config_to_dict(config))))
    assert again == config


def test_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{seed: 1", encoding="utf-8")
    with pytest.raises(ValueError, match="not valid JSON"):
        load_config(path)


def test_overrides():
    config = RunConfig(seed=1)
    changed = with_overrides(config, seed=9, out=None, **{"params.beta": "9/10", "optical.p_e": 0.02})
    assert changed.seed == 9
    assert changed.out is None
    assert changed.params.beta == Fraction(9, 10)
    assert changed.optical.p_e == 0.02
    assert config.params.beta == Fraction(19, 20)
    with pytest.raises(ValueError, match="no 'psi' section"):
        with_overrides(config, **{"psi.s": 3})
    with pytest.raises(ValueError):
        with_overrides(config, **{"params.beta": "1/3"})


def test_sweep_config():
    assert SweepConfig((1, 2)).attenuations_db == (1.0, 2.0)
    with pytest.raises(ValueError):
        SweepConfig(())
    with pytest.raises(ValueError):
        SweepConfig((1, 1))
    with pytest.raises(ValueError):
        SweepConfig(sessions_per_point=0)
