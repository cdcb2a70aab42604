"""Run configuration: one JSON document, overridable from the command line."""

from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
import json
import logging
from pathlib import Path

from qotmpc.psi import PsiConfig
from qotmpc.qot_engine import ProtocolParams
from qotmpc.sim_optics import OpticalConfig

logger = logging.getLogger(__name__)

SCHEMA = 1
MODES = ("qot", "psi", "analyze", "attack", "sweep")
TRANSPORTS = ("local", "tcp")
OT_BACKENDS = ("ideal", "qot")

# The attenuation points of the code-rate table, as positive loss in dB.
DEFAULT_ATTENUATIONS_DB = (0.15, 1.97, 3.97, 5.96, 8.06, 9.69, 11.81, 13.44, 15.58, 17.88, 20.21, 22.18, 24.42, 26.69)


@dataclass(frozen=True)
class SweepConfig:
    attenuations_db: tuple[float, ...] = DEFAULT_ATTENUATIONS_DB
    sessions_per_point: int = 100
    # A session that has not seen n signal clicks after this many pulses counts as failed.
    max_pulses_per_session: int = 2_000_000

    def __post_init__(self):
        object.__setattr__(self, "attenuations_db", tuple(float(a) for a in self.attenuations_db))
        if not self.attenuations_db:
            raise ValueError("The sweep needs at least one attenuation")
        if any(b <= a for a, b in zip(self.attenuations_db, self.attenuations_db[1:])):
            raise ValueError(f"Attenuations must be strictly increasing, got {self.attenuations_db}")
        if self.sessions_per_point < 1 or self.max_pulses_per_session < 1:
            raise ValueError(f"Sweep sizes must be positive: {self}")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    mode: str = "qot"
    params: ProtocolParams = field(default_factory=ProtocolParams)
    optical: OpticalConfig = field(default_factory=OpticalConfig)
    psi: PsiConfig | None = None
    sweep: SweepConfig = field(default_factory=SweepConfig)
    transport: str = "local"
    # "sender" or "receiver"; only for the tcp transport.
    role: str | None = None
    listen: str | None = None
    connect: str | None = None
    timeout: float = 60.0
    out: str | None = None
    # qot mode
    choice: int = 0
    # psi mode
    sender_items: str | None = None
    receiver_items: str | None = None
    ot_backend: str = "ideal"

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.transport == "tcp":
            if self.role not in ("sender", "receiver"):
                raise ValueError(f"The tcp transport needs role sender or receiver, got {self.role!r}")
            if (self.listen is None) == (self.connect is None):
                raise ValueError("The tcp transport needs exactly one of listen and connect")
        if self.choice not in (0, 1):
            raise ValueError(f"choice must be 0 or 1, got {self.choice}")
        if self.ot_backend not in OT_BACKENDS:
            raise ValueError(f"ot_backend must be one of {OT_BACKENDS}, got {self.ot_backend!r}")
        for name in ("sender_items", "receiver_items"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ValueError(f"{name} file {path} does not exist")


def _build(cls, doc, what):
    if doc is None:
        return None
    if not isinstance(doc, dict):
        raise ValueError(f"'{what}' must be an object, got {doc!r}")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"Unknown keys in '{what}': {sorted(unknown)}")
    return cls(**doc)


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    if doc.pop("schema", None) != SCHEMA:
        raise ValueError(f"Config must declare \"schema\": {SCHEMA}")
    if "seed" not in doc:
        raise ValueError("Config must set a seed")
    sections = {
        "params": ProtocolParams,
        "optical": OpticalConfig,
        "psi": PsiConfig,
        "sweep": SweepConfig,
    }
    for key, cls in sections.items():
        if key in doc:
            doc[key] = _build(cls, doc[key], key)
    return _build(RunConfig, doc, "config")


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path} is not valid JSON: {e}") from None
    config = config_from_dict(doc)
    logger.info("Loaded %s config from %s", config.mode, path)
    return config


def with_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Replace top-level and dotted ("params.beta", "optical.p_e") fields. None values are skipped."""
    top, nested = {}, {}
    for key, value in overrides.items():
        if value is None:
            continue
        section, _, name = key.partition(".")
        if name:
            nested.setdefault(section, {})[name] = value
        else:
            top[key] = value
    for section, values in nested.items():
        current = getattr(config, section)
        if current is None:
            raise ValueError(f"Cannot override {section}.{next(iter(values))}: no '{section}' section")
        top[section] = replace(current, **values)
    return replace(config, **top)


def _plain(value):
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, tuple):
        return list(value)
    if hasattr(value, "__dataclass_fields__"):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    return value


def config_to_dict(config: RunConfig) -> dict:
    """A JSON-ready document that config_from_dict reads back to an equal config."""
    return {"schema": SCHEMA, **_plain(config)}
