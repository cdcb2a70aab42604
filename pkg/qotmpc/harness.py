"""Command line entry point: `qot run|analyze|attack|sweep|psi`.

Every mode prints a short summary and, with --out, writes its artifacts
there: transcript.jsonl, metrics.json and summary.txt (plus
intersection.txt for psi).

Exit codes: 0 success, 2 protocol abort, 3 correctness failure, 64 usage error.
"""

import argparse
from dataclasses import dataclass, replace
import json
import logging
import os
from pathlib import Path
import sys
import time

import numpy as np

from qotmpc.adversary import CheatStrategy, UnderreportPolicy, run_delayed_measurement_attack, run_pns_attack
from qotmpc.analysis import (
    AnalysisParams,
    cheating_cost,
    failure_bound,
    max_error_rate,
    p_bypass,
    p_fcorrect,
    p_fpass,
)
from qotmpc.config import RunConfig, SweepConfig, config_to_dict, load_config, with_overrides
from qotmpc.oprf import IdealOt, OprfAbort, QotOt
from qotmpc.psi import CuckooBuildError, PsiConfig, PsiError, psi_receiver, psi_sender, read_items, run_psi, write_items
from qotmpc.qot_engine import ProtocolParams, SessionStatus, run_alice, run_batch, run_bob, run_session
from qotmpc.serializers.to_jsonl import write_transcript
from qotmpc.serializers.to_report import analysis_report, analysis_text, psi_text, session_text, sweep_text
from qotmpc.sim_optics import OpticalConfig
from qotmpc.transport import TransportError, tcp_transport
from qotmpc.utils import RandomStreams, as_fraction, random_bits

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ABORT = 2
EXIT_FAILURE = 3
EXIT_USAGE = 64

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None):
    """Log level from the argument, else QOTMPC_LOG, else WARNING."""
    level = (level or os.environ.get("QOTMPC_LOG") or "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ValueError(f"Unknown log level {level!r}")
    root = logging.getLogger("qotmpc")
    root.setLevel(level)
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)


################################################################################
# Code-rate sweep
################################################################################


@dataclass
class SweepRow:
    attenuation_db: float
    sessions: int
    successes: int
    pulses: int
    rate_kbps: float


@dataclass
class SweepReport:
    rows: list[SweepRow]
    lam: int
    pulse_rate_hz: float

    def __post_init__(self):
        att = [row.attenuation_db for row in self.rows]
        if any(b <= a for a, b in zip(att, att[1:])):
            raise ValueError(f"Sweep rows must have strictly increasing attenuation, got {att}")

    def as_dict(self) -> dict:
        return {
            "lam": self.lam,
            "pulse_rate_hz": self.pulse_rate_hz,
            "rows": [vars(row) for row in self.rows],
        }


def sweep_code_rate(
    params: ProtocolParams, optical: OpticalConfig, sweep: SweepConfig, seed: int
) -> SweepReport:
    """λ bits per successful session, over the pulses the sessions used, at the configured pulse clock.

    A successful session uses the pulses up to its n-th retained signal
    click; a failed one uses every pulse it was given.
    """
    streams = RandomStreams(seed)
    rows = []
    for att in sweep.attenuations_db:
        link = replace(optical, attenuation_db=att)
        budget = min(params.pulses_for(link), sweep.max_pulses_per_session)
        session_params = replace(params, total_pulses=max(budget, params.n))
        successes = pulses = 0
        for k in range(sweep.sessions_per_point):
            result = run_session(session_params, link, *_messages(params.lam, seed, f"{att}:{k}"), k % 2,
                                 streams.child(f"{att}:{k}").seed)
            if result.ok and np.array_equal(result.recovered, result.alice.m[k % 2]):
                successes += 1
                pulses += int(result.alice.retained[-1]) + 1
            else:
                pulses += session_params.total_pulses
        rate = params.lam * successes * link.pulse_rate_hz / pulses / 1000 if successes else 0.0
        logger.info("%.2f dB: %d/%d sessions, %.4g kbps", att, successes, sweep.sessions_per_point, rate)
        rows.append(SweepRow(att, sweep.sessions_per_point, successes, pulses, rate))
    return SweepReport(rows, params.lam, optical.pulse_rate_hz)


def _messages(lam: int, seed: int, name: str = "messages"):
    rng = RandomStreams(seed)[name]
    return random_bits(rng, lam), random_bits(rng, lam)


################################################################################
# Modes
################################################################################


def _write_artifacts(out, metrics: dict, summary: str, transcript=None):
    print(summary)
    if out is None:
        return
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    (out / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    if transcript is not None:
        path = out / "transcript.jsonl"
        path.unlink(missing_ok=True)
        write_transcript(path, transcript)


def cmd_qot(config: RunConfig) -> int:
    params, optical = config.params, config.optical
    m0, m1 = _messages(params.lam, config.seed)
    if config.transport == "local":
        result = run_session(params, optical, m0, m1, config.choice, config.seed)
    else:
        role, peer = ("alice", "bob") if config.role == "sender" else ("bob", "alice")
        try:
            channel = tcp_transport(role, peer, config.listen, config.connect, config.timeout)
        except TransportError as e:
            logger.error("%s", e)
            return EXIT_ABORT
        with channel:
            if config.role == "sender":
                result = run_alice(channel, params, optical, m0, m1, config.seed, config.timeout)
            else:
                result = run_bob(channel, params, optical, config.choice, config.seed, config.timeout)

    # The receiver derives both messages from the shared seed, so either end of a local run and
    # the receiving end of a tcp run can check the output.
    correct = None
    if result.ok and config.role != "sender":
        correct = bool(np.array_equal(result.recovered, (m0, m1)[config.choice]))
    metrics = {
        "mode": "qot",
        "seed": config.seed,
        "choice": config.choice,
        "status": result.status.value,
        "reason": result.reason.value if result.reason else None,
        "detail": result.detail,
        "correct": correct,
        "messages": len(result.transcript),
        "config": config_to_dict(config),
    }
    _write_artifacts(config.out, metrics, session_text(metrics), result.transcript)
    if result.status == SessionStatus.ABORTED:
        return EXIT_ABORT
    if result.status == SessionStatus.FAILED or correct is False:
        return EXIT_FAILURE
    return EXIT_OK


def cmd_batch(config: RunConfig, sessions: int) -> int:
    """Local sessions only. Exits with a failure when any session also yields the unchosen message."""
    if config.transport != "local":
        raise ValueError("--sessions runs both parties locally and cannot be combined with --role")
    report = run_batch(config.params, config.optical, sessions, config.seed)
    p_e = as_fraction(config.optical.p_e)
    bound = failure_bound(AnalysisParams.from_protocol(config.params, p_e=p_e))
    metrics = {
        "mode": "batch",
        "seed": config.seed,
        **report.as_dict(),
        "failure_bound": float(bound.value),
        "config": config_to_dict(config),
    }
    summary = (f"{sessions} sessions: {report.correct} correct, {report.aborted} aborted, {report.failed} failed "
               f"(rate {report.failure_rate:.4g}, bound {float(bound.value):.4g} at p_e={p_e}); "
               f"unchosen message recovered in {report.other_branch}")
    _write_artifacts(config.out, metrics, summary)
    return EXIT_FAILURE if report.other_branch else EXIT_OK


def cmd_analyze(config: RunConfig, p_e, search_p_e: bool, s1_bound: str) -> int:
    ap = AnalysisParams.from_protocol(config.params, p_e=p_e)
    pf, pc = p_fpass(ap), p_fcorrect(ap)
    cost = cheating_cost(ap, s1_bound=s1_bound)
    p_e_star = max_error_rate(ap) if search_p_e else None
    report = analysis_report(ap, pf, pc, cost, p_e_star, p_e_searched=search_p_e)
    _write_artifacts(config.out, {"mode": "analyze", **report}, analysis_text(report))
    return EXIT_OK


def cmd_attack(config: RunConfig, kind: str, trials: int, strategy: CheatStrategy, check: str) -> int:
    rng = RandomStreams(config.seed)["attack"]
    s1 = strategy.s1
    if kind == "delayed":
        report = run_delayed_measurement_attack(config.params, strategy, trials, rng, check=check)
        expected = float(p_bypass(AnalysisParams.from_protocol(config.params), s1))
        metrics = {"mode": "attack", "kind": kind, "s1": s1, "s2": strategy.s2, "check": check, "trials": trials,
                   "bypass_rate": report.bypass_rate, "p_bypass": expected, "success_rate": report.success_rate}
        summary = (f"Delayed measurement of {s1} rounds: passed the test in {report.bypassed}/{trials} trials "
                   f"({report.bypass_rate:.4f}, formula {expected:.4f}); both messages in {report.both_messages}")
    else:
        policy = strategy.underreport_policy
        report = run_pns_attack(config.optical, config.params, strategy, trials, rng)
        metrics = {"mode": "attack", "kind": kind, "trials": trials, "discard_single": policy.discard_single,
                   "fake_click": policy.fake_click, "detection_rate": report.detection_rate,
                   "multi_photon_share_honest": report.multi_photon_share_honest,
                   "multi_photon_share_attack": report.multi_photon_share_attack}
        summary = (f"PNS attack {policy}: detected in {report.detected}/{trials} sessions; multi-photon share "
                   f"{report.multi_photon_share_honest:.4f} honest vs {report.multi_photon_share_attack:.4f}")
    _write_artifacts(config.out, metrics, summary)
    return EXIT_OK


def cmd_sweep(config: RunConfig) -> int:
    report = sweep_code_rate(config.params, config.optical, config.sweep, config.seed)
    _write_artifacts(config.out, {"mode": "sweep", **report.as_dict()}, sweep_text(report))
    return EXIT_OK


def _ot_backend(config: RunConfig):
    if config.ot_backend == "qot":
        return QotOt(config.params, config.optical, config.seed)
    return IdealOt()


def cmd_psi(config: RunConfig) -> int:
    backend = _ot_backend(config)
    streams = RandomStreams(config.seed)
    try:
        if config.transport == "local":
            if config.sender_items is None or config.receiver_items is None:
                raise ValueError("Local psi needs both --sender-items and --receiver-items")
            X, Y = read_items(config.sender_items), read_items(config.receiver_items)
            psi_config = config.psi or PsiConfig(max(len(Y), 1))
            result = run_psi(X, Y, psi_config, backend, config.seed)
            intersection, transcript, metrics = result.intersection, result.transcript, result.metrics.as_dict()
        else:
            intersection, transcript, metrics = _psi_over_tcp(config, backend, streams)
    except (PsiError, OprfAbort, CuckooBuildError, TransportError) as e:
        logger.error("PSI aborted: %s", e)
        return EXIT_ABORT
    metrics = {"mode": "psi", "ot_backend": config.ot_backend, **metrics}
    _write_artifacts(config.out, metrics, psi_text(metrics, len(intersection)), transcript)
    if config.out is not None:
        write_items(Path(config.out) / "intersection.txt", intersection)
    return EXIT_OK


def _psi_over_tcp(config: RunConfig, backend, streams: RandomStreams):
    role, peer = config.role, "sender" if config.role == "receiver" else "receiver"
    path = config.receiver_items if role == "receiver" else config.sender_items
    if path is None:
        raise ValueError(f"The psi {role} needs its items file")
    items = read_items(path)
    start = time.perf_counter()
    with tcp_transport(role, peer, config.listen, config.connect, config.timeout) as channel:
        if role == "receiver":
            psi_config = config.psi or PsiConfig(max(len(items), 1))
            intersection = psi_receiver(channel, items, psi_config, backend, streams["psi-receiver"])
            n, m, s, v = psi_config.n, None, psi_config.s, psi_config.v
        else:
            intersection = psi_sender(channel, items, backend, streams["psi-sender"])
            n, m, s, v = None, len(items), None, None
        sent, received = channel.bytes_sent, channel.bytes_received
    by_role = {role: sent, peer: received}
    metrics = {"bytes_sent_receiver": by_role["receiver"], "bytes_sent_sender": by_role["sender"],
               "wall_ms": (time.perf_counter() - start) * 1000, "n": n, "m": m, "s": s, "v": v}
    return intersection, channel.transcript, metrics


################################################################################
# Argument parsing
################################################################################


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _rational(text: str):
    try:
        return as_fraction(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _attenuations(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(a) for a in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma separated dB values, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="directory for transcript, metrics and summary")
    common.add_argument("--log-level", help="overrides QOTMPC_LOG")
    g = common.add_argument_group("protocol parameters")
    g.add_argument("--lam", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--alpha", type=_rational)
    g.add_argument("--beta", type=_rational)
    g.add_argument("--n-code", type=int)
    g.add_argument("--t-corr", type=int)
    g.add_argument("--fill-policy", choices=("pad", "strict"))
    g = common.add_argument_group("optics")
    g.add_argument("--attenuation", type=float, help="channel loss in dB")
    g.add_argument("--error-rate", type=float, help="optical bit error rate p_e")
    g.add_argument("--pulse-rate", type=float, help="pulse clock in Hz")
    g.add_argument("--noiseless", action="store_true", help="no bit errors and no dark counts")

    remote = _Parser(add_help=False)
    remote.add_argument("--role", choices=("sender", "receiver"))
    endpoint = remote.add_mutually_exclusive_group()
    endpoint.add_argument("--listen", metavar="HOST:PORT")
    endpoint.add_argument("--connect", metavar="HOST:PORT")
    remote.add_argument("--timeout", type=float)

    parser = _Parser(prog="qot", description="Quantum oblivious transfer and private set intersection.")
    sub = parser.add_subparsers(dest="mode", required=True)

    p = sub.add_parser("run", aliases=["qot"], parents=[common, remote], help="oblivious transfer sessions")
    p.add_argument("--c", dest="choice", type=int, choices=(0, 1), help="receiver's choice bit")
    p.add_argument("--sessions", type=int, help="run this many local sessions and report their rates")

    p = sub.add_parser("analyze", parents=[common], help="failure and security bounds")
    p.add_argument("--p-e", type=_rational, default=0, help="error rate used in the bounds")
    p.add_argument("--max-error-rate", action="store_true", help="also search the largest admissible p_e")
    p.add_argument("--s1-bound", choices=("alpha_n", "literal"), default="alpha_n")

    p = sub.add_parser("attack", parents=[common], help="simulate a cheating receiver")
    p.add_argument("--kind", choices=("delayed", "pns"), default="delayed")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--s1", type=int, default=0, help="delayed measurements")
    p.add_argument("--s2", type=int, default=0, help="guessed bits on top of what Bob knows")
    p.add_argument("--check", choices=("formula", "text"), default="formula")
    p.add_argument("--discard", type=float, default=0.5, help="share of single-photon clicks hidden")
    p.add_argument("--fake", type=float, default=0.0, help="rate of fake clicks")

    p = sub.add_parser("sweep", parents=[common], help="code rate against attenuation")
    p.add_argument("--attenuations", type=_attenuations, help="comma separated dB values")
    p.add_argument("--sessions", type=int)
    p.add_argument("--max-pulses", type=int)

    p = sub.add_parser("psi", parents=[common, remote], help="private set intersection")
    p.add_argument("--sender-items", help="the sender's item file, one item per line")
    p.add_argument("--receiver-items", help="the receiver's item file, one item per line")
    p.add_argument("--backend", dest="ot_backend", choices=("ideal", "qot"))
    p.add_argument("--stash", type=int)
    p.add_argument("--v", type=int, help="PRF output bits")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig(seed=0)
    mode = "qot" if args.mode == "run" else args.mode
    role = getattr(args, "role", None)
    overrides = {
        "mode": mode,
        "seed": args.seed,
        "out": args.out,
        "role": role,
        "transport": "tcp" if role else None,
        "listen": getattr(args, "listen", None),
        "connect": getattr(args, "connect", None),
        "timeout": getattr(args, "timeout", None),
        "choice": getattr(args, "choice", None),
        "sender_items": getattr(args, "sender_items", None),
        "receiver_items": getattr(args, "receiver_items", None),
        "ot_backend": getattr(args, "ot_backend", None),
        "params.lam": args.lam,
        "params.n": args.n,
        "params.alpha": args.alpha,
        "params.beta": args.beta,
        "params.n_code": args.n_code,
        "params.t_corr": args.t_corr,
        "params.fill_policy": args.fill_policy,
        "optical.attenuation_db": args.attenuation,
        "optical.p_e": args.error_rate,
        "optical.pulse_rate_hz": args.pulse_rate,
    }
    if args.noiseless:
        overrides.update({"optical.p_e": 0.0, "optical.p_dark": 0.0})
    if mode == "sweep":
        overrides.update({
            "sweep.attenuations_db": args.attenuations,
            "sweep.sessions_per_point": args.sessions,
            "sweep.max_pulses_per_session": args.max_pulses,
        })
    # Changing one protocol parameter can invalidate the others until all are applied.
    params = {k: v for k, v in overrides.items() if k.startswith("params.") and v is not None}
    config = with_overrides(config, **{k: v for k, v in overrides.items() if not k.startswith("params.")})
    if params:
        config = replace(config, params=replace(config.params, **{k[7:]: v for k, v in params.items()}))
    if mode == "psi" and (args.stash is not None or args.v is not None):
        if config.psi is not None:
            psi = replace(config.psi, **({"s": args.stash} if args.stash is not None else {}), v=args.v)
        elif config.receiver_items is not None:
            psi = PsiConfig(max(len(read_items(config.receiver_items)), 1), args.stash or 6, args.v)
        else:
            raise ValueError("--stash and --v need the receiver's items or a psi config section")
        config = replace(config, psi=psi)
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level)
        config = config_from_args(args)
    except (ValueError, TypeError, OSError) as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logger.debug("Running %s with seed %d", config.mode, config.seed)
    try:
        if config.mode == "qot":
            if args.sessions is not None:
                return cmd_batch(config, args.sessions)
            return cmd_qot(config)
        if config.mode == "analyze":
            return cmd_analyze(config, args.p_e, args.max_error_rate, args.s1_bound)
        if config.mode == "attack":
            policy = UnderreportPolicy(discard_single=args.discard, fake_click=args.fake)
            strategy = CheatStrategy(s1=args.s1, s2=args.s2, underreport_policy=policy)
            return cmd_attack(config, args.kind, args.trials, strategy, args.check)
        if config.mode == "sweep":
            return cmd_sweep(config)
        return cmd_psi(config)
    except ValueError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
