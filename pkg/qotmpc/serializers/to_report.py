"""Machine-readable report dicts and their human-readable text form."""

from fractions import Fraction

from qotmpc.analysis import AnalysisParams, CheatingCost, ExactProb

RATE_FOOTER = (
    "Rates assume the configured pulse clock and are illustrative only; "
    "absolute kbps depend on the hardware and are not comparable across setups."
)


def _prob(p: ExactProb) -> dict:
    return {"decimal": p.decimal(12), "log2": p.log2(), "exact": str(p.value)}


def analysis_report(
    params: AnalysisParams,
    p_fpass: ExactProb,
    p_fcorrect: ExactProb,
    cost: CheatingCost,
    p_e_star: Fraction | None = None,
    p_e_searched: bool = False,
) -> dict:
    report = {
        "params": {
            "lam": params.lam,
            "n": params.n,
            "alpha": str(params.alpha),
            "beta": str(params.beta),
            "n_code": params.n_code,
            "t_corr": params.t_corr,
            "p_e": str(params.p_e),
        },
        "p_fpass": _prob(p_fpass),
        "p_fcorrect": _prob(p_fcorrect),
        "failure_bound": _prob(ExactProb(min(p_fpass.value + p_fcorrect.value, Fraction(1)))),
        "cheating_cost": {"value": float(cost), "log2": cost.log2(), "s1": cost.s1, "s2": cost.s2},
    }
    if p_e_searched:
        report["max_error_rate"] = None if p_e_star is None else str(p_e_star)
    return report


def analysis_text(report: dict) -> str:
    p = report["params"]
    lines = [
        f"Parameters: lam={p['lam']} n={p['n']} alpha={p['alpha']} beta={p['beta']} "
        f"N={p['n_code']} t={p['t_corr']} p_e={p['p_e']}",
    ]
    for key in ("p_fpass", "p_fcorrect", "failure_bound"):
        lines.append(f"  {key:<14} {report[key]['decimal']:>22}  (log2 {report[key]['log2']:.3f})")
    c = report["cheating_cost"]
    lines.append(f"  {'cheating cost':<14} {c['value']:>22.6g}  (log2 {c['log2']:.3f}, s1={c['s1']}, s2={c['s2']})")
    if "max_error_rate" in report:
        pe = report["max_error_rate"]
        lines.append(f"  {'max p_e':<14} {'unreachable' if pe is None else pe:>22}")
    return "\n".join(lines)


def sweep_text(report) -> str:
    lines = [f"{'attenuation dB':>15} {'sessions':>9} {'ok':>5} {'pulses':>14} {'rate kbps':>11}"]
    for row in report.rows:
        lines.append(
            f"{row.attenuation_db:>15.2f} {row.sessions:>9} {row.successes:>5} {row.pulses:>14} {row.rate_kbps:>11.4g}"
        )
    lines.append("")
    lines.append(f"lam={report.lam}, pulse clock {report.pulse_rate_hz:.3g} Hz. {RATE_FOOTER}")
    return "\n".join(lines)


def session_text(metrics: dict) -> str:
    status = metrics["status"]
    line = f"QOT session (seed {metrics['seed']}, c={metrics['choice']}): {status}"
    if metrics.get("reason"):
        line += f" [{metrics['reason']}: {metrics['detail']}]"
    if metrics.get("correct") is not None:
        line += f", output {'matches' if metrics['correct'] else 'DOES NOT match'} m_c"
    return line


def psi_text(metrics: dict, intersection_size: int) -> str:
    return (
        f"PSI: |O|={intersection_size}, n={metrics['n']} m={metrics['m']} s={metrics['s']} v={metrics['v']}, "
        f"{metrics['bytes_sent_receiver']} B from receiver, {metrics['bytes_sent_sender']} B from sender, "
        f"{metrics['wall_ms']:.0f} ms"
    )
