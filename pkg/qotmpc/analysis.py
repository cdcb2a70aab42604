"""Closed-form correctness and security bounds for the oblivious transfer protocol.

Every probability is evaluated exactly as a rational number. The
denominators involved (2^1022, C(2044, 1022), p_e^511 ...) are far outside
the range of a double, so the float versions at the bottom of the module
work in the log domain and exist only to cross-check the exact ones.
"""

from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
import logging
import math

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy
from scipy.stats import binom
import sympy

from qotmpc.utils import as_fraction

logger = logging.getLogger(__name__)

LN2 = math.log(2)


@dataclass(frozen=True)
class AnalysisParams:
    lam: int = 256
    n: int = 2044
    alpha: Fraction = Fraction(1, 2)
    beta: Fraction = Fraction(19, 20)
    n_code: int = 511
    t_corr: int = 30
    p_e: Fraction = Fraction(0)
    s1: int = 0
    s2: int = 0
    n_pulses: int = 10**6
    delta: float = 1e-9

    def __post_init__(self):
        for name in ("alpha", "beta", "p_e"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
        if min(self.lam, self.n, self.n_code, self.n_pulses) < 1:
            raise ValueError(f"Integer parameters must be positive: {self}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0 <= self.beta <= 1 or not 0 <= self.p_e <= 1:
            raise ValueError(f"beta={self.beta} and p_e={self.p_e} must be probabilities")
        if (self.alpha * self.n).denominator != 1:
            raise ValueError(f"alpha * n = {self.alpha * self.n} is not an integer")
        if self.untested < self.n_code:
            raise ValueError(f"{self.untested} untested rounds cannot fill a codeword of {self.n_code}")
        if not 0 <= self.t_corr < self.n_code:
            raise ValueError(f"t_corr={self.t_corr} must be below n_code={self.n_code}")
        if self.s1 < 0 or self.s2 < 0:
            raise ValueError(f"s1={self.s1} and s2={self.s2} must be non-negative")

    @property
    def alpha_n(self) -> int:
        return int(self.alpha * self.n)

    @property
    def untested(self) -> int:
        return self.n - self.alpha_n

    @classmethod
    def from_protocol(cls, params, p_e=0, **kwargs) -> "AnalysisParams":
        return cls(
            lam=params.lam, n=params.n, alpha=params.alpha, beta=params.beta,
            n_code=params.n_code, t_corr=params.t_corr, p_e=p_e, delta=params.delta, **kwargs,
        )


@dataclass(frozen=True, order=True)
class ExactProb:
    value: Fraction

    def __post_init__(self):
        if not 0 <= self.value <= 1:
            raise ValueError(f"Probability out of range: {self.value}")

    def log2(self) -> float:
        return _log2(self.value)

    def decimal(self, digits: int = 12) -> str:
        """Decimal rendering that survives values far below the smallest double."""
        if self.value == 0:
            return "0"
        return str(sympy.Rational(self.value.numerator, self.value.denominator).evalf(digits))

    def __float__(self):
        return float(self.value)

    def __add__(self, other: "ExactProb") -> "ExactProb":
        return ExactProb(self.value + other.value)

    def __str__(self):
        return f"{self.decimal(6)} (log2 {self.log2():.4f})"


def _log2(value: Fraction) -> float:
    if value == 0:
        return -math.inf
    # math.log2 is exact to double precision on arbitrarily large ints.
    return math.log2(value.numerator) - math.log2(value.denominator)


def _powers(base: int, top: int) -> list[int]:
    out = [1]
    for _ in range(top):
        out.append(out[-1] * base)
    return out


def _suffix_sums(values: list[int]) -> list[int]:
    """out[i] = sum(values[i:]), with a trailing 0."""
    out = [0] * (len(values) + 1)
    for i in range(len(values) - 1, -1, -1):
        out[i] = out[i + 1] + values[i]
    return out


@lru_cache(maxsize=None)
def _binomial_tails(m: int) -> tuple[int, ...]:
    return tuple(_suffix_sums([math.comb(m, k) for k in range(m + 1)]))


################################################################################
# Click statistics
################################################################################


def epsilon_min(n_pulses: int, delta: float) -> float:
    """Smallest click-ratio tolerance with confidence delta over n_pulses rounds: sqrt(ln(1/δ) / N)."""
    if n_pulses < 1:
        raise ValueError(f"n_pulses must be >= 1, got {n_pulses}")
    if not 0 < delta <= 1:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    return math.sqrt(math.log(1 / delta) / n_pulses)


@dataclass(frozen=True)
class ExpectedRatio:
    value: float

    @property
    def negative(self) -> bool:
        return self.value < 0

    @property
    def clamped(self) -> float:
        return max(self.value, 0.0)


def expected_click_ratio(p_ge1_a: float, eta: float, p_dark: float) -> ExpectedRatio:
    """The additive estimate p≥1 − η − p_dark of Bob's expected click ratio.

    The value is returned as computed. A negative result is flagged on the
    returned object and logged; callers decide whether to clamp.
    """
    for name, v in (("p_ge1_a", p_ge1_a), ("eta", eta), ("p_dark", p_dark)):
        if not 0 <= v <= 1:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    ratio = ExpectedRatio(p_ge1_a - eta - p_dark)
    if ratio.negative:
        logger.warning("Additive click-ratio estimate is negative (%g); the formula does not apply", ratio.value)
    return ratio


################################################################################
# Honest failure probability
################################################################################


def p_fpass(params: AnalysisParams) -> ExactProb:
    """Probability that honest Bob fails the test: at most ⌊βαn⌋ of the αn test bits are right."""
    a = params.alpha_n
    top = min(math.floor(params.beta * a), a)
    P, Q = params.p_e.numerator, params.p_e.denominator
    p_pow, r_pow = _powers(P, a), _powers(Q - P, a)
    num = sum(math.comb(a, i) * p_pow[a - i] * r_pow[i] for i in range(top + 1))
    return ExactProb(Fraction(num, Q**a))


def p_fcorrect(params: AnalysisParams) -> ExactProb:
    """Probability that honest Bob's good set has fewer than N − t correct bits.

    Of the U = n − αn untested rounds, the number i with matching bases is
    Binomial(U, 1/2). With more than N of them the good set holds N matched
    rounds, each right with probability 1 − p_e. Otherwise it holds all i
    matched rounds plus N − i mismatched ones, each right with probability 1/2.
    """
    U, N, t = params.untested, params.n_code, params.t_corr
    P, Q = params.p_e.numerator, params.p_e.denominator
    R = Q - P
    p_pow, r_pow, q_pow = _powers(P, N), _powers(R, N), _powers(Q, N)

    # Common denominator 2^U · Q^N · 2^N.
    all_matched = sum(math.comb(N, j) * p_pow[N - j] * r_pow[j] for j in range(max(N - t, 0), N + 1))
    head = sum(math.comb(U, i) for i in range(N + 1, U + 1))
    total = (head * all_matched) << N

    for i in range(min(N, U) + 1):
        tails = _binomial_tails(N - i)
        inner = 0
        for j in range(i + 1):
            if p_pow[i - j] == 0:
                continue
            lo = max(N - t - j, 0)
            if lo > N - i:
                continue
            inner += math.comb(i, j) * p_pow[i - j] * r_pow[j] * tails[lo]
        total += (math.comb(U, i) * inner * q_pow[N - i]) << i

    success = Fraction(total, q_pow[N] << (U + N))
    return ExactProb(1 - success)


def failure_bound(params: AnalysisParams) -> ExactProb:
    """p_fpass + p_fcorrect, capped at 1."""
    total = p_fpass(params).value + p_fcorrect(params).value
    return ExactProb(min(total, Fraction(1)))


def max_error_rate(params: AnalysisParams, target=Fraction(23, 10**10), resolution=Fraction(1, 10**4)):
    """Largest p_e on the grid k·resolution whose failure bound stays at or below target.

    Returns None when even p_e = 0 misses the target. Assumes the bound is
    non-decreasing in p_e.
    """
    target, resolution = as_fraction(target), as_fraction(resolution)
    steps = int(1 / resolution)

    def ok(k: int) -> bool:
        return failure_bound(replace(params, p_e=k * resolution)).value <= target

    if not ok(0):
        logger.info("Failure bound exceeds %s already at p_e = 0", float(target))
        return None
    lo, hi = 0, steps
    if ok(hi):
        return Fraction(1)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo * resolution


################################################################################
# Cheating receiver
################################################################################


@lru_cache(maxsize=None)
def _pass_weights(a: int, beta: Fraction) -> tuple[int, ...]:
    """w[i] = 2^i · Pr[test passes | i delayed rounds landed in T], for i = 0..a."""
    slack = (1 - beta) * a
    weights = []
    for i in range(a + 1):
        if a - i >= beta * a:
            weights.append(1 << i)
        else:
            lo = max(math.ceil(i - slack), 0)
            weights.append(sum(math.comb(i, j) for j in range(lo, i + 1)))
    return tuple(weights)


def _bypass_numerator(params: AnalysisParams, s1: int) -> int:
    """p_bypass,s1 · C(n, αn) · 2^s1."""
    n, a = params.n, params.alpha_n
    w = _pass_weights(a, params.beta)
    return sum(
        (math.comb(s1, i) * math.comb(n - s1, a - i) * w[i]) << (s1 - i) for i in range(min(s1, a) + 1)
    )


def p_bypass(params: AnalysisParams, s1: int | None = None) -> ExactProb:
    """Probability that a receiver who delayed s1 measurements still passes the test.

    Assumes p_e = 0: honestly measured test rounds always open correctly and
    each delayed one is a fair guess.
    """
    s1 = params.s1 if s1 is None else s1
    if not 0 <= s1 <= params.n:
        raise ValueError(f"s1 must be in [0, {params.n}], got {s1}")
    den = math.comb(params.n, params.alpha_n) << s1
    return ExactProb(Fraction(_bypass_numerator(params, s1), den))


def p_cheat(params: AnalysisParams, s1: int | None = None, s2: int | None = None) -> ExactProb:
    """Probability of ending up with at least 2(N − t) correct untested bits."""
    s1 = params.s1 if s1 is None else s1
    s2 = params.s2 if s2 is None else s2
    U = params.untested
    lo = 2 * (params.n_code - params.t_corr) - s1 - s2
    if lo <= 0:
        return ExactProb(Fraction(1))
    return ExactProb(Fraction(_binomial_tails(U)[min(lo, U + 1)], 1 << U))


@dataclass(frozen=True)
class CheatingCost:
    cost: Fraction
    s1: int
    s2: int

    def log2(self) -> float:
        return _log2(self.cost)

    def __float__(self):
        return float(self.cost)


def cheating_cost(params: AnalysisParams, s1_bound: str = "alpha_n") -> CheatingCost:
    """min over (s1, s2) of 2^s2 / (p_bypass,s1 · p_cheat,s1,s2).

    s1_bound selects the range of s1: "alpha_n" lets it run up to αn,
    "literal" up to ⌊α⌋ as the bound is sometimes written.
    """
    if s1_bound == "alpha_n":
        s1_max = params.alpha_n
    elif s1_bound == "literal":
        s1_max = math.floor(params.alpha)
    else:
        raise ValueError(f"s1_bound must be 'alpha_n' or 'literal', got {s1_bound!r}")
    U = params.untested
    deficit = 2 * (params.n_code - params.t_corr)
    # Past the deficit p_cheat is already 1 and p_bypass only shrinks.
    s1_max = min(s1_max, deficit)

    # For fixed s1, write lo = deficit − s1 − s2. The cost is 2^(D − lo) · 2^U / (p_bypass · tail[lo]),
    # so the best s2 maximises tail[lo] · 2^lo over lo ≤ min(D, U): a running argmax.
    tail = _binomial_tails(U)
    best_lo, best_score, running = [], -1, 0
    for lo in range(U + 1):
        score = tail[lo] << lo
        if score > best_score:
            best_score, running = score, lo
        best_lo.append(running)

    base = math.comb(params.n, params.alpha_n) << U
    best = None
    for s1 in range(s1_max + 1):
        bypass = _bypass_numerator(params, s1)
        if bypass == 0:
            continue
        d = deficit - s1
        lo = best_lo[min(d, U)]
        s2 = d - lo
        cost = Fraction((base << (s1 + s2)), bypass * tail[lo])
        if best is None or cost < best.cost:
            best = CheatingCost(cost, s1, s2)
    logger.info("Cheating cost %.4g at s1=%d, s2=%d", float(best.cost), best.s1, best.s2)
    return best


################################################################################
# Log-domain floating point cross-checks
################################################################################


def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def log2_p_fpass(params: AnalysisParams) -> float:
    a = params.alpha_n
    p = float(params.p_e)
    i = np.arange(math.floor(params.beta * a) + 1)
    terms = _log_comb(a, i) + xlogy(a - i, p) + xlogy(i, 1 - p)
    return float(logsumexp(terms)) / LN2


def log2_p_bypass(params: AnalysisParams, s1: int) -> float:
    n, a = params.n, params.alpha_n
    slack = float((1 - params.beta) * a)
    terms = []
    for i in range(max(0, a - (n - s1)), min(s1, a) + 1):
        if a - i >= float(params.beta * a):
            log_pass = 0.0
        else:
            j = np.arange(max(math.ceil(i - slack), 0), i + 1)
            log_pass = float(logsumexp(_log_comb(i, j))) - i * LN2
        terms.append(_log_comb(s1, i) + _log_comb(n - s1, a - i) + log_pass)
    return (float(logsumexp(terms)) - _log_comb(n, a)) / LN2


def log2_p_cheat(params: AnalysisParams, s1: int, s2: int) -> float:
    U = params.untested
    lo = 2 * (params.n_code - params.t_corr) - s1 - s2
    if lo <= 0:
        return 0.0
    i = np.arange(lo, U + 1)
    return float(logsumexp(_log_comb(U, i))) / LN2 - U


def p_fcorrect_float(params: AnalysisParams) -> float:
    """p_fcorrect computed from error counts rather than correct counts, in floating point."""
    U, N, t = params.untested, params.n_code, params.t_corr
    p = float(params.p_e)
    fail = 0.0
    for i in range(U + 1):
        weight = binom.pmf(i, U, 0.5)
        if i > N:
            fail += weight * binom.sf(t, N, p)
        else:
            errors = np.convolve(binom.pmf(np.arange(i + 1), i, p), binom.pmf(np.arange(N - i + 1), N - i, 0.5))
            fail += weight * errors[t + 1 :].sum()
    return float(fail)
