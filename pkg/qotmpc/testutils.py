import itertools
import math
from fractions import Fraction
import socket

import numpy as np

from qotmpc.analysis import AnalysisParams
from qotmpc.qot_engine import ProtocolParams
from qotmpc.sim_optics import OpticalConfig


def small_params(**overrides) -> ProtocolParams:
    """Smallest parameters that still exercise every step: BCH(63, 36) with t = 5 and λ = 32."""
    kwargs = dict(lam=32, n=400, alpha=Fraction(1, 2), beta=Fraction(19, 20), n_code=63, t_corr=5)
    kwargs.update(overrides)
    return ProtocolParams(**kwargs)


def clean_optics(**overrides) -> OpticalConfig:
    kwargs = dict(attenuation_db=0.0, p_e=0.0, p_dark=0.0)
    kwargs.update(overrides)
    return OpticalConfig(**kwargs)


################################################################################
# Brute-force probability oracles, for n ≤ 12
################################################################################


def _bits(k: int):
    return itertools.product((0, 1), repeat=k)


def brute_p_fpass(params: AnalysisParams) -> Fraction:
    a, p = params.alpha_n, params.p_e
    total = Fraction(0)
    for errors in _bits(a):
        prob = math.prod(p if e else 1 - p for e in errors)
        if a - sum(errors) <= params.beta * a:
            total += prob
    return total


def brute_p_fcorrect(params: AnalysisParams) -> Fraction:
    U, N, t, p = params.untested, params.n_code, params.t_corr, params.p_e
    total = Fraction(0)
    for match in _bits(U):
        matched = sum(match)
        # The good set: matched rounds first, padded with mismatched ones.
        good = [1] * min(matched, N) + [0] * (N - min(matched, N))
        for errors in _bits(N):
            prob = Fraction(1)
            for is_matched, e in zip(good, errors):
                prob *= (p if e else 1 - p) if is_matched else Fraction(1, 2)
            if N - sum(errors) < N - t:
                total += prob
    # Each basis pattern is equally likely.
    return total / 2**U


def brute_p_bypass(params: AnalysisParams, s1: int) -> Fraction:
    n, a = params.n, params.alpha_n
    delayed = set(range(s1))
    total, count = Fraction(0), 0
    for T in itertools.combinations(range(n), a):
        count += 1
        i = len(delayed.intersection(T))
        for guesses in _bits(i):
            wrong = i - sum(guesses)
            if wrong <= (1 - params.beta) * a:
                total += Fraction(1, 2**i)
    return total / count


def brute_p_cheat(params: AnalysisParams, s1: int, s2: int) -> Fraction:
    U = params.untested
    need = 2 * (params.n_code - params.t_corr) - s1 - s2
    hits = sum(1 for correct in _bits(U) if sum(correct) >= need)
    return Fraction(hits, 2**U)


def brute_cheating_cost(params: AnalysisParams, s1_max: int) -> Fraction:
    deficit = 2 * (params.n_code - params.t_corr)
    best = None
    for s1 in range(s1_max + 1):
        pb = brute_p_bypass(params, s1)
        for s2 in range(deficit + 1):
            pc = brute_p_cheat(params, s1, s2)
            if pb == 0 or pc == 0:
                continue
            cost = Fraction(2**s2) / (pb * pc)
            best = cost if best is None else min(best, cost)
    return best


################################################################################
# Statistics and fixtures
################################################################################


def random_item_sets(rng: np.random.Generator, n_x: int, n_y: int, overlap: int):
    """Sender and receiver sets of printable items sharing exactly `overlap` of them."""
    if overlap > min(n_x, n_y):
        raise ValueError(f"overlap={overlap} exceeds the set sizes {n_x}, {n_y}")
    pool = list(dict.fromkeys(rng.bytes(8).hex().encode() for _ in range(2 * (n_x + n_y))))
    shared = pool[:overlap]
    X = shared + pool[overlap : n_x]
    Y = shared + pool[n_x : n_x + n_y - overlap]
    rng.shuffle(X)
    rng.shuffle(Y)
    return X, Y, set(shared)


def permutation_test(a, b, rng: np.random.Generator, rounds: int = 2000) -> float:
    """Two-sided p-value for a difference in means."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    observed = abs(a.mean() - b.mean())
    pooled = np.concatenate([a, b])
    hits = 0
    for _ in range(rounds):
        rng.shuffle(pooled)
        if abs(pooled[: len(a)].mean() - pooled[len(a) :].mean()) >= observed:
            hits += 1
    return (hits + 1) / (rounds + 1)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]
