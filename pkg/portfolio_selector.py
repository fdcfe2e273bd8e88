#!/usr/bin/env python3
"""
Empirical Utility Portfolio Selector
Maximizes the empirical (relative or ordinary) utility of a constantly
rebalanced portfolio over a sample of daily returns.

Solvers:
  - bisect_two_asset: cash + one risky asset, bisection on the derivative
  - seg_average: stochastic exponentiated gradient with iterate averaging
  - gdseg: greedy doubly stochastic exponentiated gradient; a random row and a
    random learning rate per attempt, a step is kept only if it improves the
    full empirical utility by at least `threshold`
  - best_of_k_gdseg: best of k seeded GDSEG runs, pruned for reporting
"""

import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate, optimize, stats

from data_manager import ReturnRange, ReturnsMatrix, describe_portfolio, portfolio_stats, prune_and_renormalize
from market_simulator import SCALAR, MarketSpec, RngSeed
from utility_core import (UtilityFunction, as_returns_array, check_relative_flag, empirical_utility,
                          left_derivative, uniform_portfolio)

logger = logging.getLogger(__name__)

# Solver defaults
DEFAULT_ETA_MAX = 1.0
DEFAULT_N_ATTEMPTS = 10_000
DEFAULT_THRESHOLD = 1e-10
BISECT_XTOL = 1e-10

# Quadrature accuracy for the scalar model's true utility
QUAD_EPSABS = 1e-14
QUAD_EPSREL = 1e-12
QUAD_LIMIT = 200


@dataclass
class GdsegConfig:
    """
    Args:
        eta_max: Upper bound of the uniformly drawn learning rate
        n_attempts: Consecutive failed attempts before stopping
        threshold: Minimal objective improvement for a step to be accepted
        seed: RngSeed or int
    """
    eta_max: float = DEFAULT_ETA_MAX
    n_attempts: int = DEFAULT_N_ATTEMPTS
    threshold: float = DEFAULT_THRESHOLD
    seed: Union[int, RngSeed] = 0

    def __post_init__(self):
        if not self.eta_max > 0:
            raise ValueError(f"eta_max must be positive, got {self.eta_max}")
        if int(self.n_attempts) < 1:
            raise ValueError(f"n_attempts must be >= 1, got {self.n_attempts}")
        if not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        self.n_attempts = int(self.n_attempts)
        self.seed = RngSeed.coerce(self.seed)

    def with_seed(self, seed) -> 'GdsegConfig':
        return GdsegConfig(self.eta_max, self.n_attempts, self.threshold, seed)

    def to_dict(self) -> dict:
        return {'eta_max': self.eta_max, 'n_attempts': self.n_attempts,
                'threshold': self.threshold, 'seed': self.seed.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> 'GdsegConfig':
        seed = data.get('seed', 0)
        if isinstance(seed, dict):
            seed = RngSeed(seed['seed'], seed.get('stream', 0), tuple(seed.get('key', ())))
        return cls(data.get('eta_max', DEFAULT_ETA_MAX), data.get('n_attempts', DEFAULT_N_ATTEMPTS),
                   data.get('threshold', DEFAULT_THRESHOLD), seed)


@dataclass
class SegConfig:
    """m SEG iterations; delta is the confidence level used when reporting bounds."""
    m: int = 10_000
    delta: float = 0.05

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not (0 < self.delta < 1):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        self.m = int(self.m)

    def to_dict(self) -> dict:
        return {'m': self.m, 'delta': self.delta}

    @classmethod
    def from_dict(cls, data: dict) -> 'SegConfig':
        return cls(data.get('m', 10_000), data.get('delta', 0.05))


@dataclass
class SolveTrace:
    """
    Accepted steps of a solver run: (step, empirical utility) pairs.
    last_accept_attempt is the attempt count at the last accepted step.
    """
    iterations: int = 0
    attempts: int = 0
    last_accept_attempt: int = 0
    history: List[Tuple[int, float]] = field(default_factory=list)
    portfolio: Optional[np.ndarray] = None

    @property
    def objective(self) -> float:
        return self.history[-1][1] if self.history else float('nan')

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=['step', 'objective'])

    def export_to_csv(self, output_file: str = 'solve_trace.csv'):
        self.to_dataframe().to_csv(output_file, index=False, float_format='%.17g')


@dataclass
class SegResult:
    portfolio: np.ndarray
    regret: float
    regret_bound: float
    lipschitz: float
    eta: float
    m: int


# ---------------------------------------------------------------------------
# Cash + one risky asset
# ---------------------------------------------------------------------------

def two_asset_coefficients(R, relative: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Write <nu, r_k> / normalizer as c_k + b_k * nu2.

    Relative: c_k = 1/max(1, r_k), b_k = (r_k - 1)/max(1, r_k); ordinary: c_k = 1, b_k = r_k - 1.
    """
    values = as_returns_array(R)
    if values.shape[1] != 2:
        raise ValueError("Two-asset solver needs exactly two columns")
    if not np.all(values[:, 0] == 1.0):
        raise ValueError("First column must be cash (identically 1)")
    risky = values[:, 1]
    if relative:
        scale = np.maximum(1.0, risky)
        return 1.0 / scale, (risky - 1.0) / scale
    return np.ones_like(risky), risky - 1.0


def two_asset_derivative(nu2, c: np.ndarray, b: np.ndarray, alpha: float) -> float:
    """Derivative of (1/n) sum (c_k + b_k nu2)^alpha with respect to nu2."""
    return float(np.mean(alpha * np.power(c + b * nu2, alpha - 1.0) * b))


def bisect_two_asset(u: UtilityFunction, R, relative: bool = True, tol: float = BISECT_XTOL) -> float:
    """
    Optimal risky weight for cash + one risky asset.

    Args:
        u: Power utility
        R: n x 2 returns with column 1 identically 1
        relative: Relative (hindsight-normalized) or ordinary objective
        tol: Bisection tolerance on the weight

    Returns:
        Risky weight in [0, 1]
    """
    if not u.is_power:
        raise ValueError("Bisection solver supports power utility only")
    if not tol > 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    c, b = two_asset_coefficients(R, relative)
    alpha = u.alpha

    def derivative(x):
        return two_asset_derivative(x, c, b, alpha)

    if derivative(0.0) <= 0:
        return 0.0
    if derivative(1.0) >= 0:
        return 1.0
    return float(optimize.bisect(derivative, 0.0, 1.0, xtol=tol))


def scalar_model_expectation(func, market: MarketSpec) -> float:
    """
    E[func(R)] for the risky price relative R = exp(m + s Z) of the scalar
    model, Z standard normal. Adaptive quadrature on each side of R = 1, where
    the relative payoff has a kink.
    """
    if market.variant != SCALAR:
        raise ValueError("Quadrature is defined for the scalar-with-cash model only")
    m, s = market.daily_log_mean, market.daily_log_std
    kink = -m / s

    def integrand(z):
        return func(np.exp(m + s * z)) * stats.norm.pdf(z)

    total = 0.0
    for lo, hi in ((-np.inf, kink), (kink, np.inf)):
        value, _ = integrate.quad(integrand, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        total += value
    return total


def scalar_model_utility(u: UtilityFunction, nu2: float, market: MarketSpec, relative: bool = True) -> float:
    """True utility U((1 - nu2, nu2)) under the scalar model, without sampling."""
    check_relative_flag(u, relative)
    if not 0.0 <= nu2 <= 1.0:
        raise ValueError(f"Risky weight must lie in [0, 1], got {nu2}")

    def payoff(r):
        value = u(1.0 + nu2 * (r - 1.0))
        return value / u(max(1.0, r)) if relative else value

    return scalar_model_expectation(payoff, market)


def scalar_model_optimum(u: UtilityFunction, market: MarketSpec, relative: bool = True,
                         tol: float = BISECT_XTOL) -> float:
    """
    Risky weight maximizing the true utility of cash + one risky asset.
    Bisection on the derivative E[D_-u(1 + nu2 (R - 1)) (R - 1) / norm(R)],
    norm(R) = u(max(1, R)) for the relative objective and 1 otherwise.
    """
    check_relative_flag(u, relative)
    if not tol > 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")

    def derivative(x):
        def slope(r):
            value = left_derivative(u, 1.0 + x * (r - 1.0)) * (r - 1.0)
            return value / u(max(1.0, r)) if relative else value
        return scalar_model_expectation(slope, market)

    if derivative(0.0) <= 0:
        return 0.0
    if derivative(1.0) >= 0:
        return 1.0
    return float(optimize.bisect(derivative, 0.0, 1.0, xtol=tol))


# ---------------------------------------------------------------------------
# Exponentiated gradient
# ---------------------------------------------------------------------------

def lipschitz_constant(u: UtilityFunction, rng_range: ReturnRange) -> float:
    """
    Lipschitz constant of the relative loss, D_-u(r_min) r_max / u(r_max).
    For power utility: alpha (r_max / r_min)^(1 - alpha).
    """
    if not u.is_power:
        raise ValueError("Lipschitz constant is defined for power utility only")
    return float(u.alpha * (rng_range.r_max / rng_range.r_min) ** (1.0 - u.alpha))


def _exp_normalize(nu: np.ndarray, exponent: np.ndarray) -> np.ndarray:
    a = nu * np.exp(exponent - exponent.max())
    return a / a.sum()


def eg_step(nu, r_scaled, eta: float, u: UtilityFunction) -> np.ndarray:
    """
    One exponentiated gradient step on a row scaled so that max(r) = 1:
    a^i = nu^i exp(eta D_-u(<nu, r>) r^i), followed by normalization.
    """
    if eta < 0:
        raise ValueError(f"Learning rate must be nonnegative, got {eta}")
    weights = np.asarray(nu, dtype=float)
    r = np.asarray(r_scaled, dtype=float)
    if eta == 0:
        return weights.copy()
    grad = left_derivative(u, float(weights @ r)) * r
    return _exp_normalize(weights, eta * grad)


def _best_weighted_utility(rows: np.ndarray, counts: np.ndarray, alpha: float,
                           lipschitz: float, iters: int = 2000) -> float:
    """
    max over the simplex of sum_k counts_k <nu, s_k>^alpha, approximated from
    below by the vertices and a full-gradient EG ascent.
    """
    d = rows.shape[1]
    total = counts.sum()

    def value(nu):
        return float(counts @ np.power(rows @ nu, alpha))

    best = max(value(np.eye(d)[i]) for i in range(d))
    if d == 1:
        return best
    nu = uniform_portfolio(d)
    eta = np.sqrt(2.0 * np.log(d) / iters) / lipschitz
    for _ in range(iters):
        wealth = rows @ nu
        grad = (counts * alpha * np.power(wealth, alpha - 1.0)) @ rows / total
        nu = _exp_normalize(nu, eta * grad)
        best = max(best, value(nu))
    return best


def seg_average(R, u: UtilityFunction, cfg: SegConfig, seed) -> SegResult:
    """
    Stochastic exponentiated gradient with the averaged output portfolio.

    Rows are drawn uniformly with replacement from R; the learning rate is
    sqrt(ln d / m) / L_n. The measured regret is the realized gap between the
    best fixed portfolio on the drawn sequence and the payoffs collected by
    the iterates nu_0, ..., nu_{m-1}.

    Returns:
        SegResult with the average of nu_0, ..., nu_{m-1} and the measured regret
    """
    if not u.is_power:
        raise ValueError("SEG supports power utility only")
    values = as_returns_array(R)
    n, d = values.shape
    lipschitz = lipschitz_constant(u, ReturnRange(float(values.min()), float(values.max())))
    eta = np.sqrt(np.log(d) / cfg.m) / lipschitz
    scaled = values / values.max(axis=1, keepdims=True)

    rng = RngSeed.coerce(seed).generator()
    draws = rng.integers(n, size=cfg.m)

    nu = uniform_portfolio(d)
    total = np.zeros(d)
    collected = 0.0
    for k in draws:
        total += nu
        r = scaled[k]
        collected += float(nu @ r) ** u.alpha
        nu = eg_step(nu, r, eta, u)
    average = total / cfg.m

    counts = np.bincount(draws, minlength=n).astype(float)
    used = counts > 0
    best = _best_weighted_utility(scaled[used], counts[used], u.alpha, lipschitz)
    regret = best - collected
    bound = 2.0 * lipschitz * np.sqrt(cfg.m * np.log(d))
    logger.info("SEG: m=%d eta=%.3g L_n=%.4g regret=%.4g (bound %.4g)", cfg.m, eta, lipschitz, regret, bound)
    return SegResult(average, float(regret), float(bound), lipschitz, float(eta), cfg.m)


# ---------------------------------------------------------------------------
# Greedy doubly stochastic exponentiated gradient
# ---------------------------------------------------------------------------

def gdseg(R, u: UtilityFunction, relative: bool, cfg: GdsegConfig) -> Tuple[np.ndarray, SolveTrace]:
    """
    Greedy doubly stochastic exponentiated gradient.

    Each attempt draws a row k and a learning rate eta ~ U[0, eta_max] and forms
    w^i ~ nu^i exp(eta r_k^i / <nu, r_k>^(1 - alpha)) (alpha = 0 for log utility).
    The step is accepted when the empirical utility of w is at least the
    current value plus `threshold`; the attempt counter then resets. The run
    stops after `n_attempts` consecutive rejections.

    Args:
        R: ReturnsMatrix or n x d array
        u: Power utility, or log utility with relative=False
        relative: Relative objective (rows are divided by their maximum first)
        cfg: GdsegConfig

    Returns:
        (portfolio, SolveTrace)
    """
    check_relative_flag(u, relative)
    values = as_returns_array(R)
    if relative:
        values = values / values.max(axis=1, keepdims=True)
    n, d = values.shape

    if u.is_log:
        exponent_power = 1.0

        def objective(wealth):
            return float(np.mean(np.log(wealth)))
    else:
        exponent_power = 1.0 - u.alpha
        alpha = u.alpha

        def objective(wealth):
            return float(np.mean(np.power(wealth, alpha)))

    nu = uniform_portfolio(d)
    wealth = values @ nu
    current = objective(wealth)
    trace = SolveTrace(history=[(0, current)])
    if d == 1:
        trace.portfolio = nu
        return nu, trace

    rng = cfg.seed.generator()
    attempt = 0
    while attempt < cfg.n_attempts:
        k = rng.integers(n)
        eta = rng.uniform(0.0, cfg.eta_max)
        r = values[k]
        w = _exp_normalize(nu, eta * r / wealth[k] ** exponent_power)
        attempt += 1
        trace.attempts += 1

        w_wealth = values @ w
        candidate = objective(w_wealth)
        if candidate >= current + cfg.threshold:
            nu, wealth, current = w, w_wealth, candidate
            trace.iterations += 1
            trace.history.append((trace.iterations, current))
            trace.last_accept_attempt = trace.attempts
            attempt = 0

    trace.portfolio = nu
    logger.debug("GDSEG: %d accepted steps in %d attempts, objective %.12g",
                 trace.iterations, trace.attempts, current)
    return nu, trace


def _gdseg_job(args):
    R, u, relative, cfg = args
    return gdseg(R, u, relative, cfg)


def best_of_k_gdseg(R, u: UtilityFunction, relative: bool, cfg: GdsegConfig, k: int,
                    workers: int = 1, prune: bool = True,
                    return_trace: bool = False):
    """
    Run GDSEG k times with seeds cfg.seed.child(run_index) and keep the output
    with the largest empirical utility, pruned and renormalized.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    values = as_returns_array(R)
    jobs = [(values, u, relative, cfg.with_seed(cfg.seed.child(i))) for i in range(k)]
    if workers > 1 and k > 1:
        with mp.Pool(min(workers, k)) as pool:
            runs = pool.map(_gdseg_job, jobs)
    else:
        runs = [_gdseg_job(job) for job in jobs]

    scores = [empirical_utility(u, nu, values, relative) for nu, _ in runs]
    best = int(np.argmax(scores))
    nu, trace = runs[best]
    logger.info("Best of %d GDSEG runs: run %d, empirical utility %.12g", k, best, scores[best])
    result = prune_and_renormalize(nu) if prune else nu
    if return_trace:
        return result, trace
    return result


class GdsegSelector:
    """
    Portfolio selector for a returns dataset: best-of-k GDSEG, reporting and export.

    Usage:
        selector = GdsegSelector(load_returns('data/nyse2.txt'))
        selector.select_optimal_portfolio(UtilityFunction.log(), relative=False)
        selector.print_portfolio()
    """

    def __init__(self, R: ReturnsMatrix):
        self.R = R
        self.portfolio = None
        self.trace = None
        self.utility = None
        self.relative = None

    def select_optimal_portfolio(self, u: UtilityFunction, relative: bool,
                                 cfg: Optional[GdsegConfig] = None, k: int = 1,
                                 workers: int = 1) -> np.ndarray:
        cfg = cfg or GdsegConfig()
        self.portfolio, self.trace = best_of_k_gdseg(self.R, u, relative, cfg, k, workers,
                                                     return_trace=True)
        self.utility = u
        self.relative = relative
        return self.portfolio

    def stats(self) -> dict:
        if self.portfolio is None:
            raise ValueError("No portfolio selected yet")
        record = portfolio_stats(self.portfolio, self.R)
        record['utility'] = self.utility.label()
        record['relative'] = self.relative
        record['empirical_utility'] = empirical_utility(self.utility, self.portfolio, self.R, self.relative)
        record['attempts'] = self.trace.attempts
        record['accepted_steps'] = self.trace.iterations
        return record

    def print_portfolio(self):
        record = self.stats()
        objective = 'relative' if self.relative else 'ordinary'
        print("\n" + "=" * 70)
        print(f"OPTIMAL PORTFOLIO  ({record['utility']}, {objective} utility)")
        print("=" * 70)
        for ticker, weight in record['portfolio'].items():
            print(f"  {ticker:12s}: {weight:.4f}")
        print("-" * 70)
        print(f"  Empirical utility:  {record['empirical_utility']:.10f}")
        print(f"  Accumulated wealth: {record['X_n']:.1f}   (n = {self.R.n})")
        print(f"  Annual return:      {record['annual_return']:.3f}")
        print(f"  Annual volatility:  {record['annual_volatility']:.3f}")
        print(f"  GDSEG attempts:     {record['attempts']}  (accepted {record['accepted_steps']})")
        print("=" * 70 + "\n")

    def export_to_csv(self, output_file: str = 'portfolio.csv'):
        if self.portfolio is None:
            raise ValueError("No portfolio selected yet")
        weights = describe_portfolio(self.portfolio, self.R.labels())
        pd.DataFrame({'Ticker': list(weights), 'Weight': list(weights.values())}).to_csv(
            output_file, index=False, float_format='%.10g')
        print(f"Portfolio exported to {output_file}")
