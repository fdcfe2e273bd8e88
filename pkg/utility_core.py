#!/usr/bin/env python3
"""
Relative Utility Core
Utility functions, relative payoffs and empirical / Monte-Carlo utilities
for portfolios on the probability simplex.

A portfolio nu is a weight vector (nonnegative, summing to 1). For a row of
price relatives r the relative payoff is u(<nu, r>) / u(max_i r^i): the
utility of the portfolio measured against the best single asset taken in
hindsight. It always lies in (0, 1].
"""

import logging
import multiprocessing as mp
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

# Tolerance for the simplex constraint sum(nu) == 1
SIMPLEX_TOL = 1e-12

# Rows per Monte-Carlo block; every block draws from its own substream so the
# estimate does not depend on how blocks are spread over workers
MC_BLOCK_ROWS = 2 ** 18

POWER = 'power'
LOG = 'log'


@dataclass(frozen=True)
class UtilityFunction:
    """
    Power utility u(x) = x^alpha with alpha in (0, 1], or log utility.

    Log utility is admitted only for the ordinary (non-relative) objective,
    since ln(r*) may be nonpositive.
    """
    kind: str = POWER
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind == POWER:
            if self.alpha is None or not (0.0 < float(self.alpha) <= 1.0):
                raise ValueError(f"Power utility exponent must lie in (0, 1], got {self.alpha}")
        elif self.kind == LOG:
            if self.alpha is not None:
                raise ValueError("Log utility takes no exponent")
        else:
            raise ValueError(f"Unknown utility kind '{self.kind}'")

    @classmethod
    def power(cls, alpha: float) -> 'UtilityFunction':
        return cls(POWER, float(alpha))

    @classmethod
    def log(cls) -> 'UtilityFunction':
        return cls(LOG, None)

    @classmethod
    def from_dict(cls, data: dict) -> 'UtilityFunction':
        kind = data.get('kind', POWER)
        if kind == LOG:
            return cls.log()
        return cls.power(data['alpha'])

    @property
    def is_power(self) -> bool:
        return self.kind == POWER

    @property
    def is_log(self) -> bool:
        return self.kind == LOG

    def to_dict(self) -> dict:
        return {'kind': self.kind, 'alpha': self.alpha}

    def label(self) -> str:
        return 'log' if self.is_log else f'power({self.alpha:g})'

    def __call__(self, x):
        return eval_utility(self, x)


def check_relative_flag(u: UtilityFunction, relative: bool):
    """Reject log utility under the relative objective."""
    if relative and u.is_log:
        raise ValueError("Log utility is only supported for the ordinary objective (relative=False)")


def _positive(x, what: str = 'argument') -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError(f"Utility {what} must be strictly positive")
    return arr


def _scalar_or_array(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


def eval_utility(u: UtilityFunction, x):
    """
    Evaluate u(x) for positive x (scalar or array).

    Args:
        u: Utility function
        x: Positive real or array of positive reals

    Returns:
        x^alpha for power utility, ln(x) for log utility
    """
    arr = _positive(x)
    if u.is_log:
        return _scalar_or_array(np.log(arr))
    return _scalar_or_array(np.power(arr, u.alpha))


def left_derivative(u: UtilityFunction, x):
    """
    Left derivative D_-u(x). Both supported utilities are smooth on (0, inf),
    so it coincides with the ordinary derivative.
    """
    arr = _positive(x)
    if u.is_log:
        return _scalar_or_array(1.0 / arr)
    return _scalar_or_array(u.alpha * np.power(arr, u.alpha - 1.0))


def best_return(r: Sequence[float]) -> Tuple[int, float]:
    """
    Best asset taken in hindsight.

    Returns:
        (index, value) of the maximal component; ties resolve to the lowest index
    """
    arr = np.asarray(r, dtype=float)
    if arr.size == 0:
        raise ValueError("Return vector is empty")
    _positive(arr, 'returns')
    idx = int(np.argmax(arr))
    return idx, float(arr[idx])


def validate_portfolio(nu, d: Optional[int] = None) -> np.ndarray:
    """
    Check that nu lies on the simplex (within SIMPLEX_TOL) and return it as an array.
    """
    weights = np.asarray(nu, dtype=float)
    if weights.ndim != 1 or weights.size == 0:
        raise ValueError("Portfolio must be a non-empty weight vector")
    if d is not None and weights.size != d:
        raise ValueError(f"Portfolio has {weights.size} weights, expected {d}")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("Portfolio weights must be finite and nonnegative")
    if abs(weights.sum() - 1.0) > SIMPLEX_TOL * max(1, weights.size):
        raise ValueError(f"Portfolio weights sum to {weights.sum():.15g}, not 1")
    return weights


def uniform_portfolio(d: int) -> np.ndarray:
    return np.full(d, 1.0 / d)


def as_returns_array(R) -> np.ndarray:
    """Accept a ReturnsMatrix (anything with `.values`) or a plain 2-D array."""
    values = getattr(R, 'values', R)
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("Returns must form a non-empty n x d matrix")
    return arr


def relative_payoff(u: UtilityFunction, nu, r) -> float:
    """
    Relative payoff f(nu, r) = u(<nu, r>) / u(r*) of a single return row.
    """
    if not u.is_power:
        raise ValueError("Relative payoff requires power utility")
    r = _positive(r, 'returns')
    weights = validate_portfolio(nu, r.size)
    # x^a / y^a == (x / y)^a; the ratio form keeps the value in (0, 1] exactly
    return float(np.power(float(weights @ r) / float(r.max()), u.alpha))


def payoffs(u: UtilityFunction, nu, R, relative: bool = True) -> np.ndarray:
    """
    Per-row payoffs u(<nu, r_k>) / u(r_k*) (relative) or u(<nu, r_k>) (ordinary).
    """
    check_relative_flag(u, relative)
    values = as_returns_array(R)
    weights = np.asarray(nu, dtype=float)
    wealth = values @ weights
    assert np.all(wealth > 0), "portfolio return must be positive"
    if relative:
        return np.power(wealth / values.max(axis=1), u.alpha)
    if u.is_log:
        return np.log(wealth)
    return np.power(wealth, u.alpha)


def empirical_utility(u: UtilityFunction, nu, R, relative: bool = True) -> float:
    """
    Empirical utility of portfolio nu over the observed return rows.

    Args:
        u: Utility function
        nu: Portfolio on the simplex
        R: ReturnsMatrix or n x d array of strictly positive price relatives
        relative: True for the hindsight-normalized objective, False for the ordinary one

    Returns:
        (1/n) sum_k u(<nu, r_k>)/u(r_k*) if relative, else (1/n) sum_k u(<nu, r_k>)
    """
    values = as_returns_array(R)
    if np.any(~(values > 0)):
        raise ValueError("Returns must be strictly positive")
    validate_portfolio(nu, values.shape[1])
    return float(np.mean(payoffs(u, nu, values, relative)))


def tree_sum(parts: List[np.ndarray]):
    """Pairwise (tree) reduction; fixed order regardless of how parts were produced."""
    if not parts:
        raise ValueError("Nothing to sum")
    if len(parts) == 1:
        return parts[0]
    mid = len(parts) // 2
    return tree_sum(parts[:mid]) + tree_sum(parts[mid:])


@dataclass
class MonteCarloEstimate:
    """Monte-Carlo utility estimates for a batch of portfolios."""
    mean: np.ndarray
    std: np.ndarray
    n_samples: int

    @property
    def std_error(self) -> np.ndarray:
        return self.std / np.sqrt(self.n_samples)


def _mc_block(args) -> np.ndarray:
    """Sums of payoffs and squared payoffs for one block of simulated rows."""
    from market_simulator import simulate_returns

    u, portfolios, spec, rows, block_seed, relative = args
    block = simulate_returns(spec, rows, block_seed).values
    sums = np.empty((2, portfolios.shape[0]))
    for j, nu in enumerate(portfolios):
        p = payoffs(u, nu, block, relative)
        sums[0, j] = p.sum()
        sums[1, j] = (p * p).sum()
    return sums


def mc_true_utilities(u: UtilityFunction, portfolios, spec, N: int, seed,
                      relative: bool = True, workers: int = 1) -> MonteCarloEstimate:
    """
    Estimate the true utility U(nu) of several portfolios on one common
    simulated sample of N return rows.

    The sample is generated in blocks of MC_BLOCK_ROWS rows; block b draws from
    substream b of `seed`, and block sums are combined by a pairwise tree sum,
    so the estimate is identical for any worker count.

    Args:
        u: Utility function
        portfolios: k x d array (or single d-vector) of portfolios
        spec: MarketSpec describing the return distribution
        N: Number of simulated rows
        seed: RngSeed (or int) for the common sample
        relative: Relative or ordinary objective
        workers: Process count for block evaluation

    Returns:
        MonteCarloEstimate with per-portfolio mean and standard deviation
    """
    from market_simulator import RngSeed

    if N < 1:
        raise ValueError("Monte-Carlo sample size must be at least 1")
    check_relative_flag(u, relative)
    spec.validate()
    nus = np.atleast_2d(np.asarray(portfolios, dtype=float))
    for nu in nus:
        validate_portfolio(nu, spec.n_assets)
    base = seed if isinstance(seed, RngSeed) else RngSeed(int(seed))

    n_blocks = -(-N // MC_BLOCK_ROWS)
    jobs = []
    for b in range(n_blocks):
        rows = min(MC_BLOCK_ROWS, N - b * MC_BLOCK_ROWS)
        jobs.append((u, nus, spec, rows, base.child(b), relative))

    logger.debug("Monte-Carlo utility: %d rows in %d blocks, %d portfolios", N, n_blocks, len(nus))
    if workers > 1 and n_blocks > 1:
        with mp.Pool(min(workers, n_blocks)) as pool:
            parts = pool.map(_mc_block, jobs)
    else:
        parts = [_mc_block(job) for job in jobs]

    totals = tree_sum(parts)
    mean = totals[0] / N
    var = np.maximum(totals[1] / N - mean * mean, 0.0)
    std = np.sqrt(var * N / (N - 1)) if N > 1 else np.zeros_like(mean)
    return MonteCarloEstimate(mean=mean, std=std, n_samples=N)


def mc_true_utility(u: UtilityFunction, nu, spec, N: int, seed,
                    relative: bool = True, workers: int = 1) -> float:
    """
    Monte-Carlo estimate of U(nu) from N fresh simulated rows; deterministic given seed.
    """
    return float(mc_true_utilities(u, nu, spec, N, seed, relative, workers).mean[0])
