#!/usr/bin/env python3
"""
Discrete Black-Scholes Market Simulator
Generates synthetic daily price relatives and estimates log-return moments.

Two market models are supported:
  - scalar: cash (r = 1) plus one lognormal risky asset with annual drift mu
    and volatility sigma, ln r = (mu - sigma^2/2)/T + sigma/sqrt(T) Z
  - multi: d assets whose daily log returns are i.i.d. multivariate normal
    with a given mean vector and covariance matrix

Random numbers come from numpy's counter-based Philox generator keyed by a
SeedSequence, so (seed, stream, key) always reproduces the same draws and
blocks of paths can be generated in any order.
"""

import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import lapack

from data_manager import TRADING_DAYS, ReturnsMatrix
from utility_core import MC_BLOCK_ROWS, as_returns_array

logger = logging.getLogger(__name__)

SCALAR = 'scalar'
MULTI = 'multi'
SCALAR_TICKERS = ['cash', 'risky']

# Relative pivot tolerance for semidefinite covariance factorization
FACTOR_TOL = 1e-12

# Paths per block when simulating annual wealth
PATH_BLOCK = 1024

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngSeed:
    """
    Reproducible random stream: identical (seed, stream, key) give identical draws.

    `key` extends the stream id for nested substreams, e.g. one per realization
    or per Monte-Carlo block.
    """
    seed: int
    stream: int = 0
    key: Tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed) & _SEED_MASK,
                                     spawn_key=(int(self.stream),) + tuple(int(k) for k in self.key))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> 'RngSeed':
        return RngSeed(self.seed, self.stream, self.key + (int(index),))

    @classmethod
    def coerce(cls, value) -> 'RngSeed':
        if isinstance(value, RngSeed):
            return value
        return cls(int(value))

    def to_dict(self) -> dict:
        return {'seed': self.seed, 'stream': self.stream, 'key': list(self.key)}


@dataclass
class MarketSpec:
    """
    Parameters of the scalar-with-cash or multi-asset discrete Black-Scholes model.
    """
    variant: str
    mu: Optional[float] = None
    sigma: Optional[float] = None
    T: int = TRADING_DAYS
    log_mean: Optional[np.ndarray] = None
    log_cov: Optional[np.ndarray] = None
    tickers: Optional[List[str]] = None
    _factor: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.log_mean is not None:
            self.log_mean = np.atleast_1d(np.asarray(self.log_mean, dtype=float))
        if self.log_cov is not None:
            self.log_cov = np.atleast_2d(np.asarray(self.log_cov, dtype=float))
        self.validate()

    @classmethod
    def scalar_with_cash(cls, mu: float, sigma: float, T: int = TRADING_DAYS) -> 'MarketSpec':
        return cls(SCALAR, mu=float(mu), sigma=float(sigma), T=int(T))

    @classmethod
    def multi_asset(cls, log_mean, log_cov, tickers: Optional[List[str]] = None) -> 'MarketSpec':
        return cls(MULTI, log_mean=log_mean, log_cov=log_cov, tickers=tickers)

    def validate(self):
        if self.variant == SCALAR:
            if self.mu is None or self.sigma is None:
                raise ValueError("Scalar market needs mu and sigma")
            if not self.sigma > 0:
                raise ValueError(f"Volatility must be positive, got {self.sigma}")
            if int(self.T) < 1:
                raise ValueError(f"Trading days per year must be >= 1, got {self.T}")
        elif self.variant == MULTI:
            if self.log_mean is None or self.log_cov is None:
                raise ValueError("Multi-asset market needs log_mean and log_cov")
            d = self.log_mean.size
            if self.log_cov.shape != (d, d):
                raise ValueError(f"Covariance shape {self.log_cov.shape} does not match {d} assets")
            if not np.allclose(self.log_cov, self.log_cov.T, rtol=0, atol=1e-15 + 1e-12 * np.abs(self.log_cov).max()):
                raise ValueError("Covariance matrix must be symmetric")
            if self.tickers is not None and len(self.tickers) != d:
                raise ValueError(f"{len(self.tickers)} tickers for {d} assets")
        else:
            raise ValueError(f"Unknown market variant '{self.variant}'")

    @property
    def n_assets(self) -> int:
        return 2 if self.variant == SCALAR else self.log_mean.size

    @property
    def daily_log_mean(self) -> float:
        return (self.mu - self.sigma ** 2 / 2) / self.T

    @property
    def daily_log_std(self) -> float:
        return self.sigma / np.sqrt(self.T)

    def factor(self) -> np.ndarray:
        """Cached symmetric factor F with F F^T = log_cov."""
        if self._factor is None:
            self._factor = factorize_covariance(self.log_cov)
        return self._factor

    def to_dict(self) -> dict:
        if self.variant == SCALAR:
            return {'variant': SCALAR, 'mu': self.mu, 'sigma': self.sigma, 'T': self.T}
        return {'variant': MULTI, 'log_mean': self.log_mean.tolist(),
                'log_cov': self.log_cov.tolist(), 'tickers': self.tickers}

    @classmethod
    def from_dict(cls, data: dict) -> 'MarketSpec':
        variant = data.get('variant')
        if variant == SCALAR:
            return cls.scalar_with_cash(data['mu'], data['sigma'], data.get('T', TRADING_DAYS))
        if variant == MULTI:
            return cls.multi_asset(data['log_mean'], data['log_cov'], data.get('tickers'))
        raise ValueError(f"Unknown market variant '{variant}'")


def factorize_covariance(cov, tol: float = FACTOR_TOL) -> np.ndarray:
    """
    Pivoted Cholesky factorization of a positive semidefinite matrix.

    Args:
        cov: Symmetric d x d matrix
        tol: Pivots below tol * max(diag) are treated as zero

    Returns:
        d x d matrix F with F F^T = cov (columns past the numerical rank are zero)

    Raises:
        numpy.linalg.LinAlgError: the matrix is not positive semidefinite
    """
    a = np.atleast_2d(np.asarray(cov, dtype=float))
    d = a.shape[0]
    diag_max = float(np.max(np.diag(a))) if d else 0.0
    if np.any(np.diag(a) < 0):
        raise np.linalg.LinAlgError("Covariance has a negative variance")
    if diag_max == 0.0:
        if np.any(a != 0):
            raise np.linalg.LinAlgError("Covariance is not positive semidefinite")
        return np.zeros_like(a)

    c, piv, rank, info = lapack.dpstrf(a, tol=tol * diag_max, lower=1)
    if info < 0:
        raise np.linalg.LinAlgError(f"dpstrf failed with info={info}")
    piv = np.asarray(piv, dtype=int)
    if piv.min() == 1:
        piv = piv - 1
    L = np.tril(c)
    L[:, rank:] = 0.0
    F = np.empty_like(L)
    F[piv, :] = L

    residual = np.abs(F @ F.T - a).max()
    if residual > 1e-8 * diag_max:
        raise np.linalg.LinAlgError(
            f"Covariance is not positive semidefinite (factorization residual {residual:.3g})")
    return F


def gen_scalar_bs(spec: MarketSpec, n: int, seed) -> ReturnsMatrix:
    """
    Cash plus one lognormal risky asset.

    Args:
        spec: Scalar market specification
        n: Number of trading days
        seed: RngSeed or int

    Returns:
        n x 2 ReturnsMatrix; column 1 is identically 1
    """
    if spec.variant != SCALAR:
        raise ValueError("gen_scalar_bs needs a scalar market specification")
    if n < 1:
        raise ValueError("Number of rows must be at least 1")
    rng = RngSeed.coerce(seed).generator()
    z = rng.standard_normal(n)
    values = np.ones((n, 2))
    values[:, 1] = np.exp(spec.daily_log_mean + spec.daily_log_std * z)
    return ReturnsMatrix(values, SCALAR_TICKERS)


def gen_multi_bs(log_mean, log_cov, n: int, seed, tickers: Optional[List[str]] = None,
                 factor: Optional[np.ndarray] = None) -> ReturnsMatrix:
    """
    i.i.d. rows with ln r_k ~ N(log_mean, log_cov).

    Raises:
        numpy.linalg.LinAlgError: log_cov is indefinite
    """
    if n < 1:
        raise ValueError("Number of rows must be at least 1")
    mean = np.atleast_1d(np.asarray(log_mean, dtype=float))
    F = factorize_covariance(log_cov) if factor is None else factor
    rng = RngSeed.coerce(seed).generator()
    z = rng.standard_normal((n, mean.size))
    return ReturnsMatrix(np.exp(mean + z @ F.T), tickers)


def simulate_returns(spec: MarketSpec, n: int, seed) -> ReturnsMatrix:
    """Dispatch on the market variant."""
    if spec.variant == SCALAR:
        return gen_scalar_bs(spec, n, seed)
    return gen_multi_bs(spec.log_mean, spec.log_cov, n, seed, spec.tickers, spec.factor())


def simulate_in_blocks(spec: MarketSpec, N: int, seed, block_rows: int = MC_BLOCK_ROWS) -> ReturnsMatrix:
    """
    N rows assembled from blocks of `block_rows`, block b drawn from substream b
    of `seed`; the same rows mc_true_utilities evaluates for that seed.
    """
    if N < 1:
        raise ValueError("Number of rows must be at least 1")
    base = RngSeed.coerce(seed)
    blocks = [simulate_returns(spec, min(block_rows, N - start), base.child(b)).values
              for b, start in enumerate(range(0, N, block_rows))]
    tickers = SCALAR_TICKERS if spec.variant == SCALAR else spec.tickers
    return ReturnsMatrix(np.concatenate(blocks, axis=0), tickers)


def estimate_log_moments(R) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample mean and covariance (divisor n-1) of row-wise log returns.
    """
    values = as_returns_array(R)
    if values.shape[0] < 2:
        raise ValueError("Moment estimation needs at least two rows")
    if np.any(~(values > 0)):
        raise ValueError("Returns must be strictly positive")
    logs = np.log(values)
    mean = logs.mean(axis=0)
    cov = np.atleast_2d(np.cov(logs, rowvar=False, ddof=1))
    return mean, cov


def estimate_market_spec(R: ReturnsMatrix) -> MarketSpec:
    """Multi-asset spec with moments estimated from a dataset."""
    mean, cov = estimate_log_moments(R)
    return MarketSpec.multi_asset(mean, cov, R.tickers)


def _wealth_block(args) -> np.ndarray:
    portfolios, spec, n_paths, days, block_seed = args
    rows = simulate_returns(spec, n_paths * days, block_seed).values
    rows = rows.reshape(n_paths, days, spec.n_assets)
    daily = rows @ portfolios.T
    return np.exp(np.log(daily).sum(axis=1)).T


def annual_wealth_paths(portfolios, spec: MarketSpec, paths: int, seed,
                        days: int = TRADING_DAYS, workers: int = 1) -> np.ndarray:
    """
    Accumulated wealth X_days of fixed-weight portfolios over simulated paths.

    Every portfolio is evaluated on the same paths. Block b of PATH_BLOCK
    paths uses substream b of `seed`.

    Returns:
        k x paths array (k = number of portfolios)
    """
    if paths < 1 or days < 1:
        raise ValueError("Need at least one path and one day")
    nus = np.atleast_2d(np.asarray(portfolios, dtype=float))
    if nus.shape[1] != spec.n_assets:
        raise ValueError(f"Portfolios have {nus.shape[1]} weights for {spec.n_assets} assets")
    base = RngSeed.coerce(seed)
    if spec.variant == MULTI:
        spec.factor()

    jobs = []
    for b in range(-(-paths // PATH_BLOCK)):
        count = min(PATH_BLOCK, paths - b * PATH_BLOCK)
        jobs.append((nus, spec, count, days, base.child(b)))
    logger.info("Simulating %d paths of %d days in %d blocks", paths, days, len(jobs))

    if workers > 1 and len(jobs) > 1:
        with mp.Pool(min(workers, len(jobs))) as pool:
            parts = pool.map(_wealth_block, jobs)
    else:
        parts = [_wealth_block(job) for job in jobs]
    return np.concatenate(parts, axis=1)


def wealth_statistics(X: np.ndarray) -> Dict[str, float]:
    """Mean, median, std (n-1), 5th and 95th percentiles of simulated wealth."""
    X = np.asarray(X, dtype=float)
    p5, p95 = np.percentile(X, [5, 95])
    return {
        'mean': float(X.mean()),
        'median': float(np.median(X)),
        'std': float(X.std(ddof=1)) if X.size > 1 else 0.0,
        'p5': float(p5),
        'p95': float(p95),
    }


def loss_probability(X: np.ndarray, loss: float = 0.18) -> float:
    """Fraction of paths ending below (1 - loss) of the initial wealth."""
    return float(np.mean(np.asarray(X) < 1.0 - loss))
