#!/usr/bin/env python3
"""
Utility Bound Calculus
High-probability bounds on the estimation error of the empirically optimal
portfolio under relative utility, and a Monte-Carlo estimate of the
Rademacher complexity of the normalized single-asset payoffs.

Bounds (sup-term always instantiated with rademacher_bound):
  estimation error   U(nu*) - U(nu_n)            <= rad + sqrt((2/n) ln(2/delta))
  empirical gap      U_n(nu_n) - U(nu_n)          <= rad + sqrt(ln(1/delta) / (2n))
  SEG average        U(nu*) - U(nu_bar)           <= rad + 3 sqrt(ln(1/delta) / (2n))
                                                     + 2 L_n sqrt(ln d / m)   (confidence 1 - 3 delta)
"""

import logging
import multiprocessing as mp
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, special

from market_simulator import RngSeed
from utility_core import UtilityFunction, as_returns_array, eval_utility, tree_sum

logger = logging.getLogger(__name__)

# Upper limit of the substituted Dudley integral; the tail beyond it is < 1e-20
DUDLEY_T_MAX = 60.0
DUDLEY_EPSABS = 1e-8

# Rademacher sign draws per substream
TRIALS_PER_BLOCK = 64

BRANCH_LIPSCHITZ = 'lipschitz (alpha = 1)'
BRANCH_DUDLEY = 'dudley entropy (alpha < 1)'


@dataclass
class BoundInputs:
    """
    Args:
        n: Sample size
        d: Number of assets
        alpha: Hoelder exponent of the utility
        K: Hoelder constant
        A: Bound on sup x^alpha / u(x)
        delta: Confidence parameter
        L_n: Lipschitz constant of the relative loss (SEG bound only)
        m: SEG iteration count (SEG bound only)
    """
    n: int
    d: int
    alpha: float
    K: float = 1.0
    A: float = 1.0
    delta: float = 0.05
    L_n: Optional[float] = None
    m: Optional[int] = None

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if int(self.d) < 2:
            raise ValueError(f"d must be >= 2, got {self.d}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.K > 0 or not self.A > 0:
            raise ValueError("K and A must be positive")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.L_n is not None and not self.L_n > 0:
            raise ValueError(f"L_n must be positive, got {self.L_n}")
        if self.m is not None and int(self.m) < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        self.n = int(self.n)
        self.d = int(self.d)

    @property
    def has_seg(self) -> bool:
        return self.L_n is not None and self.m is not None


@dataclass
class BoundReport:
    deviation: float
    rademacher_bound: float
    estimation_error_bound: float
    empirical_gap_bound: float
    seg_bound: Optional[float]
    branch: str
    delta: float

    @property
    def confidence(self) -> float:
        return 1.0 - self.delta

    @property
    def seg_confidence(self) -> float:
        return 1.0 - 3.0 * self.delta

    def to_dict(self) -> dict:
        data = asdict(self)
        data['confidence'] = self.confidence
        if self.seg_bound is not None:
            data['seg_confidence'] = self.seg_confidence
        return data

    def print_report(self, inputs: Optional[BoundInputs] = None):
        print("\n" + "=" * 70)
        print("RELATIVE UTILITY ERROR BOUNDS")
        print("=" * 70)
        if inputs is not None:
            print(f"  n = {inputs.n}, d = {inputs.d}, alpha = {inputs.alpha:g}, "
                  f"K = {inputs.K:g}, A = {inputs.A:g}, delta = {inputs.delta:g}")
            if inputs.has_seg:
                print(f"  L_n = {inputs.L_n:g}, m = {inputs.m}")
            print("-" * 70)
        print(f"  {'Rademacher bound':28s} {self.rademacher_bound:12.6f}   [{self.branch}]")
        print(f"  {'McDiarmid deviation':28s} {self.deviation:12.6f}")
        print(f"  {'Estimation error bound':28s} {self.estimation_error_bound:12.6f}"
              f"   (confidence {self.confidence:.4g})")
        print(f"  {'Empirical gap bound':28s} {self.empirical_gap_bound:12.6f}"
              f"   (confidence {self.confidence:.4g})")
        if self.seg_bound is not None:
            print(f"  {'SEG average bound':28s} {self.seg_bound:12.6f}"
                  f"   (confidence {self.seg_confidence:.4g})")
        print("=" * 70 + "\n")


def _check_delta(delta: float):
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def mcdiarmid_deviation(n: int, delta: float) -> float:
    """sqrt(ln(1/delta) / (2n))"""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    _check_delta(delta)
    return float(np.sqrt(np.log(1.0 / delta) / (2.0 * n)))


def _dudley_integrand(t: float) -> float:
    return np.sqrt(np.log(5.0) + t) * np.exp(-t)


def dudley_c1(epsabs: float = DUDLEY_EPSABS) -> float:
    """
    C_1 = 12 int_0^1 sqrt(ln(5/z)) dz, evaluated after the substitution
    z = exp(-t) as 12 int_0^inf sqrt(ln 5 + t) exp(-t) dt.
    """
    value, abserr = integrate.quad(_dudley_integrand, 0.0, DUDLEY_T_MAX, epsabs=epsabs, limit=200)
    logger.debug("Dudley integral %.12g (abserr %.2g)", value, abserr)
    return 12.0 * value


def dudley_c1_closed_form() -> float:
    """12 e^{ln 5} Gamma(3/2, ln 5) = 12 (sqrt(ln 5) + 5 (sqrt(pi)/2) erfc(sqrt(ln 5)))"""
    x = np.log(5.0)
    return float(12.0 * (np.sqrt(x) + 5.0 * (np.sqrt(np.pi) / 2.0) * special.erfc(np.sqrt(x))))


def dudley_c1_gamma() -> float:
    """Same constant via the regularized upper incomplete gamma function."""
    x = np.log(5.0)
    return float(12.0 * 5.0 * special.gamma(1.5) * special.gammaincc(1.5, x))


@lru_cache(maxsize=None)
def dudley_constant() -> float:
    """C = 2 C_1 ~ 38.16"""
    return 2.0 * dudley_c1()


def rademacher_branch(alpha: float) -> str:
    return BRANCH_LIPSCHITZ if alpha == 1.0 else BRANCH_DUDLEY


def rademacher_bound(inputs: BoundInputs) -> float:
    """
    Bound on E sup G_n:
      alpha = 1:  2 A K sqrt(2 ln d / n)
      alpha < 1:  C A K sqrt((d - 1) / (alpha n)),  C = dudley_constant()
    """
    scale = inputs.A * inputs.K
    if inputs.alpha == 1.0:
        return float(2.0 * scale * np.sqrt(2.0 * np.log(inputs.d) / inputs.n))
    return float(dudley_constant() * scale * np.sqrt((inputs.d - 1) / (inputs.alpha * inputs.n)))


def estimation_error_bound(inputs: BoundInputs) -> float:
    return rademacher_bound(inputs) + float(np.sqrt((2.0 / inputs.n) * np.log(2.0 / inputs.delta)))


def empirical_gap_bound(inputs: BoundInputs) -> float:
    return rademacher_bound(inputs) + mcdiarmid_deviation(inputs.n, inputs.delta)


def seg_error_bound(inputs: BoundInputs) -> float:
    """Bound for the SEG average portfolio; holds with probability at least 1 - 3 delta."""
    if not inputs.has_seg:
        raise ValueError("SEG bound needs both L_n and m")
    return (rademacher_bound(inputs)
            + 3.0 * mcdiarmid_deviation(inputs.n, inputs.delta)
            + 2.0 * inputs.L_n * float(np.sqrt(np.log(inputs.d) / inputs.m)))


def bound_report(inputs: BoundInputs) -> BoundReport:
    return BoundReport(
        deviation=mcdiarmid_deviation(inputs.n, inputs.delta),
        rademacher_bound=rademacher_bound(inputs),
        estimation_error_bound=estimation_error_bound(inputs),
        empirical_gap_bound=empirical_gap_bound(inputs),
        seg_bound=seg_error_bound(inputs) if inputs.has_seg else None,
        branch=rademacher_branch(inputs.alpha),
        delta=inputs.delta,
    )


# ---------------------------------------------------------------------------
# Monte-Carlo Rademacher complexity
# ---------------------------------------------------------------------------

def normalized_payoff_vectors(R, u: UtilityFunction) -> np.ndarray:
    """n x d matrix r^j_k / u(r*_k)."""
    if not u.is_power:
        raise ValueError("Rademacher estimate requires power utility")
    values = as_returns_array(R)
    best = values.max(axis=1)
    return values / eval_utility(u, best)[:, None]


def massart_bound(R, u: UtilityFunction) -> float:
    """A sqrt(2 ln d) / sqrt(n) with A = max_k r*_k / u(r*_k)."""
    values = as_returns_array(R)
    n, d = values.shape
    best = values.max(axis=1)
    A = float(np.max(best / eval_utility(u, best)))
    return A * float(np.sqrt(2.0 * np.log(d) / n))


def _rademacher_block(args) -> np.ndarray:
    payoff_vectors, trials, block_seed = args
    n = payoff_vectors.shape[0]
    rng = block_seed.generator()
    signs = rng.integers(0, 2, size=(trials, n)) * 2.0 - 1.0
    sups = (signs @ payoff_vectors).max(axis=1) / n
    return np.array([sups.sum(), (sups * sups).sum()])


def empirical_rademacher(R, u: UtilityFunction, trials: int, seed, workers: int = 1,
                         return_std_error: bool = False):
    """
    Monte-Carlo estimate of (1/n) E max_j sum_k eps_k r^j_k / u(r*_k) over
    Rademacher signs eps.

    Trials are drawn in blocks of TRIALS_PER_BLOCK, block b from substream b
    of `seed`, and combined by a tree sum.

    Returns:
        Estimate, or (estimate, standard error) if return_std_error
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    vectors = normalized_payoff_vectors(R, u)
    base = RngSeed.coerce(seed)
    n_blocks = -(-trials // TRIALS_PER_BLOCK)
    jobs = [(vectors, min(TRIALS_PER_BLOCK, trials - b * TRIALS_PER_BLOCK), base.child(b))
            for b in range(n_blocks)]
    if workers > 1 and n_blocks > 1:
        with mp.Pool(min(workers, n_blocks)) as pool:
            parts = pool.map(_rademacher_block, jobs)
    else:
        parts = [_rademacher_block(job) for job in jobs]

    total, total_sq = tree_sum(parts)
    estimate = total / trials
    if not return_std_error:
        return float(estimate)
    if trials > 1:
        var = max(total_sq / trials - estimate * estimate, 0.0) * trials / (trials - 1)
        std_error = float(np.sqrt(var / trials))
    else:
        std_error = float('nan')
    return float(estimate), std_error


def massart_check(R, u: UtilityFunction, trials: int, seed) -> Tuple[float, float, float]:
    """(estimate, standard error, Massart bound) for one returns matrix."""
    estimate, std_error = empirical_rademacher(R, u, trials, seed, return_std_error=True)
    return estimate, std_error, massart_bound(R, u)
