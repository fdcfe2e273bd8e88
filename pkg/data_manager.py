"""
Market data manager: loads daily price-relative datasets, normalizes them and
computes the portfolio statistics reported for backtests (accumulated wealth,
annual return, annual volatility).

Dataset files are plain ASCII, one trading day per line, whitespace-separated
price relatives r_k^i = s_k^i / s_{k-1}^i. Ticker names come from a sidecar
file (`<dataset>.tickers`, whitespace-separated) since the raw files carry none.
"""

import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from unidecode import unidecode

# Trading days per year; fixed throughout
TRADING_DAYS = 252

# Weights below this are dropped from reported portfolios
PRUNE_THRESHOLD = 0.001

DATA_DIR_ENV = 'RELUTIL_DATA_DIR'
DEFAULT_DATA_DIR = 'data'
NYSE1_FILE = 'nyse1.txt'
NYSE2_FILE = 'nyse2.txt'
TICKERS_SUFFIX = '.tickers'

NYSE1_SHAPE = (5651, 36)
NYSE2_SHAPE = (11178, 19)

# Column order of the published files (alphabetical)
NYSE1_TICKERS = [
    'ahp', 'alcoa', 'amerb', 'arco', 'coke', 'comme', 'dow', 'dupont', 'espey',
    'exxon', 'fisch', 'ford', 'ge', 'gm', 'gte', 'gulf', 'hp', 'ibm', 'inger',
    'iroqu', 'jnj', 'kimbc', 'kinar', 'kodak', 'luken', 'meico', 'merck', 'mmm',
    'mobil', 'morris', 'pg', 'pills', 'schlum', 'sears', 'sherw', 'tex',
]
NYSE2_TICKERS = [
    'ahp', 'alcoa', 'amerb', 'coke', 'dow', 'dupont', 'ford', 'ge', 'gm', 'hp',
    'ibm', 'inger', 'jnj', 'kimbc', 'merck', 'mmm', 'morris', 'pg', 'schlum',
]

# Published log-optimal portfolios used as reference points
NYSE1_LOG_OPTIMAL = {'comme': 0.2767, 'espey': 0.1953, 'iroqu': 0.0927,
                     'kinar': 0.2507, 'meico': 0.1845}
NYSE2_LOG_OPTIMAL = {'hp': 0.177, 'morris': 0.747, 'schlum': 0.076}


class ReturnsFormatError(ValueError):
    """Malformed dataset file; line and column are 1-based."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = ''
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


def normalize_ticker(name) -> str:
    """Normalize ticker names for consistent lookups (ASCII, lower case, stripped)."""
    if not name:
        return ''
    return unidecode(str(name)).lower().strip()


@dataclass(frozen=True)
class ReturnRange:
    r_min: float
    r_max: float

    def __post_init__(self):
        if not (0 < self.r_min <= self.r_max):
            raise ValueError(f"Invalid return range [{self.r_min}, {self.r_max}]")


@dataclass(frozen=True, eq=False)
class ReturnsMatrix:
    """
    Immutable n x d matrix of strictly positive price relatives.

    Args:
        values: n x d array, n >= 1, d >= 1, every entry > 0
        tickers: Optional column labels
    """
    values: np.ndarray
    tickers: Optional[List[str]] = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("Returns matrix must be n x d with n >= 1, d >= 1")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("Returns matrix entries must be finite and strictly positive")
        arr.setflags(write=False)
        object.__setattr__(self, 'values', arr)
        if self.tickers is not None:
            tickers = [str(t) for t in self.tickers]
            if len(tickers) != arr.shape[1]:
                raise ValueError(f"{len(tickers)} tickers supplied for {arr.shape[1]} columns")
            object.__setattr__(self, 'tickers', tickers)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def labels(self) -> List[str]:
        if self.tickers is not None:
            return list(self.tickers)
        return [f'asset_{i + 1}' for i in range(self.d)]

    def ticker_index(self, name: str) -> int:
        wanted = normalize_ticker(name)
        for i, label in enumerate(self.labels()):
            if normalize_ticker(label) == wanted:
                return i
        raise KeyError(f"Unknown ticker '{name}'")

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.labels())


def resolve_data_dir(cli_value: Optional[str] = None) -> str:
    """Dataset directory: CLI value > RELUTIL_DATA_DIR > ./data."""
    if cli_value:
        return cli_value
    return os.environ.get(DATA_DIR_ENV, DEFAULT_DATA_DIR)


def dataset_path(name: str, data_dir: Optional[str] = None) -> str:
    """Path of a named dataset ('nyse1' / 'nyse2') or of an explicit file."""
    files = {'nyse1': NYSE1_FILE, 'nyse2': NYSE2_FILE}
    key = name.lower()
    if key in files:
        return os.path.join(resolve_data_dir(data_dir), files[key])
    return name


def default_tickers(shape) -> Optional[List[str]]:
    """Ticker names for the two published NYSE datasets, identified by shape."""
    if tuple(shape) == NYSE1_SHAPE:
        return list(NYSE1_TICKERS)
    if tuple(shape) == NYSE2_SHAPE:
        return list(NYSE2_TICKERS)
    return None


def load_tickers(path: str) -> List[str]:
    """Read whitespace/newline separated ticker names from a sidecar file."""
    with open(path, 'r', encoding='utf-8') as f:
        return f.read().split()


def load_returns(path: str, tickers_path: Optional[str] = None) -> ReturnsMatrix:
    """
    Load a whitespace-matrix dataset.

    Args:
        path: Dataset file, one trading day per line
        tickers_path: Optional sidecar with column names; defaults to
            `<path>.tickers` when present, then to the known NYSE ticker lists

    Returns:
        ReturnsMatrix with n = line count and d = field count

    Raises:
        FileNotFoundError: dataset missing
        ReturnsFormatError: ragged rows, unparsable or nonpositive entries
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Dataset not found: {path}")

    try:
        raw = pd.read_csv(path, sep=r'\s+', header=None, dtype=str, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise ReturnsFormatError("Dataset file is empty", line=1)
    except pd.errors.ParserError as e:
        match = re.search(r'line (\d+)', str(e))
        line = int(match.group(1)) if match else None
        raise ReturnsFormatError(f"Ragged row in {path}: {e}", line=line)

    # Trailing blank lines are dropped; interior ones stay and fail as ragged rows
    filled = np.flatnonzero(raw.notna().any(axis=1).to_numpy())
    if filled.size == 0:
        raise ReturnsFormatError("Dataset file is empty", line=1)
    raw = raw.iloc[:filled[-1] + 1]

    missing = raw.isna().to_numpy()
    if missing.any():
        row, col = np.argwhere(missing)[0]
        found = int((~missing[row]).sum())
        raise ReturnsFormatError(
            f"Ragged row: expected {raw.shape[1]} fields, found {found}",
            line=int(row) + 1, column=int(col) + 1)

    numeric = raw.apply(pd.to_numeric, errors='coerce')
    unparsable = numeric.isna().to_numpy()
    if unparsable.any():
        row, col = np.argwhere(unparsable)[0]
        raise ReturnsFormatError(
            f"Cannot parse '{raw.iat[row, col]}' as a decimal number",
            line=int(row) + 1, column=int(col) + 1)

    # float() on the original text is correctly rounded
    values = raw.astype(float).to_numpy()
    bad = ~(np.isfinite(values) & (values > 0))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ReturnsFormatError(
            f"Price relative must be strictly positive, got {raw.iat[row, col]}",
            line=int(row) + 1, column=int(col) + 1)

    if tickers_path is None and os.path.exists(path + TICKERS_SUFFIX):
        tickers_path = path + TICKERS_SUFFIX
    tickers = load_tickers(tickers_path) if tickers_path else default_tickers(values.shape)
    return ReturnsMatrix(values, tickers)


def save_returns(R: ReturnsMatrix, path: str, write_tickers: bool = True):
    """
    Write a ReturnsMatrix in the whitespace-matrix format at 17 significant
    digits (round-trips every double exactly).
    """
    pd.DataFrame(R.values).to_csv(path, sep=' ', header=False, index=False, float_format='%.17g')
    if write_tickers and R.tickers is not None:
        with open(path + TICKERS_SUFFIX, 'w', encoding='utf-8') as f:
            f.write(' '.join(R.tickers) + '\n')


def normalize_by_best(R: ReturnsMatrix) -> ReturnsMatrix:
    """Divide each row by its maximum; every row's max becomes exactly 1."""
    values = R.values / R.values.max(axis=1, keepdims=True)
    return ReturnsMatrix(values, R.tickers)


def portfolio_returns(nu, R: ReturnsMatrix) -> np.ndarray:
    """Daily portfolio returns <nu, r_t>."""
    weights = np.asarray(nu, dtype=float)
    if weights.size != R.d:
        raise ValueError(f"Portfolio has {weights.size} weights for {R.d} assets")
    return R.values @ weights


def accumulated_wealth(nu, R: ReturnsMatrix) -> float:
    """
    Accumulated wealth X_n = prod_t <nu, r_t> of a constantly rebalanced
    portfolio, computed in log space.
    """
    daily = portfolio_returns(nu, R)
    if np.any(daily <= 0):
        raise ValueError("Portfolio return must be positive")
    return float(np.exp(np.sum(np.log(daily))))


def annual_return(X_n: float, n: int) -> float:
    """Annualized return X_n^(252/n)."""
    if X_n <= 0 or n < 1:
        raise ValueError("Annual return needs X_n > 0 and n >= 1")
    return float(X_n ** (TRADING_DAYS / n))


def annual_volatility(nu, R: ReturnsMatrix) -> float:
    """Sample standard deviation (divisor n-1) of daily portfolio returns times sqrt(252)."""
    if R.n < 2:
        raise ValueError("Annual volatility needs at least two trading days")
    daily = portfolio_returns(nu, R)
    return float(np.std(daily, ddof=1) * np.sqrt(TRADING_DAYS))


def return_range(R: ReturnsMatrix) -> ReturnRange:
    """Global minimum and maximum price relative."""
    return ReturnRange(float(R.values.min()), float(R.values.max()))


def prune_and_renormalize(nu, threshold: float = PRUNE_THRESHOLD) -> np.ndarray:
    """
    Zero weights below threshold and renormalize the survivors.

    Raises:
        ValueError: every weight is below the threshold
    """
    weights = np.asarray(nu, dtype=float)
    keep = weights >= threshold
    if not keep.any():
        raise ValueError(f"All portfolio weights are below the pruning threshold {threshold}")
    pruned = np.where(keep, weights, 0.0)
    return pruned / pruned.sum()


def portfolio_from_mapping(weights: Dict[str, float], labels: List[str]) -> np.ndarray:
    """
    Build a weight vector over `labels` from {ticker: weight}; unnamed tickers
    get 0 and the result is renormalized (published weights are rounded).
    """
    index = {normalize_ticker(label): i for i, label in enumerate(labels)}
    nu = np.zeros(len(labels))
    for name, w in weights.items():
        key = normalize_ticker(name)
        if key not in index:
            raise KeyError(f"Unknown ticker '{name}'")
        nu[index[key]] += float(w)
    if np.any(nu < 0) or nu.sum() <= 0:
        raise ValueError("Portfolio weights must be nonnegative with a positive sum")
    return nu / nu.sum()


def describe_portfolio(nu, labels: List[str], min_weight: float = 0.0) -> Dict[str, float]:
    """{ticker: weight} for weights above min_weight, in column order."""
    return {label: float(w) for label, w in zip(labels, nu) if w > min_weight}


def portfolio_stats(nu, R: ReturnsMatrix) -> dict:
    """
    Backtest record for a fixed-weight portfolio.

    Returns:
        {portfolio, X_n, annual_return, annual_volatility}
    """
    X_n = accumulated_wealth(nu, R)
    return {
        'portfolio': describe_portfolio(nu, R.labels()),
        'X_n': X_n,
        'annual_return': annual_return(X_n, R.n),
        'annual_volatility': annual_volatility(nu, R),
    }
