#!/usr/bin/env python3
"""
Experiment harness: regenerates the relative-utility tables and figure data.

Every runner takes an ExperimentSpec and returns a ResultTable. Output files
(CSV tables, JSON-lines records, metadata JSON) depend only on the spec and
its seed, never on the worker count: realizations draw from substreams
(master seed, experiment stream, realization index) and results are gathered
in realization order.
"""

import hashlib
import json
import logging
import multiprocessing as mp
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from compare_solvers import compare_solvers
from data_manager import (NYSE1_LOG_OPTIMAL, NYSE1_SHAPE, NYSE2_LOG_OPTIMAL, NYSE2_SHAPE, ReturnsMatrix,
                          accumulated_wealth, annual_return, dataset_path, describe_portfolio, load_returns,
                          portfolio_from_mapping, portfolio_stats, prune_and_renormalize, save_returns)
from market_simulator import (MarketSpec, RngSeed, annual_wealth_paths, estimate_log_moments, estimate_market_spec,
                              gen_scalar_bs, loss_probability, simulate_in_blocks, simulate_returns,
                              wealth_statistics)
from portfolio_selector import (BISECT_XTOL, GdsegConfig, GdsegSelector, SegConfig, best_of_k_gdseg,
                                bisect_two_asset, gdseg, scalar_model_optimum, scalar_model_utility)
from utility_bounds import BoundInputs, bound_report
from utility_core import UtilityFunction, empirical_utility, mc_true_utilities, uniform_portfolio

logger = logging.getLogger(__name__)

__version__ = '1.0.0'

EXPERIMENTS = ('table1', 'fig1', 'nyse-log', 'table4', 'table5', 'fig2',
               'bound-report', 'simulate', 'optimize', 'compare')

# Full-scale defaults; --fast and spec files override them
FULL_SCALE_DEFAULTS = {
    'table1': {'alphas': [0.001, 0.01, 0.1, 0.2, 0.3, 0.5, 0.75, 0.9], 'realizations': 100,
               'n': 252_000, 'mu': 0.15, 'sigma': 0.45, 'T': 252, 'tol': BISECT_XTOL},
    'fig1': {'n_list': [2520, 25200, 252_000], 'realizations': 200, 'alpha': 0.2,
             'N_true': 10 ** 7, 'bins': 20, 'mu': 0.15, 'sigma': 0.45, 'T': 252, 'tol': BISECT_XTOL},
    'nyse-log': {'dataset': 'nyse2', 'runs': 30, 'gdseg': {}},
    'table4': {'dataset': 'nyse2', 'alphas': [0.01, 0.1, 0.2, 0.3, 0.5, 0.75], 'k': 10, 'gdseg': {}},
    'table5': {'dataset': 'nyse2', 'moments': None, 'paths': 10 ** 6, 'portfolios': {},
               'portfolios_from': None, 'loss': 0.18},
    'fig2': {'dataset': 'nyse2', 'moments': None, 'realizations': 200, 'alpha': 0.2, 'n': 11178,
             'k': 10, 'N_true': 10 ** 7, 'bins': 20, 'gdseg': {}},
    'bound-report': {'n': 2520, 'd': 2, 'alpha': 1.0, 'delta': 0.05, 'K': 1.0, 'A': 1.0,
                     'L_n': None, 'm': None},
    'simulate': {'variant': 'scalar', 'n': 2520, 'mu': 0.15, 'sigma': 0.45, 'T': 252,
                 'dataset': None, 'moments': None},
    'optimize': {'dataset': 'nyse2', 'utility': None, 'alpha': None, 'relative': False, 'k': 1,
                 'gdseg': {}},
    'compare': {'dataset': None, 'alpha': 0.5, 'relative': True, 'm': 10_000, 'k': 1, 'n': 2520,
                'mu': 0.15, 'sigma': 0.45, 'T': 252, 'gdseg': {}},
}

FAST_PRESET = {'realizations': 20, 'N_true': 10 ** 5, 'paths': 10 ** 5}

COUNT_KEYS = ('realizations', 'runs', 'k', 'n', 'N_true', 'paths', 'bins', 'm')
SPEC_FILE_KEYS = ('experiment', 'seed', 'out', 'data', 'workers', 'params')

EXTREME_TOL = 1e-9


class DatasetMissingError(FileNotFoundError):
    """A dataset-dependent experiment was asked to run without its data file."""


# --- Custom JSON Encoder to handle numpy types ---
class NumpyEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, np.bool_):
            return bool(obj)
        return json.JSONEncoder.default(self, obj)


def experiment_stream(experiment: str) -> int:
    """Stable stream id for an experiment name."""
    return int(hashlib.sha256(experiment.encode('utf-8')).hexdigest()[:8], 16)


@dataclass
class ExperimentSpec:
    """
    One experiment invocation.

    Args:
        experiment: One of EXPERIMENTS
        params: Experiment parameters (merged over FULL_SCALE_DEFAULTS)
        seed: Master seed
        out_dir: Output directory
        data_dir: Dataset directory (None: RELUTIL_DATA_DIR or ./data)
        workers: Process count
    """
    experiment: str
    params: Dict = field(default_factory=dict)
    seed: int = 0
    out_dir: str = 'results'
    data_dir: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"Unknown experiment '{self.experiment}'")
        for key in COUNT_KEYS:
            value = self.params.get(key)
            if value is not None and int(value) < 1:
                raise ValueError(f"{key} must be >= 1, got {value}")
        alphas = list(self.params.get('alphas') or [])
        if self.params.get('alpha') is not None:
            alphas.append(self.params['alpha'])
        for a in alphas:
            if not (0.0 < float(a) <= 1.0):
                raise ValueError(f"alpha must lie in (0, 1], got {a}")
        if self.params.get('n_list') and any(int(n) < 1 for n in self.params['n_list']):
            raise ValueError("Every sample size in n_list must be >= 1")
        if int(self.workers) < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        self.workers = int(self.workers)

    @classmethod
    def resolve(cls, experiment: str, spec_file: Optional[str] = None, fast: bool = False,
                params: Optional[Dict] = None, **options) -> 'ExperimentSpec':
        """
        Merge parameters: full-scale defaults < fast preset < spec file < explicit overrides.
        `options` (seed, out_dir, data_dir, workers) set to None are ignored.
        """
        if experiment not in FULL_SCALE_DEFAULTS:
            raise ValueError(f"Unknown experiment '{experiment}'")
        merged = json.loads(json.dumps(FULL_SCALE_DEFAULTS[experiment]))
        if fast:
            merged.update({k: v for k, v in FAST_PRESET.items() if k in merged})

        settings = {}
        if spec_file:
            with open(spec_file, 'r') as f:
                data = json.load(f)
            if data.get('experiment', experiment) != experiment:
                raise ValueError(f"Spec file is for '{data['experiment']}', not '{experiment}'")
            file_params = data.get('params', {k: v for k, v in data.items() if k not in SPEC_FILE_KEYS})
            merged.update(file_params)
            for key, name in (('seed', 'seed'), ('out', 'out_dir'), ('data', 'data_dir'), ('workers', 'workers')):
                if key in data:
                    settings[name] = data[key]

        merged.update({k: v for k, v in (params or {}).items() if v is not None})
        settings.update({k: v for k, v in options.items() if v is not None})
        return cls(experiment, merged, **settings)

    def stream(self) -> RngSeed:
        return RngSeed(int(self.seed), experiment_stream(self.experiment))

    def spec_hash(self) -> str:
        canonical = json.dumps({'experiment': self.experiment, 'params': self.params, 'seed': self.seed},
                               sort_keys=True, cls=NumpyEncoder)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def metadata(self) -> dict:
        return {'experiment': self.experiment, 'seed': self.seed, 'spec_hash': self.spec_hash(),
                'version': __version__, 'params': self.params}

    def gdseg_config(self, seed) -> GdsegConfig:
        settings = dict(self.params.get('gdseg') or {})
        settings['seed'] = seed
        return GdsegConfig.from_dict(settings)


@dataclass
class ResultTable:
    """
    Labeled table plus per-realization records, summary and rerun metadata.
    """
    name: str
    frame: pd.DataFrame
    metadata: dict = field(default_factory=dict)
    records: List[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    extras: Dict[str, pd.DataFrame] = field(default_factory=dict)
    returns: Optional[ReturnsMatrix] = None

    def write(self, out_dir: str, xlsx: bool = False) -> List[str]:
        """Write <name>.csv, <name>.jsonl, <name>.meta.json and extras; returns the paths."""
        os.makedirs(out_dir, exist_ok=True)
        written = []

        def path(suffix):
            p = os.path.join(out_dir, self.name + suffix)
            written.append(p)
            return p

        self.frame.to_csv(path('.csv'), index=False, float_format='%.12g')
        for key, frame in self.extras.items():
            frame.to_csv(path(f'_{key}.csv'), index=False, float_format='%.12g')
        if self.records:
            with open(path('.jsonl'), 'w') as f:
                for record in self.records:
                    f.write(json.dumps(record, sort_keys=True, cls=NumpyEncoder) + '\n')
        with open(path('.meta.json'), 'w') as f:
            json.dump({'metadata': self.metadata, 'summary': self.summary}, f,
                      sort_keys=True, indent=2, cls=NumpyEncoder)
            f.write('\n')
        if self.returns is not None:
            save_returns(self.returns, path('_returns.txt'))
        if xlsx:
            with pd.ExcelWriter(path('.xlsx'), engine='openpyxl') as writer:
                self.frame.to_excel(writer, sheet_name=self.name[:31], index=False)
                for key, frame in self.extras.items():
                    frame.to_excel(writer, sheet_name=key[:31], index=False)
        return written

    def print_summary(self):
        print("\n" + "=" * 70)
        print(f"{self.name.upper()}  (seed {self.metadata.get('seed')}, "
              f"spec {str(self.metadata.get('spec_hash', ''))[:12]})")
        print("=" * 70)
        with pd.option_context('display.width', 120, 'display.max_columns', 20,
                               'display.float_format', '{:.4f}'.format):
            print(self.frame.to_string(index=False))
        if self.summary:
            print("-" * 70)
            for key, value in self.summary.items():
                if isinstance(value, (dict, list)):
                    value = json.dumps(value, cls=NumpyEncoder)
                elif isinstance(value, float):
                    value = f'{value:.6g}'
                print(f"  {key:28s} {value}")
        print("=" * 70 + "\n")


def map_realizations(func: Callable, jobs: list, workers: int = 1) -> list:
    """Run jobs in a process pool; results come back in job order."""
    if workers > 1 and len(jobs) > 1:
        with mp.Pool(min(workers, len(jobs))) as pool:
            return pool.map(func, jobs)
    return [func(job) for job in jobs]


def load_dataset(spec: ExperimentSpec) -> ReturnsMatrix:
    """
    Resolve params['dataset'] ('nyse1', 'nyse2' or a file path) under the data directory.

    Raises:
        DatasetMissingError: file absent
    """
    name = spec.params.get('dataset')
    if not name:
        raise DatasetMissingError(f"{spec.experiment} needs a dataset")
    path = dataset_path(name, spec.data_dir)
    if not os.path.exists(path):
        raise DatasetMissingError(f"Dataset not found: {path}")
    return load_returns(path, spec.params.get('tickers'))


def load_market_spec(path: str) -> MarketSpec:
    """MarketSpec from a JSON file: a MarketSpec dict or a simulate/table5 meta file."""
    if not os.path.exists(path):
        raise DatasetMissingError(f"Moments file not found: {path}")
    with open(path, 'r') as f:
        data = json.load(f)
    return MarketSpec.from_dict(data.get('summary', {}).get('market', data))


def market_from_params(spec: ExperimentSpec) -> MarketSpec:
    """Multi-asset market from cached moments, else estimated from the dataset."""
    if spec.params.get('moments'):
        return load_market_spec(spec.params['moments'])
    return estimate_market_spec(load_dataset(spec))


def reference_log_optimal(R: ReturnsMatrix) -> Dict[str, float]:
    if R.shape == NYSE1_SHAPE:
        return dict(NYSE1_LOG_OPTIMAL)
    if R.shape == NYSE2_SHAPE:
        return dict(NYSE2_LOG_OPTIMAL)
    return {}


def scalar_market(params: dict) -> MarketSpec:
    return MarketSpec.scalar_with_cash(params['mu'], params['sigma'], params['T'])


def histogram_frame(samples: Dict[str, np.ndarray], bins: int) -> pd.DataFrame:
    """Histogram counts with bin edges, one block of rows per labeled sample."""
    rows = []
    for label, values in samples.items():
        counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins)
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            rows.append({'sample': label, 'bin_left': lo, 'bin_right': hi, 'count': int(c)})
    return pd.DataFrame(rows, columns=['sample', 'bin_left', 'bin_right', 'count'])


def weights_text(nu, labels: List[str]) -> str:
    return ' '.join(f'{name}={w:.4f}' for name, w in describe_portfolio(nu, labels).items())


# ---------------------------------------------------------------------------
# Table 1: cash + risky asset, ordinary vs relative optimal weight
# ---------------------------------------------------------------------------

def _table1_realization(args):
    market, n, seed, alphas, tol = args
    R = gen_scalar_bs(market, n, seed)
    ordinary = [bisect_two_asset(UtilityFunction.power(a), R, False, tol) for a in alphas]
    relative = [bisect_two_asset(UtilityFunction.power(a), R, True, tol) for a in alphas]
    return ordinary, relative


def run_table1(spec: ExperimentSpec) -> ResultTable:
    """Average optimal risky weight per alpha for both objectives."""
    p = spec.params
    alphas = [float(a) for a in p['alphas']]
    market = scalar_market(p)
    base = spec.stream()
    logger.info("Table 1: %d realizations of n=%d, alphas %s", p['realizations'], p['n'], alphas)

    jobs = [(market, int(p['n']), base.child(i), alphas, p['tol']) for i in range(int(p['realizations']))]
    results = map_realizations(_table1_realization, jobs, spec.workers)

    ordinary = np.array([r[0] for r in results])
    relative = np.array([r[1] for r in results])
    columns = [f'{a:g}' for a in alphas]
    frame = pd.DataFrame([['ordinary'] + list(ordinary.mean(axis=0)),
                          ['relative'] + list(relative.mean(axis=0))],
                         columns=['objective'] + columns)
    records = [{'realization': i, 'alpha': a, 'ordinary': ordinary[i, j], 'relative': relative[i, j]}
               for i in range(len(results)) for j, a in enumerate(alphas)]
    summary = {'market': market.to_dict(),
               'relative_le_ordinary': bool(np.all(relative.mean(axis=0) <= ordinary.mean(axis=0) + 1e-12))}
    return ResultTable('table1', frame, spec.metadata(), records, summary)


# ---------------------------------------------------------------------------
# Figure 1: sampling distribution of the optimal weight and its true utility
# ---------------------------------------------------------------------------

def _fig1_realization(args):
    market, n, seed, u, tol = args
    R = gen_scalar_bs(market, n, seed)
    nu2 = bisect_two_asset(u, R, True, tol)
    return nu2, empirical_utility(u, [1.0 - nu2, nu2], R, True)


def run_fig1(spec: ExperimentSpec) -> ResultTable:
    """
    For each n: optimal risky weights over realizations and their transformed
    true utilities (U(nu) - U(cash)) * 1e4, evaluated on one common sample of
    N_true rows. The reference optimum and its utility come from quadrature on
    the model and do not depend on N_true.
    """
    p = spec.params
    u = UtilityFunction.power(p['alpha'])
    market = scalar_market(p)
    base = spec.stream()
    true_seed = base.child(0)
    n_list = [int(n) for n in p['n_list']]
    realizations = int(p['realizations'])
    N_true = int(p['N_true'])

    jobs = [(market, n, base.child(1 + j).child(i), u, p['tol'])
            for j, n in enumerate(n_list) for i in range(realizations)]
    logger.info("Figure 1: %d realizations for n in %s", realizations, n_list)
    results = map_realizations(_fig1_realization, jobs, spec.workers)

    nu_star = scalar_model_optimum(u, market, True, p['tol'])
    u_star = scalar_model_utility(u, nu_star, market, True)
    u_cash = scalar_model_utility(u, 0.0, market, True)

    portfolios = np.array([[1.0 - nu2, nu2] for nu2, _ in results] + [[1.0, 0.0]])
    true_u = mc_true_utilities(u, portfolios, market, N_true, true_seed, True, spec.workers).mean
    u_cash_mc = true_u[-1]
    transformed = (true_u[:-1] - u_cash_mc) * 1e4

    records, rows, samples = [], [], {}
    for j, n in enumerate(n_list):
        sl = slice(j * realizations, (j + 1) * realizations)
        weights = np.array([r[0] for r in results[sl]])
        emp = np.array([r[1] for r in results[sl]])
        true_n = true_u[:-1][sl]
        for i in range(realizations):
            records.append({'n': n, 'realization': i, 'nu2': weights[i], 'empirical_utility': emp[i],
                            'true_utility': true_n[i], 'transformed_utility': transformed[sl][i],
                            'optimism': emp[i] - true_n[i]})
        at_extremes = np.mean((weights <= EXTREME_TOL) | (weights >= 1.0 - EXTREME_TOL))
        rows.append({'n': n, 'mean_nu2': weights.mean(), 'std_nu2': weights.std(ddof=1) if realizations > 1 else 0.0,
                     'share_at_extremes': at_extremes, 'mean_transformed': transformed[sl].mean(),
                     'median_transformed': np.median(transformed[sl]),
                     'mean_optimism': float(np.mean(emp - true_n))})
        samples[f'nu2_n{n}'] = weights
        samples[f'transformed_n{n}'] = transformed[sl]

    summary = {'nu_star': nu_star, 'transformed_optimum': (u_star - u_cash) * 1e4,
               'true_utility_optimum': u_star, 'true_utility_cash': u_cash,
               'true_utility_cash_mc': u_cash_mc, 'N_true': N_true}
    return ResultTable('fig1', pd.DataFrame(rows), spec.metadata(), records, summary,
                       {'hist': histogram_frame(samples, int(p['bins']))})


# ---------------------------------------------------------------------------
# NYSE log-optimal portfolios: repeated GDSEG runs
# ---------------------------------------------------------------------------

def _log_run(args):
    values, cfg = args
    nu, trace = gdseg(values, UtilityFunction.log(), False, cfg)
    return prune_and_renormalize(nu), trace.attempts, trace.iterations


def run_nyse_log(spec: ExperimentSpec) -> ResultTable:
    """[min, max] pruned log-optimal weights over seeded GDSEG runs."""
    R = load_dataset(spec)
    runs = int(spec.params['runs'])
    base = spec.stream()
    labels = R.labels()
    logger.info("Log-optimal portfolio: %d GDSEG runs on %d x %d returns", runs, R.n, R.d)

    jobs = [(R.values, spec.gdseg_config(base.child(i))) for i in range(runs)]
    results = map_realizations(_log_run, jobs, spec.workers)
    weights = np.array([r[0] for r in results])

    reference = reference_log_optimal(R)
    survivors = np.flatnonzero((weights > 0).any(axis=0))
    frame = pd.DataFrame({
        'stock': [labels[i] for i in survivors],
        'reference': [reference.get(labels[i], np.nan) for i in survivors],
        'min': weights[:, survivors].min(axis=0),
        'max': weights[:, survivors].max(axis=0),
    })

    records = []
    for i, (nu, attempts, accepted) in enumerate(results):
        X_n = accumulated_wealth(nu, R)
        records.append({'run': i, 'weights': describe_portfolio(nu, labels), 'X_n': X_n,
                        'annual_return': annual_return(X_n, R.n), 'attempts': attempts, 'accepted': accepted})
    wealth = np.array([r['X_n'] for r in records])
    summary = {'n': R.n, 'd': R.d, 'X_n': records[0]['X_n'], 'annual_return': records[0]['annual_return'],
               'X_n_min': wealth.min(), 'X_n_max': wealth.max(),
               'mean_attempts': float(np.mean([r['attempts'] for r in records]))}
    return ResultTable('nyse_log', frame, spec.metadata(), records, summary)


# ---------------------------------------------------------------------------
# Table 4: power utility, best of k GDSEG runs
# ---------------------------------------------------------------------------

def _table4_job(args):
    values, alpha, relative, cfg, k = args
    return best_of_k_gdseg(values, UtilityFunction.power(alpha), relative, cfg, k)


def run_table4(spec: ExperimentSpec) -> ResultTable:
    """Ordinary and relative power-utility portfolios with backtest statistics."""
    R = load_dataset(spec)
    p = spec.params
    alphas = [float(a) for a in p['alphas']]
    base = spec.stream()
    labels = R.labels()

    jobs = [(R.values, a, relative, spec.gdseg_config(base.child(i).child(j)), int(p['k']))
            for i, a in enumerate(alphas) for j, relative in enumerate((False, True))]
    logger.info("Table 4: %d alphas x 2 objectives, best of %d GDSEG runs", len(alphas), p['k'])
    portfolios = map_realizations(_table4_job, jobs, spec.workers)

    rows, records = [], []
    for (_, a, relative, _, _), nu in zip(jobs, portfolios):
        stats = portfolio_stats(nu, R)
        objective = 'relative' if relative else 'ordinary'
        u = UtilityFunction.power(a)
        rows.append({'alpha': a, 'objective': objective, 'weights': weights_text(nu, labels),
                     'X_n': stats['X_n'], 'annual_return': stats['annual_return'],
                     'annual_volatility': stats['annual_volatility'],
                     'empirical_utility': empirical_utility(u, nu, R, relative)})
        records.append({'label': f'alpha={a:g} {objective}', 'alpha': a, 'objective': objective, **stats})
    frame = pd.DataFrame(rows)

    riskier = []
    for a in alphas:
        sub = frame[frame['alpha'] == a].set_index('objective')['annual_volatility']
        riskier.append(bool(sub['relative'] >= sub['ordinary'] - 1e-12))
    summary = {'relative_at_least_as_volatile': dict(zip([f'{a:g}' for a in alphas], riskier))}
    return ResultTable('table4', frame, spec.metadata(), records, summary)


# ---------------------------------------------------------------------------
# Table 5: annual wealth under the estimated multi-asset model
# ---------------------------------------------------------------------------

def table5_portfolios(spec: ExperimentSpec, labels: List[str], reference: Dict[str, float]) -> Dict[str, np.ndarray]:
    """uniform, log-optimal (when known), table4 records, then explicit mappings."""
    portfolios = {'uniform': uniform_portfolio(len(labels))}
    if reference:
        try:
            portfolios['log-optimal'] = portfolio_from_mapping(reference, labels)
        except KeyError as e:
            logger.warning("Skipping log-optimal reference portfolio: %s", e)
    source = spec.params.get('portfolios_from')
    if source:
        if not os.path.exists(source):
            raise DatasetMissingError(f"Portfolio file not found: {source}")
        with open(source, 'r') as f:
            for line in f:
                if line.strip():
                    record = json.loads(line)
                    portfolios[record['label']] = portfolio_from_mapping(record['portfolio'], labels)
    for label, weights in (spec.params.get('portfolios') or {}).items():
        portfolios[label] = portfolio_from_mapping(weights, labels)
    return portfolios


def run_table5(spec: ExperimentSpec) -> ResultTable:
    """Mean, median, std and 5/95 percentiles of X_252 per portfolio."""
    p = spec.params
    if p.get('moments'):
        market = load_market_spec(p['moments'])
        reference = dict(NYSE2_LOG_OPTIMAL) if market.n_assets == NYSE2_SHAPE[1] else {}
    else:
        R = load_dataset(spec)
        market = estimate_market_spec(R)
        reference = reference_log_optimal(R)
    labels = market.tickers or [f'asset_{i + 1}' for i in range(market.n_assets)]
    portfolios = table5_portfolios(spec, labels, reference)

    logger.info("Table 5: %d portfolios, %d paths", len(portfolios), p['paths'])
    X = annual_wealth_paths(np.array(list(portfolios.values())), market, int(p['paths']),
                            spec.stream(), workers=spec.workers)
    rows = []
    for label, x in zip(portfolios, X):
        stats = wealth_statistics(x)
        rows.append({'portfolio': label, **stats, 'loss_probability': loss_probability(x, p['loss'])})
    frame = pd.DataFrame(rows)
    summary = {'market': market.to_dict(), 'loss': p['loss'], 'paths': int(p['paths'])}
    return ResultTable('table5', frame, spec.metadata(), [], summary)


# ---------------------------------------------------------------------------
# Figure 2: empirically optimal portfolios on simulated multi-asset data
# ---------------------------------------------------------------------------

def _fig2_realization(args):
    market, n, data_seed, u, cfg, k = args
    R = simulate_returns(market, n, data_seed)
    nu = best_of_k_gdseg(R, u, True, cfg, k)
    return nu, empirical_utility(u, nu, R, True)


def run_fig2(spec: ExperimentSpec) -> ResultTable:
    """Average optimal weight per stock and the true utilities of the optimal portfolios."""
    p = spec.params
    market = market_from_params(spec)
    market.factor()
    u = UtilityFunction.power(p['alpha'])
    base = spec.stream()
    realizations = int(p['realizations'])
    labels = market.tickers or [f'asset_{i + 1}' for i in range(market.n_assets)]

    jobs = [(market, int(p['n']), base.child(1).child(i), u, spec.gdseg_config(base.child(2).child(i)), int(p['k']))
            for i in range(realizations)]
    logger.info("Figure 2: %d realizations of n=%d, best of %d", realizations, p['n'], p['k'])
    results = map_realizations(_fig2_realization, jobs, spec.workers)
    weights = np.array([r[0] for r in results])

    uniform = uniform_portfolio(market.n_assets)
    true_u = mc_true_utilities(u, np.vstack([weights, uniform]), market, int(p['N_true']),
                               base.child(0), True, spec.workers).mean
    u_uniform = true_u[-1]
    true_u = true_u[:-1]
    transformed = (true_u - u_uniform) * 1e4

    average = weights.mean(axis=0)
    order = np.argsort(-average, kind='stable')
    frame = pd.DataFrame({'stock': labels, 'index': np.arange(1, len(labels) + 1), 'average_weight': average})
    frame['rank'] = np.argsort(order, kind='stable') + 1

    records = [{'realization': i, 'weights': describe_portfolio(weights[i], labels),
                'survivors': int((weights[i] > 0).sum()), 'empirical_utility': results[i][1],
                'true_utility': true_u[i], 'transformed_utility': transformed[i]}
               for i in range(realizations)]
    summary = {'top_stocks': [labels[i] for i in order[:5]],
               'true_utility_median': float(np.median(true_u)), 'true_utility_mean': float(true_u.mean()),
               'transformed_median': float(np.median(transformed)), 'transformed_mean': float(transformed.mean()),
               'true_utility_uniform': u_uniform,
               'max_survivors': max(r['survivors'] for r in records)}
    return ResultTable('fig2', frame, spec.metadata(), records, summary,
                       {'hist': histogram_frame({'true_utility': true_u, 'transformed': transformed},
                                                int(p['bins']))})


# ---------------------------------------------------------------------------
# Utilities around the library
# ---------------------------------------------------------------------------

def bound_inputs(params: dict) -> BoundInputs:
    return BoundInputs(n=params['n'], d=params['d'], alpha=float(params['alpha']),
                       K=float(params.get('K', 1.0)), A=float(params.get('A', 1.0)),
                       delta=float(params['delta']), L_n=params.get('L_n'), m=params.get('m'))


def run_bound_report(spec: ExperimentSpec) -> ResultTable:
    inputs = bound_inputs(spec.params)
    report = bound_report(inputs)
    frame = pd.DataFrame([report.to_dict()])
    return ResultTable('bound_report', frame, spec.metadata(), [], report.to_dict())


def run_simulate(spec: ExperimentSpec) -> ResultTable:
    """
    Simulated returns with sample-vs-model log moments per asset. The rows are
    the ones mc_true_utilities draws for the same seed.
    """
    p = spec.params
    if p['variant'] == 'scalar':
        market = scalar_market(p)
        target_mean = np.array([0.0, market.daily_log_mean])
        target_std = np.array([0.0, market.daily_log_std])
    elif p['variant'] == 'multi':
        market = market_from_params(spec)
        target_mean = market.log_mean
        target_std = np.sqrt(np.diag(market.log_cov))
    else:
        raise ValueError(f"Unknown market variant '{p['variant']}'")

    R = simulate_in_blocks(market, int(p['n']), spec.stream())
    labels = R.labels()
    if R.n >= 2:
        mean, cov = estimate_log_moments(R)
        std = np.sqrt(np.diag(cov))
    else:
        mean, std = np.log(R.values[0]), np.zeros(R.d)
    frame = pd.DataFrame({'asset': labels, 'log_mean': mean, 'target_log_mean': target_mean,
                          'log_std': std, 'target_log_std': target_std})
    return ResultTable('simulate', frame, spec.metadata(), [], {'market': market.to_dict(), 'n': R.n},
                       returns=R)


def utility_from_params(params: dict) -> UtilityFunction:
    """Log utility when requested or when no alpha is given, else power(alpha)."""
    if params.get('utility') == 'log' or params.get('alpha') is None:
        return UtilityFunction.log()
    return UtilityFunction.power(params['alpha'])


def run_optimize(spec: ExperimentSpec) -> ResultTable:
    """Best-of-k GDSEG portfolio for one dataset and objective."""
    R = load_dataset(spec)
    p = spec.params
    u = utility_from_params(p)
    selector = GdsegSelector(R)
    selector.select_optimal_portfolio(u, bool(p['relative']), spec.gdseg_config(spec.stream()),
                                      int(p['k']), spec.workers)
    weights = describe_portfolio(selector.portfolio, R.labels())
    frame = pd.DataFrame({'ticker': list(weights), 'weight': list(weights.values())})
    return ResultTable('optimize', frame, spec.metadata(), [], selector.stats(),
                       {'trace': selector.trace.to_dataframe()})


def run_compare(spec: ExperimentSpec) -> ResultTable:
    """SEG vs GDSEG (vs grid / bisection for two assets); synthetic cash + risky data without a dataset."""
    p = spec.params
    if p.get('dataset'):
        R = load_dataset(spec)
    else:
        R = gen_scalar_bs(scalar_market(p), int(p['n']), spec.stream().child(0))
    u = utility_from_params(p)
    frame = compare_solvers(R, u, bool(p['relative']), SegConfig(int(p['m'])), spec.gdseg_config(0),
                            int(p['k']), spec.stream().child(1))
    return ResultTable('compare', frame, spec.metadata(), [], {'utility': u.label(), 'relative': bool(p['relative'])})


RUNNERS = {
    'table1': run_table1,
    'fig1': run_fig1,
    'nyse-log': run_nyse_log,
    'table4': run_table4,
    'table5': run_table5,
    'fig2': run_fig2,
    'bound-report': run_bound_report,
    'simulate': run_simulate,
    'optimize': run_optimize,
    'compare': run_compare,
}


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    return RUNNERS[spec.experiment](spec)
