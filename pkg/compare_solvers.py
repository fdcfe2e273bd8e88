#!/usr/bin/env python3
"""
Compare plain SEG (theoretical learning rate, averaged iterates) with GDSEG
on the same returns, plus a grid / bisection optimum for two-asset data.
"""

import sys

import numpy as np
import pandas as pd

from data_manager import describe_portfolio, load_returns
from market_simulator import RngSeed
from portfolio_selector import (GdsegConfig, SegConfig, best_of_k_gdseg, bisect_two_asset,
                                seg_average)
from utility_core import UtilityFunction, as_returns_array, empirical_utility

GRID_POINTS = 10_001


def grid_scan_two_asset(u: UtilityFunction, R, relative: bool = True,
                        points: int = GRID_POINTS) -> np.ndarray:
    """
    Brute-force optimum over nu = (1 - t, t), t on a uniform grid of [0, 1].
    """
    values = as_returns_array(R)
    if values.shape[1] != 2:
        raise ValueError("Grid scan needs exactly two columns")
    t = np.linspace(0.0, 1.0, points)
    wealth = values[:, [0]] * (1.0 - t) + values[:, [1]] * t
    if relative:
        scores = np.mean(np.power(wealth / values.max(axis=1, keepdims=True), u.alpha), axis=0)
    elif u.is_log:
        scores = np.mean(np.log(wealth), axis=0)
    else:
        scores = np.mean(np.power(wealth, u.alpha), axis=0)
    best = t[int(np.argmax(scores))]
    return np.array([1.0 - best, best])


def _has_cash_column(values: np.ndarray) -> bool:
    return values.shape[1] == 2 and bool(np.all(values[:, 0] == 1.0))


def compare_solvers(R, u: UtilityFunction, relative: bool = True,
                    seg_cfg: SegConfig = None, gdseg_cfg: GdsegConfig = None,
                    k: int = 1, seed=0) -> pd.DataFrame:
    """
    Run every applicable solver on R and tabulate the empirical utilities.

    SEG only runs for the relative power objective; the grid scan and
    bisection only for two-asset data (bisection needs a cash column).

    Returns:
        DataFrame with columns solver, empirical_utility, weights, detail
    """
    seg_cfg = seg_cfg or SegConfig()
    gdseg_cfg = gdseg_cfg or GdsegConfig(seed=seed)
    base = RngSeed.coerce(seed)
    values = as_returns_array(R)
    labels = R.labels() if hasattr(R, 'labels') else [f'asset_{i + 1}' for i in range(values.shape[1])]
    rows = []

    def add(solver, nu, detail=''):
        rows.append({
            'solver': solver,
            'empirical_utility': empirical_utility(u, nu, values, relative),
            'weights': ' '.join(f'{name}={w:.4f}' for name, w in describe_portfolio(nu, labels, 1e-4).items()),
            'detail': detail,
        })

    if relative and u.is_power:
        seg = seg_average(values, u, seg_cfg, base.child(0))
        add('seg', seg.portfolio, f'm={seg.m} eta={seg.eta:.3g} regret={seg.regret:.4g} bound={seg.regret_bound:.4g}')

    nu, trace = best_of_k_gdseg(values, u, relative, gdseg_cfg.with_seed(base.child(1)), k,
                                prune=False, return_trace=True)
    add('gdseg', nu, f'k={k} attempts={trace.attempts} accepted={trace.iterations}')

    if values.shape[1] == 2:
        add('grid', grid_scan_two_asset(u, values, relative), f'points={GRID_POINTS}')
        if _has_cash_column(values) and u.is_power:
            nu2 = bisect_two_asset(u, values, relative)
            add('bisection', np.array([1.0 - nu2, nu2]), 'xtol=1e-10')

    return pd.DataFrame(rows, columns=['solver', 'empirical_utility', 'weights', 'detail'])


def print_comparison(frame: pd.DataFrame, u: UtilityFunction, relative: bool):
    objective = 'RELATIVE' if relative else 'ORDINARY'
    print("\n" + "=" * 80)
    print(f"COMPARING SOLVERS  ({u.label()}, {objective} UTILITY)")
    print("=" * 80)
    for _, row in frame.iterrows():
        print(f"  {row['solver']:10s} {row['empirical_utility']:.10f}   {row['weights']}")
        if row['detail']:
            print(f"  {'':10s} {row['detail']}")
    if len(frame) > 1:
        best = frame.loc[frame['empirical_utility'].idxmax()]
        worst = frame['empirical_utility'].min()
        print("-" * 80)
        print(f"  Best: {best['solver']}  (gap to worst {best['empirical_utility'] - worst:.3e})")
    print("=" * 80 + "\n")


if __name__ == "__main__":
    filepath = sys.argv[1] if len(sys.argv) > 1 else 'data/nyse2.txt'
    alpha = float(sys.argv[2]) if len(sys.argv) > 2 else 0.5

    try:
        R = load_returns(filepath)
        utility = UtilityFunction.power(alpha)
        print_comparison(compare_solvers(R, utility, relative=True), utility, True)
    except FileNotFoundError:
        print(f"Error: Could not find file '{filepath}'")
        print("\nUsage: python compare_solvers.py [path_to_returns] [alpha]")
        sys.exit(3)
    except Exception as e:
        print(f"Error: {e}")
        import traceback
        traceback.print_exc()
        sys.exit(1)
