#!/usr/bin/env python3
"""
Tests for the two-asset bisection, exponentiated gradient, SEG and GDSEG solvers
"""

import itertools

import numpy as np
import pandas as pd
import pytest

from compare_solvers import grid_scan_two_asset
from data_manager import ReturnRange, ReturnsMatrix, prune_and_renormalize
from market_simulator import MarketSpec, RngSeed
from portfolio_selector import (GdsegConfig, GdsegSelector, SegConfig, SolveTrace, best_of_k_gdseg,
                                bisect_two_asset, eg_step, gdseg, lipschitz_constant, scalar_model_optimum,
                                scalar_model_utility, seg_average, two_asset_coefficients, two_asset_derivative)
from utility_core import UtilityFunction, empirical_utility, mc_true_utilities

FAST = GdsegConfig(n_attempts=2000)
REFERENCE_MARKET = MarketSpec.scalar_with_cash(0.15, 0.45)


def cash_and_stock(rng, n, sigma=0.05):
    values = np.ones((n, 2))
    values[:, 1] = rng.lognormal(0.002, sigma, size=n)
    return values


def test_bisect_all_gains_and_all_losses():
    u = UtilityFunction.power(0.5)
    assert bisect_two_asset(u, [[1.0, 1.1], [1.0, 1.02]]) == 1.0
    assert bisect_two_asset(u, [[1.0, 0.9], [1.0, 0.98]]) == 0.0
    assert bisect_two_asset(u, [[1.0, 1.1], [1.0, 1.02]], relative=False) == 1.0


def test_bisect_rejects_bad_input():
    with pytest.raises(ValueError):
        bisect_two_asset(UtilityFunction.power(0.5), [[1.1, 1.0], [1.0, 0.9]])
    with pytest.raises(ValueError):
        bisect_two_asset(UtilityFunction.power(0.5), [[1.0, 1.1]], tol=0.0)
    with pytest.raises(ValueError):
        bisect_two_asset(UtilityFunction.log(), [[1.0, 1.1]], relative=False)
    with pytest.raises(ValueError):
        two_asset_coefficients([[1.0, 1.1, 1.2]])


def test_bisect_beats_endpoints():
    rng = np.random.default_rng(1)
    u = UtilityFunction.power(0.3)
    for _ in range(20):
        R = cash_and_stock(rng, 200)
        t = bisect_two_asset(u, R)
        best = empirical_utility(u, [1 - t, t], R)
        assert best >= empirical_utility(u, [1.0, 0.0], R) - 1e-12
        assert best >= empirical_utility(u, [0.0, 1.0], R) - 1e-12


def test_relative_objective_is_more_risk_averse():
    rng = np.random.default_rng(2)
    grid = np.linspace(0.0, 1.0, 21)
    for _ in range(100):
        alpha = rng.uniform(0.05, 1.0)
        R = cash_and_stock(rng, 100, sigma=0.1)
        c_rel, b_rel = two_asset_coefficients(R, relative=True)
        c_ord, b_ord = two_asset_coefficients(R, relative=False)
        for x in grid:
            assert two_asset_derivative(x, c_rel, b_rel, alpha) <= two_asset_derivative(x, c_ord, b_ord, alpha) + 1e-12
        u = UtilityFunction.power(alpha)
        assert bisect_two_asset(u, R, relative=True) <= bisect_two_asset(u, R, relative=False) + 1e-9


def test_scalar_model_reference_optimum():
    u = UtilityFunction.power(0.2)
    nu_star = scalar_model_optimum(u, REFERENCE_MARKET)
    assert nu_star == pytest.approx(0.81, abs=0.03)
    gain = scalar_model_utility(u, nu_star, REFERENCE_MARKET) - scalar_model_utility(u, 0.0, REFERENCE_MARKET)
    assert gain * 1e4 == pytest.approx(0.42, abs=0.05)
    assert scalar_model_optimum(u, REFERENCE_MARKET, relative=False) > nu_star


def test_scalar_model_ordinary_optima_match_merton_fractions():
    # mu / ((1 - alpha) sigma^2) for power utility, mu / sigma^2 for log
    assert scalar_model_optimum(UtilityFunction.power(0.2), REFERENCE_MARKET, False) == pytest.approx(0.926, abs=0.01)
    assert scalar_model_optimum(UtilityFunction.log(), REFERENCE_MARKET, False) == pytest.approx(0.741, abs=0.01)
    assert scalar_model_utility(UtilityFunction.power(0.5), 0.0, REFERENCE_MARKET, False) == pytest.approx(1.0, abs=1e-10)


def test_scalar_model_utility_agrees_with_monte_carlo():
    u = UtilityFunction.power(0.5)
    est = mc_true_utilities(u, [0.4, 0.6], REFERENCE_MARKET, 2 ** 20, RngSeed(8))
    exact = scalar_model_utility(u, 0.6, REFERENCE_MARKET)
    assert abs(est.mean[0] - exact) <= 4 * est.std_error[0]


def test_scalar_model_rejects_bad_input():
    with pytest.raises(ValueError):
        scalar_model_optimum(UtilityFunction.log(), REFERENCE_MARKET, relative=True)
    with pytest.raises(ValueError):
        scalar_model_utility(UtilityFunction.power(0.5), 1.5, REFERENCE_MARKET)
    with pytest.raises(ValueError):
        scalar_model_utility(UtilityFunction.power(0.5), 0.5, MarketSpec.multi_asset([0.0], [[1e-4]]))


def test_lipschitz_constant():
    assert lipschitz_constant(UtilityFunction.power(0.5), ReturnRange(0.8, 1.25)) == pytest.approx(0.625)
    assert lipschitz_constant(UtilityFunction.power(1.0), ReturnRange(0.1, 10.0)) == 1.0
    assert lipschitz_constant(UtilityFunction.power(0.3), ReturnRange(1.2, 1.2)) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        lipschitz_constant(UtilityFunction.log(), ReturnRange(0.8, 1.25))


def test_eg_step():
    u = UtilityFunction.power(1.0)
    nu = eg_step([0.5, 0.5], [1.0, 0.5], 1.0, u)
    assert nu == pytest.approx([0.62246, 0.37754], abs=1e-5)
    assert np.array_equal(eg_step([0.3, 0.7], [1.0, 0.5], 0.0, u), [0.3, 0.7])
    assert eg_step([0.2, 0.3, 0.5], [1.0, 1.0, 1.0], 0.7, UtilityFunction.power(0.4)) == pytest.approx([0.2, 0.3, 0.5])
    with pytest.raises(ValueError):
        eg_step([0.5, 0.5], [1.0, 0.5], -0.1, u)


def test_eg_step_stays_on_simplex():
    rng = np.random.default_rng(3)
    u = UtilityFunction.power(0.5)
    nu = np.full(6, 1 / 6)
    for _ in range(500):
        r = rng.uniform(0.5, 1.0, size=6)
        r /= r.max()
        nu = eg_step(nu, r, rng.uniform(0, 5), u)
        assert abs(nu.sum() - 1.0) <= 1e-12
        assert np.all(nu > 0)


def test_seg_single_iteration_is_uniform():
    R = np.random.default_rng(4).lognormal(0.0, 0.02, size=(30, 4))
    result = seg_average(R, UtilityFunction.power(0.5), SegConfig(m=1), 0)
    assert np.allclose(result.portfolio, 0.25)
    assert result.m == 1


def test_seg_regret_within_bound():
    rng = np.random.default_rng(5)
    for trial in range(100):
        d = int(rng.integers(2, 6))
        R = rng.lognormal(0.0, 0.05, size=(40, d))
        u = UtilityFunction.power(rng.uniform(0.1, 1.0))
        result = seg_average(R, u, SegConfig(m=200), trial)
        assert result.regret <= result.regret_bound
        assert abs(result.portfolio.sum() - 1.0) <= 1e-12


def test_seg_moves_toward_dominant_column():
    rng = np.random.default_rng(6)
    R = np.column_stack([rng.uniform(0.95, 1.0, 50), rng.uniform(1.01, 1.05, 50)])
    u = UtilityFunction.power(0.5)
    weights = [seg_average(R, u, SegConfig(m=m), 7).portfolio[1] for m in (100, 1000, 10000)]
    assert weights[0] <= weights[1] <= weights[2]


def test_gdseg_output_and_monotone_trace():
    R = np.random.default_rng(8).lognormal(0.0, 0.03, size=(60, 5))
    u = UtilityFunction.power(0.4)
    nu, trace = gdseg(R, u, True, FAST.with_seed(3))
    assert abs(nu.sum() - 1.0) <= 1e-12
    assert np.all(nu >= 0)
    objectives = [value for _, value in trace.history]
    assert np.all(np.diff(objectives) >= FAST.threshold)
    assert trace.attempts - trace.last_accept_attempt == FAST.n_attempts
    assert trace.last_accept_attempt > 0
    assert trace.objective == pytest.approx(empirical_utility(u, nu, R, relative=True), rel=1e-12)
    assert np.array_equal(trace.portfolio, nu)


def test_gdseg_is_reproducible():
    R = np.random.default_rng(9).lognormal(0.0, 0.03, size=(40, 3))
    a, _ = gdseg(R, UtilityFunction.log(), False, FAST.with_seed(11))
    b, _ = gdseg(R, UtilityFunction.log(), False, FAST.with_seed(11))
    assert np.array_equal(a, b)


def test_gdseg_single_asset():
    nu, trace = gdseg([[1.1], [0.9]], UtilityFunction.power(0.5), True, FAST)
    assert np.array_equal(nu, [1.0])
    assert trace.iterations == 0


def test_gdseg_stops_after_exactly_n_attempts_without_progress():
    R = np.tile([[1.1, 1.1], [0.9, 0.9]], (5, 1))
    nu, trace = gdseg(R, UtilityFunction.power(0.5), False, GdsegConfig(n_attempts=50, seed=2))
    assert np.allclose(nu, 0.5)
    assert trace.iterations == 0
    assert (trace.attempts, trace.last_accept_attempt) == (50, 0)


def test_gdseg_rejects_log_under_relative_objective():
    with pytest.raises(ValueError):
        gdseg([[1.0, 1.1]], UtilityFunction.log(), True, FAST)


@pytest.mark.parametrize('u,relative', [(UtilityFunction.power(0.5), True), (UtilityFunction.power(0.2), False),
                                        (UtilityFunction.log(), False)])
def test_gdseg_matches_grid_scan_on_two_assets(u, relative):
    rng = np.random.default_rng(10)
    for trial in range(3):
        R = rng.lognormal(0.0, 0.05, size=(int(rng.integers(5, 51)), 2))
        nu, _ = gdseg(R, u, relative, GdsegConfig(seed=trial))
        grid = grid_scan_two_asset(u, R, relative)
        assert empirical_utility(u, nu, R, relative) >= empirical_utility(u, grid, R, relative) - 1e-4


def test_gdseg_matches_simplex_grid_on_three_assets():
    rng = np.random.default_rng(12)
    u = UtilityFunction.power(0.5)
    R = rng.lognormal(0.0, 0.05, size=(20, 3))
    nu, _ = gdseg(R, u, True, GdsegConfig(seed=1))
    steps = 100
    grid_best = max(empirical_utility(u, [i / steps, j / steps, (steps - i - j) / steps], R)
                    for i, j in itertools.product(range(steps + 1), repeat=2) if i + j <= steps)
    assert empirical_utility(u, nu, R) >= grid_best - 1e-3


def test_best_of_one_equals_single_run():
    R = np.random.default_rng(13).lognormal(0.0, 0.03, size=(50, 4))
    u = UtilityFunction.power(0.3)
    cfg = FAST.with_seed(5)
    single, _ = gdseg(R, u, False, cfg.with_seed(cfg.seed.child(0)))
    assert np.array_equal(best_of_k_gdseg(R, u, False, cfg, 1), prune_and_renormalize(single))


def test_best_of_k_keeps_the_best_run():
    R = np.random.default_rng(14).lognormal(0.0, 0.03, size=(50, 4))
    u = UtilityFunction.power(0.3)
    cfg = FAST.with_seed(6)
    best = best_of_k_gdseg(R, u, True, cfg, 3, prune=False)
    for i in range(3):
        run, _ = gdseg(R, u, True, cfg.with_seed(cfg.seed.child(i)))
        assert empirical_utility(u, best, R) >= empirical_utility(u, run, R)
    with pytest.raises(ValueError):
        best_of_k_gdseg(R, u, True, cfg, 0)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        GdsegConfig(eta_max=0.0)
    with pytest.raises(ValueError):
        GdsegConfig(n_attempts=0)
    with pytest.raises(ValueError):
        GdsegConfig(threshold=0.0)
    with pytest.raises(ValueError):
        SegConfig(m=0)
    with pytest.raises(ValueError):
        SegConfig(delta=1.0)
    cfg = GdsegConfig(eta_max=0.5, seed=3).with_seed(GdsegConfig(seed=3).seed.child(2))
    assert GdsegConfig.from_dict(cfg.to_dict()) == cfg
    assert GdsegConfig(seed=3).seed == RngSeed(3)
    assert GdsegConfig(seed=RngSeed(3, stream=1)).seed == RngSeed(3, stream=1)
    assert SegConfig.from_dict({'m': 50}) == SegConfig(m=50)


def test_solve_trace_csv(tmp_path):
    trace = SolveTrace(iterations=2, attempts=9, history=[(0, 0.5), (1, 0.6), (2, 0.65)])
    path = tmp_path / 'trace.csv'
    trace.export_to_csv(str(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['step', 'objective']
    assert frame['objective'].iloc[-1] == trace.objective
    assert np.isnan(SolveTrace().objective)


def test_selector_stats_and_export(tmp_path):
    R = ReturnsMatrix(np.random.default_rng(15).lognormal(0.0005, 0.02, size=(252, 3)), ['a', 'b', 'c'])
    selector = GdsegSelector(R)
    with pytest.raises(ValueError):
        selector.stats()
    nu = selector.select_optimal_portfolio(UtilityFunction.log(), relative=False, cfg=FAST, k=2)
    record = selector.stats()
    assert record['utility'] == UtilityFunction.log().label()
    assert record['empirical_utility'] == pytest.approx(empirical_utility(UtilityFunction.log(), nu, R, False))
    path = tmp_path / 'portfolio.csv'
    selector.export_to_csv(str(path))
    assert pd.read_csv(path)['Weight'].sum() == pytest.approx(1.0, abs=1e-9)
