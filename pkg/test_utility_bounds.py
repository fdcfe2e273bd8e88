#!/usr/bin/env python3
"""
Tests for the estimation error bounds and the Monte-Carlo Rademacher estimate
"""

import json

import numpy as np
import pytest

from utility_bounds import (BRANCH_DUDLEY, BRANCH_LIPSCHITZ, BoundInputs, bound_report, dudley_c1,
                            dudley_c1_closed_form, dudley_c1_gamma, dudley_constant, empirical_gap_bound,
                            empirical_rademacher, estimation_error_bound, massart_bound, massart_check,
                            mcdiarmid_deviation, rademacher_bound, seg_error_bound)
from utility_core import UtilityFunction


def test_mcdiarmid_deviation():
    assert mcdiarmid_deviation(2520, 0.05) == pytest.approx(0.024379, abs=1e-6)
    with pytest.raises(ValueError):
        mcdiarmid_deviation(2520, 2.0)
    with pytest.raises(ValueError):
        mcdiarmid_deviation(0, 0.05)


def test_rademacher_bound_lipschitz_branch():
    inputs = BoundInputs(n=2520, d=2, alpha=1.0)
    assert rademacher_bound(inputs) == pytest.approx(0.046910, abs=1e-6)
    assert estimation_error_bound(inputs) == pytest.approx(0.10101, abs=1e-4)
    assert empirical_gap_bound(inputs) == pytest.approx(0.07129, abs=1e-4)


def test_dudley_constant():
    assert dudley_c1() == pytest.approx(dudley_c1_closed_form(), abs=1e-6)
    assert dudley_c1_gamma() == pytest.approx(dudley_c1_closed_form(), abs=1e-6)
    assert dudley_c1() == pytest.approx(19.08, abs=0.05)
    assert dudley_constant() == pytest.approx(2 * dudley_c1())


def test_rademacher_bound_dudley_branch():
    inputs = BoundInputs(n=10 ** 4, d=3, alpha=0.5)
    assert rademacher_bound(inputs) == pytest.approx(dudley_constant() * np.sqrt(2 / 5000))
    assert rademacher_bound(inputs) == pytest.approx(0.763, abs=0.005)


def test_seg_error_bound():
    inputs = BoundInputs(n=10 ** 4, d=2, alpha=1.0, L_n=1.0, m=10 ** 6)
    assert seg_error_bound(inputs) == pytest.approx(0.06194, abs=2e-5)
    with pytest.raises(ValueError):
        seg_error_bound(BoundInputs(n=10 ** 4, d=2, alpha=1.0))


def test_bounds_shrink_with_n_and_grow_with_d():
    for alpha in (0.3, 1.0):
        by_n = [estimation_error_bound(BoundInputs(n=n, d=4, alpha=alpha)) for n in (100, 1000, 10000)]
        by_d = [estimation_error_bound(BoundInputs(n=1000, d=d, alpha=alpha)) for d in (2, 5, 20)]
        assert by_n[0] > by_n[1] > by_n[2]
        assert by_d[0] < by_d[1] < by_d[2]


def test_bound_inputs_validation():
    for kwargs in ({'alpha': 0.0}, {'alpha': 1.5}, {'delta': 2.0}, {'delta': 0.0}, {'d': 1}, {'n': 0},
                   {'K': -1.0}, {'L_n': 0.0}, {'m': 0}):
        params = {'n': 100, 'd': 2, 'alpha': 0.5}
        params.update(kwargs)
        with pytest.raises(ValueError):
            BoundInputs(**params)


def test_bound_report():
    report = bound_report(BoundInputs(n=2520, d=2, alpha=1.0))
    assert report.branch == BRANCH_LIPSCHITZ
    assert report.seg_bound is None
    assert report.confidence == pytest.approx(0.95)
    data = json.loads(json.dumps(report.to_dict()))
    assert data['estimation_error_bound'] == pytest.approx(0.10101, abs=1e-4)
    assert 'seg_confidence' not in data

    report = bound_report(BoundInputs(n=10 ** 4, d=2, alpha=0.5, L_n=1.0, m=10 ** 6))
    assert report.branch == BRANCH_DUDLEY
    assert report.seg_confidence == pytest.approx(0.85)


def test_empirical_rademacher_is_deterministic():
    R = np.random.default_rng(1).lognormal(0.0, 0.05, size=(100, 4))
    u = UtilityFunction.power(0.5)
    assert empirical_rademacher(R, u, 300, 9) == empirical_rademacher(R, u, 300, 9)
    assert empirical_rademacher(R, u, 300, 9, workers=2) == empirical_rademacher(R, u, 300, 9)
    with pytest.raises(ValueError):
        empirical_rademacher(R, u, 0, 9)
    with pytest.raises(ValueError):
        empirical_rademacher(R, UtilityFunction.log(), 10, 9)


def test_empirical_rademacher_single_asset_near_zero():
    R = np.random.default_rng(2).lognormal(0.0, 0.05, size=(200, 1))
    estimate, std_error = empirical_rademacher(R, UtilityFunction.power(0.5), 2000, 3, return_std_error=True)
    assert abs(estimate) <= 4 * std_error


def test_massart_inequality_on_random_matrices():
    rng = np.random.default_rng(4)
    for trial in range(100):
        d = int(rng.integers(2, 11))
        n = int(rng.integers(10, 1001))
        R = rng.lognormal(0.0, 0.1, size=(n, d))
        u = UtilityFunction.power(rng.uniform(0.1, 1.0))
        estimate, std_error, bound = massart_check(R, u, 200, trial)
        assert estimate <= bound + 3 * std_error
        assert bound == massart_bound(R, u)
