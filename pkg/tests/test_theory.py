import math

import numpy as np
import pytest

from nsdg import theory
from nsdg.theory import (FiniteDist, FiniteJoint, check_error_transfer, check_pinsker,
                         check_reweighting_identity, js, kl, tv)


def test_js_of_identical_is_zero():
    p = FiniteDist([0.2, 0.3, 0.5])
    assert js(p, p) == 0.0


def test_js_disjoint_supports_is_ln2():
    assert abs(js([0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.25, 0.75]) - math.log(2.0)) < 1e-15


def test_js_bernoulli_half_vs_three_quarters():
    # oracle: direct four-term summation through the midpoint mixture
    p = np.array([0.5, 0.5])
    q = np.array([0.25, 0.75])
    m = 0.5 * (p + q)
    oracle = 0.5 * sum(pi * math.log(pi / mi) for pi, mi in zip(p, m)) \
        + 0.5 * sum(qi * math.log(qi / mi) for qi, mi in zip(q, m))
    got = js(p, q)
    assert abs(got - oracle) < 1e-15
    assert abs(got - 0.0338) < 2e-4


def test_js_bounds_symmetry_identity():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m = int(rng.integers(2, 9))
        p = rng.dirichlet(np.ones(m))
        q = rng.dirichlet(np.ones(m))
        d = js(p, q)
        assert 0.0 <= d <= math.log(2.0) + 1e-15
        assert abs(d - js(q, p)) < 1e-15
    assert js([0.4, 0.6], [0.4, 0.6]) == 0.0


def test_kl_nonnegative_zero_iff_equal():
    rng = np.random.default_rng(1)
    for _ in range(100):
        m = int(rng.integers(2, 9))
        p = rng.dirichlet(np.ones(m))
        q = rng.dirichlet(np.ones(m))
        assert kl(p, q) >= 0.0
    assert kl([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_kl_support_violation_is_flagged_infinite():
    assert math.isinf(kl([0.5, 0.5], [1.0, 0.0]))


def test_tv_basics():
    assert tv([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert tv([0.5, 0.5], [0.5, 0.5]) == 0.0


def test_mismatched_supports_rejected():
    with pytest.raises(theory.DistributionError):
        js([0.5, 0.5], [1.0])


def test_finite_joint_marginals_and_conditionals():
    j = FiniteJoint([[0.1, 0.2], [0.3, 0.4]])
    assert np.allclose(j.marginal_x(), [0.3, 0.7])
    assert np.allclose(j.marginal_y(), [0.4, 0.6])
    assert np.allclose(j.conditional_x_given_y(0), [0.25, 0.75])


def test_invalid_distributions_rejected():
    with pytest.raises(theory.DistributionError):
        FiniteDist([0.5, 0.6])
    with pytest.raises(theory.DistributionError):
        FiniteDist([-0.1, 1.1])


def test_lemma1_identical_distributions_hold_with_zero_bound():
    p = np.array([[0.4, 0.6]])
    loss = np.array([[0.3, 0.9]])
    lhs = (p * loss).sum()
    rhs = (p * loss).sum() + math.sqrt(2.0) * 1.0 * math.sqrt(js(p.ravel(), p.ravel()))
    assert lhs <= rhs and rhs - lhs == 0.0


def test_lemma1_disjoint_worst_case():
    # L = C on P's support, 0 on Q's: gap C against sqrt(2 ln 2) * C
    C = 1.7
    p = np.array([0.5, 0.5, 0.0, 0.0])
    q = np.array([0.0, 0.0, 0.5, 0.5])
    loss = np.array([C, C, 0.0, 0.0])
    lhs = float((p * loss).sum())
    rhs = float((q * loss).sum()) + math.sqrt(2.0) * C * math.sqrt(js(p, q))
    assert lhs == C
    assert abs(rhs - C * math.sqrt(2.0 * math.log(2.0))) < 1e-12
    assert lhs <= rhs


def test_lemma1_thousand_trials_no_violations():
    report = check_error_transfer(1000, loss_bound=1.0, seed=0)
    assert report.passed
    assert report.trials == 1000
    assert report.min_slack >= -1e-12


def test_lemma1_rejects_zero_trials():
    with pytest.raises(ValueError):
        check_error_transfer(0)


def test_prop1_identity_map_same_joint_is_zero():
    rng = np.random.default_rng(2)
    grid = rng.dirichlet(np.ones(12)).reshape(4, 3)
    prior = grid.sum(axis=0)
    weighted = theory.reweight_labels(grid, prior)  # weights are all 1
    pushed = theory.push_forward_x(weighted, np.arange(4))
    assert js(grid.reshape(-1), pushed.reshape(-1)) == 0.0


def test_prop1_reweighted_marginal_is_exact():
    rng = np.random.default_rng(3)
    prev = rng.dirichlet(np.ones(12)).reshape(4, 3)
    target_prior = rng.dirichlet(np.ones(3))
    weighted = theory.reweight_labels(prev, target_prior)
    assert np.abs(weighted.sum(axis=0) - target_prior).max() < 1e-15


def test_prop1_thousand_trials_exact_identity():
    report = check_reweighting_identity(1000, sizes=(6, 3), seed=0)
    assert report.passed
    assert report.max_gap < 1e-10


def test_pinsker_thousand_trials():
    report = check_pinsker(1000, seed=0)
    assert report.passed


def test_pinsker_degenerate_bernoulli():
    p = np.array([1.0, 0.0])
    q = np.array([0.0, 1.0])
    d = kl(p, q)
    assert math.isinf(d)  # flagged-infinite KL keeps the inequality total
    assert tv(p, q) == 1.0 <= math.inf


def test_push_forward_many_to_one_conserves_mass():
    rng = np.random.default_rng(4)
    grid = rng.dirichlet(np.ones(12)).reshape(4, 3)
    pushed = theory.push_forward_x(grid, np.array([0, 0, 1, 1]))
    assert abs(pushed.sum() - 1.0) < 1e-15
    assert np.allclose(pushed.sum(axis=0), grid.sum(axis=0), atol=1e-15)


def test_report_json_round_trip():
    report = check_pinsker(10, seed=1)
    d = report.to_dict()
    assert d["name"] == "pinsker" and d["passed"] is True
    assert isinstance(report.to_json(), str)
