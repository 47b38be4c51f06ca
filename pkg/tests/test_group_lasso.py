"""Group lasso solver against first principles.

The headline oracle is exhaustive: enumerate every group support, solve
the smooth restricted problem with BFGS, and demand the block descent
land on the global minimum.  KKT conditions, the null-solution threshold,
and the eta=0 least-squares limit pin the stationary behavior.
"""

import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import optimize

from tensreg.errors import ConvergenceError
from tensreg.group_lasso import (
    check_grip,
    cross_validate_penalty,
    group_lasso,
    group_lasso_objective,
    interleaved_groups,
    kkt_residual,
    theory_penalty,
)


def brute_force_minimum(design, response, groups, eta):
    """Global minimum of 0.5||y - Xb||^2 + eta sum_g ||b_g|| by support
    enumeration; each restricted problem is smooth at its interior optimum."""
    best = group_lasso_objective(
        design, response, np.zeros(design.shape[1]), groups, eta
    )
    for size in range(1, len(groups) + 1):
        for support in itertools.combinations(range(len(groups)), size):
            cols = np.concatenate([groups[g] for g in support])
            sub = design[:, cols]
            offsets, start = [], 0
            for g in support:
                offsets.append(np.arange(start, start + len(groups[g])))
                start += len(groups[g])

            def fg(beta):
                resid = sub @ beta - response
                val = 0.5 * float(resid @ resid)
                grad = sub.T @ resid
                for gg in offsets:
                    nrm = float(np.linalg.norm(beta[gg]))
                    val += eta * nrm
                    if nrm > 0:
                        grad[gg] += eta * beta[gg] / nrm
                return val, grad

            x0, *_ = np.linalg.lstsq(sub, response, rcond=None)
            x0[np.abs(x0) < 1e-8] = 1e-3
            res = optimize.minimize(
                fg, x0, jac=True, method="BFGS",
                options={"gtol": 1e-12, "maxiter": 2000},
            )
            best = min(best, float(res.fun))
    return best


def sparse_problem(rng, n=30, n_groups=6, group_size=2, active=2, sigma=0.5):
    p = n_groups * group_size
    design = rng.standard_normal((n, p))
    groups = interleaved_groups(n_groups, group_size)
    beta = np.zeros(p)
    for g in rng.choice(n_groups, size=active, replace=False):
        beta[groups[g]] = rng.standard_normal(group_size)
    response = design @ beta + sigma * rng.standard_normal(n)
    return design, response, groups


def test_matches_brute_force_on_small_problems(rng):
    for _ in range(8):
        design, response, groups = sparse_problem(rng)
        eta = (0.1 + rng.random()) * 10
        coef, info = group_lasso(design, response, groups, eta, tol=1e-12)
        mine = group_lasso_objective(design, response, coef, groups, eta)
        oracle = brute_force_minimum(design, response, groups, eta)
        assert mine == pytest.approx(oracle, abs=1e-7)
        assert info["kkt_residual"] <= 1e-8


def test_zero_penalty_is_least_squares(rng):
    design, response, groups = sparse_problem(rng, n=50)
    coef, _ = group_lasso(design, response, groups, 0.0, tol=1e-13)
    ls, *_ = np.linalg.lstsq(design, response, rcond=None)
    assert_allclose(coef, ls, atol=1e-8)


def test_large_penalty_zeroes_everything(rng):
    design, response, groups = sparse_problem(rng)
    # above the max group correlation the null vector is stationary
    corr = design.T @ response
    eta = 1.01 * max(np.linalg.norm(corr[g]) for g in groups)
    coef, info = group_lasso(design, response, groups, eta)
    assert_allclose(coef, 0.0, atol=1e-12)
    assert info["active_groups"] == []


def test_kkt_residual_zero_only_at_solution(rng):
    design, response, groups = sparse_problem(rng)
    eta = 3.0
    coef, _ = group_lasso(design, response, groups, eta, tol=1e-12)
    assert kkt_residual(design, response, coef, groups, eta) <= 1e-8
    assert kkt_residual(design, response, coef + 0.05, groups, eta) > 1e-4


def test_objective_trace_is_non_increasing(rng):
    design, response, groups = sparse_problem(rng, n=40)
    _, info = group_lasso(design, response, groups, 2.0, tol=1e-12)
    trace = np.asarray(info["objective_trace"])
    assert np.all(np.diff(trace) <= 1e-10)


def test_overlapping_groups_are_rejected(rng):
    design, response, _ = sparse_problem(rng)
    with pytest.raises(ValueError):
        group_lasso(design, response, [np.array([0, 1]), np.array([1, 2])], 1.0)


def test_uncovered_columns_stay_zero(rng):
    design, response, _ = sparse_problem(rng)
    coef, _ = group_lasso(design, response, [np.array([0, 1])], 0.5)
    assert np.all(coef[2:] == 0.0)


def test_interleaved_groups_partition():
    groups = interleaved_groups(4, 3)
    assert len(groups) == 4
    assert all(len(g) == 3 for g in groups)
    assert sorted(np.concatenate(groups)) == list(range(12))
    # group j collects row j of the vectorized 4 x 3 matrix
    assert list(groups[1]) == [1, 5, 9]


def test_unconverged_raises(rng):
    design, response, groups = sparse_problem(rng)
    with pytest.raises(ConvergenceError):
        group_lasso(design, response, groups, 1.0, tol=1e-15, max_sweeps=1)


# ---------------------------------------------------------------------------
# penalty calibration helpers


def test_theory_penalty_scaling():
    base = theory_penalty(100, 3, 20, 1.0)
    assert theory_penalty(100, 3, 20, 2.0) == pytest.approx(2 * base)
    assert theory_penalty(400, 3, 20, 1.0) == pytest.approx(2 * base)
    assert theory_penalty(100, 3, 20, 1.0, c0=0.5) == pytest.approx(base / 2)
    assert theory_penalty(100, 5, 20, 1.0) > base  # grows with rank
    with pytest.raises(ValueError):
        theory_penalty(0, 3, 20, 1.0)
    with pytest.raises(ValueError):
        theory_penalty(100, 3, 20, -1.0)


def test_cross_validation_prefers_moderate_penalty(rng):
    design, response, groups = sparse_problem(
        rng, n=80, n_groups=8, active=2, sigma=0.3
    )
    grid = [0.01, 1.0, 5.0, 50.0, 5000.0]
    eta, table = cross_validate_penalty(design, response, groups, grid)
    assert eta in grid
    assert set(table) == set(grid)
    # the absurdly large penalty (null model) must not win
    assert eta < 5000.0
    with pytest.raises(ValueError):
        cross_validate_penalty(design, response, groups, grid, folds=1)


def test_grip_check_on_orthogonal_design(rng):
    # orthogonal columns scaled to sqrt(n) satisfy the isometry exactly
    n = 64
    q, _ = np.linalg.qr(rng.standard_normal((n, 8)))
    design = np.sqrt(n) * q
    groups = [np.arange(0, 2), np.arange(2, 4), np.arange(4, 6), np.arange(6, 8)]
    holds, report = check_grip(design, groups, max_active=2, delta=0.05)
    assert holds
    assert report["worst_lower"] >= 0.95
    assert report["worst_upper"] <= 1.05


def test_grip_check_flags_duplicate_columns(rng):
    n = 40
    design = rng.standard_normal((n, 6))
    design[:, 5] = design[:, 0]  # cross-group collision
    groups = [np.arange(0, 2), np.arange(2, 4), np.arange(4, 6)]
    holds, report = check_grip(design, groups, max_active=2, delta=0.1)
    assert not holds


def test_grip_check_refuses_large_enumerations(rng):
    design = rng.standard_normal((10, 26))
    groups = [np.array([i, i + 13]) for i in range(13)]
    with pytest.raises(ValueError):
        check_grip(design, groups, max_active=2, delta=0.1)
