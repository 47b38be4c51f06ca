"""Alternating low-rank approximation against SVD oracles.

Exact-rank tensors must be recovered to machine precision, the projected
norm must never decrease across sweeps, and the row-sparse variant must
find planted supports.  Subspace distances are checked against an
explicit projector-difference computation.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_tucker
from tensreg.errors import DataError
from tensreg.tensor_ops import hs_norm, matricize, qr_orth, thin_svd
from tensreg.tucker import check_ranks, hooi, hosvd_init, sin_theta, sparse_hooi


def test_check_ranks_accepts_and_normalizes():
    assert check_ranks((4, 5, 6), (2, 2, 2)) == (2, 2, 2)


@pytest.mark.parametrize(
    "dims, ranks",
    [
        ((4, 4), (2, 2, 2)),  # order mismatch
        ((4, 4, 4), (0, 2, 2)),  # rank below 1
        ((4, 4, 4), (5, 2, 2)),  # rank above dimension
        ((6, 2, 2), (5, 2, 2)),  # r_k above the product of the others
    ],
)
def test_check_ranks_rejects(dims, ranks):
    with pytest.raises(ValueError):
        check_ranks(dims, ranks)


def test_hosvd_factors_match_unfolding_svds(rng):
    t = rng.standard_normal((5, 4, 6))
    factors = hosvd_init(t, (2, 2, 3))
    for k, r in enumerate((2, 2, 3)):
        u_oracle, _, _ = thin_svd(matricize(t, k), r)
        assert sin_theta(factors[k], u_oracle) < 1e-7


def test_hooi_recovers_exact_rank_tensor(rng):
    core, frames, coeff = random_tucker(rng, (6, 5, 7), (2, 3, 2))
    fac = hooi(coeff, (2, 3, 2))
    assert_allclose(fac.reconstruct(), coeff, atol=1e-10 * hs_norm(coeff))
    assert not fac.padded
    # factors span the true mode subspaces
    for k in range(3):
        truth = qr_orth(frames[k])
        assert sin_theta(fac.factors[k], truth) < 1e-7


def test_hooi_objective_trace_non_decreasing(rng):
    t = rng.standard_normal((8, 8, 8))
    fac = hooi(t, (3, 3, 3), max_iters=12, tol=0.0)
    trace = np.array(fac.objective_trace)
    assert np.all(np.diff(trace) >= -1e-10)
    # the projected mass never exceeds the total mass
    assert trace[-1] <= hs_norm(t) + 1e-12


def test_hooi_beats_or_matches_hosvd(rng):
    t = rng.standard_normal((7, 6, 5))
    ranks = (2, 2, 2)
    factors = hosvd_init(t, ranks)
    init_core = t
    for k, u in enumerate(factors):
        init_core = np.einsum(
            init_core, list(range(3)), u, [k, 3], [i if i != k else 3 for i in range(3)]
        )
    refined = hooi(t, ranks)
    assert hs_norm(refined.core) >= hs_norm(init_core) - 1e-12


def test_hooi_matrix_case_is_svd(rng):
    m = rng.standard_normal((9, 7))
    fac = hooi(m, (3, 3))
    u, s, v = thin_svd(m, 3)
    assert_allclose(
        fac.reconstruct(), u @ np.diag(s) @ v.T, atol=1e-10 * np.linalg.norm(m)
    )


def test_hooi_small_perturbation_moves_subspace_little(rng):
    core, frames, coeff = random_tucker(rng, (8, 8, 8), (2, 2, 2))
    clean = hooi(coeff, (2, 2, 2))
    noisy = hooi(coeff + 1e-7 * rng.standard_normal(coeff.shape), (2, 2, 2))
    for k in range(3):
        assert sin_theta(clean.factors[k], noisy.factors[k]) < 1e-4


def test_hooi_rejects_non_finite():
    t = np.zeros((3, 3, 3))
    t[0, 0, 0] = np.nan
    with pytest.raises(DataError):
        hooi(t, (1, 1, 1))


def test_hooi_pads_rank_deficient_input(rng):
    core, frames, coeff = random_tucker(rng, (6, 6, 6), (1, 1, 1))
    fac = hooi(coeff, (3, 3, 3))
    assert fac.padded
    # the padded reconstruction still carries the whole tensor
    assert_allclose(fac.reconstruct(), coeff, atol=1e-10 * hs_norm(coeff))
    for u in fac.factors:
        assert_allclose(u.T @ u, np.eye(3), atol=1e-12)


def test_sparse_hooi_recovers_planted_rows(rng):
    p, s, r = 14, 4, 2
    frame = np.zeros((p, r))
    rows = np.sort(rng.choice(p, size=s, replace=False))
    frame[rows] = rng.standard_normal((s, r)) + 2 * np.sign(
        rng.standard_normal((s, r))
    )
    core = rng.standard_normal((r, r, r))
    others = [rng.standard_normal((10, r)) for _ in range(2)]
    coeff = np.einsum("abc,ia,jb,kc->ijk", core, frame, *others)
    fac = sparse_hooi(coeff, (r, r, r), sparse_modes=(0,), row_limits={0: s})
    found = np.where(np.linalg.norm(fac.factors[0], axis=1) > 1e-12)[0]
    assert list(found) == list(rows)
    assert_allclose(fac.reconstruct(), coeff, atol=1e-8 * hs_norm(coeff))


def test_sparse_hooi_without_sparse_modes_is_hooi(rng):
    t = rng.standard_normal((6, 6, 6))
    plain = hooi(t, (2, 2, 2))
    sparse = sparse_hooi(t, (2, 2, 2), sparse_modes=(), row_limits={})
    assert_allclose(sparse.reconstruct(), plain.reconstruct(), atol=1e-12)


def test_sparse_hooi_validates_budgets(rng):
    t = rng.standard_normal((5, 5, 5))
    with pytest.raises(ValueError):
        sparse_hooi(t, (2, 2, 2), sparse_modes=(0,), row_limits={0: 1})
    with pytest.raises(ValueError):
        sparse_hooi(t, (2, 2, 2), sparse_modes=(0,), row_limits={0: 6})
    with pytest.raises(ValueError):
        sparse_hooi(t, (2, 2, 2), sparse_modes=(5,), row_limits={5: 2})


# ---------------------------------------------------------------------------
# sin_theta


def test_sin_theta_matches_projector_difference(rng):
    u = qr_orth(rng.standard_normal((8, 3)))
    v = qr_orth(rng.standard_normal((8, 3)))
    gap = np.linalg.norm(u @ u.T - v @ v.T, 2)
    assert sin_theta(u, v) == pytest.approx(gap, abs=1e-10)


def test_sin_theta_extremes(rng):
    u = qr_orth(rng.standard_normal((6, 2)))
    assert sin_theta(u, u) == pytest.approx(0.0, abs=1e-7)
    # orthogonal subspaces are at the maximal angle
    from tensreg.tensor_ops import orth_complement

    v = orth_complement(u)[:, :2]
    assert sin_theta(u, v) == pytest.approx(1.0, abs=1e-12)


def test_sin_theta_rejects_shape_mismatch(rng):
    with pytest.raises(ValueError):
        sin_theta(np.eye(4, 2), np.eye(5, 2))
