"""Low-Tucker-rank approximation by alternating truncated SVDs.

``hosvd_init`` seeds per-mode bases from the unfoldings, ``hooi`` refines
them by higher-order orthogonal iteration, and ``sparse_hooi`` interleaves
row-support hard thresholding for modes declared row-sparse.  All three
work for any tensor order d >= 2.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import DataError
from .tensor_ops import hs_norm, matricize, mode_product, orth_complement, thin_svd, vec

__all__ = [
    "TuckerFactorization",
    "hosvd_init",
    "hooi",
    "sparse_hooi",
    "sin_theta",
]

MAX_ITERS = 20
TOL = 1e-6

# 75% quantile of the standard normal; |N(0,1)| has median 0.6744...,
# so median(|noise|) / 0.6744897501960817 estimates the noise level.
NORMAL_Q75 = 0.6744897501960817


@dataclass
class TuckerFactorization:
    """Core tensor plus per-mode orthonormal factors.

    ``objective_trace`` records the projected Hilbert-Schmidt norm after
    each sweep; ``padded`` flags that a requested rank exceeded the
    numerical rank of some unfolding and the basis was completed with
    arbitrary orthonormal columns.
    """

    core: np.ndarray
    factors: list
    objective_trace: list = field(default_factory=list)
    padded: bool = False

    def reconstruct(self):
        t = self.core
        for mode, u in enumerate(self.factors):
            t = mode_product(t, u, mode)
        return t


def check_ranks(dims, ranks):
    """Validate the rank tuple: 1 <= r_k <= p_k and r_k <= prod of the others."""
    dims = tuple(int(d) for d in dims)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(dims):
        raise ValueError(f"got {len(ranks)} ranks for an order-{len(dims)} tensor")
    for k, (p, r) in enumerate(zip(dims, ranks)):
        if not 1 <= r <= p:
            raise ValueError(f"rank {r} infeasible for mode {k} of size {p}")
        others = int(np.prod([ranks[l] for l in range(len(ranks)) if l != k]))
        if r > others:
            raise ValueError(
                f"rank {r} at mode {k} exceeds the product {others} of the others"
            )
    return ranks


def _truncated_basis(mat, rank):
    """Leading left singular vectors, padded with complement columns if the
    matrix rank falls short of the request.  Returns (basis, padded?)."""
    u, s, _ = thin_svd(mat, rank)
    cutoff = max(mat.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    effective = int(np.sum(s > cutoff))
    if effective >= rank:
        return u, False
    head = u[:, :effective] if effective else np.zeros((mat.shape[0], 0))
    if effective == 0:
        # Degenerate zero matrix: fall back to coordinate directions.
        head = np.eye(mat.shape[0], 1)
        effective = 1
        if rank == 1:
            return head, True
    tail = orth_complement(head)[:, : rank - effective]
    return np.hstack([head, tail]), True


def hosvd_init(t, ranks):
    """Per-mode truncated SVDs of the unfoldings (the classic warm start)."""
    t = np.asarray(t, dtype=np.float64)
    ranks = check_ranks(t.shape, ranks)
    factors = []
    for k, r in enumerate(ranks):
        u, _ = _truncated_basis(matricize(t, k), r)
        factors.append(u)
    return factors


def _project_except(t, factors, skip):
    out = t
    for l, u in enumerate(factors):
        if l != skip:
            out = mode_product(out, u.T, l)
    return out


def _threshold_rows(mat, keep, rank, noise_floor):
    """Zero all but the ``keep`` largest-norm rows; rows under the noise
    floor are dropped too, but at least ``rank`` rows always survive."""
    norms = np.linalg.norm(mat, axis=1)
    order = np.argsort(-norms, kind="stable")
    support = order[:keep]
    loud = support[norms[support] >= noise_floor]
    if loud.size < rank:
        loud = order[:rank]
    out = np.zeros_like(mat)
    out[np.sort(loud)] = mat[np.sort(loud)]
    return out


def _iterate(t, ranks, max_iters, tol, sparse_modes, row_limits):
    dims = t.shape
    sparse_modes = frozenset(sparse_modes or ())

    if sparse_modes:
        sigma_hat = float(np.median(np.abs(vec(t)))) / NORMAL_Q75
        floors = {
            k: sigma_hat * math.sqrt(ranks[k] + 2.0 * math.log(dims[k]))
            for k in sparse_modes
        }

    def basis_from(mat, k):
        if k in sparse_modes:
            mat = _threshold_rows(mat, row_limits[k], ranks[k], floors[k])
        return _truncated_basis(mat, ranks[k])

    padded = False
    factors = []
    for k, r in enumerate(ranks):
        u, pad = basis_from(matricize(t, k), k)
        factors.append(u)
        padded = padded or pad

    trace = []
    for _ in range(max_iters):
        change = 0.0
        for k in range(len(dims)):
            projected = matricize(_project_except(t, factors, k), k)
            u, pad = basis_from(projected, k)
            change = max(change, sin_theta(u, factors[k]))
            factors[k] = u
            padded = padded or pad
        core = _project_except(t, factors, skip=-1)
        trace.append(hs_norm(core))
        if change < tol:
            break
    core = _project_except(t, factors, skip=-1)
    return TuckerFactorization(core, factors, trace, padded)


def hooi(t, ranks, max_iters=MAX_ITERS, tol=TOL):
    """Higher-order orthogonal iteration.

    Starting from :func:`hosvd_init`, each sweep replaces factor k with the
    leading left singular vectors of the mode-k unfolding of the tensor
    projected along every other mode (Gauss-Seidel style, always using the
    freshest factors).  Stops when the largest per-mode subspace rotation
    (sin-theta) in a sweep drops below ``tol`` or after ``max_iters``
    sweeps.  The projected norm recorded in ``objective_trace`` is
    non-decreasing.
    """
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise DataError("tensor contains non-finite entries")
    ranks = check_ranks(t.shape, ranks)
    return _iterate(t, ranks, max_iters, tol, sparse_modes=None, row_limits=None)


def sparse_hooi(t, ranks, sparse_modes, row_limits, max_iters=MAX_ITERS, tol=TOL):
    """Row-sparse variant of :func:`hooi` (double projection & thresholding).

    For every mode k in ``sparse_modes`` the rows of the projected mode-k
    unfolding are hard-thresholded before its SVD: only the ``row_limits[k]``
    largest-norm rows are kept, and of those, rows whose norm falls below
    sigma_hat * sqrt(r_k + 2 log p_k) are zeroed as noise, where sigma_hat
    is the median absolute entry of ``t`` divided by the 75% normal
    quantile.  The returned factor for a sparse mode therefore has at most
    ``row_limits[k]`` nonzero rows.

    ``row_limits`` maps mode -> row budget s_k (s_k >= r_k required); an
    empty ``sparse_modes`` reproduces :func:`hooi` exactly.
    """
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise DataError("tensor contains non-finite entries")
    ranks = check_ranks(t.shape, ranks)
    sparse_modes = tuple(sparse_modes or ())
    for k in sparse_modes:
        if not 0 <= k < t.ndim:
            raise ValueError(f"sparse mode {k} out of range")
        if row_limits[k] < ranks[k]:
            raise ValueError(
                f"row budget {row_limits[k]} below rank {ranks[k]} at mode {k}"
            )
        if row_limits[k] > t.shape[k]:
            raise ValueError(f"row budget {row_limits[k]} exceeds mode-{k} size")
    return _iterate(t, ranks, max_iters, tol, sparse_modes, row_limits)


def sin_theta(u, v):
    """Largest principal-angle sine between the column spans of u and v.

    Computed as sqrt(1 - sigma_min(u.T v)^2), which equals the spectral
    norm of the projection of either basis onto the other's complement.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    if u.shape[1] == 0:
        return 0.0
    smin = sla.svdvals(u.T @ v)[-1]
    return math.sqrt(max(0.0, 1.0 - min(1.0, smin) ** 2))
