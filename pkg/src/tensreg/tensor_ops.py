"""Dense tensor algebra: unfolding, mode products, Kronecker helpers, QR/SVD.

Layout convention used everywhere in this package: tensors are float64
numpy arrays read in column-major (Fortran) order, so the vectorization of
a tensor T with shape (p_1, ..., p_d) puts entry T[i_1, ..., i_d] at flat
position i_1 + i_2*p_1 + i_3*p_1*p_2 + ... (0-based).  Mode indices are
0-based.  With this convention the mode-0 unfolding is a zero-copy reshape
of a Fortran-contiguous buffer; other modes materialize a copy.
"""

import numpy as np
from scipy import linalg as sla

from .errors import DegeneracyError

__all__ = [
    "vec",
    "unvec",
    "hs_norm",
    "matricize",
    "tensorize",
    "mode_product",
    "multi_mode_product",
    "kron",
    "kron_skipping",
    "row_permute",
    "thin_svd",
    "qr_orth",
    "orth_complement",
]

# Frobenius tolerance used whenever a matrix is checked for orthonormality.
ORTHONORMALITY_TOL = 1e-10

# Relative threshold below which a triangular/diagonal entry counts as zero.
_RANK_TOL = 1e-12


def vec(t):
    """Column-major vectorization of a tensor (or matrix)."""
    return np.asarray(t, dtype=np.float64).reshape(-1, order="F")


def unvec(v, dims):
    """Inverse of :func:`vec`: reshape a flat vector into ``dims``."""
    dims = tuple(int(d) for d in dims)
    v = np.asarray(v, dtype=np.float64)
    if v.size != int(np.prod(dims)):
        raise ValueError(f"cannot reshape length-{v.size} vector into {dims}")
    return v.reshape(dims, order="F")


def hs_norm(t):
    """Hilbert-Schmidt norm: sqrt of the sum of squared entries."""
    return float(np.linalg.norm(np.asarray(t).ravel()))


def matricize(t, mode):
    """Mode-``mode`` unfolding of ``t`` into a p_mode x prod(other dims) matrix.

    Column j of the result enumerates the non-``mode`` indices in
    column-major order (lowest remaining mode varies fastest), i.e. the
    column index of entry (i_1, ..., i_d) is
    sum_{l != mode} i_l * prod_{m < l, m != mode} p_m.
    """
    t = np.asarray(t, dtype=np.float64)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def tensorize(m, dims, mode):
    """Inverse of :func:`matricize`: fold a matrix back into shape ``dims``."""
    dims = tuple(int(d) for d in dims)
    m = np.asarray(m, dtype=np.float64)
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for dims {dims}")
    rest = dims[:mode] + dims[mode + 1:]
    if m.shape != (dims[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(
            f"matrix shape {m.shape} does not match dims {dims} at mode {mode}"
        )
    t = np.reshape(m, (dims[mode],) + rest, order="F")
    return np.moveaxis(t, 0, mode)


def mode_product(t, u, mode):
    """Contract mode ``mode`` of ``t`` with the columns of ``u``.

    Defined by matricize(result, mode) = u @ matricize(t, mode); the
    result's mode-``mode`` dimension is u.shape[0].
    """
    t = np.asarray(t, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != t.shape[mode]:
        raise ValueError(
            f"inner dimensions do not match: u is {u.shape}, "
            f"tensor mode {mode} has size {t.shape[mode]}"
        )
    new_dims = list(t.shape)
    new_dims[mode] = u.shape[0]
    return tensorize(u @ matricize(t, mode), new_dims, mode)


def multi_mode_product(t, mats, modes=None, transpose=False):
    """Apply mode products for several modes in ascending mode order.

    ``mats`` pairs with ``modes`` (default: modes 0..len(mats)-1).  With
    ``transpose=True`` each matrix is transposed first, the common case of
    projecting onto column spaces.
    """
    t = np.asarray(t, dtype=np.float64)
    if modes is None:
        modes = range(len(mats))
    for u, mode in sorted(zip(mats, modes), key=lambda pair: pair[1]):
        t = mode_product(t, u.T if transpose else u, mode)
    return t


def kron(a, b):
    """Kronecker product (thin wrapper kept for a uniform vocabulary)."""
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def kron_skipping(mats, skip):
    """Kronecker product of ``mats`` in descending mode order, skipping one.

    Returns mats[d-1] kron ... kron mats[skip+1] kron mats[skip-1] kron ...
    kron mats[0] -- the factor that multiplies a mode-``skip`` unfolding
    from the right when every other mode is hit by the matching matrix.
    """
    picked = [mats[l] for l in range(len(mats)) if l != skip]
    if not picked:
        return np.eye(1)
    out = picked[-1]
    for m in reversed(picked[:-1]):
        out = np.kron(out, m)
    return out


def row_permute(mode, m, dims):
    """Reorder the rows of ``m`` from mode-``mode`` to mode-0 vec order.

    Only defined for order-3 ``dims`` = (p_1, p_2, p_3); ``m`` must have
    p_1*p_2*p_3 rows.  Row i_1 + i_2*p_1 + i_3*p_1*p_2 of the output is the
    input row at the mode-``mode`` position of the same multi-index:
    mode 0 is the identity, mode 1 reads row i_2 + i_1*p_2 + i_3*p_1*p_2,
    mode 2 reads row i_3 + i_1*p_3 + i_2*p_1*p_3.  Applying it to a matrix
    W aligns vec-of-unfolding identities: (row_permute(k, W, dims)).T @
    vec(T) equals W.T @ vec(matricize(T, k)).
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError(f"row_permute is defined for order-3 dims only, got {dims}")
    m = np.asarray(m, dtype=np.float64)
    total = dims[0] * dims[1] * dims[2]
    if m.shape[0] != total:
        raise ValueError(f"matrix has {m.shape[0]} rows, expected {total}")
    p1, p2, p3 = dims
    i1, i2, i3 = np.indices(dims)
    if mode == 0:
        src = i1 + i2 * p1 + i3 * p1 * p2
    elif mode == 1:
        src = i2 + i1 * p2 + i3 * p1 * p2
    elif mode == 2:
        src = i3 + i1 * p3 + i2 * p1 * p3
    else:
        raise ValueError(f"mode {mode} out of range for order-3 tensor")
    return m[vec(src).astype(np.intp)]


def _fix_svd_signs(u, vt):
    # Deterministic sign choice: the largest-magnitude entry of every left
    # singular vector is made positive (ties resolved to the lowest index).
    for col in range(u.shape[1]):
        pivot = np.argmax(np.abs(u[:, col]))
        if u[pivot, col] < 0:
            u[:, col] = -u[:, col]
            vt[col, :] = -vt[col, :]
    return u, vt


def thin_svd(m, rank):
    """Leading-``rank`` SVD of ``m`` with a deterministic sign convention.

    Returns (U, s, V) where U is rows x rank, s the non-increasing leading
    singular values, and V is cols x rank, so m ~= U @ diag(s) @ V.T.
    """
    m = np.asarray(m, dtype=np.float64)
    if not 1 <= rank <= min(m.shape):
        raise ValueError(f"rank {rank} out of range for shape {m.shape}")
    u, s, vt = sla.svd(m, full_matrices=False, lapack_driver="gesdd")
    u, vt = _fix_svd_signs(u[:, :rank].copy(), vt[:rank, :].copy())
    return u, s[:rank].copy(), vt.T


def qr_orth(m):
    """Orthonormal basis for the column space of ``m`` via economy QR.

    The factorization is normalized so the triangular factor has a
    nonnegative diagonal, which makes the output deterministic.  Raises
    :class:`DegeneracyError` when the input is column-rank deficient.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] > m.shape[0]:
        raise ValueError(f"expected a tall matrix, got shape {m.shape}")
    q, r = sla.qr(m, mode="economic")
    diag = np.diag(r)
    scale = np.max(np.abs(diag)) if diag.size else 0.0
    if scale == 0.0 or np.min(np.abs(diag)) <= _RANK_TOL * scale:
        raise DegeneracyError(
            f"rank-deficient input to qr_orth (shape {m.shape})", detail="qr_orth"
        )
    flip = np.sign(diag)
    return q * flip


def orth_complement(u):
    """Orthonormal basis of the orthogonal complement of span(u).

    ``u`` must already have orthonormal columns; the result has
    u.shape[0] - u.shape[1] columns (possibly zero).
    """
    u = np.asarray(u, dtype=np.float64)
    p, r = u.shape
    gram_err = np.linalg.norm(u.T @ u - np.eye(r))
    if gram_err > ORTHONORMALITY_TOL:
        raise ValueError(f"input columns are not orthonormal (defect {gram_err:.2e})")
    if r == p:
        return np.zeros((p, 0))
    # Full QR of u: the trailing columns of Q complete the basis.
    q, _ = sla.qr(u, mode="full")
    comp = q[:, r:]
    # Re-project for a clean complement regardless of backend sign choices.
    comp = comp - u @ (u.T @ comp)
    q2, _ = sla.qr(comp, mode="economic")
    return q2
