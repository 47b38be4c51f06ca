"""Row-sparse sketched tensor regression.

For modes declared sparse the reduced regression keeps every row of the
mode-k unfolding instead of splitting core/complement blocks: the mode-k
slice design has rows vec(M_k(X_i) @ W_k) of width p_k * r_k, and a group
Lasso over the row partition picks which of the p_k rows are active.  The
estimate assembles as the core hit by per-mode factors
E_k (U_k' E_k)^{-1}, which agrees with the dense assembly whenever both
encode the same subspace data.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import DegeneracyError
from .estimator import (
    ACCUM_BLOCK,
    COND_LIMIT,
    DEFAULT_REFINE,
    REFINE_TOL,
    Estimate,
    SketchProjector,
    SketchedSystem,
    covariance_tensor,
    mode_product,
    probe_directions,
    refinement_delta,
    split_source,
)
from .group_lasso import group_lasso, interleaved_groups, theory_penalty
from .samples import SampleSource
from .tensor_ops import matricize, unvec, vec

__all__ = [
    "SparseEstimate",
    "build_sparse_sketched",
    "fit_sparse",
]


@dataclass
class SparseEstimate:
    """Assembled sparse estimate with per-mode slice factors and supports."""

    coeff: np.ndarray
    core: np.ndarray
    mode_slices: list  # per-mode p_k x r_k factors (E_k), zero rows off-support
    supports: list  # per-mode sorted active row indices
    basis: object
    diagnostics: dict = field(default_factory=dict)


class _SparseRows(SketchProjector):
    """Adds the full-row mode slice blocks to the shared projector."""

    def slice_row(self, x, k):
        partial = matricize(self._projected_except(x, skip=k), k)
        return vec(partial @ self.basis.rotations[k])


def build_sparse_sketched(source, basis):
    """Pass two for the sparse path.

    Returns (body system, list of per-mode slice designs); the body block
    is identical to the dense path's, each slice design is n x (p_k r_k).
    """
    if tuple(source.dims) != tuple(basis.dims):
        raise ValueError("source dims do not match basis")
    proj = _SparseRows(basis)
    dims, ranks = basis.dims, basis.ranks
    d = len(dims)
    n = source.n
    body = np.empty((n, int(np.prod(ranks))))
    slices = [np.empty((n, dims[k] * ranks[k])) for k in range(d)]
    response = np.empty(n)
    i = 0
    for ys, xs in source.iter_vec_batches(ACCUM_BLOCK):
        t = proj._batch_tensor(np.asarray(xs, dtype=np.float64))
        b = t.shape[0]
        body[i : i + b] = proj._batch_vec(proj._batch_project(t, skip=-1))
        for k in range(d):
            partial = proj._batch_matricize(proj._batch_project(t, skip=k), k)
            block = partial @ proj.basis.rotations[k]
            slices[k][i : i + b] = block.transpose(0, 2, 1).reshape(b, -1)
        response[i : i + b] = ys
        i += b
    body_system = SketchedSystem(
        body, response, [("body", 0, body.shape[1])], dims, ranks
    )
    return body_system, slices


def _least_squares(design, response, what):
    n, m = design.shape
    if n < m:
        raise ValueError(f"underdetermined {what} block: n={n} < m={m}")
    q, r = np.linalg.qr(design)
    svals = sla.svdvals(r)
    cond = math.inf if svals[-1] == 0 else float(svals[0] / svals[-1])
    if cond > COND_LIMIT:
        raise DegeneracyError(f"{what} design ill-conditioned", detail=what)
    return sla.solve_triangular(r, q.T @ response)


# Penalty scales never drop below this fraction of the response scale, so
# a noiseless, fully converged sweep still thresholds away floating-point
# dust instead of declaring every row active.
MIN_SCALE_FRACTION = 1e-8


def _residual_scale(design, response, fallback):
    """Noise scale for the penalty: RMS residual of the unpenalized slice
    least squares (the slice block alone explains the captured signal, so
    its residual isolates noise plus whatever the directions miss).  Falls
    back to the response scale when the block is too wide to solve."""
    n, cols = design.shape
    if n <= cols + 10:
        return fallback
    try:
        coef = _least_squares(design, response, "scale probe")
    except (DegeneracyError, ValueError):
        return fallback
    resid = response - design @ coef
    return float(np.sqrt(max(float(resid @ resid), 0.0) / (n - cols)))


def _solve_sparse_sweep(
    body_system, slices, basis, sparse_modes, penalty, c0, refit, lasso_tol, n_regress
):
    """Solve one sparse sweep given the materialized reduced blocks."""
    response = body_system.response
    dims, ranks = basis.dims, basis.ranks
    d = len(dims)

    core_vec = _least_squares(body_system.design, response, "body")
    core = unvec(core_vec, ranks)

    response_scale = float(np.sqrt(np.mean(response**2)))
    scale_floor = MIN_SCALE_FRACTION * response_scale
    mode_slices = []
    supports = []
    noise_scales = []
    lasso_info = {}
    for k in range(d):
        design = slices[k]
        p, r = dims[k], ranks[k]
        groups = interleaved_groups(p, r)
        if k in sparse_modes:
            if penalty == "theory":
                scale = max(_residual_scale(design, response, response_scale), scale_floor)
                eta = theory_penalty(n_regress, r, p, scale, c0=c0)
            elif isinstance(penalty, dict):
                eta = float(penalty[k])
            else:
                raise ValueError(f"unknown penalty policy {penalty!r}")
            coef, info = group_lasso(design, response, groups, eta, tol=lasso_tol)
            active = info["active_groups"]
            lasso_info[k] = {
                "eta": eta,
                "penalty_scale": eta / theory_penalty(n_regress, r, p, 1.0, c0=c0)
                if penalty == "theory"
                else None,
                "kkt_residual": info["kkt_residual"],
                "sweeps": info["sweeps"],
            }
            if refit and active:
                cols = np.concatenate([groups[j] for j in active])
                cols.sort()
                refit_coef = np.zeros_like(coef)
                refit_coef[cols] = _least_squares(
                    design[:, cols], response, f"mode-{k} refit"
                )
                lasso_info[k]["penalized_norm"] = float(np.linalg.norm(coef))
                coef = refit_coef
            support = sorted(active)
        else:
            coef = _least_squares(design, response, f"mode-{k} slice")
            support = list(range(p))
        resid = response - design @ coef
        used = int(np.count_nonzero(np.abs(coef) > 0)) or coef.size
        dof = max(1.0, len(response) - used)
        noise_scales.append(float(np.sqrt(max(float(resid @ resid), 0.0) / dof)))
        mode_slices.append(unvec(coef, (p, r)))
        supports.append(support)

    # Assembly: core hit by E_k (U_k' E_k)^{-1} for every mode.
    coeff = core
    align_conds = []
    comp_leverage = []
    for k in range(d):
        ek = mode_slices[k]
        head = basis.factors[k].T @ ek  # r x r alignment block
        svals = sla.svdvals(head)
        cond = math.inf if svals[-1] == 0 else float(svals[0] / svals[-1])
        align_conds.append(cond)
        if cond > COND_LIMIT:
            raise DegeneracyError(
                f"mode-{k} slice factor misaligned with its basis "
                f"(cond ~ {cond:.2e})",
                detail=k,
            )
        align = sla.solve(head.T, ek.T).T  # E_k (U_k' E_k)^{-1}
        comp_leverage.append(
            float(np.linalg.norm(basis.complements[k].T @ align, 2))
        )
        coeff = mode_product(coeff, align, k)

    diagnostics = {
        "alignment_conditions": align_conds,
        "complement_leverage": comp_leverage,
        "group_lasso": lasso_info,
        "response_scale": response_scale,
        "noise_scales": noise_scales,
    }
    return SparseEstimate(coeff, core, mode_slices, supports, basis, diagnostics)


def fit_sparse(
    source,
    ranks,
    sparse_modes,
    row_limits,
    penalty="theory",
    c0=1.0,
    refit=True,
    split=None,
    max_iters=20,
    tol=1e-6,
    lasso_tol=1e-10,
    refine=DEFAULT_REFINE,
    refine_tol=REFINE_TOL,
):
    """Streaming sparse fit with direction refinement.

    ``sparse_modes`` lists the modes expected to be row-sparse and
    ``row_limits`` maps mode -> row budget for the direction probing.  The
    group Lasso penalty per sparse mode comes from ``penalty``: the string
    "theory" applies :func:`theory_penalty` with constant ``c0`` and a
    per-mode noise scale estimated from the unpenalized slice residual
    (floored well above floating-point dust), or pass a dict
    mode -> explicit level.  Non-sparse modes get plain least squares.

    With ``refit`` (default), each sparse mode's slice factor is re-solved
    by least squares restricted to the selected groups, which removes the
    group-shrinkage bias while keeping the selected support; the penalized
    solution stays available in the diagnostics.

    Directions are refined exactly as in the dense fit: after each sweep
    they are re-probed (with the same row budgets) from the assembled
    estimate and the regression pass repeats, until the estimate moves
    less than ``refine_tol`` or ``refine`` extra sweeps have run.
    """
    if not isinstance(source, SampleSource):
        raise TypeError("source must be a SampleSource")
    sparse_modes = tuple(sparse_modes or ())
    first, second = split_source(source, split)

    cov = covariance_tensor(first)
    basis = probe_directions(
        cov, ranks, max_iters, tol, sparse_modes=sparse_modes, row_limits=row_limits
    )
    estimate = None
    deltas = []
    stopped_on = None
    for sweep in range(max(0, int(refine)) + 1):
        if sweep:
            basis = probe_directions(
                estimate.coeff,
                ranks,
                max_iters,
                tol,
                sparse_modes=sparse_modes,
                row_limits=row_limits,
            )
        try:
            body_system, slices = build_sparse_sketched(second, basis)
            new = _solve_sparse_sweep(
                body_system,
                slices,
                basis,
                sparse_modes,
                penalty,
                c0,
                refit,
                lasso_tol,
                second.n,
            )
        except DegeneracyError:
            if estimate is None:
                raise
            stopped_on = "degenerate sweep"
            break
        if estimate is not None:
            deltas.append(refinement_delta(new.coeff, estimate.coeff))
        estimate = new
        if deltas and deltas[-1] < refine_tol:
            break
    estimate.diagnostics.update(
        {
            "n_probe": first.n,
            "n_regress": second.n,
            "refine_sweeps": len(deltas),
            "refine_deltas": deltas,
        }
    )
    if stopped_on:
        estimate.diagnostics["refine_stopped_on"] = stopped_on
    return estimate


def dense_equivalent(sparse_est):
    """Re-express a sparse estimate in the dense core/arm form (used to
    cross-check the two assembly identities)."""
    basis = sparse_est.basis
    core = sparse_est.core
    arms = [
        basis.complements[k].T @ sparse_est.mode_slices[k]
        for k in range(len(basis.dims))
    ]
    gamma = np.concatenate([vec(core)] + [vec(a) for a in arms])
    return Estimate(sparse_est.coeff, core, arms, gamma, basis, {})
