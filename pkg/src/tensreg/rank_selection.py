"""Adaptive Tucker-rank choice by over-fit, screen, and refit.

Fit once at a conservatively large rank, then screen each mode: rotate
the assembled mode factor and the rotated core block into their singular
coordinates and accept the largest leading block whose alignment matrix
is invertible and whose lifted factor has bounded spectral amplification
-- concretely, the largest s such that the leading s x s alignment block
J clears the coefficient noise floor and ||A[:, :s] J^{-1}||_2 stays
below a threshold (default 3).  The data are then refit at the selected
ranks.

"Invertible" is a statistical statement here, not just a floating-point
one: the trailing rows and columns of J estimated from an over-ranked fit
are pure least-squares noise of entrywise scale sigma_hat/sqrt(n), so a
leading block only counts as nonsingular when its smallest singular value
exceeds what a same-sized all-noise block could reach (about
2*sqrt(s)*scale, tested with a factor-3 margin).  Without the floor, a
noise direction whose arm and core fluctuations happen to align slips
under the amplification threshold roughly one time in five.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .estimator import Estimate, fit_lowrank, reduced_dimension
from .sparse_estimator import SparseEstimate, fit_sparse
from .tensor_ops import matricize, thin_svd

__all__ = ["select_rank", "fit_with_rank_selection", "RankSelection"]

SPECTRAL_THRESHOLD = 3.0
# A leading block is "nonsingular" when sigma_min exceeds this multiple of
# sqrt(s) times the coefficient noise scale (sigma_max of an s x s block
# with i.i.d. unit-scale entries concentrates near 2*sqrt(s)).
NOISE_FLOOR_Z = 3.0
# Floating-point fallback when no noise scale is available.
SINGULARITY_RTOL = 1e-10

# Refinement sweeps for the over-ranked screening fit: none.  The screen
# runs on the single-shot over-fit deliberately -- refinement polishes the
# trailing directions' leakage away, which erases part of the contrast the
# amplification test keys on, and the final refit re-runs with the full
# schedule anyway.
SCREEN_REFINE = 0


@dataclass
class RankSelection:
    ranks: tuple
    clamped: bool  # some mode was reduced to restore Tucker feasibility
    null_fit: bool  # a mode screened to rank zero; estimate is the zero tensor


def _mode_screen(
    full_factor, rotated_core_block, core_unfolding, threshold, r_ini, noise_floor
):
    """Screen one mode; returns the accepted leading rank (0 if none)."""
    # Left singular coordinates of the core unfolding, right singular
    # coordinates of the assembled factor.
    if np.linalg.norm(core_unfolding) == 0 or np.linalg.norm(full_factor) == 0:
        return 0
    u_core, _, _ = thin_svd(core_unfolding, min(core_unfolding.shape))
    _, _, v_full = thin_svd(full_factor, min(full_factor.shape))
    rotated = full_factor @ v_full
    align = u_core.T @ rotated_core_block @ v_full
    smax_all = float(sla.svdvals(align)[0]) if align.size else 0.0
    if smax_all == 0.0:
        return 0
    for s in range(r_ini, 0, -1):
        block = align[:s, :s]
        svals = sla.svdvals(block)
        floor = max(
            NOISE_FLOOR_Z * math.sqrt(s) * noise_floor,
            SINGULARITY_RTOL * smax_all,
        )
        if svals[-1] <= floor:
            continue
        amplification = float(np.linalg.norm(rotated[:, :s] @ sla.inv(block), 2))
        if amplification <= threshold:
            return s
    return 0


def _coefficient_noise(estimate):
    """Per-mode noise floor for entries of the screen's alignment matrix.

    The reduced design has (near) unit-variance rows, so each estimated
    core entry fluctuates at scale sigma_hat / sqrt(n); the alignment
    matrix is an orthogonal rotation of core entries and inherits it.
    Returns zeros when the fit carries no residual diagnostics (the
    screen then falls back to the floating-point singularity guard).
    """
    diag = estimate.diagnostics
    d = len(estimate.basis.dims)
    n = diag.get("n_regress", 0)
    if not n:
        return [0.0] * d
    if isinstance(estimate, SparseEstimate):
        scales = diag.get("noise_scales")
        if scales is None:
            return [0.0] * d
        return [float(s) / math.sqrt(n) for s in scales]
    resid = diag.get("residual_norm")
    if resid is None:
        return [0.0] * d
    m = reduced_dimension(estimate.basis.dims, estimate.basis.ranks)
    sigma = float(resid) / math.sqrt(max(1, n - m))
    return [sigma / math.sqrt(n)] * d


def select_rank(estimate, threshold=SPECTRAL_THRESHOLD, noise_floor=None):
    """Per-mode rank screen on an over-ranked fit.

    Accepts dense estimates (core + arm blocks) and sparse estimates
    (mode slice factors).  Returns a tuple of selected ranks; zero means
    no leading block passed the screen for that mode.

    ``noise_floor`` is the entrywise noise scale of the alignment matrix
    used by the nonsingularity test -- a scalar, a per-mode sequence, or
    None to derive it from the fit's residual diagnostics.
    """
    basis = estimate.basis
    dims, ranks = basis.dims, basis.ranks
    if noise_floor is None:
        floors = _coefficient_noise(estimate)
    elif np.isscalar(noise_floor):
        floors = [float(noise_floor)] * len(dims)
    else:
        floors = [float(f) for f in noise_floor]
    selected = []
    for k in range(len(dims)):
        core_unf = matricize(estimate.core, k)
        rotated_core = core_unf @ basis.rotations[k]
        if isinstance(estimate, SparseEstimate):
            full = estimate.mode_slices[k]
        else:
            full = (
                basis.factors[k] @ rotated_core
                + basis.complements[k] @ estimate.arm_blocks[k]
            )
        selected.append(
            _mode_screen(full, rotated_core, core_unf, threshold, ranks[k], floors[k])
        )
    return tuple(selected)


def _clamp_feasible(ranks):
    """Shrink ranks until r_k <= prod of the others (fixed point)."""
    ranks = list(ranks)
    clamped = False
    changed = True
    while changed:
        changed = False
        for k in range(len(ranks)):
            others = int(np.prod([ranks[l] for l in range(len(ranks)) if l != k]))
            if ranks[k] > others:
                ranks[k] = others
                clamped = changed = True
    return tuple(ranks), clamped


def _zero_estimate(dims, basis):
    d = len(dims)
    return Estimate(
        coeff=np.zeros(dims),
        core=np.zeros((0,) * d),
        arm_blocks=[np.zeros((dims[k], 0)) for k in range(d)],
        reduced_coef=np.zeros(0),
        basis=basis,
        diagnostics={"null_fit": True},
    )


def fit_with_rank_selection(
    source,
    r_ini,
    threshold=SPECTRAL_THRESHOLD,
    sparse_modes=None,
    row_limits=None,
    **fit_kwargs,
):
    """Over-fit at ``r_ini``, screen, refit at the selected ranks.

    Returns (selection, estimate): ``selection.ranks`` is the accepted
    rank tuple; if any mode screens to zero the estimate is the zero
    tensor and ``selection.null_fit`` is set.  Infeasible selections
    (some r_k above the product of the others) are clamped down with
    ``selection.clamped`` set before the refit.

    ``r_ini`` may be a single integer (used for every mode, capped at each
    dimension) or a per-mode tuple.
    """
    if np.isscalar(r_ini):
        r_ini = tuple(min(int(r_ini), int(p)) for p in source.dims)
    sparse = bool(sparse_modes)
    screen_kwargs = dict(fit_kwargs)
    screen_kwargs.setdefault("refine", SCREEN_REFINE)
    if sparse:
        over = fit_sparse(
            source, r_ini, sparse_modes, row_limits, **screen_kwargs
        )
    else:
        over = fit_lowrank(source, r_ini, **screen_kwargs)
    picked = select_rank(over, threshold=threshold)
    if any(r == 0 for r in picked):
        return RankSelection(picked, False, True), _zero_estimate(
            tuple(source.dims), over.basis
        )
    ranks, clamped = _clamp_feasible(picked)
    if sparse:
        final = fit_sparse(source, ranks, sparse_modes, row_limits, **fit_kwargs)
    else:
        final = fit_lowrank(source, ranks, **fit_kwargs)
    return RankSelection(ranks, clamped, False), final
