"""Group Lasso by cyclic block coordinate descent, plus penalty rules.

The solver minimizes 0.5 * ||y - X g||^2 + eta * sum_j ||g_{G_j}||_2 over
a disjoint group partition of the columns.  Each block takes one exact
proximal step per sweep (gradient from a precomputed Gram matrix, then
group soft-thresholding), which sets inactive blocks to exact zero, so the
reported support needs no tolerance.  Sweeps run in ascending group order
for reproducibility.
"""

import itertools
import math

import numpy as np
from scipy import linalg as sla

from .errors import ConvergenceError

__all__ = [
    "interleaved_groups",
    "group_lasso",
    "group_lasso_objective",
    "kkt_residual",
    "theory_penalty",
    "cross_validate_penalty",
    "check_grip",
]

MAX_SWEEPS = 20000
TOL = 1e-8


def interleaved_groups(p, r):
    """The mode partition: group j = {j, j+p, ..., j+p(r-1)} for j < p.

    Columns of an n x (p*r) design whose rows are vectorized p x r
    matrices; group j collects the coefficients of matrix row j, so group
    sparsity is row sparsity of the folded coefficient matrix.
    """
    return [np.arange(j, p * r, p) for j in range(p)]


def _as_group_list(groups):
    groups = [np.asarray(g, dtype=np.intp) for g in groups]
    seen = np.concatenate(groups) if groups else np.array([], dtype=np.intp)
    if len(np.unique(seen)) != seen.size:
        raise ValueError("groups overlap")
    return groups


def group_lasso_objective(design, response, gamma, groups, eta):
    resid = response - design @ gamma
    penalty = sum(float(np.linalg.norm(gamma[g])) for g in groups)
    return 0.5 * float(resid @ resid) + eta * penalty


def kkt_residual(design, response, gamma, groups, eta):
    """Largest stationarity violation over groups.

    Active groups must satisfy X_g'(y - X gamma) = eta * gamma_g /
    ||gamma_g||; inactive groups must have correlation at most eta.
    """
    corr = design.T @ (response - design @ gamma)
    worst = 0.0
    for g in groups:
        block = gamma[g]
        nrm = np.linalg.norm(block)
        if nrm == 0.0:
            worst = max(worst, float(np.linalg.norm(corr[g])) - eta)
        else:
            worst = max(
                worst, float(np.linalg.norm(corr[g] - eta * block / nrm))
            )
    return max(worst, 0.0)


def group_lasso(design, response, groups, eta, tol=TOL, max_sweeps=MAX_SWEEPS):
    """Solve the group Lasso; returns (coefficients, info dict).

    Convergence is declared when the largest per-block coefficient change
    in a sweep falls below ``tol`` (relative to the coefficient scale) or
    the KKT residual does.  ``info`` carries the final KKT residual, sweep
    count, objective trace, and the active group indices.  Raises
    :class:`ConvergenceError` after ``max_sweeps`` unconverged sweeps.
    With ``eta=0`` and a full-column-rank design this reduces to plain
    least squares.
    """
    design = np.asarray(design, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    groups = _as_group_list(groups)
    if eta < 0:
        raise ValueError("penalty must be nonnegative")

    gram = design.T @ design
    corr0 = design.T @ response
    # Per-block Lipschitz constants (top eigenvalue of the block Gram).
    steps = []
    for g in groups:
        block = gram[np.ix_(g, g)]
        lip = float(sla.eigh(block, eigvals_only=True)[-1])
        steps.append(lip if lip > 0 else 1.0)

    gamma = np.zeros(design.shape[1])
    trace = []
    for sweep in range(max_sweeps):
        max_change = 0.0
        for g, lip in zip(groups, steps):
            grad = corr0[g] - gram[g] @ gamma
            z = gamma[g] + grad / lip
            znorm = np.linalg.norm(z)
            shrink = eta / lip
            new = np.zeros_like(z) if znorm <= shrink else z * (1.0 - shrink / znorm)
            max_change = max(max_change, float(np.linalg.norm(new - gamma[g])))
            gamma[g] = new
        trace.append(group_lasso_objective(design, response, gamma, groups, eta))
        scale = max(1.0, float(np.linalg.norm(gamma)))
        if max_change <= tol * scale:
            break
        if kkt_residual(design, response, gamma, groups, eta) <= tol:
            break
    else:
        raise ConvergenceError(
            f"group lasso did not converge in {max_sweeps} sweeps",
            kkt_residual=kkt_residual(design, response, gamma, groups, eta),
        )
    active = [j for j, g in enumerate(groups) if np.linalg.norm(gamma[g]) > 0]
    info = {
        "kkt_residual": kkt_residual(design, response, gamma, groups, eta),
        "sweeps": sweep + 1,
        "objective_trace": trace,
        "active_groups": active,
    }
    return gamma, info


def theory_penalty(n_regress, rank, dim, noise_scale, c0=1.0):
    """Penalty level c0 * scale * sqrt(n * (r + log p)).

    ``noise_scale`` should estimate the per-sample noise of the reduced
    sparse regression (observation noise plus whatever signal the current
    directions miss); the root mean square response is an always-valid
    conservative stand-in.  ``c0`` defaults to 1 and is the knob a
    calibration sweep or cross-validation would tune.
    """
    if min(n_regress, rank, dim) <= 0 or noise_scale < 0:
        raise ValueError("penalty inputs must be positive")
    return c0 * noise_scale * math.sqrt(n_regress * (rank + math.log(dim)))


def cross_validate_penalty(design, response, groups, grid, folds=5, tol=1e-8):
    """Pick a penalty from ``grid`` by K-fold CV with the one-SE rule.

    Folds are contiguous, deterministic slices.  Among grid values whose
    mean held-out error is within one standard error of the best, the
    largest (sparsest) penalty wins.  Returns (penalty, table) where the
    table maps penalty -> (mean error, se).
    """
    design = np.asarray(design, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    n = design.shape[0]
    if folds < 2 or folds > n:
        raise ValueError("bad fold count")
    grid = sorted(float(g) for g in grid)
    bounds = [round(i * n / folds) for i in range(folds + 1)]
    table = {}
    for eta in grid:
        errs = []
        for i in range(folds):
            lo, hi = bounds[i], bounds[i + 1]
            mask = np.ones(n, dtype=bool)
            mask[lo:hi] = False
            # Per-fold penalties scale with the training size so each fold
            # solves the same strength problem.
            eta_fold = eta * mask.sum() / n
            coef, _ = group_lasso(
                design[mask], response[mask], groups, eta_fold, tol=tol
            )
            held = response[lo:hi] - design[lo:hi] @ coef
            errs.append(float(held @ held) / max(1, hi - lo))
        errs = np.asarray(errs)
        table[eta] = (float(errs.mean()), float(errs.std(ddof=1) / math.sqrt(folds)))
    best = min(table, key=lambda e: table[e][0])
    ceiling = table[best][0] + table[best][1]
    chosen = max(e for e in grid if table[e][0] <= ceiling)
    return chosen, table


def check_grip(design, groups, max_active, delta):
    """Exhaustive group restricted-isometry check.

    Verifies n(1-delta)||v||^2 <= ||X v||^2 <= n(1+delta)||v||^2 for every
    v supported on at most ``max_active`` groups, by enumerating all such
    supports and bounding each submatrix's extreme singular values.
    Returns (holds, report); the report carries the worst normalized
    squared singular values and the supports achieving them.  Only tiny
    problems are allowed (<= 12 groups, max_active <= 3): the check is
    combinatorial by nature.
    """
    design = np.asarray(design, dtype=np.float64)
    groups = _as_group_list(groups)
    n = design.shape[0]
    if len(groups) > 12 or max_active > 3:
        raise ValueError(
            f"exhaustive check limited to <= 12 groups and <= 3 active "
            f"(got {len(groups)} groups, {max_active} active)"
        )
    worst_low, worst_high = math.inf, -math.inf
    arg_low = arg_high = None
    for size in range(1, max_active + 1):
        for combo in itertools.combinations(range(len(groups)), size):
            cols = np.concatenate([groups[j] for j in combo])
            svals = sla.svdvals(design[:, cols])
            low = float(svals[-1] ** 2) / n
            high = float(svals[0] ** 2) / n
            if low < worst_low:
                worst_low, arg_low = low, combo
            if high > worst_high:
                worst_high, arg_high = high, combo
    holds = worst_low >= 1.0 - delta and worst_high <= 1.0 + delta
    report = {
        "worst_lower": worst_low,
        "worst_upper": worst_high,
        "lower_support": arg_low,
        "upper_support": arg_high,
        "delta": float(delta),
    }
    return holds, report
