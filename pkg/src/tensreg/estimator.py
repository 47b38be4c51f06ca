"""Sketched low-Tucker-rank tensor regression (dense path).

The estimator runs in three stages, each stage streaming the data:

1. Pass one accumulates the response-covariate moment tensor
   (1/n) sum_j y_j X_j and probes per-mode sketching directions from it
   via orthogonal iteration (:func:`probe_directions`).
2. Pass two projects every covariate tensor onto those directions,
   producing an n x m reduced design with one core ("body") block and one
   complement ("arm") block per mode, where
   m = prod(r_k) + sum_k r_k (p_k - r_k); the reduced system is solved by
   least squares (:func:`solve_reduced`).
3. :func:`assemble` lifts the reduced coefficients back to the full
   coefficient tensor through the per-mode alignment factors.

The initial directions carry the full sampling error of the moment
tensor, and whatever part of the signal they miss acts as extra noise on
the reduced regression. :func:`fit_lowrank` therefore refines: it
re-probes directions from the assembled estimate (an exact low-rank
object, so probing it is cheap and does not touch the data) and repeats
the projection pass, stopping once the estimate stops moving. Each sweep
costs one additional pass over the samples; the moment pass never runs
again. Memory stays O(prod(p) + n*m) throughout -- the raw design is
never materialized.

Matrices (order-2 inputs) take a specialized probing step: the two bases
come from the moment matrix and its transpose directly, and the core
rotations are trivial.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import DataError, DegeneracyError
from .samples import SampleSource
from .tensor_ops import (
    hs_norm,
    kron_skipping,
    matricize,
    mode_product,
    orth_complement,
    qr_orth,
    tensorize,
    thin_svd,
    unvec,
    vec,
)
from .tucker import check_ranks, hooi, sparse_hooi

__all__ = [
    "SketchBasis",
    "SketchedSystem",
    "Estimate",
    "covariance_tensor",
    "probe_directions",
    "build_sketched_system",
    "solve_reduced",
    "assemble",
    "split_source",
    "fit_lowrank",
    "reduced_dimension",
    "DEFAULT_REFINE",
    "REFINE_TOL",
]

# Condition-number ceiling before a solve is declared degenerate.
COND_LIMIT = 1e12

# Canonical accumulation block: moment sums are folded block-by-block in a
# fixed global blocking so that any sharding aligned to these blocks
# reproduces the single-node sum bit for bit.
ACCUM_BLOCK = 64

# Default refinement schedule: up to this many re-probe sweeps, stopping
# early when the relative change of the assembled estimate drops below the
# tolerance. Convergence is quadratic once the directions are in the right
# basin; the generous cap only matters for instances that linger near the
# basin boundary first.
DEFAULT_REFINE = 40
REFINE_TOL = 1e-9


@dataclass
class SketchBasis:
    """Per-mode sketching directions.

    ``factors`` holds the estimated mode bases (p_k x r_k), ``complements``
    their orthocomplements (p_k x (p_k - r_k), materialized once),
    ``rotations`` the core-side orthonormal rotations (prod r_l (l != k)
    x r_k), and ``wides`` the induced ambient right factors
    kron(factors, skipping k, descending) @ rotations[k].
    """

    dims: tuple
    ranks: tuple
    factors: list
    complements: list
    rotations: list
    wides: list

    @property
    def order(self):
        return len(self.dims)


@dataclass
class SketchedSystem:
    """Reduced design with labeled column blocks and the response vector."""

    design: np.ndarray
    response: np.ndarray
    blocks: list  # (label, start, stop) triples partitioning the columns
    dims: tuple
    ranks: tuple

    @property
    def m(self):
        return self.design.shape[1]

    def block(self, label):
        for name, lo, hi in self.blocks:
            if name == label:
                return self.design[:, lo:hi]
        raise KeyError(label)


@dataclass
class Estimate:
    """Assembled estimate plus the pieces it was assembled from."""

    coeff: np.ndarray
    core: np.ndarray
    arm_blocks: list  # per-mode (p_k - r_k) x r_k complement coefficients
    reduced_coef: np.ndarray
    basis: SketchBasis
    diagnostics: dict = field(default_factory=dict)


def reduced_dimension(dims, ranks):
    """Number of reduced parameters: prod(r) + sum_k r_k (p_k - r_k)."""
    dims = tuple(int(d) for d in dims)
    ranks = tuple(int(r) for r in ranks)
    return int(np.prod(ranks)) + sum(r * (p - r) for p, r in zip(dims, ranks))


def block_layout(dims, ranks):
    """Column block boundaries of the reduced design: body then one arm
    block per mode."""
    blocks = [("body", 0, int(np.prod(ranks)))]
    pos = blocks[0][2]
    for k, (p, r) in enumerate(zip(dims, ranks)):
        blocks.append((f"arm{k}", pos, pos + r * (p - r)))
        pos = blocks[-1][2]
    return blocks


def accumulate_moment_blocks(source, start=0, stop=None, block=ACCUM_BLOCK):
    """Yield (block_index, sum of y_j * vec(X_j) over the block) pairs.

    Blocks are global: block i covers samples [i*block, (i+1)*block) of the
    underlying index range, independent of who iterates which window, so
    partial sums can be merged in block order with bit-identical results.
    ``start`` must sit on a block boundary.
    """
    stop = source.n if stop is None else stop
    if start % block != 0:
        raise ValueError(f"start {start} not aligned to accumulation block {block}")
    lo = start
    for ys, xs in source.iter_vec_batches(block, start, stop):
        if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(xs))):
            raise DataError(f"non-finite sample in block starting at {lo}")
        yield lo // block, ys @ xs
        lo += len(ys)


def fold_moment_blocks(indexed_sums, dims):
    """Fold (block_index, partial vec sum) pairs in ascending block order."""
    total = np.zeros(int(np.prod(dims)))
    count = 0
    last = -1
    for idx, partial in sorted(indexed_sums, key=lambda pair: pair[0]):
        if idx <= last:
            raise ValueError(f"duplicate accumulation block {idx}")
        last = idx
        total += partial
        count += 1
    if count == 0:
        raise ValueError("no blocks to fold")
    return total


def covariance_tensor(source):
    """Pass one: the moment tensor (1/n) sum_j y_j X_j.

    This is the covariance between response and covariate entries under a
    standardized design, and its leading Tucker structure estimates the
    coefficient tensor's singular subspaces.
    """
    if source.n < 1:
        raise ValueError("empty sample source")
    total = fold_moment_blocks(accumulate_moment_blocks(source), source.dims)
    return unvec(total / source.n, source.dims)


def probe_directions(
    cov, ranks, max_iters=20, tol=1e-6, sparse_modes=None, row_limits=None
):
    """Estimate sketching directions from the moment tensor.

    Order-2 inputs use direct SVDs of the moment matrix and its transpose
    (rotations are identities and each wide factor is the other basis).
    Higher orders run orthogonal iteration -- the row-sparse variant when
    ``sparse_modes`` is given -- and then orthonormalize the transposed
    unfoldings of the projected core to get the rotations.
    """
    cov = np.asarray(cov, dtype=np.float64)
    dims = cov.shape
    ranks = check_ranks(dims, ranks)
    d = len(dims)
    if d == 2:
        if ranks[0] != ranks[1]:
            raise ValueError("matrix problems need equal row and column ranks")
        r = ranks[0]
        u1, _, _ = thin_svd(cov, r)
        u2, _, _ = thin_svd(cov.T, r)
        factors = [u1, u2]
        rotations = [np.eye(r), np.eye(r)]
        wides = [u2, u1]
    else:
        if sparse_modes:
            fact = sparse_hooi(cov, ranks, sparse_modes, row_limits, max_iters, tol)
        else:
            fact = hooi(cov, ranks, max_iters, tol)
        factors = fact.factors
        rotations = [qr_orth(matricize(fact.core, k).T) for k in range(d)]
        wides = [kron_skipping(factors, k) @ rotations[k] for k in range(d)]
    complements = [orth_complement(u) for u in factors]
    return SketchBasis(tuple(dims), ranks, factors, complements, rotations, wides)


class SketchProjector:
    """Precomputed projections turning one covariate tensor into reduced rows.

    Shared by the in-core system builder and the sharded accumulator so
    both produce identical rows.
    """

    def __init__(self, basis):
        self.basis = basis
        self.dims = basis.dims
        self.ranks = basis.ranks
        self.blocks = block_layout(self.dims, self.ranks)
        self.m = reduced_dimension(self.dims, self.ranks)

    def _projected_except(self, x, skip):
        out = x
        for l in range(len(self.dims)):
            if l != skip:
                out = mode_product(out, self.basis.factors[l].T, l)
        return out

    def row(self, x):
        """Reduced covariate row: [vec core projection | per-mode arm vecs]."""
        if x.shape != self.dims:
            raise ValueError(f"covariate shape {x.shape} does not match {self.dims}")
        parts = []
        body = self._projected_except(x, skip=-1)
        parts.append(vec(body))
        for k in range(len(self.dims)):
            partial = matricize(self._projected_except(x, skip=k), k)
            arm = self.basis.complements[k].T @ partial @ self.basis.rotations[k]
            parts.append(vec(arm))
        return np.concatenate(parts)

    def _batch_tensor(self, xs_vec):
        # Row j holds vec(X_j) in column-major order; undo it batch-wide.
        b, d = xs_vec.shape[0], len(self.dims)
        rev = xs_vec.reshape((b,) + self.dims[::-1])
        return rev.transpose((0,) + tuple(range(d, 0, -1)))

    def _batch_project(self, t, skip):
        out = t
        for l in range(len(self.dims)):
            if l != skip:
                out = np.moveaxis(
                    np.tensordot(out, self.basis.factors[l], axes=(l + 1, 0)),
                    -1,
                    l + 1,
                )
        return out

    @staticmethod
    def _batch_vec(t):
        b, d = t.shape[0], t.ndim - 1
        return t.transpose((0,) + tuple(range(d, 0, -1))).reshape(b, -1)

    @staticmethod
    def _batch_matricize(t, mode):
        b = t.shape[0]
        w = np.moveaxis(t, mode + 1, 1)
        w = w.transpose((0, 1) + tuple(range(w.ndim - 1, 1, -1)))
        return w.reshape(b, w.shape[1], -1)

    def row_block(self, xs_vec):
        """Rows for a batch of vectorized covariates (batch x prod dims).

        Batched counterpart of :meth:`row`; the two agree to rounding.
        """
        t = self._batch_tensor(np.asarray(xs_vec, dtype=np.float64))
        parts = [self._batch_vec(self._batch_project(t, skip=-1))]
        for k in range(len(self.dims)):
            partial = self._batch_matricize(self._batch_project(t, skip=k), k)
            arm = self.basis.complements[k].T @ partial @ self.basis.rotations[k]
            parts.append(arm.transpose(0, 2, 1).reshape(t.shape[0], -1))
        return np.concatenate(parts, axis=1)


def build_sketched_system(source, basis):
    """Pass two: materialize the n x m reduced design and response."""
    if tuple(source.dims) != tuple(basis.dims):
        raise ValueError(
            f"source dims {tuple(source.dims)} do not match basis {basis.dims}"
        )
    proj = SketchProjector(basis)
    n = source.n
    design = np.empty((n, proj.m))
    response = np.empty(n)
    row = 0
    for ys, xs in source.iter_vec_batches(ACCUM_BLOCK):
        design[row : row + len(ys)] = proj.row_block(xs)
        response[row : row + len(ys)] = ys
        row += len(ys)
    return SketchedSystem(design, response, proj.blocks, basis.dims, basis.ranks)


def _name_weak_block(blocks, direction):
    """Label of the column block carrying the most mass of a null direction."""
    best, best_mass = blocks[0][0], -1.0
    for name, lo, hi in blocks:
        mass = float(np.linalg.norm(direction[lo:hi]))
        if mass > best_mass:
            best, best_mass = name, mass
    return best


def solve_reduced(system):
    """Least squares on the reduced system via economy QR.

    Raises :class:`DegeneracyError` (naming the offending column block)
    when the design's condition estimate exceeds ``COND_LIMIT`` and a
    ``ValueError`` when there are fewer rows than columns.
    """
    design, response = system.design, system.response
    n, m = design.shape
    if n < m:
        raise ValueError(f"underdetermined reduced system: n={n} < m={m}")
    q, r = np.linalg.qr(design)
    svals = sla.svdvals(r)
    cond = math.inf if svals[-1] == 0 else float(svals[0] / svals[-1])
    if cond > COND_LIMIT:
        # Point at the block aligned with the near-null direction.
        _, _, vt = sla.svd(r)
        weak = _name_weak_block(system.blocks, vt[-1])
        raise DegeneracyError(
            f"reduced design ill-conditioned (cond ~ {cond:.2e}); "
            f"weak direction concentrates in block '{weak}'",
            detail=weak,
        )
    gamma = sla.solve_triangular(r, q.T @ response)
    return gamma


def split_reduced_coef(gamma, dims, ranks):
    """Cut the reduced coefficient vector into the core tensor and the
    per-mode complement blocks."""
    blocks = block_layout(dims, ranks)
    _, lo, hi = blocks[0]
    core = unvec(gamma[lo:hi], ranks)
    arms = []
    for (name, lo, hi), (p, r) in zip(blocks[1:], zip(dims, ranks)):
        arms.append(unvec(gamma[lo:hi], (p - r, r)))
    return core, arms


def assemble(gamma, basis):
    """Lift reduced coefficients to the full coefficient tensor.

    For each mode the core block and arm block combine into an alignment
    factor L_k = (U_k C_k + Ucomp_k D_k) C_k^{-1} with C_k the rotated
    core unfolding; the estimate is the core tensor hit by every L_k.
    A near-singular C_k raises :class:`DegeneracyError` with the mode.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    dims, ranks = basis.dims, basis.ranks
    if gamma.size != reduced_dimension(dims, ranks):
        raise ValueError("reduced coefficient length does not match basis")
    core, arms = split_reduced_coef(gamma, dims, ranks)
    coeff = core
    leverage = []
    conds = []
    for k in range(len(dims)):
        rotated_core = matricize(core, k) @ basis.rotations[k]  # r_k x r_k
        svals = sla.svdvals(rotated_core)
        cond = math.inf if svals[-1] == 0 else float(svals[0] / svals[-1])
        conds.append(cond)
        if cond > COND_LIMIT:
            raise DegeneracyError(
                f"rotated core block at mode {k} is numerically singular "
                f"(cond ~ {cond:.2e})",
                detail=k,
            )
        lifted = basis.factors[k] @ rotated_core + basis.complements[k] @ arms[k]
        # L_k = lifted @ rotated_core^{-1}, computed by a solve.
        align = sla.solve(rotated_core.T, lifted.T).T
        if arms[k].size:
            lev = float(np.linalg.norm(arms[k] @ sla.inv(rotated_core), 2))
        else:
            lev = 0.0  # mode fitted at full dimension: no arm rows
        leverage.append(lev)
        coeff = mode_product(coeff, align, k)
    diagnostics = {"core_conditions": conds, "arm_leverage": leverage}
    return Estimate(coeff, core, arms, gamma, basis, diagnostics)


def split_source(source, split):
    """Cut a source into (probe window, regression window).

    ``split=None`` reuses the full source for both; ``split=f`` hands the
    first ceil(f*n) samples to probing and the rest to regression (sources
    are treated as pre-shuffled, so the deterministic prefix cut is an
    honest random split).
    """
    if split is None:
        return source, source
    if not 0.0 < split < 1.0:
        raise ValueError("split fraction must be in (0, 1)")
    cut = math.ceil(split * source.n)
    if cut == 0 or cut >= source.n:
        raise ValueError("split leaves an empty pass")
    return source.subrange(0, cut), source.subrange(cut, source.n)


def refinement_delta(new_coeff, old_coeff):
    """Relative movement of the assembled estimate between sweeps."""
    scale = max(hs_norm(new_coeff), np.finfo(np.float64).tiny)
    return float(hs_norm(new_coeff - old_coeff) / scale)


def fit_lowrank(
    source,
    ranks,
    max_iters=20,
    tol=1e-6,
    split=None,
    sparse_modes=None,
    row_limits=None,
    refine=DEFAULT_REFINE,
    refine_tol=REFINE_TOL,
):
    """End-to-end streaming fit on a sample source.

    One moment pass probes the initial directions; the regression pass is
    then repeated under refined directions (re-probed from the assembled
    estimate, which never touches the data) until the estimate moves less
    than ``refine_tol`` in relative norm or ``refine`` extra sweeps have
    run. A sweep that turns degenerate stops refinement and keeps the last
    healthy estimate rather than discarding it.

    By default both windows consume every sample, which is also the
    empirically stronger choice; see :func:`split_source` for ``split``.
    """
    if not isinstance(source, SampleSource):
        raise TypeError("source must be a SampleSource")
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
            system = build_sketched_system(second, basis)
            gamma = solve_reduced(system)
            new = assemble(gamma, basis)
        except DegeneracyError:
            if estimate is None:
                raise
            stopped_on = "degenerate sweep"
            break
        resid = float(np.linalg.norm(system.response - system.design @ gamma))
        if estimate is not None:
            deltas.append(refinement_delta(new.coeff, estimate.coeff))
        estimate = new
        estimate.diagnostics["residual_norm"] = resid
        if deltas and deltas[-1] < refine_tol:
            break
    estimate.diagnostics.update(
        {
            "n_probe": first.n,
            "n_regress": second.n,
            "reduced_dim": reduced_dimension(basis.dims, basis.ranks),
            "refine_sweeps": len(deltas),
            "refine_deltas": deltas,
        }
    )
    if stopped_on:
        estimate.diagnostics["refine_stopped_on"] = stopped_on
    return estimate
