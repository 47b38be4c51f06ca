"""Sharded two-pass execution: per-shard moment sums, per-shard Gram
accumulation, deterministic merge, and a compact wire format.

Shards own contiguous sample windows.  Pass one returns each shard's
moment partial sums over the canonical accumulation blocks, so the merged
moment tensor is bit-identical for any shard count whose boundaries align
with those blocks (the planner aligns them whenever possible).  Pass two
accumulates the m x m Gram matrix and the m-vector of response moments
without ever materializing the n x m reduced design; the merge solves the
combined normal equations with a symmetric positive-definite solve.

Nothing here talks to a network: shards are in-process workers exchanging
serialized results, which is enough to pin down the algebra and the
reproducibility contract.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DegeneracyError, DeterminismError
from .estimator import (
    ACCUM_BLOCK,
    DEFAULT_REFINE,
    REFINE_TOL,
    SketchProjector,
    accumulate_moment_blocks,
    assemble,
    fold_moment_blocks,
    probe_directions,
    refinement_delta,
)
from .samples import sample_checksum
from .tensor_ops import unvec

__all__ = [
    "ShardPlan",
    "make_shard_plan",
    "Pass1Result",
    "ShardResult",
    "shard_pass1",
    "merge_pass1",
    "shard_pass2",
    "merge_and_solve",
    "serialize_shard_result",
    "deserialize_shard_result",
    "sharded_moment_and_gamma",
    "fit_lowrank_sharded",
]

FRAME_MAGIC = b"ISLT"
FRAME_VERSION = 1

# Pass-2 rows are built and folded into the Gram in small fixed batches so
# per-shard memory stays O(p^d + m^2) however many samples stream through.
GRAM_CHUNK = 64


@dataclass
class ShardPlan:
    n: int
    ranges: list  # (lo, hi) pairs, contiguous, disjoint, covering 0..n
    block: int  # accumulation block the boundaries are aligned to


def make_shard_plan(n, shards, block=ACCUM_BLOCK):
    """Split 0..n into ``shards`` contiguous windows.

    Boundaries are rounded up to multiples of the accumulation block so
    the merged pass-1 moment tensor is bit-identical across shard counts.
    When n is too small for that many aligned nonempty shards the plan
    falls back to block=1 (still deterministic, but merged sums then only
    match other plans with the same boundaries).
    """
    n, shards = int(n), int(shards)
    if shards < 1 or n < 1:
        raise ValueError("need n >= 1 and shards >= 1")
    if shards > n:
        raise ValueError(f"more shards ({shards}) than samples ({n})")
    per = -(-n // shards)  # ceil
    aligned = -(-per // block) * block
    if aligned * (shards - 1) >= n:
        block = 1
        aligned = per
    bounds = [min(i * aligned, n) for i in range(shards + 1)]
    bounds[-1] = n
    ranges = [(lo, hi) for lo, hi in zip(bounds, bounds[1:])]
    if any(hi <= lo for lo, hi in ranges):
        raise ValueError("empty shard; reduce the shard count")
    return ShardPlan(n, ranges, block)


@dataclass
class Pass1Result:
    """A shard's moment partials: canonical block sums plus bookkeeping."""

    block_sums: list  # (global block index, vec partial sum) pairs
    count: int
    first_index: int
    first_checksum: str


@dataclass
class ShardResult:
    """A shard's pass-2 normal-equation pieces."""

    gram: np.ndarray
    moment: np.ndarray
    count: int

    @property
    def m(self):
        return self.gram.shape[0]


def shard_pass1(source, lo, hi, block=ACCUM_BLOCK):
    """Sum y_j * X_j over the shard window [lo, hi) in canonical blocks."""
    if hi <= lo:
        raise ValueError("empty shard window")
    sums = list(accumulate_moment_blocks(source, lo, hi, block))
    y0, x0 = source.sample(lo)
    return Pass1Result(sums, hi - lo, lo, sample_checksum(y0, x0))


def merge_pass1(results, n, dims):
    """Merged moment tensor (1/n of the fixed-order fold of all blocks)."""
    indexed = [pair for res in results for pair in res.block_sums]
    total = fold_moment_blocks(indexed, dims)
    if sum(res.count for res in results) != n:
        raise ValueError("shard counts do not cover n")
    return unvec(total / n, dims)


def shard_pass2(source, lo, hi, basis, expected_checksum=None):
    """Accumulate the shard's Gram matrix and response moment.

    Covariates are re-derived from the source (for seeded sources that
    means regeneration from the per-sample counter); when
    ``expected_checksum`` carries the pass-1 record of the shard's first
    sample, regeneration fidelity is verified before any accumulation.
    """
    if hi <= lo:
        raise ValueError("empty shard window")
    if expected_checksum is not None:
        y0, x0 = source.sample(lo)
        got = sample_checksum(y0, x0)
        if got != expected_checksum:
            raise DeterminismError(
                f"shard [{lo}, {hi}) regenerated a different first sample "
                f"(checksum {got} != recorded {expected_checksum})"
            )
    proj = SketchProjector(basis)
    m = proj.m
    gram = np.zeros((m, m))
    moment = np.zeros(m)
    for ys, xs in source.iter_vec_batches(GRAM_CHUNK, lo, hi):
        rows = proj.row_block(xs)
        gram += rows.T @ rows
        moment += rows.T @ ys
    return ShardResult(gram, moment, hi - lo)


def merge_and_solve(results):
    """Combine shard results in shard order and solve the normal equations.

    Raises ``ValueError`` on inconsistent widths and
    :class:`DegeneracyError` when the merged Gram is not comfortably
    positive definite (condition estimate above 1e12).
    """
    if not results:
        raise ValueError("no shard results to merge")
    m = results[0].m
    for i, res in enumerate(results):
        if res.m != m:
            raise ValueError(f"shard {i} reports m={res.m}, expected {m}")
    gram = np.zeros((m, m))
    moment = np.zeros(m)
    for res in results:
        gram += res.gram
        moment += res.moment
    svals = sla.svdvals(gram)
    if svals[-1] <= 0 or svals[0] / svals[-1] > 1e12:
        raise DegeneracyError("merged Gram matrix is numerically singular")
    return sla.solve(gram, moment, assume_a="pos")


def serialize_shard_result(result):
    """Binary frame: magic ``ISLT`` | u32 version | u64 m | row-major f64
    Gram | f64 moment vector | u64 count (little-endian)."""
    m = result.m
    out = bytearray()
    out += FRAME_MAGIC
    out += struct.pack("<I", FRAME_VERSION)
    out += struct.pack("<Q", m)
    out += np.ascontiguousarray(result.gram, dtype="<f8").tobytes()
    out += np.ascontiguousarray(result.moment, dtype="<f8").tobytes()
    out += struct.pack("<Q", result.count)
    return bytes(out)


def deserialize_shard_result(blob):
    if blob[:4] != FRAME_MAGIC:
        raise ValueError("bad shard-result frame (magic mismatch)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FRAME_VERSION:
        raise ValueError(f"unsupported shard-result frame v{version}")
    (m,) = struct.unpack_from("<Q", blob, 8)
    offset = 16
    expected = offset + 8 * m * m + 8 * m + 8
    if len(blob) != expected:
        raise ValueError(f"frame length {len(blob)} != expected {expected}")
    gram = np.frombuffer(blob, dtype="<f8", count=m * m, offset=offset)
    offset += 8 * m * m
    moment = np.frombuffer(blob, dtype="<f8", count=m, offset=offset)
    offset += 8 * m
    (count,) = struct.unpack_from("<Q", blob, offset)
    return ShardResult(
        gram.reshape(m, m).astype(np.float64), moment.astype(np.float64), count
    )


def _shard_sweep_gamma(source, plan, pass1, basis, verify_first_samples):
    """One pass-2 sweep: shard Gram accumulation through the wire format,
    then the merged normal-equation solve."""
    frames = []
    for (lo, hi), rec in zip(plan.ranges, pass1):
        res = shard_pass2(
            source,
            lo,
            hi,
            basis,
            expected_checksum=rec.first_checksum if verify_first_samples else None,
        )
        frames.append(serialize_shard_result(res))
    return merge_and_solve([deserialize_shard_result(b) for b in frames])


def sharded_moment_and_gamma(source, basis, plan, verify_first_samples=True):
    """Run both shard passes under the plan, merge, and solve for gamma.

    Returns (moment tensor, reduced coefficients).  Shard results pass
    through the wire format to keep the in-process path honest about what
    a real deployment would exchange.
    """
    pass1 = [shard_pass1(source, lo, hi, plan.block) for lo, hi in plan.ranges]
    moment = merge_pass1(pass1, source.n, source.dims)
    gamma = _shard_sweep_gamma(source, plan, pass1, basis, verify_first_samples)
    return moment, gamma


def fit_lowrank_sharded(
    source,
    ranks,
    shards,
    max_iters=20,
    tol=1e-6,
    refine=DEFAULT_REFINE,
    refine_tol=REFINE_TOL,
    verify_first_samples=True,
):
    """End-to-end sharded fit: pass-1 shards feed the coordinator's
    direction probe, pass-2 shards feed the merged normal equations.

    Direction probing happens only at the coordinator -- first on the
    merged moment tensor, then on the assembled estimate for each
    refinement sweep -- and only the basis is broadcast back; every sweep
    repeats the sharded Gram pass.  The sweep schedule and stopping rule
    mirror the single-node fit so both paths walk through the same basis
    sequence.  Returns (estimate, plan).
    """
    plan = make_shard_plan(source.n, shards)
    pass1 = [shard_pass1(source, lo, hi, plan.block) for lo, hi in plan.ranges]
    moment = merge_pass1(pass1, source.n, source.dims)
    basis = probe_directions(moment, ranks, max_iters, tol)
    estimate = None
    deltas = []
    stopped_on = None
    for sweep in range(max(0, int(refine)) + 1):
        if sweep:
            basis = probe_directions(estimate.coeff, ranks, max_iters, tol)
        try:
            gamma = _shard_sweep_gamma(
                source, plan, pass1, basis, verify_first_samples
            )
            new = assemble(gamma, basis)
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
            "shards": len(plan.ranges),
            "n_probe": source.n,
            "n_regress": source.n,
            "refine_sweeps": len(deltas),
            "refine_deltas": deltas,
        }
    )
    if stopped_on:
        estimate.diagnostics["refine_stopped_on"] = stopped_on
    return estimate, plan
