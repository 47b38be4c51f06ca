"""Seeded data generators, error metrics, and experiment drivers.

Every generator hangs off one integer seed through fixed stream tags, so
a (config, seed) pair pins down every emitted number.  Coefficient
tensors, row supports, and dense perturbations draw from separate streams
to keep designs comparable across variants: for a fixed (seed, n, rep)
the covariates and noise are identical across perturbation levels, shard
counts, and split fractions, which is what makes the sweep comparisons
sharp at moderate repetition counts.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .distributed import fit_lowrank_sharded
from .errors import ConvergenceError, DataError, DegeneracyError
from .estimator import fit_lowrank
from .rank_selection import fit_with_rank_selection
from .samples import InMemorySamples, SeededGaussianSource, _key_from_seed
from .sparse_estimator import fit_sparse
from .tensor_ops import hs_norm, multi_mode_product
from .tucker import check_ranks

__all__ = [
    "generate_regular",
    "generate_sparse",
    "generate_approx_lowrank",
    "rmse",
    "ExperimentConfig",
    "run_experiment",
    "EXPERIMENT_MODES",
    "SUMMARY_SCHEMA_VERSION",
]

# Stream tags (stream 1 is the design/noise stream used by the sampler).
STREAM_COEFF = 0
STREAM_SUPPORT = 2
STREAM_PERTURB = 3

EXPERIMENT_MODES = (
    "regular",
    "sparse",
    "approx_lowrank",
    "rank_select",
    "parallel_sweep",
    "split_compare",
)

SUMMARY_SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "mode",
    "p",
    "r",
    "n",
    "sigma",
    "rep",
    "seed",
    "rmse",
    "wall_ms",
    "rank_selected",
    "notes",
)


def _stream_rng(seed, stream):
    return np.random.Generator(np.random.Philox(key=_key_from_seed(seed, stream)))


def _draw_tensor(rng, shape):
    flat = rng.standard_normal(int(np.prod(shape)))
    return flat.reshape(shape, order="F")


def _core_and_frames(rng, dims, ranks, row_counts=None, support_rng=None):
    """Gaussian core plus per-mode frame matrices (optionally row-sparse).

    With row_counts the k-th frame has exactly row_counts[k] nonzero rows
    on a uniformly drawn, ascending support; row_counts[k] == p_k keeps
    the dense draw bit-for-bit (the support degenerates to all rows).
    """
    core = _draw_tensor(rng, tuple(ranks))
    frames, supports = [], []
    for k, (p, r) in enumerate(zip(dims, ranks)):
        s = p if row_counts is None else int(row_counts[k])
        bar = _draw_tensor(rng, (s, r))
        if s == p:
            frames.append(bar)
            supports.append(np.arange(p))
        else:
            rows = np.sort(support_rng.choice(p, size=s, replace=False))
            frame = np.zeros((p, r))
            frame[rows] = bar
            frames.append(frame)
            supports.append(rows)
    return core, frames, supports


def generate_regular(dims, ranks, n, sigma, seed):
    """Coefficient tensor with exact Tucker ranks plus its seeded sampler.

    The core and the per-mode frames all have i.i.d. standard normal
    entries (frames are deliberately not orthonormalized), the sampler
    yields y_j = <X_j, coeff> + noise with standard normal covariate
    entries and N(0, sigma^2) noise.

    Returns (coeff, source).
    """
    dims = tuple(int(p) for p in dims)
    ranks = check_ranks(dims, ranks)
    rng = _stream_rng(seed, STREAM_COEFF)
    core, frames, _ = _core_and_frames(rng, dims, ranks)
    coeff = multi_mode_product(core, frames)
    return coeff, SeededGaussianSource(coeff, n, sigma, seed)


def generate_sparse(dims, ranks, row_counts, n, sigma, seed):
    """Row-sparse variant: mode-k frames supported on row_counts[k] rows.

    Returns (coeff, source, supports) with supports the list of ascending
    nonzero-row index arrays.  With row_counts == dims the output matches
    :func:`generate_regular` bit-for-bit.
    """
    dims = tuple(int(p) for p in dims)
    ranks = check_ranks(dims, ranks)
    row_counts = [int(s) for s in row_counts]
    if len(row_counts) != len(dims):
        raise ValueError("row_counts must give one row budget per mode")
    for k, (p, r, s) in enumerate(zip(dims, ranks, row_counts)):
        if not r <= s <= p:
            raise ValueError(
                f"mode {k} row budget {s} outside [rank {r}, dimension {p}]"
            )
    rng = _stream_rng(seed, STREAM_COEFF)
    support_rng = _stream_rng(seed, STREAM_SUPPORT)
    core, frames, supports = _core_and_frames(rng, dims, ranks, row_counts, support_rng)
    coeff = multi_mode_product(core, frames)
    return coeff, SeededGaussianSource(coeff, n, sigma, seed), supports


def generate_approx_lowrank(dims, ranks, tau, n, sigma, seed):
    """Exactly low-rank base plus a dense Gaussian perturbation.

    The perturbation is tau * |base|_HS * Z / q with i.i.d. standard
    normal Z and q the total entry count, so its HS norm concentrates at
    tau * |base|_HS / sqrt(q).  tau=0 reproduces generate_regular exactly,
    and the perturbation direction is shared across tau for a fixed seed.

    Returns (coeff, source).
    """
    if tau < 0:
        raise ValueError(f"perturbation level must be >= 0, got {tau}")
    dims = tuple(int(p) for p in dims)
    ranks = check_ranks(dims, ranks)
    rng = _stream_rng(seed, STREAM_COEFF)
    core, frames, _ = _core_and_frames(rng, dims, ranks)
    base = multi_mode_product(core, frames)
    bump = _draw_tensor(_stream_rng(seed, STREAM_PERTURB), dims)
    coeff = base + tau * hs_norm(base) * bump / int(np.prod(dims))
    return coeff, SeededGaussianSource(coeff, n, sigma, seed)


def rmse(estimate, truth):
    """Relative HS error |estimate - truth|_HS / |truth|_HS."""
    scale = hs_norm(truth)
    if scale == 0:
        raise ValueError("truth tensor is zero; relative error undefined")
    return float(hs_norm(np.asarray(estimate) - np.asarray(truth)) / scale)


@dataclass
class ExperimentConfig:
    """One sweep: a mode, its problem sizes, and the seeding policy."""

    dims: tuple
    ranks: tuple
    noise: float = 0.0
    sample_sizes: tuple = (1000,)
    reps: int = 1
    seed: int = 0
    mode: str = "regular"
    row_counts: tuple = None  # sparse mode row budgets
    sparse_modes: tuple = None  # defaults to every mode when row_counts given
    tau_grid: tuple = (0.0, 0.1, 0.3, 0.5)
    split_fractions: tuple = (0.5,)
    shard_counts: tuple = (1, 4)
    r_ini: int = None
    threshold: float = 3.0
    fit_options: dict = field(default_factory=dict)

    def validate(self):
        if self.mode not in EXPERIMENT_MODES:
            raise ValueError(f"unknown mode {self.mode!r}; pick from {EXPERIMENT_MODES}")
        dims = tuple(int(p) for p in self.dims)
        if any(p < 1 for p in dims):
            raise ValueError(f"dimensions must be positive, got {dims}")
        check_ranks(dims, self.ranks)
        if self.noise < 0:
            raise ValueError("noise level must be >= 0")
        if self.reps < 1:
            raise ValueError("need at least one repetition")
        if any(int(n) < 1 for n in self.sample_sizes):
            raise ValueError("sample sizes must be positive")
        if self.mode == "sparse" and self.row_counts is None:
            raise ValueError("sparse mode needs row_counts")
        if self.mode == "approx_lowrank" and any(t < 0 for t in self.tau_grid):
            raise ValueError("tau grid must be nonnegative")
        if self.mode == "parallel_sweep" and any(b < 1 for b in self.shard_counts):
            raise ValueError("shard counts must be positive")
        if self.mode == "split_compare" and any(
            not 0 < f < 1 for f in self.split_fractions
        ):
            raise ValueError("split fractions must lie strictly inside (0, 1)")
        if self.r_ini is not None and self.r_ini < 1:
            raise ValueError("initial rank guess must be >= 1")
        return self


def _fmt_sizes(values):
    values = [int(v) for v in values]
    if all(v == values[0] for v in values):
        return str(values[0])
    return "x".join(str(v) for v in values)


def _rep_seed(base, n, rep):
    """Per-repetition seed: deterministic, distinct, variant-independent."""
    ss = np.random.SeedSequence(entropy=(int(base), int(n), int(rep)))
    return int(ss.generate_state(1, np.uint64)[0])


def _variants(cfg):
    """(label, payload) pairs fitted on common data within each rep."""
    if cfg.mode == "approx_lowrank":
        return [(f"tau={tau:g}", tau) for tau in cfg.tau_grid]
    if cfg.mode == "parallel_sweep":
        return [(f"shards={b}", int(b)) for b in cfg.shard_counts]
    if cfg.mode == "split_compare":
        arms = [("split=none", None)]
        arms += [(f"split={f:g}", float(f)) for f in cfg.split_fractions]
        return arms
    return [("", None)]


# Staging budget for the timed fits.  Materializing the seeded stream
# before the clock starts keeps data generation out of the measured wall
# time; a stream too large for the budget is fitted directly from the
# seeded source (regeneration then lands inside the measurement).
MATERIALIZE_BUDGET_BYTES = 1 << 29


def _staged(source):
    needed = source.n * (int(np.prod(source.dims)) + 1) * 8
    if needed <= MATERIALIZE_BUDGET_BYTES:
        return InMemorySamples.materialize(source)
    return source


def _run_one(cfg, n, rep_seed, label, payload):
    """Generate, fit, and score a single cell; returns a result dict.

    Only the fit is timed: the coefficient tensor is drawn and the sample
    stream staged in memory (budget permitting) before the clock starts,
    so the wall column measures estimation -- both passes, decomposition,
    solves, and assembly -- rather than data synthesis.
    """
    dims, ranks, sigma = cfg.dims, cfg.ranks, cfg.noise
    rank_selected = ""
    if cfg.mode == "sparse":
        modes = cfg.sparse_modes
        if modes is None:
            modes = tuple(range(len(dims)))
        truth, source, _ = generate_sparse(dims, ranks, cfg.row_counts, n, sigma, rep_seed)
        source = _staged(source)
        start = time.perf_counter()
        est = fit_sparse(
            source, ranks, modes, list(cfg.row_counts), **cfg.fit_options
        )
        wall = time.perf_counter() - start
    elif cfg.mode == "approx_lowrank":
        truth, source = generate_approx_lowrank(dims, ranks, payload, n, sigma, rep_seed)
        source = _staged(source)
        start = time.perf_counter()
        est = fit_lowrank(source, ranks, **cfg.fit_options)
        wall = time.perf_counter() - start
    elif cfg.mode == "rank_select":
        truth, source = generate_regular(dims, ranks, n, sigma, rep_seed)
        r_ini = cfg.r_ini if cfg.r_ini is not None else max(1, min(cfg.dims) // 3)
        source = _staged(source)
        start = time.perf_counter()
        selection, est = fit_with_rank_selection(
            source, r_ini, cfg.threshold, **cfg.fit_options
        )
        wall = time.perf_counter() - start
        rank_selected = _fmt_sizes(selection.ranks)
    elif cfg.mode == "parallel_sweep":
        truth, source = generate_regular(dims, ranks, n, sigma, rep_seed)
        source = _staged(source)
        start = time.perf_counter()
        est, _ = fit_lowrank_sharded(source, ranks, payload, **cfg.fit_options)
        wall = time.perf_counter() - start
    elif cfg.mode == "split_compare":
        truth, source = generate_regular(dims, ranks, n, sigma, rep_seed)
        source = _staged(source)
        start = time.perf_counter()
        est = fit_lowrank(source, ranks, split=payload, **cfg.fit_options)
        wall = time.perf_counter() - start
    else:
        truth, source = generate_regular(dims, ranks, n, sigma, rep_seed)
        source = _staged(source)
        start = time.perf_counter()
        est = fit_lowrank(source, ranks, **cfg.fit_options)
        wall = time.perf_counter() - start
    return {
        "rmse": rmse(est.coeff, truth),
        "wall_ms": wall * 1e3,
        "rank_selected": rank_selected,
        "notes": label,
    }


def run_experiment(cfg):
    """Run the sweep; returns (rows, summary).

    Rows follow the CSV schema (one dict per rep and variant, ordered by
    (n, rep)); the summary aggregates mean/std error per (n, variant)
    cell.  Numerical failures inside a cell are recorded in its notes
    column with a NaN error and do not abort the sweep.
    """
    cfg.validate()
    rows = []
    p_label, r_label = _fmt_sizes(cfg.dims), _fmt_sizes(cfg.ranks)
    for n in cfg.sample_sizes:
        n = int(n)
        for rep in range(cfg.reps):
            rep_seed = _rep_seed(cfg.seed, n, rep)
            for label, payload in _variants(cfg):
                try:
                    cell = _run_one(cfg, n, rep_seed, label, payload)
                except (DegeneracyError, ConvergenceError, DataError) as exc:
                    note = f"{type(exc).__name__}: {exc}"
                    cell = {
                        "rmse": float("nan"),
                        "wall_ms": float("nan"),
                        "rank_selected": "",
                        "notes": f"{label}; {note}" if label else note,
                    }
                rows.append(
                    {
                        "mode": cfg.mode,
                        "p": p_label,
                        "r": r_label,
                        "n": n,
                        "sigma": cfg.noise,
                        "rep": rep,
                        "seed": rep_seed,
                        **cell,
                    }
                )
    return rows, summarize(cfg, rows)


def summarize(cfg, rows):
    """Aggregate rows into the versioned JSON-ready summary."""
    cells = {}
    for row in rows:
        key = (row["n"], row["notes"] if not _is_error_note(row) else _variant_of(row))
        cells.setdefault(key, []).append(row)
    table = []
    for (n, label) in sorted(cells, key=lambda key: (key[0], str(key[1]))):
        bucket = cells[(n, label)]
        errors = np.array([row["rmse"] for row in bucket], dtype=float)
        walls = np.array([row["wall_ms"] for row in bucket], dtype=float)
        ok = np.isfinite(errors)
        table.append(
            {
                "n": n,
                "variant": label,
                "reps": len(bucket),
                "failed": int((~ok).sum()),
                "mean_rmse": float(np.mean(errors[ok])) if ok.any() else None,
                "std_rmse": float(np.std(errors[ok])) if ok.any() else None,
                "mean_wall_ms": float(np.mean(walls[ok])) if ok.any() else None,
            }
        )
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "mode": cfg.mode,
        "p": _fmt_sizes(cfg.dims),
        "r": _fmt_sizes(cfg.ranks),
        "sigma": cfg.noise,
        "reps": cfg.reps,
        "seed": cfg.seed,
        "cells": table,
    }
    sizes = sorted({int(n) for n in cfg.sample_sizes})
    if len(sizes) >= 2:
        ratios = []
        for lo, hi in zip(sizes, sizes[1:]):
            lo_cells = [c for c in table if c["n"] == lo and c["mean_wall_ms"]]
            hi_cells = [c for c in table if c["n"] == hi and c["mean_wall_ms"]]
            if lo_cells and hi_cells:
                lo_ms = float(np.mean([c["mean_wall_ms"] for c in lo_cells]))
                hi_ms = float(np.mean([c["mean_wall_ms"] for c in hi_cells]))
                ratios.append({"n_small": lo, "n_large": hi, "wall_ratio": hi_ms / lo_ms})
        summary["wall_ratios"] = ratios
    return summary


def _is_error_note(row):
    return "Error:" in row["notes"]


def _variant_of(row):
    return row["notes"].split(";", 1)[0] if ";" in row["notes"] else ""
