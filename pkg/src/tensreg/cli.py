"""Command-line front end: simulation sweeps, single fits, rank selection,
runtime benchmarks, and design isometry checks.

Configuration comes from an optional JSON file (``--config``) with the
same keys as :class:`~tensreg.simulate.ExperimentConfig`; individual
flags override file values.  Exit codes: 0 success, 2 configuration or
input error (argparse uses the same code for unknown flags), 3 numerical
degeneracy or non-convergence.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .errors import ConvergenceError, DataError, DegeneracyError
from .estimator import fit_lowrank
from .group_lasso import check_grip, interleaved_groups
from .rank_selection import fit_with_rank_selection
from .samples import FileSamples, _key_from_seed
from .simulate import (
    CSV_COLUMNS,
    ExperimentConfig,
    run_experiment,
)

__all__ = ["cli_main", "main", "save_estimate", "load_estimate"]

# Per-mode sizes above this need --force in in-memory mode: a materialized
# sample set at p=60 is already ~1.7 MB per sample.
INMEMORY_DIM_CAP = 60

_MODE_ALIASES = {
    "regular": "regular",
    "sparse": "sparse",
    "approx-low-rank": "approx_lowrank",
    "approx_lowrank": "approx_lowrank",
    "rank-select": "rank_select",
    "rank_select": "rank_select",
    "parallel-sweep": "parallel_sweep",
    "parallel_sweep": "parallel_sweep",
    "split-compare": "split_compare",
    "split_compare": "split_compare",
}


def _int_list(text):
    return [int(part) for part in str(text).split(",") if part != ""]


def _float_list(text):
    return [float(part) for part in str(text).split(",") if part != ""]


def _expand(values, d):
    values = list(values)
    if len(values) == 1:
        return tuple(values * d)
    return tuple(values)


def _load_config(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _build_experiment_config(args):
    """Merge config file and flags into a validated ExperimentConfig."""
    conf = dict(_load_config(args.config)) if args.config else {}

    def pick(flag, *keys, default=None):
        if flag is not None:
            return flag
        for key in keys:
            if key in conf:
                return conf[key]
        return default

    dims = pick(args.p, "p", "dims")
    if dims is None:
        raise ValueError("missing problem dimensions (--p or config 'p')")
    if isinstance(dims, (int, float, str)):
        dims = _int_list(dims)
    dims = _expand(dims, 3)
    ranks = pick(args.r, "r", "ranks", default=1)
    if isinstance(ranks, (int, float, str)):
        ranks = _int_list(ranks)
    ranks = _expand(ranks, len(dims))
    sizes = pick(args.n, "n", "sample_sizes", default=1000)
    if isinstance(sizes, (int, float, str)):
        sizes = _int_list(sizes)
    mode = pick(getattr(args, "mode", None), "mode", default="regular")
    if mode not in _MODE_ALIASES:
        raise ValueError(f"unknown mode {mode!r}")
    row_counts = pick(getattr(args, "s", None), "s", "row_counts")
    if isinstance(row_counts, (int, float, str)):
        row_counts = _int_list(row_counts)
    if row_counts is not None:
        row_counts = _expand(row_counts, len(dims))
    taus = pick(getattr(args, "tau", None), "tau", "tau_grid")
    if isinstance(taus, (int, float, str)):
        taus = _float_list(taus)
    splits = pick(getattr(args, "split", None), "split", "split_fractions")
    if isinstance(splits, (int, float, str)):
        splits = _float_list(splits)
    shards = pick(getattr(args, "shards", None), "shards", "shard_counts")
    if isinstance(shards, (int, float, str)):
        shards = _int_list(shards)
    cfg = ExperimentConfig(
        dims=tuple(dims),
        ranks=tuple(ranks),
        noise=float(pick(args.sigma, "sigma", "noise", default=0.0)),
        sample_sizes=tuple(int(v) for v in sizes),
        reps=int(pick(args.reps, "reps", default=1)),
        seed=int(pick(args.seed, "seed", default=0)),
        mode=_MODE_ALIASES[mode],
    )
    if row_counts is not None:
        cfg.row_counts = tuple(row_counts)
    if taus is not None:
        cfg.tau_grid = tuple(taus)
    if splits is not None:
        cfg.split_fractions = tuple(splits)
    if shards is not None:
        cfg.shard_counts = tuple(shards)
    r_ini = pick(getattr(args, "r_ini", None), "r_ini")
    if r_ini is not None:
        cfg.r_ini = int(r_ini)
    threshold = pick(getattr(args, "threshold", None), "threshold")
    if threshold is not None:
        cfg.threshold = float(threshold)
    return cfg.validate()


def _write_results(out_path, rows, summary):
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    summary_path = os.path.splitext(out_path)[0] + ".summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary_path


def save_estimate(path, estimate):
    """Write an estimate as a zip of named float64 arrays."""
    arrays = {
        "coefficient": estimate.coeff,
        "core": estimate.core,
        "reduced_coef": estimate.reduced_coef,
    }
    for k, factor in enumerate(estimate.basis.factors):
        arrays[f"factor{k}"] = factor
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_estimate(path):
    with np.load(path) as data:
        return {key: data[key] for key in data.files}


def _cmd_simulate(args):
    cfg = _build_experiment_config(args)
    rows, summary = run_experiment(cfg)
    out = args.out or "results.csv"
    summary_path = _write_results(out, rows, summary)
    print(f"wrote {len(rows)} rows to {out} and summary to {summary_path}")
    finite = [row for row in rows if np.isfinite(row["rmse"])]
    if not finite:
        print("every repetition failed numerically", file=sys.stderr)
        return 3
    return 0


def _cmd_bench(args):
    cfg = _build_experiment_config(args)
    rows, summary = run_experiment(cfg)
    if args.out:
        _write_results(args.out, rows, summary)
    print(json.dumps(summary, indent=2))
    return 0


def _open_samples(args):
    source = FileSamples(args.input)
    if args.in_memory:
        if max(source.dims) > INMEMORY_DIM_CAP and not args.force:
            raise ValueError(
                f"refusing in-memory mode with per-mode size "
                f"{max(source.dims)} > {INMEMORY_DIM_CAP}; pass --force"
            )
        from .samples import InMemorySamples

        source = InMemorySamples.materialize(source)
    return source


def _cmd_fit(args):
    source = _open_samples(args)
    ranks = _expand(_int_list(args.ranks), len(source.dims))
    estimate = fit_lowrank(source, ranks)
    out = args.out or args.input + ".est.npz"
    save_estimate(out, estimate)
    print(
        json.dumps(
            {
                "out": out,
                "n": source.n,
                "reduced_dim": estimate.diagnostics.get("reduced_dim"),
                "residual_norm": estimate.diagnostics.get("residual_norm"),
            }
        )
    )
    return 0


def _cmd_rank_select(args):
    if args.input:
        source = _open_samples(args)
        dims = source.dims
    else:
        if args.p is None:
            raise ValueError("rank-select needs --input or --p")
        from .simulate import generate_regular

        dims = _expand(_int_list(args.p), 3)
        ranks = _expand(_int_list(args.r), len(dims)) if args.r else (1,) * len(dims)
        n = int(args.n[0] if isinstance(args.n, list) else args.n or 1000)
        _, source = generate_regular(
            dims, ranks, n, float(args.sigma or 0.0), int(args.seed or 0)
        )
    r_ini = args.r_ini if args.r_ini else max(1, min(dims) // 3)
    selection, estimate = fit_with_rank_selection(
        source, int(r_ini), float(args.threshold or 3.0)
    )
    if args.out:
        save_estimate(args.out, estimate)
    print(
        json.dumps(
            {
                "ranks": [int(r) for r in selection.ranks],
                "clamped": selection.clamped,
                "null_fit": selection.null_fit,
            }
        )
    )
    return 0


def _cmd_grip_check(args):
    groups_count = int(args.p or 8)
    group_size = int(args.r or 2)
    n = int(args.n[0] if isinstance(args.n, list) else args.n or 200)
    rng = np.random.Generator(
        np.random.Philox(key=_key_from_seed(int(args.seed or 0), stream=7))
    )
    design = rng.standard_normal((n, groups_count * group_size))
    groups = interleaved_groups(groups_count, group_size)
    holds, report = check_grip(
        design, groups, max_active=int(args.max_active), delta=float(args.delta)
    )
    payload = {"holds": bool(holds), **{k: _plain(v) for k, v in report.items()}}
    print(json.dumps(payload, indent=2))
    return 0


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--p", help="per-mode sizes, e.g. 10 or 10,12,8")
    parser.add_argument("--r", help="per-mode ranks, e.g. 3 or 3,2,3")
    parser.add_argument("--n", type=_int_list, help="sample sizes, e.g. 2000,4000")
    parser.add_argument("--sigma", type=float, help="noise standard deviation")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--reps", type=int, help="repetitions per cell")
    parser.add_argument("--shards", help="shard counts for parallel sweeps")
    parser.add_argument("--out", help="output path")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tensreg",
        description="Low-rank tensor regression via sketched reduced regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a seeded experiment sweep")
    _add_common(sim)
    sim.add_argument("--mode", help="regular | sparse | approx-low-rank | "
                     "rank-select | parallel-sweep | split-compare")
    sim.add_argument("--s", help="row budgets for sparse mode, e.g. 8 or 8,8,8")
    sim.add_argument("--tau", help="perturbation grid, e.g. 0,0.1,0.3,0.5")
    sim.add_argument("--split", help="probe fractions, e.g. 0.5")
    sim.add_argument("--r-ini", dest="r_ini", type=int, help="initial rank guess")
    sim.add_argument("--threshold", type=float, help="rank screening threshold")
    sim.set_defaults(handler=_cmd_simulate)

    fit = sub.add_parser("fit", help="fit one serialized sample set")
    fit.add_argument("--input", required=True, help="sample file path")
    fit.add_argument("--ranks", required=True, help="fit ranks, e.g. 3,3,3")
    fit.add_argument("--out", help="estimate output path")
    fit.add_argument("--in-memory", dest="in_memory", action="store_true",
                     help="materialize samples in memory before fitting")
    fit.add_argument("--force", action="store_true",
                     help="lift the in-memory size cap")
    fit.set_defaults(handler=_cmd_fit)

    rank = sub.add_parser("rank-select", help="data-driven rank selection")
    _add_common(rank)
    rank.add_argument("--input", help="sample file path (overrides --p)")
    rank.add_argument("--r-ini", dest="r_ini", type=int, help="initial rank guess")
    rank.add_argument("--threshold", type=float, help="screening threshold")
    rank.add_argument("--in-memory", dest="in_memory", action="store_true")
    rank.add_argument("--force", action="store_true")
    rank.set_defaults(handler=_cmd_rank_select)

    bench = sub.add_parser("bench", help="runtime scaling sweep")
    _add_common(bench)
    bench.add_argument("--mode", help="experiment mode (default regular)")
    bench.set_defaults(handler=_cmd_bench)

    grip = sub.add_parser("grip-check", help="exhaustive group isometry check")
    _add_common(grip)
    grip.add_argument("--delta", type=float, default=1 / 3,
                      help="isometry slack (default 1/3)")
    grip.add_argument("--max-active", dest="max_active", type=int, default=2,
                      help="largest group count checked (default 2)")
    grip.set_defaults(handler=_cmd_grip_check)
    return parser


def cli_main(argv=None):
    """Entry point returning an exit code instead of raising SystemExit."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.handler(args)
    except (ValueError, DataError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DegeneracyError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
