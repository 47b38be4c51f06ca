"""Low-rank tensor regression via sketched reduced regression.

The pipeline: stream samples once to accumulate the response-covariate
moment tensor, probe its Tucker structure for sketching directions,
stream again to project every covariate tensor onto a small reduced
design, solve ordinary (or group-penalized) least squares there, and
assemble the full coefficient tensor back from the reduced solution.
The directions are then refined from the assembled estimate and the
regression pass repeats until the estimate settles.  Row-sparse factors,
data-driven rank selection, sharded execution, and a seeded simulation
harness sit on top of the same streaming passes.
"""

from .errors import ConvergenceError, DataError, DegeneracyError, DeterminismError
from .tensor_ops import (
    hs_norm,
    kron,
    matricize,
    mode_product,
    multi_mode_product,
    qr_orth,
    tensorize,
    thin_svd,
    unvec,
    vec,
)
from .tucker import TuckerFactorization, hooi, hosvd_init, sin_theta, sparse_hooi
from .samples import (
    FileSamples,
    InMemorySamples,
    SampleSource,
    SeededGaussianSource,
    write_sample_file,
)
from .estimator import (
    Estimate,
    SketchBasis,
    SketchedSystem,
    assemble,
    build_sketched_system,
    covariance_tensor,
    fit_lowrank,
    probe_directions,
    reduced_dimension,
    solve_reduced,
    split_source,
)
from .group_lasso import (
    check_grip,
    cross_validate_penalty,
    group_lasso,
    group_lasso_objective,
    interleaved_groups,
    kkt_residual,
    theory_penalty,
)
from .sparse_estimator import SparseEstimate, fit_sparse
from .rank_selection import RankSelection, fit_with_rank_selection, select_rank
from .distributed import (
    ShardPlan,
    ShardResult,
    deserialize_shard_result,
    fit_lowrank_sharded,
    make_shard_plan,
    merge_and_solve,
    merge_pass1,
    serialize_shard_result,
    shard_pass1,
    shard_pass2,
)
from .simulate import (
    ExperimentConfig,
    generate_approx_lowrank,
    generate_regular,
    generate_sparse,
    rmse,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DataError",
    "DegeneracyError",
    "DeterminismError",
    "hs_norm",
    "kron",
    "matricize",
    "mode_product",
    "multi_mode_product",
    "qr_orth",
    "tensorize",
    "thin_svd",
    "unvec",
    "vec",
    "TuckerFactorization",
    "hooi",
    "hosvd_init",
    "sin_theta",
    "sparse_hooi",
    "FileSamples",
    "InMemorySamples",
    "SampleSource",
    "SeededGaussianSource",
    "write_sample_file",
    "Estimate",
    "SketchBasis",
    "SketchedSystem",
    "assemble",
    "build_sketched_system",
    "covariance_tensor",
    "fit_lowrank",
    "probe_directions",
    "reduced_dimension",
    "solve_reduced",
    "split_source",
    "check_grip",
    "cross_validate_penalty",
    "group_lasso",
    "group_lasso_objective",
    "interleaved_groups",
    "kkt_residual",
    "theory_penalty",
    "SparseEstimate",
    "fit_sparse",
    "RankSelection",
    "fit_with_rank_selection",
    "select_rank",
    "ShardPlan",
    "ShardResult",
    "deserialize_shard_result",
    "fit_lowrank_sharded",
    "make_shard_plan",
    "merge_and_solve",
    "merge_pass1",
    "serialize_shard_result",
    "shard_pass1",
    "shard_pass2",
    "ExperimentConfig",
    "generate_approx_lowrank",
    "generate_regular",
    "generate_sparse",
    "rmse",
    "run_experiment",
    "__version__",
]
