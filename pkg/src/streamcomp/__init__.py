"""One-pass, memory-limited completion of low-rank matrices from streamed columns."""

from .errors import SmcError
from .harness import EvalReport, ExperimentConfig, evaluate, oracle_complete, sweep
from .linalg import (
    SparseColMatrix,
    SparseColumn,
    SvdResult,
    clamp,
    power_qr,
    qr_decompose,
    subspace_distance,
    truncated_svd,
    upper_tri_inverse,
)
from .observe import GroundTruth, NoiseSpec, apply_noise, gen_low_rank, sample_entries, stream_read, stream_write
from .smc import CompletionResult, SmcConfig, materialize, run_one_pass, suggest_ell
from .spca import SpcaConfig, spca
from .split import SplitParams, split_matrix, subset_size_distribution

__version__ = "0.1.0"

__all__ = [
    "CompletionResult", "EvalReport", "ExperimentConfig", "GroundTruth", "NoiseSpec", "SmcConfig",
    "SmcError", "SparseColMatrix", "SparseColumn", "SpcaConfig", "SplitParams", "SvdResult",
    "apply_noise", "clamp", "evaluate", "gen_low_rank", "materialize", "oracle_complete",
    "power_qr", "qr_decompose", "run_one_pass", "sample_entries", "spca", "split_matrix",
    "stream_read", "stream_write", "subset_size_distribution", "subspace_distance", "suggest_ell",
    "sweep", "truncated_svd", "upper_tri_inverse",
]
