"""One-bit compressive sensing toolkit.

Sub-modules:

- ``numerics``  -- float64 linear algebra, nonlinearities, seeded streams.
- ``signals``   -- sparse sources, the one-bit encoder, evaluation metrics.
- ``solvers``   -- the classic fixed-parameter recovery algorithms
  (rfpi / biht and their generalized nonzero-threshold forms).
- ``autodiff``  -- reverse-mode differentiation tape over the pipeline ops.
- ``unfolded``  -- the learned encoder/decoder pipelines and checkpoint IO.
- ``training``  -- accumulated per-layer loss, Adam, incremental schedule.
- ``harness``   -- experiment presets, grid search, deterministic CSV curves.
- ``cli``       -- `onebitcs` command-line interface.
"""

from .numerics import ContractViolation, RngStream
from .signals import (
    Measurement,
    SensingModel,
    SignalSpec,
    SparseSignal,
    consistency_violations,
    encode,
    mse_amplitude,
    mse_direction,
    sample_signal,
)
from .solvers import (
    DegenerateIterate,
    SolverConfig,
    Trajectory,
    biht_solve,
    gbiht_solve,
    grfpi_solve,
    hard_threshold,
    rfpi_solve,
    soft_shrink,
)
from .training import LossConfig, TrainConfig, TrainingDiverged, train_incremental
from .unfolded import (
    DecoderParams,
    PipelineOutput,
    decoder_from_classic,
    forward,
    initialize_model,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .harness import (
    CaseSpec,
    ExperimentConfig,
    build_preset,
    grid_search_baseline,
    run_experiment,
)

__version__ = "0.1.0"
