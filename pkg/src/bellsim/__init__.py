"""Finite hidden-variable models of Bell tests, with exact enumeration and seeded Monte Carlo."""
from .core import (
    CONTEXT_LABELS,
    CONTEXTS,
    Context,
    ContextStats,
    CorrelationTable,
    ExactCorrelations,
    Model,
    ModelError,
    ModelKind,
    ProbTable,
    UndefinedStatistic,
    derive_rng,
    enumerate_context,
    enumerate_joint,
    exact_correlations,
    load_model,
    sample_context,
    sample_rows,
    save_model,
)
from .datasets import Dataset, DatasetKind, read_dataset, write_dataset
from .jp import JointWitness, PairwiseSystem, coupling_equalities, fine_inequalities, jp_feasible
from .models import ModelRecipe, build, build_gl_coupling, demo_model, demo_recipe, load_recipe, save_recipe
from .processing import match_coincidences, post_select, window_scan, windowed_correlations
from .protocols import run_context_protocol, run_spreadsheet_protocol, run_timeseries_protocol
from .stats import (
    cbd_analysis,
    chsh_S,
    eberhard_J,
    estimate_correlations,
    larsson_gill_audit,
    nosignaling_deltas,
    violation_frequency,
    wilson_interval,
)

__version__ = "0.1.0"
