"""Random DFAs, exact pair-chain numerics, and meeting-time experiments."""

from .aux_chain import (
    AuxChain,
    AuxChainError,
    AuxEventReport,
    ExitMeasure,
    aux_fvtl_report,
    auto_return_horizon,
    build_aux_chain,
    check_events,
    exit_measure,
    return_mass,
)
from .chains import (
    ChainSpec,
    MixingProfile,
    MultipleRecurrentClassesError,
    UnreachableTargetError,
    ergodic_walk_chain,
    hitting_time_expectation,
    make_chain,
    measure_pi_extremes,
    mixing_profile,
    product_matrix,
    stationary_distribution,
    tv_distance,
    walk_matrix,
)
from .dfa import (
    Dfa,
    DfaDiagnostics,
    DfaError,
    DfaFormatError,
    apply_word,
    diagnostics,
    generate_dfa,
    parse_dfa,
    serialize_dfa,
)
from .fvtl import (
    FvtlReport,
    PerronConvergenceError,
    QuasiStationaryPair,
    fvtl_quantities,
    quasi_stationary_pair,
    quasi_stationary_tail_check,
    two_state_chain,
    uniform_start_ratio,
)
from .recipes import Recipe, RecipeResult, run_recipe
from .seeds import seed_split
from .simulate import (
    RunManifest,
    TrialRecord,
    default_cap,
    read_records_csv,
    run_experiment,
    run_trial,
    sample_coalescence,
    sample_kingman_reference,
    sample_meeting_coupled,
    sample_meeting_independent,
    sample_meeting_independent_batch,
    sample_sync,
    sync_image_sizes,
    write_records_csv,
)
from .stats import EmpiricalDist, FitReport, geometric_tail_fit, ks_distance, w1_distance

__version__ = "0.1.0"
