"""Low CP-rank tensor completion from few entries.

The main entry points are :func:`adaptive_deli` and :func:`nonadaptive_deli`,
which read a tensor through an :class:`EntryOracle` and return a
:class:`CompletionReport` holding the recovered :class:`CPDecomposition`.
"""
from .als import ALSConfig, masked_als, masked_svd_init
from .censored import CensoredLSResult, censored_least_squares, select_pivot_rows
from .completion import AdaptiveMCConfig, NNMConfig, adaptive_complete, nnm_complete
from .errors import (
    CapacityError,
    ConditioningError,
    DegenerateSlicesError,
    DeliError,
    OverRankError,
    PairingError,
    ParseError,
    RankError,
    RankOverflowError,
    ShapeError,
    UndefinedCoherenceError,
)
from .experiments import RunConfig, aggregate, complete_file, generate_synthetic, run_trials
from .io import read_cp, read_dense, write_cp, write_dense
from .jennrich import JennrichResult, jennrich
from .pipeline import CompletionReport, DeliConfig, adaptive_deli, merge_components, nonadaptive_deli, run_pipeline
from .sampling import (
    EntryOracle,
    NoiseSpec,
    SampleLedger,
    SampleSet,
    SliceView,
    cp_oracle,
    dense_oracle,
    draw_bernoulli_region,
    draw_slice_set,
    draw_z_sets,
)
from .tensor import (
    CPDecomposition,
    DenseTensor,
    canonicalize,
    coherence,
    cp_entries,
    cp_entry,
    cp_inner,
    cp_rel_error,
    factor_match_error,
    khatri_rao,
    materialize,
)

__version__ = "0.1.0"
